//! Canonical maps and seeded samplers.
//!
//! The six named maps below are the standing examples used across the crate
//! and its test suites; the samplers draw reproducible random maps and terms
//! for property checks. Sampled patch values are kept small relative to the
//! threshold and modulus so that every finite collision of a sampled map is
//! visible within a `10·N·m` evaluation window.

use rand::Rng;

use crate::rca::{Affine, Const, RcaMap, TailRule};
use crate::term::Term;

/// n ↦ n + 1.
pub fn succ() -> RcaMap {
    RcaMap::new(vec![], 1, vec![Affine { a: 1, b: 1 }]).unwrap()
}

/// n ↦ 2n.
pub fn dbl() -> RcaMap {
    RcaMap::new(vec![], 1, vec![Affine { a: 2, b: 0 }]).unwrap()
}

/// n ↦ ⌊n/2⌋.
pub fn half() -> RcaMap {
    RcaMap::new(vec![], 2, vec![Affine { a: 1, b: 0 }, Affine { a: 1, b: 0 }]).unwrap()
}

/// 0 ↦ 0, n+1 ↦ n.
pub fn pred() -> RcaMap {
    RcaMap::new(vec![0], 1, vec![Affine { a: 1, b: -1 }]).unwrap()
}

/// n ↦ 0.
pub fn cst0() -> RcaMap {
    RcaMap::constant(0)
}

/// Evens to 5, odds halved: one infinite fiber plus a progression.
pub fn mix() -> RcaMap {
    RcaMap::new(vec![], 2, vec![Const { b: 5 }, Affine { a: 1, b: 0 }]).unwrap()
}

pub fn sample_rca<R: Rng>(rng: &mut R) -> RcaMap {
    let modulus = rng.gen_range(1..=3u64);
    let blocks = rng.gen_range(0..=2u64);
    let threshold = modulus * blocks;
    let vmax = 3 * (threshold + modulus);
    let patch: Vec<u64> = (0..threshold).map(|_| rng.gen_range(0..=vmax)).collect();
    let tails: Vec<TailRule> = (0..modulus)
        .map(|_| {
            if rng.gen_bool(0.35) {
                Const { b: rng.gen_range(0..=vmax) }
            } else {
                let a = rng.gen_range(1..=4u64);
                let lo = -((a * blocks) as i64);
                Affine { a, b: rng.gen_range(lo..=12) }
            }
        })
        .collect();
    RcaMap::new(patch, modulus, tails).unwrap()
}

/// Random term of at most the given composition depth.
pub fn sample_term<R: Rng>(rng: &mut R, depth: u32) -> Term {
    if depth == 0 || rng.gen_bool(0.45) {
        match rng.gen_range(0..10u32) {
            0..=5 => Term::Rca(sample_rca(rng)),
            6..=7 => Term::ColProj,
            _ => Term::ColEmbed,
        }
    } else {
        Term::compose(sample_term(rng, depth - 1), sample_term(rng, depth - 1))
    }
}
