//! Residue-class affine transformations of the naturals.
//!
//! An `RcaMap` is total on ℕ: an explicit patch of values below a threshold
//! `N` (a multiple of the modulus `m`), and per residue class `r` a tail rule
//! applied to `q = n div m`, either a constant or `a·q + b` with `a ≥ 1` and
//! every attained value nonnegative. The class is closed under composition,
//! under case splits along an eventually periodic set, and contains sections;
//! all of those are computed exactly, as are image, defect, collapse, and the
//! count of image points with infinite fibers.
//!
//! Internal arithmetic runs in `i128` and aborts on overflow when converting
//! back to the 64-bit surface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epset::EPSet;
use crate::extnat::{ExtNat, Fin, Inf};
use crate::num::{divisors, gcd, lcm};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RcaError {
    #[error("modulus must be at least 1")]
    ZeroModulus,
    #[error("expected {expected} tail rules, got {got}")]
    TailCount { expected: u64, got: u64 },
    #[error("patch length {threshold} is not a multiple of the modulus {modulus}")]
    ThresholdNotAligned { threshold: u64, modulus: u64 },
    #[error("tail slope a must be positive; use kind const for constant tails")]
    ZeroSlope,
    #[error("tail rule for class {class} attains the negative value {value}")]
    NegativeLeastValue { class: u64, value: i64 },
}

/// Eventual behaviour of one residue class, as a function of `q = n div m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TailRule {
    Const { b: u64 },
    Affine { a: u64, b: i64 },
}

pub use TailRule::{Affine, Const};

fn round_up(x: u64, m: u64) -> u64 {
    x.div_ceil(m).checked_mul(m).expect("threshold overflow")
}

fn to_u64(v: i128) -> u64 {
    u64::try_from(v).expect("value out of u64 range")
}

fn to_i64(v: i128) -> i64 {
    i64::try_from(v).expect("value out of i64 range")
}

/// Total transformation of ℕ, eventually affine on residue classes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RcaMap {
    patch: Vec<u64>,
    modulus: u64,
    tails: Vec<TailRule>,
}

impl RcaMap {
    /// Validates and canonicalizes. The threshold is `patch.len()` and must be
    /// a multiple of the modulus.
    pub fn new(patch: Vec<u64>, modulus: u64, tails: Vec<TailRule>) -> Result<RcaMap, RcaError> {
        if modulus == 0 {
            return Err(RcaError::ZeroModulus);
        }
        if tails.len() as u64 != modulus {
            return Err(RcaError::TailCount { expected: modulus, got: tails.len() as u64 });
        }
        let threshold = patch.len() as u64;
        if threshold % modulus != 0 {
            return Err(RcaError::ThresholdNotAligned { threshold, modulus });
        }
        let q0 = threshold / modulus;
        for (class, rule) in tails.iter().enumerate() {
            if let Affine { a, b } = rule {
                if *a == 0 {
                    return Err(RcaError::ZeroSlope);
                }
                let least = *a as i128 * q0 as i128 + *b as i128;
                if least < 0 {
                    return Err(RcaError::NegativeLeastValue {
                        class: class as u64,
                        value: to_i64(least),
                    });
                }
            }
        }
        let mut map = RcaMap { patch, modulus, tails };
        map.canonicalize();
        Ok(map)
    }

    pub fn identity() -> RcaMap {
        RcaMap::new(vec![], 1, vec![Affine { a: 1, b: 0 }]).unwrap()
    }

    pub fn constant(v: u64) -> RcaMap {
        RcaMap::new(vec![], 1, vec![Const { b: v }]).unwrap()
    }

    pub fn threshold(&self) -> u64 {
        self.patch.len() as u64
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn patch(&self) -> &[u64] {
        &self.patch
    }

    pub fn tails(&self) -> &[TailRule] {
        &self.tails
    }

    fn canonicalize(&mut self) {
        self.reduce_modulus();
        self.shrink_threshold();
    }

    /// Merges residue classes along the smallest divisor of the modulus for
    /// which all merged classes describe one affine (or constant) function of
    /// `n`.
    fn reduce_modulus(&mut self) {
        let m = self.modulus;
        'divisor: for d in divisors(m) {
            if d == m {
                break;
            }
            for rd in 0..d {
                let base = self.tails[rd as usize];
                for r in (rd + d..m).step_by(d as usize) {
                    match (base, self.tails[r as usize]) {
                        (Const { b }, Const { b: b2 }) if b == b2 => {}
                        (Affine { a, b }, Affine { a: a2, b: b2 }) if a == a2 => {
                            // Same function of n requires the intercepts to
                            // advance by a·(r − rd)/m, an exact integer.
                            let num = a as i128 * (r - rd) as i128;
                            if num % m as i128 != 0 {
                                continue 'divisor;
                            }
                            if b2 as i128 != b as i128 + num / m as i128 {
                                continue 'divisor;
                            }
                            if (a as i128 * d as i128) % m as i128 != 0 {
                                continue 'divisor;
                            }
                        }
                        _ => continue 'divisor,
                    }
                }
            }
            let tails: Vec<TailRule> = (0..d)
                .map(|rd| match self.tails[rd as usize] {
                    Const { b } => Const { b },
                    Affine { a, b } => {
                        Affine { a: to_u64(a as i128 * d as i128 / m as i128), b }
                    }
                })
                .collect();
            self.modulus = d;
            self.tails = tails;
            return;
        }
    }

    /// Drops trailing patch blocks whose values agree with the tail rules.
    fn shrink_threshold(&mut self) {
        let m = self.modulus as usize;
        while self.patch.len() >= m {
            let start = self.patch.len() - m;
            let agrees = (start..self.patch.len()).all(|n| {
                let q = (n / m) as i128;
                let value = match self.tails[n % m] {
                    Const { b } => b as i128,
                    Affine { a, b } => a as i128 * q + b as i128,
                };
                value == self.patch[n] as i128
            });
            if !agrees {
                break;
            }
            self.patch.truncate(start);
        }
    }

    pub fn eval(&self, n: u64) -> u64 {
        if n < self.threshold() {
            return self.patch[n as usize];
        }
        let q = (n / self.modulus) as i128;
        match self.tails[(n % self.modulus) as usize] {
            Const { b } => b,
            Affine { a, b } => to_u64(a as i128 * q + b as i128),
        }
    }

    /// Exact composition, applying `self` first and `other` second.
    pub fn compose(&self, other: &RcaMap) -> RcaMap {
        let (f, g) = (self, other);
        // Refine f's modulus so each refined class advances its value by a
        // multiple of g's modulus; then g's residue is constant on the class.
        let mut refine = 1u64;
        for rule in &f.tails {
            if let Affine { a, .. } = rule {
                refine = lcm(refine, g.modulus / gcd(*a, g.modulus));
            }
        }
        let modulus = f.modulus.checked_mul(refine).expect("modulus overflow");
        // Beyond the new threshold every affine class of f has entered g's
        // tail region.
        let mut qbar = f.threshold() / f.modulus;
        for rule in &f.tails {
            if let Affine { a, b } = rule {
                let need = g.threshold() as i128 - *b as i128;
                if need > 0 {
                    let q = (need + *a as i128 - 1) / *a as i128;
                    qbar = qbar.max(to_u64(q));
                }
            }
        }
        let base = f
            .threshold()
            .max(f.modulus.checked_mul(qbar).expect("threshold overflow"));
        let threshold = round_up(base, modulus);
        let patch: Vec<u64> = (0..threshold).map(|n| g.eval(f.eval(n))).collect();
        let tails: Vec<TailRule> = (0..modulus)
            .map(|r2| {
                let r = r2 % f.modulus;
                match f.tails[r as usize] {
                    Const { b } => Const { b: g.eval(b) },
                    Affine { a, b } => {
                        // On this class f's value is step·q' + off in q' = n div modulus.
                        let c = ((r2 - r) / f.modulus) as i128;
                        let step = a as i128 * refine as i128;
                        let off = a as i128 * c + b as i128;
                        debug_assert_eq!(step % g.modulus as i128, 0);
                        let s = off.rem_euclid(g.modulus as i128);
                        let q_step = step / g.modulus as i128;
                        let q_off = (off - s) / g.modulus as i128;
                        match g.tails[s as usize] {
                            Const { b: gb } => Const { b: gb },
                            Affine { a: ga, b: gb } => Affine {
                                a: to_u64(ga as i128 * q_step),
                                b: to_i64(ga as i128 * q_off + gb as i128),
                            },
                        }
                    }
                }
            })
            .collect();
        RcaMap::new(patch, modulus, tails).expect("composite is a valid map")
    }

    /// Case split along `cond`: `yes` where `cond` holds, `no` elsewhere.
    pub fn piecewise(cond: &EPSet, yes: &RcaMap, no: &RcaMap) -> RcaMap {
        let modulus = lcm(lcm(cond.modulus(), yes.modulus), no.modulus);
        let base = cond.threshold().max(yes.threshold()).max(no.threshold());
        let threshold = round_up(base, modulus);
        let patch: Vec<u64> = (0..threshold)
            .map(|n| if cond.contains(n) { yes.eval(n) } else { no.eval(n) })
            .collect();
        let tails: Vec<TailRule> = (0..modulus)
            .map(|r| {
                let branch = if cond.residues().binary_search(&(r % cond.modulus())).is_ok() {
                    yes
                } else {
                    no
                };
                match branch.tails[(r % branch.modulus) as usize] {
                    Const { b } => Const { b },
                    Affine { a, b } => {
                        let k = modulus / branch.modulus;
                        let c = ((r - r % branch.modulus) / branch.modulus) as i128;
                        Affine {
                            a: to_u64(a as i128 * k as i128),
                            b: to_i64(a as i128 * c + b as i128),
                        }
                    }
                }
            })
            .collect();
        RcaMap::new(patch, modulus, tails).expect("piecewise combination is a valid map")
    }

    /// Start and step of the value progression of an affine class beyond the
    /// threshold.
    fn affine_classes(&self) -> Vec<(u64, u64, i64)> {
        self.tails
            .iter()
            .enumerate()
            .filter_map(|(r, rule)| match rule {
                Affine { a, b } => Some((r as u64, *a, *b)),
                Const { .. } => None,
            })
            .collect()
    }

    fn q0(&self) -> u64 {
        self.threshold() / self.modulus
    }

    pub fn image(&self) -> EPSet {
        let mut image = EPSet::from_finite(self.patch.iter().copied());
        for rule in &self.tails {
            let part = match rule {
                Const { b } => EPSet::singleton(*b),
                Affine { a, b } => {
                    let start = to_u64(*a as i128 * self.q0() as i128 + *b as i128);
                    EPSet::progression(start, *a)
                }
            };
            image = image.union(&part);
        }
        image
    }

    /// Distinct values with infinitely many preimages, in increasing order.
    /// Only constant tails produce them.
    pub fn infinite_fiber_values(&self) -> Vec<u64> {
        let mut vals: Vec<u64> = self
            .tails
            .iter()
            .filter_map(|rule| match rule {
                Const { b } => Some(*b),
                Affine { .. } => None,
            })
            .collect();
        vals.sort_unstable();
        vals.dedup();
        vals
    }

    /// Exact collapse `Σ (|fiber| − 1)` over the image. Infinite exactly when
    /// a constant tail exists or two affine value progressions intersect.
    pub fn collapse(&self) -> ExtNat {
        if self.tails.iter().any(|t| matches!(t, Const { .. })) {
            return Inf;
        }
        let classes = self.affine_classes();
        for (i, &(_, a1, b1)) in classes.iter().enumerate() {
            for &(_, a2, b2) in &classes[i + 1..] {
                let g = gcd(a1, a2) as i128;
                if (b1 as i128 - b2 as i128).rem_euclid(g) == 0 {
                    return Inf;
                }
            }
        }
        // Finite census: collisions inside the patch, plus each distinct patch
        // value that an affine progression also attains. Progressions are
        // pairwise disjoint here and each hits a value at most once.
        let mut counts = std::collections::BTreeMap::new();
        for &v in &self.patch {
            *counts.entry(v).or_insert(0u64) += 1;
        }
        let q0 = self.q0() as i128;
        let mut c = 0u64;
        for (&v, &count) in &counts {
            c += count - 1;
            let hit = classes.iter().any(|&(_, a, b)| {
                let diff = v as i128 - b as i128;
                diff % a as i128 == 0 && diff / (a as i128) >= q0
            });
            if hit {
                c += 1;
            }
        }
        Fin(c)
    }

    pub fn invariants(&self) -> RcaInvariants {
        let image = self.image();
        let missing = image.complement();
        let infinite_fiber_values = self.infinite_fiber_values();
        RcaInvariants {
            defect: missing.cardinality(),
            collapse: self.collapse(),
            infinite_fibers: Fin(infinite_fiber_values.len() as u64),
            rank: image.cardinality(),
            has_infinite_kernel_class: !infinite_fiber_values.is_empty(),
            infinite_fiber_values,
            missing,
            image,
        }
    }

    /// Full preimage of a value, as an eventually periodic set.
    pub fn fiber(&self, y: u64) -> EPSet {
        let mut fiber = EPSet::from_finite(
            self.patch
                .iter()
                .enumerate()
                .filter(|&(_, &v)| v == y)
                .map(|(n, _)| n as u64),
        );
        for (r, rule) in self.tails.iter().enumerate() {
            match rule {
                Const { b } if *b == y => {
                    let class = EPSet::new(self.threshold(), self.modulus, [r as u64], [])
                        .expect("valid residue class");
                    fiber = fiber.union(&class);
                }
                Affine { a, b } => {
                    let diff = y as i128 - *b as i128;
                    if diff % *a as i128 == 0 {
                        let q = diff / *a as i128;
                        if q >= self.q0() as i128 {
                            let n = to_u64(q * self.modulus as i128 + r as i128);
                            fiber = fiber.union(&EPSet::singleton(n));
                        }
                    }
                }
                Const { .. } => {}
            }
        }
        fiber
    }

    /// Least-preimage section: `s(y) = min fiber(y)` on the image, `0` off it.
    /// Returns the section and its domain (the image).
    pub fn section(&self) -> (RcaMap, EPSet) {
        let image = self.image();
        let classes = self.affine_classes();
        let m_sec = classes.iter().fold(1u64, |acc, &(_, a, _)| lcm(acc, a));
        // Beyond ybar only affine classes contribute preimages and the
        // pointwise order of their preimage lines is settled.
        let mut ybar: u64 = 1;
        for &v in &self.patch {
            ybar = ybar.max(v + 1);
        }
        for rule in &self.tails {
            if let Const { b } = rule {
                ybar = ybar.max(b + 1);
            }
        }
        let q0 = self.q0() as i128;
        let m = self.modulus as i128;
        for &(_, a, b) in &classes {
            ybar = ybar.max(to_u64(a as i128 * q0 + b as i128));
        }
        for (i, &(r1, a1, b1)) in classes.iter().enumerate() {
            for &(r2, a2, b2) in &classes[i + 1..] {
                // Preimage lines cross-multiplied by a1·a2: linear in y.
                let coef = m * (a2 as i128 - a1 as i128);
                let cons = -m * a2 as i128 * b1 as i128 + r1 as i128 * a1 as i128 * a2 as i128
                    + m * a1 as i128 * b2 as i128
                    - r2 as i128 * a1 as i128 * a2 as i128;
                if coef != 0 {
                    let settle = cons.abs() / coef.abs() + 1;
                    ybar = ybar.max(to_u64(settle));
                }
            }
        }
        let threshold = round_up(ybar, m_sec);
        let tails: Vec<TailRule> = (0..m_sec)
            .map(|rho| {
                let cands: Vec<&(u64, u64, i64)> = classes
                    .iter()
                    .filter(|&&(_, a, b)| (rho as i128 - b as i128).rem_euclid(a as i128) == 0)
                    .collect();
                let Some(&&(r, a, b)) = cands.iter().min_by_key(|&&&(r, a, b)| {
                    let y0 = (threshold + rho) as i128;
                    m * (y0 - b as i128) / a as i128 + r as i128
                }) else {
                    return Const { b: 0 };
                };
                Affine {
                    a: to_u64(m * m_sec as i128 / a as i128),
                    b: to_i64(m * (rho as i128 - b as i128) / a as i128 + r as i128),
                }
            })
            .collect();
        let patch: Vec<u64> = (0..threshold)
            .map(|y| self.fiber(y).first().unwrap_or(0))
            .collect();
        let section = RcaMap::new(patch, m_sec, tails).expect("section is a valid map");
        (section, image)
    }

    /// The map `k ↦ k`-th member of `s`, with value `0` past the cardinality
    /// of a finite set.
    pub fn index_map(s: &EPSet) -> RcaMap {
        let fin = s.patch().len() as u64;
        if s.is_finite() {
            return RcaMap::new(s.patch().to_vec(), 1, vec![Const { b: 0 }])
                .expect("finite index map is valid");
        }
        let offs: Vec<u64> = {
            let shift = s.threshold() % s.modulus();
            let mut o: Vec<u64> = s
                .residues()
                .iter()
                .map(|&r| (r + s.modulus() - shift) % s.modulus())
                .collect();
            o.sort_unstable();
            o
        };
        let period = offs.len() as u64;
        let threshold = round_up(fin, period);
        let patch: Vec<u64> = (0..threshold)
            .map(|k| s.kth(k).expect("infinite set has every member"))
            .collect();
        let tails: Vec<TailRule> = (0..period)
            .map(|r| {
                let i = (r + period - fin % period) % period;
                let c = (r as i128 - fin as i128 - i as i128) / period as i128;
                Affine {
                    a: s.modulus(),
                    b: to_i64(s.threshold() as i128 + c * s.modulus() as i128 + offs[i as usize] as i128),
                }
            })
            .collect();
        RcaMap::new(patch, period, tails).expect("index map is valid")
    }

    /// The map `x ↦ |s ∩ [0, x)|`.
    pub fn rank_map(s: &EPSet) -> RcaMap {
        if s.is_finite() {
            let threshold = s.threshold();
            let patch: Vec<u64> = (0..threshold).map(|x| s.rank_below(x)).collect();
            return RcaMap::new(patch, 1, vec![Const { b: s.patch().len() as u64 }])
                .expect("finite rank map is valid");
        }
        let m = s.modulus();
        let threshold = round_up(s.threshold(), m);
        let patch: Vec<u64> = (0..threshold).map(|x| s.rank_below(x)).collect();
        let base = s.rank_below(threshold) as i128;
        let per = s.residues().len() as u64;
        let tails: Vec<TailRule> = (0..m)
            .map(|r| {
                let prefix = s.residues().partition_point(|&rho| rho < r) as i128;
                Affine {
                    a: per,
                    b: to_i64(base - (threshold / m) as i128 * per as i128 + prefix),
                }
            })
            .collect();
        RcaMap::new(patch, m, tails).expect("rank map is valid")
    }
}

/// Exact invariant bundle of one map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RcaInvariants {
    pub image: EPSet,
    /// Values never attained: the complement of the image.
    pub missing: EPSet,
    pub defect: ExtNat,
    pub collapse: ExtNat,
    /// Count of image points with infinitely many preimages.
    pub infinite_fibers: ExtNat,
    pub infinite_fiber_values: Vec<u64>,
    pub rank: ExtNat,
    pub has_infinite_kernel_class: bool,
}

#[derive(Serialize, Deserialize)]
struct RawRca {
    #[serde(rename = "N")]
    threshold: u64,
    m: u64,
    patch: Vec<u64>,
    tails: Vec<TailRule>,
}

impl Serialize for RcaMap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawRca {
            threshold: self.threshold(),
            m: self.modulus,
            patch: self.patch.clone(),
            tails: self.tails.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RcaMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawRca::deserialize(deserializer)?;
        if raw.threshold != raw.patch.len() as u64 {
            return Err(serde::de::Error::custom(format!(
                "N is {} but the patch has {} entries",
                raw.threshold,
                raw.patch.len()
            )));
        }
        RcaMap::new(raw.patch, raw.m, raw.tails).map_err(serde::de::Error::custom)
    }
}
