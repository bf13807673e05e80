//! Finite full-transformation monoids as a ground-truth laboratory.
//!
//! Everything here is brute force on purpose: closures by worklist,
//! maximality by adjoining every outside element, generating families by
//! scanning all small subsets. A hard degree guard keeps the scale at desk
//! size, where exhaustive checking is the point.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::transversal::{
    construct_h, filter_h, is_in_j, SetFamily, TieBreak, TransversalError,
};

#[derive(Debug, Error, PartialEq)]
pub enum SandboxError {
    #[error("degree must be between 1 and {MAX_DEGREE}, got {n}")]
    UnsupportedDegree { n: usize },
    #[error("image value {value} is out of range for degree {n}")]
    ImageOutOfRange { value: usize, n: usize },
    #[error("id {id} is out of range for degree {n}")]
    IdOutOfRange { id: u64, n: usize },
    #[error("all maps must have degree {expected}, found one of degree {got}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error("cap {cap} exceeds the limit {limit} for degree {n}")]
    CapTooLarge { cap: usize, limit: usize, n: usize },
    #[error("hypothesis violated: {which} (witness id {witness})")]
    HypothesisViolation { which: String, witness: u64 },
    #[error(transparent)]
    Transversal(#[from] TransversalError),
}

/// Full enumeration stays feasible up to here; one degree more and brute
/// maximality explodes.
pub const MAX_DEGREE: usize = 4;

fn guard_degree(n: usize) -> Result<(), SandboxError> {
    if (1..=MAX_DEGREE).contains(&n) {
        Ok(())
    } else {
        Err(SandboxError::UnsupportedDegree { n })
    }
}

/// Total map on `{0..n-1}`, identified by its image tuple read as a
/// big-endian base-n numeral.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FinMap {
    images: Vec<usize>,
}

impl FinMap {
    pub fn new(images: Vec<usize>) -> Result<FinMap, SandboxError> {
        let n = images.len();
        guard_degree(n)?;
        for &value in &images {
            if value >= n {
                return Err(SandboxError::ImageOutOfRange { value, n });
            }
        }
        Ok(FinMap { images })
    }

    pub fn from_id(n: usize, id: u64) -> Result<FinMap, SandboxError> {
        guard_degree(n)?;
        if id >= (n as u64).pow(n as u32) {
            return Err(SandboxError::IdOutOfRange { id, n });
        }
        let mut images = vec![0; n];
        let mut rest = id;
        for slot in images.iter_mut().rev() {
            *slot = (rest % n as u64) as usize;
            rest /= n as u64;
        }
        Ok(FinMap { images })
    }

    pub fn identity(n: usize) -> Result<FinMap, SandboxError> {
        FinMap::new((0..n).collect())
    }

    pub fn constant(n: usize, v: usize) -> Result<FinMap, SandboxError> {
        FinMap::new(vec![v; n])
    }

    pub fn degree(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn id(&self) -> u64 {
        let n = self.degree() as u64;
        self.images.iter().fold(0, |acc, &v| acc * n + v as u64)
    }

    pub fn eval(&self, x: usize) -> usize {
        self.images[x]
    }

    pub fn rank(&self) -> usize {
        let mut seen = [false; MAX_DEGREE];
        let mut count = 0;
        for &v in &self.images {
            if !seen[v] {
                seen[v] = true;
                count += 1;
            }
        }
        count
    }

    /// Apply `self` first, then `other`.
    pub fn compose(&self, other: &FinMap) -> FinMap {
        assert_eq!(self.degree(), other.degree(), "degree mismatch");
        FinMap {
            images: self.images.iter().map(|&x| other.images[x]).collect(),
        }
    }
}

pub fn all_maps(n: usize) -> Result<Vec<FinMap>, SandboxError> {
    guard_degree(n)?;
    (0..(n as u64).pow(n as u32))
        .map(|id| FinMap::from_id(n, id))
        .collect()
}

pub fn maps_of_rank(n: usize, rank: usize) -> Result<Vec<FinMap>, SandboxError> {
    Ok(all_maps(n)?.into_iter().filter(|m| m.rank() == rank).collect())
}

/// Precomputed composition table for one degree.
struct Monoid {
    size: usize,
    table: Vec<u16>,
    rank: Vec<u8>,
}

impl Monoid {
    fn new(n: usize) -> Result<Monoid, SandboxError> {
        let maps = all_maps(n)?;
        let size = maps.len();
        let mut table = vec![0u16; size * size];
        for (a, fa) in maps.iter().enumerate() {
            for (b, fb) in maps.iter().enumerate() {
                table[a * size + b] = fa.compose(fb).id() as u16;
            }
        }
        let rank = maps.iter().map(|m| m.rank() as u8).collect();
        Ok(Monoid { size, table, rank })
    }

    fn compose(&self, a: u16, b: u16) -> u16 {
        let c = self.table[a as usize * self.size + b as usize];
        assert!(
            self.rank[c as usize] <= self.rank[a as usize].min(self.rank[b as usize]),
            "rank increased under composition"
        );
        c
    }

    /// Semigroup closure by worklist; the identity appears only if generated.
    fn closure_ids(&self, gens: &[u16]) -> Vec<u16> {
        let mut seen = vec![false; self.size];
        let mut elems: Vec<u16> = Vec::new();
        let mut queue: VecDeque<u16> = VecDeque::new();
        for &g in gens {
            if !seen[g as usize] {
                seen[g as usize] = true;
                queue.push_back(g);
            }
        }
        while let Some(a) = queue.pop_front() {
            elems.push(a);
            // Pair every processed element with `a` in both orders; pairs of
            // still-queued elements are covered when their turn comes.
            for &b in &elems {
                for c in [self.compose(a, b), self.compose(b, a)] {
                    if !seen[c as usize] {
                        seen[c as usize] = true;
                        queue.push_back(c);
                    }
                }
            }
        }
        elems.sort_unstable();
        elems
    }
}

fn ids_of(maps: &[FinMap], n: usize) -> Result<Vec<u16>, SandboxError> {
    let mut ids = Vec::with_capacity(maps.len());
    for m in maps {
        if m.degree() != n {
            return Err(SandboxError::DegreeMismatch {
                expected: n,
                got: m.degree(),
            });
        }
        ids.push(m.id() as u16);
    }
    Ok(ids)
}

/// Least composition-closed superset of `gens`.
pub fn closure(gens: &[FinMap], n: usize) -> Result<Vec<FinMap>, SandboxError> {
    let monoid = Monoid::new(n)?;
    let ids = ids_of(gens, n)?;
    monoid
        .closure_ids(&ids)
        .into_iter()
        .map(|id| FinMap::from_id(n, id as u64))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SubsemigroupReport {
    pub elements: Vec<u64>,
    pub closed: bool,
    pub proper: bool,
    pub maximal: bool,
}

/// Brute-force maximality: closed, proper, and adjoining any outside element
/// regenerates the whole monoid.
pub fn is_maximal(s: &[FinMap], n: usize) -> Result<SubsemigroupReport, SandboxError> {
    let monoid = Monoid::new(n)?;
    let mut ids = ids_of(s, n)?;
    ids.sort_unstable();
    ids.dedup();
    let inside = {
        let mut v = vec![false; monoid.size];
        for &id in &ids {
            v[id as usize] = true;
        }
        v
    };
    let closed = ids
        .iter()
        .all(|&a| ids.iter().all(|&b| inside[monoid.compose(a, b) as usize]));
    let proper = ids.len() < monoid.size;
    let maximal = closed
        && proper
        && (0..monoid.size as u16).all(|x| {
            if inside[x as usize] {
                return true;
            }
            let mut gens = ids.clone();
            gens.push(x);
            monoid.closure_ids(&gens).len() == monoid.size
        });
    Ok(SubsemigroupReport {
        elements: ids.iter().map(|&id| id as u64).collect(),
        closed,
        proper,
        maximal,
    })
}

/// All subsets of size at most `cap` whose closure meets `u_set`, as an
/// ordered family of map-id sets, sized then lexicographic.
pub fn gen_family(u_set: &[FinMap], n: usize, cap: usize) -> Result<SetFamily, SandboxError> {
    let monoid = Monoid::new(n)?;
    let limit = if n <= 3 { 2 } else { 1 };
    if cap > limit {
        return Err(SandboxError::CapTooLarge { cap, limit, n });
    }
    let u_ids = ids_of(u_set, n)?;
    let in_u = {
        let mut v = vec![false; monoid.size];
        for &id in &u_ids {
            v[id as usize] = true;
        }
        v
    };
    let meets_u = |gens: &[u16]| monoid.closure_ids(gens).iter().any(|&c| in_u[c as usize]);
    let mut members: Vec<Vec<u64>> = Vec::new();
    if cap >= 1 {
        for a in 0..monoid.size as u16 {
            if meets_u(&[a]) {
                members.push(vec![a as u64]);
            }
        }
    }
    if cap >= 2 {
        for a in 0..monoid.size as u16 {
            for b in a + 1..monoid.size as u16 {
                if meets_u(&[a, b]) {
                    members.push(vec![a as u64, b as u64]);
                }
            }
        }
    }
    Ok(SetFamily::new(members)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct CandidateOutcome {
    pub h: Vec<u64>,
    pub complement: SubsemigroupReport,
    /// Adjoining any single element of `h` back regenerates the full monoid.
    pub readjoin_regenerates: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub n: usize,
    pub w: Vec<u64>,
    pub u: Vec<u64>,
    pub cap: usize,
    pub family_size: usize,
    pub candidates: Vec<CandidateOutcome>,
    pub sequential_witness: Vec<u64>,
    pub sequential_witness_valid: bool,
}

/// Runs the full equivalence check: validates the hypotheses on `w` and `u`,
/// builds the capped generating family, filters its hitting sets away from
/// `w`, and brute-checks each candidate's complement for closure and
/// maximality, plus the converse regeneration.
pub fn theorem1_pipeline(
    w: &[FinMap],
    u_set: &[FinMap],
    n: usize,
    cap: usize,
) -> Result<PipelineReport, SandboxError> {
    let monoid = Monoid::new(n)?;
    let w_ids = {
        let mut v = ids_of(w, n)?;
        v.sort_unstable();
        v.dedup();
        v
    };
    let u_ids = {
        let mut v = ids_of(u_set, n)?;
        v.sort_unstable();
        v.dedup();
        v
    };
    let in_w = {
        let mut v = vec![false; monoid.size];
        for &id in &w_ids {
            v[id as usize] = true;
        }
        v
    };
    for &a in &w_ids {
        for &b in &w_ids {
            let c = monoid.compose(a, b);
            if !in_w[c as usize] {
                return Err(SandboxError::HypothesisViolation {
                    which: "W is not closed under composition".to_string(),
                    witness: c as u64,
                });
            }
        }
    }
    if let Some(&shared) = u_ids.iter().find(|&&id| in_w[id as usize]) {
        return Err(SandboxError::HypothesisViolation {
            which: "U intersects W".to_string(),
            witness: shared as u64,
        });
    }
    for &uid in &u_ids {
        let mut gens = w_ids.clone();
        gens.push(uid);
        if monoid.closure_ids(&gens).len() != monoid.size {
            return Err(SandboxError::HypothesisViolation {
                which: "adjoining an element of U does not regenerate the full monoid".to_string(),
                witness: uid as u64,
            });
        }
    }
    let family = gen_family(u_set, n, cap)?;
    let avoid: Vec<u64> = w_ids.iter().map(|&id| id as u64).collect();
    let candidate_sets = filter_h(&family, &avoid)?;
    let sequential_witness = construct_h(&family, TieBreak::Smallest)?;
    let sequential_witness_valid = is_in_j(&sequential_witness, &family);
    let mut candidates = Vec::new();
    for h in candidate_sets {
        let complement_maps: Vec<FinMap> = (0..monoid.size as u64)
            .filter(|id| h.binary_search(id).is_err())
            .map(|id| FinMap::from_id(n, id))
            .collect::<Result<_, _>>()?;
        let complement = is_maximal(&complement_maps, n)?;
        let complement_ids: Vec<u16> = complement.elements.iter().map(|&id| id as u16).collect();
        let readjoin_regenerates = h.iter().all(|&x| {
            let mut gens = complement_ids.clone();
            gens.push(x as u16);
            monoid.closure_ids(&gens).len() == monoid.size
        });
        candidates.push(CandidateOutcome {
            h,
            complement,
            readjoin_regenerates,
        });
    }
    Ok(PipelineReport {
        n,
        w: avoid,
        u: u_ids.iter().map(|&id| id as u64).collect(),
        cap,
        family_size: family.members().len(),
        candidates,
        sequential_witness,
        sequential_witness_valid,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Sym3,
    Sym4,
}

impl Preset {
    pub fn degree(self) -> usize {
        match self {
            Preset::Sym3 => 3,
            Preset::Sym4 => 4,
        }
    }
}

/// The preset inputs: W is the permutation group, U the maps of corank one,
/// and the family cap is 1, where singleton members force the answer.
pub fn preset_inputs(p: Preset) -> (Vec<FinMap>, Vec<FinMap>, usize, usize) {
    let n = p.degree();
    let w = maps_of_rank(n, n).expect("guarded degree");
    let u = maps_of_rank(n, n - 1).expect("guarded degree");
    (w, u, n, 1)
}

pub fn run_preset(p: Preset) -> Result<PipelineReport, SandboxError> {
    let (w, u, n, cap) = preset_inputs(p);
    theorem1_pipeline(&w, &u, n, cap)
}
