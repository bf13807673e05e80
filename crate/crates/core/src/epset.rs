//! Eventually periodic subsets of the natural numbers.
//!
//! An `EPSet` is described by a finite patch on `[0, N)` and a set of residues
//! modulo `m` that governs membership from `N` on. Every constructor reduces to
//! the canonical form (minimal period, then minimal threshold), so structural
//! equality coincides with set equality. Boolean operations unify the two
//! moduli through their least common multiple and stay exact.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extnat::{ExtNat, Fin, Inf};
use crate::num::{divisors, lcm};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EpsError {
    #[error("modulus must be at least 1")]
    ZeroModulus,
    #[error("residue {residue} is not below the modulus {modulus}")]
    ResidueOutOfRange { residue: u64, modulus: u64 },
    #[error("patch element {element} is not below the threshold {threshold}")]
    PatchOutOfRange { element: u64, threshold: u64 },
    #[error("index {index} is beyond the cardinality {cardinality}")]
    IndexBeyondCardinality { index: u64, cardinality: ExtNat },
}

/// Canonical eventually periodic subset of the naturals.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EPSet {
    threshold: u64,
    modulus: u64,
    residues: Vec<u64>,
    patch: Vec<u64>,
}

impl EPSet {
    /// Builds the set with membership `n ∈ patch` below `threshold` and
    /// `n mod modulus ∈ residues` from `threshold` on, then canonicalizes.
    pub fn new(
        threshold: u64,
        modulus: u64,
        residues: impl IntoIterator<Item = u64>,
        patch: impl IntoIterator<Item = u64>,
    ) -> Result<EPSet, EpsError> {
        if modulus == 0 {
            return Err(EpsError::ZeroModulus);
        }
        let mut residues: Vec<u64> = residues.into_iter().collect();
        residues.sort_unstable();
        residues.dedup();
        if let Some(&r) = residues.iter().find(|&&r| r >= modulus) {
            return Err(EpsError::ResidueOutOfRange { residue: r, modulus });
        }
        let mut patch: Vec<u64> = patch.into_iter().collect();
        patch.sort_unstable();
        patch.dedup();
        if let Some(&p) = patch.iter().find(|&&p| p >= threshold) {
            return Err(EpsError::PatchOutOfRange { element: p, threshold });
        }
        let mut s = EPSet { threshold, modulus, residues, patch };
        s.canonicalize();
        Ok(s)
    }

    /// The whole of the naturals.
    pub fn naturals() -> EPSet {
        EPSet { threshold: 0, modulus: 1, residues: vec![0], patch: Vec::new() }
    }

    pub fn empty() -> EPSet {
        EPSet { threshold: 0, modulus: 1, residues: Vec::new(), patch: Vec::new() }
    }

    pub fn singleton(v: u64) -> EPSet {
        EPSet::from_finite([v])
    }

    pub fn from_finite(members: impl IntoIterator<Item = u64>) -> EPSet {
        let mut patch: Vec<u64> = members.into_iter().collect();
        patch.sort_unstable();
        patch.dedup();
        let threshold = patch.last().map_or(0, |&p| p + 1);
        let mut s = EPSet { threshold, modulus: 1, residues: Vec::new(), patch };
        s.canonicalize();
        s
    }

    /// The full residue class `{n : n ≡ residue (mod modulus)}`.
    pub fn residue_class(modulus: u64, residue: u64) -> EPSet {
        EPSet::new(0, modulus, [residue], []).expect("valid residue class")
    }

    /// Arithmetic progression `{start + k·step : k ≥ 0}` with `step ≥ 1`.
    pub fn progression(start: u64, step: u64) -> EPSet {
        assert!(step >= 1, "progression step must be positive");
        EPSet::new(start, step, [start % step], []).expect("valid progression")
    }

    fn canonicalize(&mut self) {
        // Minimal period of the tail: smallest divisor d of m with the
        // residue set invariant under shifting by d.
        let m = self.modulus;
        let mut bits = vec![false; m as usize];
        for &r in &self.residues {
            bits[r as usize] = true;
        }
        for d in divisors(m) {
            if (0..m).all(|x| bits[x as usize] == bits[(x % d) as usize]) {
                if d != m {
                    self.modulus = d;
                    self.residues.retain(|&r| r < d);
                }
                break;
            }
        }
        // Minimal threshold: drop trailing patch positions that agree with the
        // tail rule.
        while self.threshold > 0 {
            let v = self.threshold - 1;
            let tail_says = self.residues.binary_search(&(v % self.modulus)).is_ok();
            let patch_says = self.patch.last() == Some(&v);
            if tail_says != patch_says {
                break;
            }
            if patch_says {
                self.patch.pop();
            }
            self.threshold = v;
        }
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn patch(&self) -> &[u64] {
        &self.patch
    }

    pub fn contains(&self, n: u64) -> bool {
        if n < self.threshold {
            self.patch.binary_search(&n).is_ok()
        } else {
            self.residues.binary_search(&(n % self.modulus)).is_ok()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.patch.is_empty() && self.residues.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn cardinality(&self) -> ExtNat {
        if self.residues.is_empty() {
            Fin(self.patch.len() as u64)
        } else {
            Inf
        }
    }

    /// Offsets of the tail members within each length-`m` window starting at
    /// the threshold, in increasing order.
    fn tail_offsets(&self) -> Vec<u64> {
        let m = self.modulus;
        let shift = self.threshold % m;
        let mut offs: Vec<u64> = self
            .residues
            .iter()
            .map(|&r| (r + m - shift) % m)
            .collect();
        offs.sort_unstable();
        offs
    }

    /// The `k`-th member in increasing order, zero-indexed.
    pub fn kth(&self, k: u64) -> Result<u64, EpsError> {
        let fin = self.patch.len() as u64;
        if k < fin {
            return Ok(self.patch[k as usize]);
        }
        if self.residues.is_empty() {
            return Err(EpsError::IndexBeyondCardinality { index: k, cardinality: self.cardinality() });
        }
        let offs = self.tail_offsets();
        let period = offs.len() as u64;
        let k = k - fin;
        let (q, i) = (k / period, k % period);
        Ok(self
            .threshold
            .checked_add(q.checked_mul(self.modulus).expect("EPSet member overflow"))
            .and_then(|v| v.checked_add(offs[i as usize]))
            .expect("EPSet member overflow"))
    }

    /// Number of members strictly below `x`.
    pub fn rank_below(&self, x: u64) -> u64 {
        if x <= self.threshold {
            return self.patch.partition_point(|&p| p < x) as u64;
        }
        let fin = self.patch.len() as u64;
        let offs = self.tail_offsets();
        let span = x - self.threshold;
        let (full, rem) = (span / self.modulus, span % self.modulus);
        fin + full * offs.len() as u64 + offs.partition_point(|&o| o < rem) as u64
    }

    pub fn first(&self) -> Option<u64> {
        self.kth(0).ok()
    }

    /// Members in increasing order; infinite when the set is.
    pub fn members(&self) -> impl Iterator<Item = u64> + '_ {
        let offs = self.tail_offsets();
        let patch_len = self.patch.len() as u64;
        let set = self;
        (0u64..).map_while(move |k| {
            if k < patch_len {
                Some(set.patch[k as usize])
            } else if offs.is_empty() {
                None
            } else {
                let k = k - patch_len;
                let period = offs.len() as u64;
                Some(set.threshold + (k / period) * set.modulus + offs[(k % period) as usize])
            }
        })
    }

    fn combine(&self, other: &EPSet, op: impl Fn(bool, bool) -> bool) -> EPSet {
        let m = lcm(self.modulus, other.modulus);
        let threshold = self.threshold.max(other.threshold);
        let residues: Vec<u64> = (0..m)
            .filter(|&r| {
                op(
                    self.residues.binary_search(&(r % self.modulus)).is_ok(),
                    other.residues.binary_search(&(r % other.modulus)).is_ok(),
                )
            })
            .collect();
        let patch: Vec<u64> = (0..threshold)
            .filter(|&n| op(self.contains(n), other.contains(n)))
            .collect();
        let mut s = EPSet { threshold, modulus: m, residues, patch };
        s.canonicalize();
        s
    }

    pub fn union(&self, other: &EPSet) -> EPSet {
        self.combine(other, |a, b| a | b)
    }

    pub fn intersect(&self, other: &EPSet) -> EPSet {
        self.combine(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &EPSet) -> EPSet {
        self.combine(other, |a, b| a & !b)
    }

    /// Complement within the naturals.
    pub fn complement(&self) -> EPSet {
        EPSet::naturals().difference(self)
    }

    pub fn is_subset(&self, other: &EPSet) -> bool {
        self.difference(other).is_empty()
    }
}

impl fmt::Display for EPSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{N={}, m={}, R={:?}, F={:?}}}",
            self.threshold, self.modulus, self.residues, self.patch
        )
    }
}

#[derive(Serialize, Deserialize)]
struct RawEpSet {
    #[serde(rename = "N")]
    threshold: u64,
    m: u64,
    #[serde(rename = "R")]
    residues: Vec<u64>,
    #[serde(rename = "F")]
    patch: Vec<u64>,
}

impl Serialize for EPSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawEpSet {
            threshold: self.threshold,
            m: self.modulus,
            residues: self.residues.clone(),
            patch: self.patch.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EPSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawEpSet::deserialize(deserializer)?;
        EPSet::new(raw.threshold, raw.m, raw.residues, raw.patch).map_err(serde::de::Error::custom)
    }
}
