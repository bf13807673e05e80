//! The closed term algebra of transformations of ℕ.
//!
//! Terms are built from residue-class affine maps, the two pairing-based
//! leaves `ColProj` and `ColEmbed`, composition, and a handful of named lazy
//! constructions. Invariants of composite terms come from a rule engine that
//! returns exact values where composition theory forces them and certified
//! intervals elsewhere; classification into the transformation classes is
//! derived from those intervals and is allowed to answer Unknown.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::de::Error as _;
use serde::{Deserialize, Serialize};

use crate::epset::EPSet;
use crate::extnat::{ExtNat, Fin, Inf};
use crate::rca::{RcaInvariants, RcaMap};

/// Cantor pairing π(i,j) = (i+j)(i+j+1)/2 + j. Aborts when the result does
/// not fit in 64 bits.
pub fn pair(i: u64, j: u64) -> u64 {
    let s = i as u128 + j as u128;
    assert!(s <= 6_074_001_000, "pairing overflow");
    let z = s * (s + 1) / 2 + j as u128;
    u64::try_from(z).expect("pairing overflow")
}

/// Inverse of `pair`.
pub fn unpair(z: u64) -> (u64, u64) {
    let w = ((8 * z as u128 + 1).isqrt() - 1) / 2;
    let t = w * (w + 1) / 2;
    let j = z as u128 - t;
    ((w - j) as u64, j as u64)
}

// ---------------------------------------------------------------------------
// Interval quantities and three-valued logic

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trilean {
    Yes,
    No,
    Unknown,
}

impl Trilean {
    pub fn from_bool(b: bool) -> Trilean {
        if b {
            Trilean::Yes
        } else {
            Trilean::No
        }
    }

    pub fn not(self) -> Trilean {
        match self {
            Trilean::Yes => Trilean::No,
            Trilean::No => Trilean::Yes,
            Trilean::Unknown => Trilean::Unknown,
        }
    }

    /// Three-valued conjunction: any No wins, otherwise any Unknown.
    pub fn and(self, other: Trilean) -> Trilean {
        match (self, other) {
            (Trilean::No, _) | (_, Trilean::No) => Trilean::No,
            (Trilean::Yes, Trilean::Yes) => Trilean::Yes,
            _ => Trilean::Unknown,
        }
    }
}

impl fmt::Display for Trilean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trilean::Yes => write!(f, "yes"),
            Trilean::No => write!(f, "no"),
            Trilean::Unknown => write!(f, "unknown"),
        }
    }
}

/// Certified interval for a cardinal quantity: the true value lies in
/// `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quantity {
    pub lo: ExtNat,
    pub hi: ExtNat,
}

impl Quantity {
    pub fn exact(v: ExtNat) -> Quantity {
        Quantity { lo: v, hi: v }
    }

    pub fn bounds(lo: ExtNat, hi: ExtNat) -> Quantity {
        assert!(lo <= hi, "interval bounds out of order");
        Quantity { lo, hi }
    }

    pub fn unknown() -> Quantity {
        Quantity { lo: Fin(0), hi: Inf }
    }

    pub fn as_exact(&self) -> Option<ExtNat> {
        (self.lo == self.hi).then_some(self.lo)
    }

    pub fn is_zero(&self) -> Trilean {
        if self.hi == Fin(0) {
            Trilean::Yes
        } else if self.lo >= Fin(1) {
            Trilean::No
        } else {
            Trilean::Unknown
        }
    }

    pub fn is_infinite(&self) -> Trilean {
        if self.lo == Inf {
            Trilean::Yes
        } else if self.hi != Inf {
            Trilean::No
        } else {
            Trilean::Unknown
        }
    }

    pub fn is_finite(&self) -> Trilean {
        self.is_infinite().not()
    }

    fn raise_lo(&mut self, v: ExtNat) -> bool {
        if v > self.lo {
            self.lo = v;
            true
        } else {
            false
        }
    }

    fn cap_hi(&mut self, v: ExtNat) -> bool {
        if v < self.hi {
            self.hi = v;
            true
        } else {
            false
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_exact() {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "[{}, {}]", self.lo, self.hi),
        }
    }
}

impl Serialize for Quantity {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(None)?;
        match self.as_exact() {
            Some(v) => map.serialize_entry("exact", &v)?,
            None => {
                map.serialize_entry("lo", &self.lo)?;
                map.serialize_entry("hi", &self.hi)?;
            }
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            exact: Option<ExtNat>,
            lo: Option<ExtNat>,
            hi: Option<ExtNat>,
        }
        let raw = Raw::deserialize(deserializer)?;
        match (raw.exact, raw.lo, raw.hi) {
            (Some(v), None, None) => Ok(Quantity::exact(v)),
            (None, Some(lo), Some(hi)) if lo <= hi => Ok(Quantity { lo, hi }),
            _ => Err(D::Error::custom("expected {\"exact\":v} or {\"lo\":l,\"hi\":h}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Invariant reports

/// Exact-or-bounded invariants of one transformation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// Defect: values never attained.
    pub d: Quantity,
    /// Collapse: total excess fiber mass.
    pub c: Quantity,
    /// Image points with infinite fibers.
    pub k: Quantity,
    pub rank: Quantity,
    /// Exact image when representable; `None` means unknown.
    pub image: Option<EPSet>,
    pub has_infinite_kernel_class: Trilean,
}

impl InvariantReport {
    pub fn from_rca(inv: &RcaInvariants) -> InvariantReport {
        let mut rep = InvariantReport {
            d: Quantity::exact(inv.defect),
            c: Quantity::exact(inv.collapse),
            k: Quantity::exact(inv.infinite_fibers),
            rank: Quantity::exact(inv.rank),
            image: Some(inv.image.clone()),
            has_infinite_kernel_class: Trilean::from_bool(inv.has_infinite_kernel_class),
        };
        rep.normalize();
        rep
    }

    /// Propagates the arithmetic relations between the four quantities and the
    /// kernel flag until nothing changes.
    pub fn normalize(&mut self) {
        for _ in 0..8 {
            let mut changed = false;
            if let Some(image) = &self.image {
                let rank = Quantity::exact(image.cardinality());
                let d = Quantity::exact(image.complement().cardinality());
                changed |= self.rank != rank || self.d != d;
                self.rank = rank;
                self.d = d;
            }
            changed |= self.rank.raise_lo(Fin(1));
            if self.has_infinite_kernel_class == Trilean::Yes {
                changed |= self.k.raise_lo(Fin(1));
            }
            if self.has_infinite_kernel_class == Trilean::No && self.k != Quantity::exact(Fin(0)) {
                self.k = Quantity::exact(Fin(0));
                changed = true;
            }
            if self.k.lo >= Fin(1) {
                changed |= self.c.raise_lo(Inf);
                if self.has_infinite_kernel_class != Trilean::Yes {
                    self.has_infinite_kernel_class = Trilean::Yes;
                    changed = true;
                }
            }
            if self.k.hi == Fin(0) && self.has_infinite_kernel_class != Trilean::No {
                self.has_infinite_kernel_class = Trilean::No;
                changed = true;
            }
            if self.c.hi != Inf {
                // Finite collapse: all fibers finite, cofinitely many points
                // keep distinct values.
                changed |= self.k.cap_hi(Fin(0));
                changed |= self.rank.raise_lo(Inf);
            }
            if self.d.hi != Inf {
                changed |= self.rank.raise_lo(Inf);
            }
            if self.rank.hi != Inf {
                changed |= self.d.raise_lo(Inf);
            }
            if self.k.lo == Inf {
                changed |= self.rank.raise_lo(Inf);
            }
            changed |= self.k.cap_hi(self.rank.hi);
            if !changed {
                break;
            }
        }
        for q in [&self.d, &self.c, &self.k, &self.rank] {
            debug_assert!(q.lo <= q.hi, "inconsistent report {self:?}");
        }
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d={} c={} k={} rank={} infinite_kernel_class={}",
            self.d, self.c, self.k, self.rank, self.has_infinite_kernel_class
        )?;
        if let Some(image) = &self.image {
            write!(f, " image={image}")?;
        }
        Ok(())
    }
}

/// Interval rules for a composite `first; second`. Sound for every pair of
/// transformations: subadditivity caps each quantity above, monotonicity in
/// the matching argument bounds it below, and the two one-sided exactness
/// rules fire when a factor is known injective or surjective.
fn compose_reports(f: &InvariantReport, g: &InvariantReport) -> InvariantReport {
    let mut d = Quantity { lo: g.d.lo, hi: f.d.hi + g.d.hi };
    let mut c = Quantity { lo: f.c.lo, hi: f.c.hi + g.c.hi };
    let mut k = Quantity { lo: Fin(0), hi: f.k.hi + g.k.hi };
    if f.k.lo == Inf && g.k.hi == Fin(0) {
        // Each fiber of the second factor is finite, so it can only merge
        // finitely many of the first factor's infinitely many infinite fibers
        // into one.
        k.lo = Inf;
    }
    let mut rank = Quantity { lo: Fin(1), hi: f.rank.hi.min(g.rank.hi) };
    let mut image = None;
    let mut kernel = match (f.has_infinite_kernel_class, g.has_infinite_kernel_class) {
        (Trilean::Yes, _) => Trilean::Yes,
        (_, Trilean::Yes) if f.d.as_exact() == Some(Fin(0)) => Trilean::Yes,
        (Trilean::No, Trilean::No) => Trilean::No,
        _ => Trilean::Unknown,
    };
    if g.c.as_exact() == Some(Fin(0)) {
        // Injective second factor: the composite has the first factor's
        // kernel structure.
        c = f.c;
        k = f.k;
        kernel = f.has_infinite_kernel_class;
    }
    if f.d.as_exact() == Some(Fin(0)) {
        // Surjective first factor: the composite has the second factor's
        // image.
        rank = g.rank;
        d = g.d;
        image = g.image.clone();
    }
    let mut rep = InvariantReport {
        d,
        c,
        k,
        rank,
        image,
        has_infinite_kernel_class: kernel,
    };
    rep.normalize();
    rep
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flag {
    FiniteRank,
    Sym,
    Inj,
    Sur,
    Cp,
    IfClass,
    FiClass,
    CpGenerated,
}

impl Flag {
    pub fn all() -> [Flag; 8] {
        [
            Flag::FiniteRank,
            Flag::Sym,
            Flag::Inj,
            Flag::Sur,
            Flag::Cp,
            Flag::IfClass,
            Flag::FiClass,
            Flag::CpGenerated,
        ]
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Flag::FiniteRank => "FiniteRank",
            Flag::Sym => "Sym",
            Flag::Inj => "Inj",
            Flag::Sur => "Sur",
            Flag::Cp => "Cp",
            Flag::IfClass => "IF",
            Flag::FiClass => "FI",
            Flag::CpGenerated => "CpGenerated",
        };
        write!(f, "{name}")
    }
}

impl Serialize for Flag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Tri-valued membership in each transformation class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassFlags {
    #[serde(rename = "FiniteRank")]
    pub finite_rank: Trilean,
    #[serde(rename = "Sym")]
    pub sym: Trilean,
    #[serde(rename = "Inj")]
    pub inj: Trilean,
    #[serde(rename = "Sur")]
    pub sur: Trilean,
    #[serde(rename = "Cp")]
    pub cp: Trilean,
    #[serde(rename = "IF")]
    pub if_class: Trilean,
    #[serde(rename = "FI")]
    pub fi_class: Trilean,
    #[serde(rename = "CpGenerated")]
    pub cp_generated: Trilean,
}

impl ClassFlags {
    pub fn from_report(r: &InvariantReport) -> ClassFlags {
        ClassFlags {
            finite_rank: r.rank.is_finite(),
            sym: r.c.is_zero().and(r.d.is_zero()),
            inj: r
                .rank
                .is_infinite()
                .and(r.c.is_zero())
                .and(r.d.is_zero().not()),
            sur: r.d.is_zero().and(r.c.is_zero().not()),
            cp: r.k.is_infinite(),
            if_class: r.c.is_infinite().and(r.d.is_finite()),
            fi_class: r.d.is_infinite().and(r.c.is_finite()),
            cp_generated: r.has_infinite_kernel_class,
        }
    }

    pub fn get(&self, flag: Flag) -> Trilean {
        match flag {
            Flag::FiniteRank => self.finite_rank,
            Flag::Sym => self.sym,
            Flag::Inj => self.inj,
            Flag::Sur => self.sur,
            Flag::Cp => self.cp,
            Flag::IfClass => self.if_class,
            Flag::FiClass => self.fi_class,
            Flag::CpGenerated => self.cp_generated,
        }
    }

    /// Flags resolved Yes, in display order.
    pub fn yes_set(&self) -> Vec<Flag> {
        Flag::all()
            .into_iter()
            .filter(|&f| self.get(f) == Trilean::Yes)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Flag, Trilean)> + '_ {
        Flag::all().into_iter().map(move |f| (f, self.get(f)))
    }
}

// ---------------------------------------------------------------------------
// Terms

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Term {
    Rca(RcaMap),
    ColProj,
    ColEmbed,
    Compose {
        first: Box<Term>,
        second: Box<Term>,
    },
    Lazy(LazyTerm),
}

impl Term {
    pub fn compose(first: Term, second: Term) -> Term {
        Term::Compose {
            first: Box::new(first),
            second: Box::new(second),
        }
    }

    pub fn identity() -> Term {
        Term::Rca(RcaMap::identity())
    }

    pub fn eval(&self, n: u64) -> u64 {
        match self {
            Term::Rca(map) => map.eval(n),
            Term::ColProj => unpair(n).0,
            Term::ColEmbed => pair(n, 0),
            Term::Compose { first, second } => second.eval(first.eval(n)),
            Term::Lazy(lazy) => lazy.eval(n),
        }
    }

    /// Collapses a composition chain of residue-class affine maps to one
    /// exact map; `None` when a pairing or lazy leaf is involved.
    pub fn as_rca(&self) -> Option<RcaMap> {
        match self {
            Term::Rca(map) => Some(map.clone()),
            Term::Compose { first, second } => Some(first.as_rca()?.compose(&second.as_rca()?)),
            _ => None,
        }
    }

    pub fn report(&self) -> InvariantReport {
        match self {
            Term::Rca(map) => InvariantReport::from_rca(&map.invariants()),
            Term::ColProj => {
                let mut rep = InvariantReport {
                    d: Quantity::exact(Fin(0)),
                    c: Quantity::exact(Inf),
                    k: Quantity::exact(Inf),
                    rank: Quantity::exact(Inf),
                    image: Some(EPSet::naturals()),
                    has_infinite_kernel_class: Trilean::Yes,
                };
                rep.normalize();
                rep
            }
            Term::ColEmbed => {
                let mut rep = InvariantReport {
                    d: Quantity::exact(Inf),
                    c: Quantity::exact(Fin(0)),
                    k: Quantity::exact(Fin(0)),
                    rank: Quantity::exact(Inf),
                    image: None,
                    has_infinite_kernel_class: Trilean::No,
                };
                rep.normalize();
                rep
            }
            Term::Compose { first, second } => {
                if let Some(exact) = self.as_rca() {
                    InvariantReport::from_rca(&exact.invariants())
                } else {
                    compose_reports(&first.report(), &second.report())
                }
            }
            Term::Lazy(lazy) => lazy.report().clone(),
        }
    }

    pub fn classify(&self) -> ClassFlags {
        ClassFlags::from_report(&self.report())
    }

    pub fn contains_lazy(&self) -> bool {
        match self {
            Term::Lazy(_) => true,
            Term::Compose { first, second } => first.contains_lazy() || second.contains_lazy(),
            _ => false,
        }
    }

    /// Strictly increasing enumeration of the preimage of `y`.
    pub fn fiber_stream(&self, y: u64) -> FiberStream {
        if let Some(map) = self.as_rca() {
            return FiberStream::set(map.fiber(y));
        }
        match self {
            Term::ColProj => FiberStream::Column { i: y, j: 0 },
            Term::ColEmbed => {
                let (i, j) = unpair(y);
                FiberStream::Point((j == 0).then_some(i))
            }
            Term::Compose { first, second } => {
                if let Some(g) = second.as_rca() {
                    let outer = g.fiber(y);
                    if outer.is_finite() {
                        let parts = outer.members().map(|m| first.fiber_stream(m)).collect();
                        return FiberStream::merge(parts);
                    }
                }
                FiberStream::scan(self.clone(), y)
            }
            _ => FiberStream::scan(self.clone(), y),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Rca(map) => write!(
                f,
                "rca(N={}, m={})",
                map.threshold(),
                map.modulus()
            ),
            Term::ColProj => write!(f, "colproj"),
            Term::ColEmbed => write!(f, "colembed"),
            Term::Compose { first, second } => write!(f, "({first} ; {second})"),
            Term::Lazy(lazy) => write!(f, "{}", lazy.kind.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Fiber streams

/// Positions a fallback enumeration scans before giving up; exact backends
/// never hit it, and the range shrinks further where evaluation would leave
/// 64-bit arithmetic.
const FIBER_SCAN_CAP: u64 = 250_000;

pub enum FiberStream {
    Set { set: EPSet, k: u64 },
    Column { i: u64, j: u64 },
    Point(Option<u64>),
    Merge {
        streams: Vec<FiberStream>,
        front: std::collections::BinaryHeap<std::cmp::Reverse<(u64, usize)>>,
    },
    Scan {
        term: Box<Term>,
        y: u64,
        next: u64,
        limit: u64,
    },
}

impl FiberStream {
    fn set(set: EPSet) -> FiberStream {
        FiberStream::Set { set, k: 0 }
    }

    fn scan(term: Term, y: u64) -> FiberStream {
        let limit = safe_window(&term, FIBER_SCAN_CAP);
        FiberStream::Scan {
            term: Box::new(term),
            y,
            next: 0,
            limit,
        }
    }

    fn merge(mut streams: Vec<FiberStream>) -> FiberStream {
        let mut front = std::collections::BinaryHeap::new();
        for (idx, stream) in streams.iter_mut().enumerate() {
            if let Some(v) = stream.next() {
                front.push(std::cmp::Reverse((v, idx)));
            }
        }
        FiberStream::Merge { streams, front }
    }
}

impl Iterator for FiberStream {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        match self {
            FiberStream::Set { set, k } => {
                let v = set.kth(*k).ok()?;
                *k += 1;
                Some(v)
            }
            FiberStream::Column { i, j } => {
                let v = pair(*i, *j);
                *j += 1;
                Some(v)
            }
            FiberStream::Point(p) => p.take(),
            FiberStream::Merge { streams, front } => {
                let std::cmp::Reverse((v, idx)) = front.pop()?;
                if let Some(next) = streams[idx].next() {
                    front.push(std::cmp::Reverse((next, idx)));
                }
                Some(v)
            }
            FiberStream::Scan { term, y, next, limit } => {
                while *next < *limit {
                    let n = *next;
                    *next += 1;
                    if term.eval(n) == *y {
                        return Some(n);
                    }
                }
                None
            }
        }
    }
}

/// All preimages of `y` below `window`, by direct evaluation.
pub fn fiber_in_window(t: &Term, y: u64, window: u64) -> Vec<u64> {
    (0..window).filter(|&n| t.eval(n) == y).collect()
}

/// Saturating upper bound for the outputs of `t` on inputs in `[0, bound]`.
fn output_bound(t: &Term, bound: u128) -> u128 {
    match t {
        Term::Rca(map) => {
            let q = bound / map.modulus() as u128;
            let mut out = map.patch().iter().map(|&v| v as u128).max().unwrap_or(0);
            for rule in map.tails() {
                let v = match rule {
                    crate::rca::TailRule::Const { b } => *b as u128,
                    crate::rca::TailRule::Affine { a, b } => (*a as u128)
                        .saturating_mul(q)
                        .saturating_add(u128::try_from(*b).unwrap_or(0)),
                };
                out = out.max(v);
            }
            out
        }
        Term::ColProj => bound,
        Term::ColEmbed => bound.saturating_mul(bound.saturating_add(1)) / 2,
        Term::Compose { first, second } => output_bound(second, output_bound(first, bound)),
        // Construction-specific growth; treated as unbounded.
        Term::Lazy(_) => u128::MAX,
    }
}

/// Largest window not exceeding `desired` on which evaluating `t` provably
/// stays within 64-bit range.
pub fn safe_window(t: &Term, desired: u64) -> u64 {
    let mut w = desired.max(1);
    while w > 1 && output_bound(t, (w - 1) as u128) > u64::MAX as u128 {
        w /= 2;
    }
    w
}

// ---------------------------------------------------------------------------
// Kernel indexing

/// Scan budget for kernel-class discovery on terms without a closed form.
const KERNEL_SCAN_CAP: u64 = 5_000_000;
/// Per-position class assignments are stored only this far.
const KERNEL_STORE_LIMIT: u64 = 1 << 18;

/// Kernel classes of a term, identified in order of first appearance with
/// contiguous ids from 0.
pub struct KernelIndex {
    backend: KernelBackend,
}

enum KernelBackend {
    /// Pairing columns: class of n is its first coordinate, appearing in
    /// index order.
    Columns,
    Scan {
        term: Term,
        assignments: Vec<(u64, u64)>,
        firsts: Vec<u64>,
        counts: Vec<u64>,
        ids: HashMap<u64, u64>,
        scanned: u64,
    },
}

impl KernelIndex {
    pub fn new(term: &Term) -> KernelIndex {
        KernelIndex {
            backend: Self::backend_for(term),
        }
    }

    /// An injective second factor leaves kernel classes, their order of first
    /// appearance, and hence their ids untouched.
    fn backend_for(term: &Term) -> KernelBackend {
        match term {
            Term::ColProj => KernelBackend::Columns,
            Term::Compose { first, second }
                if second
                    .as_rca()
                    .is_some_and(|g| g.collapse() == Fin(0)) =>
            {
                Self::backend_for(first)
            }
            other => KernelBackend::Scan {
                term: other.clone(),
                assignments: Vec::new(),
                firsts: Vec::new(),
                counts: Vec::new(),
                ids: HashMap::new(),
                scanned: 0,
            },
        }
    }

    fn step(term: &Term, assignments: &mut Vec<(u64, u64)>, firsts: &mut Vec<u64>, counts: &mut Vec<u64>, ids: &mut HashMap<u64, u64>, scanned: &mut u64) {
        let n = *scanned;
        let value = term.eval(n);
        let id = *ids.entry(value).or_insert_with(|| {
            firsts.push(n);
            counts.push(0);
            (firsts.len() - 1) as u64
        });
        let local = counts[id as usize];
        counts[id as usize] += 1;
        if n < KERNEL_STORE_LIMIT {
            assignments.push((id, local));
        }
        *scanned += 1;
    }

    /// Class id and rank within the class of position `n`.
    pub fn class_and_rank(&mut self, n: u64) -> (u64, u64) {
        match &mut self.backend {
            KernelBackend::Columns => unpair(n),
            KernelBackend::Scan {
                term,
                assignments,
                firsts,
                counts,
                ids,
                scanned,
            } => {
                assert!(n < KERNEL_STORE_LIMIT, "kernel query beyond stored window");
                while *scanned <= n {
                    Self::step(term, assignments, firsts, counts, ids, scanned);
                }
                assignments[n as usize]
            }
        }
    }

    pub fn class_of(&mut self, n: u64) -> u64 {
        self.class_and_rank(n).0
    }

    /// First position whose class has the given id.
    pub fn first_of_class(&mut self, id: u64) -> u64 {
        match &mut self.backend {
            KernelBackend::Columns => pair(id, 0),
            KernelBackend::Scan {
                term,
                assignments,
                firsts,
                counts,
                ids,
                scanned,
            } => {
                while (firsts.len() as u64) <= id && *scanned < KERNEL_SCAN_CAP {
                    Self::step(term, assignments, firsts, counts, ids, scanned);
                }
                *firsts
                    .get(id as usize)
                    .unwrap_or_else(|| panic!("kernel class {id} not materialized within the scan budget"))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Window reports

/// Empirical census of a term on `[0, window)`. Observed quantities are
/// monotone lower bounds; a window never certifies infinitude.
#[derive(Clone, Debug, Serialize)]
pub struct WindowReport {
    pub window: u64,
    /// `window` minus the number of distinct observed values: a lower bound
    /// for the collapse.
    pub observed_collapse: u64,
    pub distinct_values: u64,
    /// Up to five (value, fiber size) entries, largest fibers first.
    pub largest_fibers: Vec<(u64, u64)>,
    /// Values below the maximum observed one that never occurred.
    pub missing_below_max: u64,
    #[serde(skip)]
    counts: BTreeMap<u64, u64>,
}

impl WindowReport {
    pub fn observed(&self, value: u64) -> u64 {
        self.counts.get(&value).copied().unwrap_or(0)
    }

    pub fn observed_values(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&v, &c)| (v, c))
    }
}

pub fn window_report(t: &Term, window: u64) -> WindowReport {
    assert!(window >= 1, "window must be positive");
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for n in 0..window {
        *counts.entry(t.eval(n)).or_insert(0) += 1;
    }
    let distinct_values = counts.len() as u64;
    let max_observed = *counts.keys().next_back().expect("nonempty window");
    let mut by_size: Vec<(u64, u64)> = counts.iter().map(|(&v, &c)| (v, c)).collect();
    by_size.sort_by_key(|&(v, c)| (std::cmp::Reverse(c), v));
    by_size.truncate(5);
    WindowReport {
        window,
        observed_collapse: window - distinct_values,
        distinct_values,
        largest_fibers: by_size,
        missing_below_max: max_observed - (distinct_values - 1),
        counts,
    }
}

// ---------------------------------------------------------------------------
// Lazy constructions

#[derive(Debug, PartialEq)]
pub enum LazyError {
    /// The construction needs structural access (fibers, kernel ranks) that
    /// this term shape does not expose.
    UnsupportedStructure(String),
    /// The base map has no infinite kernel class.
    NoInfiniteClass,
}

impl fmt::Display for LazyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LazyError::UnsupportedStructure(detail) => {
                write!(f, "unsupported structure: {detail}")
            }
            LazyError::NoInfiniteClass => write!(f, "the map has no infinite kernel class"),
        }
    }
}

impl std::error::Error for LazyError {}

/// Parameters of a named lazy construction.
#[derive(Clone, Debug, PartialEq)]
pub enum LazyKind {
    /// γ of the Cp factorization: n ↦ the (rank of n in its class)-th point
    /// of the α-fiber over the (class of n)-th infinite-fiber value of α.
    CpFactor { alpha: Box<Term>, beta: Box<Term> },
    /// δ of the Cp factorization: the class-indexed value map of β.
    CpCompleter { alpha: Box<Term>, beta: Box<Term> },
    /// γ of the right-generation construction with a Cp outcome.
    RightGenCp { alpha: RcaMap, beta: RcaMap },
    /// β₁ of the square factorization of a map with an infinite kernel class.
    SquareLeft { base: RcaMap },
    /// β₂ of the square factorization.
    SquareRight { base: RcaMap },
}

impl LazyKind {
    pub fn name(&self) -> &'static str {
        match self {
            LazyKind::CpFactor { .. } => "w_cp_left",
            LazyKind::CpCompleter { .. } => "w_cp_right",
            LazyKind::RightGenCp { .. } => "w_right_gen_cp",
            LazyKind::SquareLeft { .. } => "cp_square_left",
            LazyKind::SquareRight { .. } => "cp_square_right",
        }
    }
}

/// Structural view of a term with infinitely many infinite fibers, exposing
/// membership and rank in the set of infinite-fiber values plus direct access
/// to fiber members.
#[derive(Clone, Debug)]
enum CpAlpha {
    /// ColProj: every value has an infinite fiber (its pairing column).
    Columns,
    /// ColProj followed by an injective map g: the fiber over g(y) is column
    /// y.
    MappedColumns { section: RcaMap, image: EPSet },
}

impl CpAlpha {
    fn of(term: &Term) -> Option<CpAlpha> {
        match term {
            Term::ColProj => Some(CpAlpha::Columns),
            Term::Compose { first, second } if **first == Term::ColProj => {
                let g = second.as_rca()?;
                if g.collapse() != Fin(0) {
                    return None;
                }
                let (section, image) = g.section();
                Some(CpAlpha::MappedColumns { section, image })
            }
            _ => None,
        }
    }

    /// Rank of `y` among the infinite-fiber values, if it is one.
    fn k_rank(&self, y: u64) -> Option<u64> {
        match self {
            CpAlpha::Columns => Some(y),
            CpAlpha::MappedColumns { image, .. } => {
                image.contains(y).then(|| image.rank_below(y))
            }
        }
    }

    /// The `t`-th fiber point over the `k`-th infinite-fiber value.
    fn fiber_member(&self, k: u64, t: u64) -> u64 {
        match self {
            CpAlpha::Columns => pair(k, t),
            CpAlpha::MappedColumns { section, image } => {
                let v = image.kth(k).expect("infinite image");
                pair(section.eval(v), t)
            }
        }
    }
}

#[derive(Clone, Debug)]
enum LazyAux {
    Cp { view: CpAlpha },
    RightGen {
        image: EPSet,
        section: RcaMap,
        missing: EPSet,
    },
    Square {
        v0: u64,
        class0: EPSet,
        rest: EPSet,
    },
}

/// A deterministic named construction with an asserted invariant report.
/// Equality and serialization cover the construction parameters only; the
/// memoized kernel scan is shared between clones.
#[derive(Clone)]
pub struct LazyTerm {
    kind: LazyKind,
    report: InvariantReport,
    aux: LazyAux,
    memo: Arc<Mutex<Option<KernelIndex>>>,
}

impl fmt::Debug for LazyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LazyTerm")
            .field("kind", &self.kind)
            .field("report", &self.report)
            .finish_non_exhaustive()
    }
}

impl PartialEq for LazyTerm {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl LazyTerm {
    pub fn kind(&self) -> &LazyKind {
        &self.kind
    }

    /// The construction-asserted report; exact entries are justified by the
    /// construction, not recomputed.
    pub fn report(&self) -> &InvariantReport {
        &self.report
    }

    fn finish(kind: LazyKind, mut report: InvariantReport, aux: LazyAux) -> LazyTerm {
        report.normalize();
        LazyTerm {
            kind,
            report,
            aux,
            memo: Arc::new(Mutex::new(None)),
        }
    }

    pub fn cp_factor(alpha: Term, beta: Term) -> Result<LazyTerm, LazyError> {
        let view = CpAlpha::of(&alpha).ok_or_else(|| {
            LazyError::UnsupportedStructure(
                "alpha must be colproj or colproj followed by an injective map".into(),
            )
        })?;
        let report = InvariantReport {
            d: Quantity::unknown(),
            c: Quantity::exact(Fin(0)),
            k: Quantity::exact(Fin(0)),
            rank: Quantity::exact(Inf),
            image: None,
            has_infinite_kernel_class: Trilean::No,
        };
        Ok(Self::finish(
            LazyKind::CpFactor {
                alpha: Box::new(alpha),
                beta: Box::new(beta),
            },
            report,
            LazyAux::Cp { view },
        ))
    }

    pub fn cp_completer(alpha: Term, beta: Term) -> Result<LazyTerm, LazyError> {
        let view = CpAlpha::of(&alpha).ok_or_else(|| {
            LazyError::UnsupportedStructure(
                "alpha must be colproj or colproj followed by an injective map".into(),
            )
        })?;
        let report = InvariantReport {
            d: Quantity::unknown(),
            c: Quantity::unknown(),
            k: Quantity::bounds(Fin(0), Fin(1)),
            rank: Quantity::bounds(Fin(1), Inf),
            image: None,
            has_infinite_kernel_class: Trilean::Unknown,
        };
        Ok(Self::finish(
            LazyKind::CpCompleter {
                alpha: Box::new(alpha),
                beta: Box::new(beta),
            },
            report,
            LazyAux::Cp { view },
        ))
    }

    pub fn right_gen_cp(alpha: RcaMap, beta: RcaMap) -> LazyTerm {
        let (section, image) = alpha.section();
        let missing = image.complement();
        let beta_image = beta.image();
        let report = InvariantReport {
            d: Quantity::exact(beta_image.complement().cardinality()),
            c: Quantity::exact(Inf),
            k: Quantity::exact(Inf),
            rank: Quantity::exact(beta_image.cardinality()),
            image: Some(beta_image),
            has_infinite_kernel_class: Trilean::Yes,
        };
        Self::finish(
            LazyKind::RightGenCp { alpha, beta },
            report,
            LazyAux::RightGen {
                image,
                section,
                missing,
            },
        )
    }

    fn square_parts(base: &RcaMap) -> Result<(u64, EPSet, EPSet), LazyError> {
        let v0 = *base
            .infinite_fiber_values()
            .first()
            .ok_or(LazyError::NoInfiniteClass)?;
        let class0 = base.fiber(v0);
        let rest = class0.complement();
        Ok((v0, class0, rest))
    }

    pub fn square_left(base: RcaMap) -> Result<LazyTerm, LazyError> {
        let (v0, class0, rest) = Self::square_parts(&base)?;
        let report = InvariantReport {
            d: Quantity::exact(Inf),
            c: Quantity::exact(Inf),
            k: Quantity::exact(Inf),
            rank: Quantity::exact(Inf),
            image: None,
            has_infinite_kernel_class: Trilean::Yes,
        };
        Ok(Self::finish(
            LazyKind::SquareLeft { base },
            report,
            LazyAux::Square { v0, class0, rest },
        ))
    }

    pub fn square_right(base: RcaMap) -> Result<LazyTerm, LazyError> {
        let (v0, class0, rest) = Self::square_parts(&base)?;
        let report = InvariantReport {
            d: Quantity::exact(Fin(0)),
            c: Quantity::exact(Inf),
            k: Quantity::exact(Inf),
            rank: Quantity::exact(Inf),
            image: Some(EPSet::naturals()),
            has_infinite_kernel_class: Trilean::Yes,
        };
        Ok(Self::finish(
            LazyKind::SquareRight { base },
            report,
            LazyAux::Square { v0, class0, rest },
        ))
    }

    fn with_kernel<T>(&self, beta: &Term, f: impl FnOnce(&mut KernelIndex) -> T) -> T {
        let mut guard = self.memo.lock().expect("kernel memo poisoned");
        let index = guard.get_or_insert_with(|| KernelIndex::new(beta));
        f(index)
    }

    pub fn eval(&self, n: u64) -> u64 {
        match (&self.kind, &self.aux) {
            (LazyKind::CpFactor { beta, .. }, LazyAux::Cp { view }) => {
                let (class, rank) = self.with_kernel(beta, |idx| idx.class_and_rank(n));
                view.fiber_member(class, rank)
            }
            (LazyKind::CpCompleter { beta, .. }, LazyAux::Cp { view }) => match view.k_rank(n) {
                Some(class) => {
                    let first = self.with_kernel(beta, |idx| idx.first_of_class(class));
                    beta.eval(first)
                }
                None => 0,
            },
            (LazyKind::RightGenCp { beta, .. }, LazyAux::RightGen { image, section, missing }) => {
                if image.contains(n) {
                    beta.eval(section.eval(n))
                } else {
                    beta.eval(unpair(missing.rank_below(n)).0)
                }
            }
            (LazyKind::SquareLeft { .. }, LazyAux::Square { class0, rest, .. }) => {
                if class0.contains(n) {
                    pair(2 * unpair(class0.rank_below(n)).0, 0)
                } else {
                    pair(2 * rest.rank_below(n), 1)
                }
            }
            (LazyKind::SquareRight { base }, LazyAux::Square { v0, rest, .. }) => {
                let (i, j) = unpair(n);
                if i % 2 == 1 {
                    (i - 1) / 2
                } else if j == 1 {
                    match rest.kth(i / 2) {
                        Ok(m) => base.eval(m),
                        Err(_) => *v0,
                    }
                } else {
                    *v0
                }
            }
            _ => unreachable!("kind and aux are built together"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawLazy {
    name: String,
    params: BTreeMap<String, Term>,
}

impl Serialize for LazyTerm {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut params = BTreeMap::new();
        match &self.kind {
            LazyKind::CpFactor { alpha, beta } | LazyKind::CpCompleter { alpha, beta } => {
                params.insert("alpha".to_string(), (**alpha).clone());
                params.insert("beta".to_string(), (**beta).clone());
            }
            LazyKind::RightGenCp { alpha, beta } => {
                params.insert("alpha".to_string(), Term::Rca(alpha.clone()));
                params.insert("beta".to_string(), Term::Rca(beta.clone()));
            }
            LazyKind::SquareLeft { base } | LazyKind::SquareRight { base } => {
                params.insert("base".to_string(), Term::Rca(base.clone()));
            }
        }
        RawLazy {
            name: self.kind.name().to_string(),
            params,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LazyTerm {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawLazy::deserialize(deserializer)?;
        let mut params = raw.params;
        let mut take = |key: &str| {
            params
                .remove(key)
                .ok_or_else(|| D::Error::custom(format!("lazy term {} needs param {key}", raw.name)))
        };
        let take_rca = |term: Term, key: &str| {
            term.as_rca()
                .ok_or_else(|| D::Error::custom(format!("param {key} must be a residue-class affine term")))
        };
        let built = match raw.name.as_str() {
            "w_cp_left" => LazyTerm::cp_factor(take("alpha")?, take("beta")?),
            "w_cp_right" => LazyTerm::cp_completer(take("alpha")?, take("beta")?),
            "w_right_gen_cp" => {
                let alpha = take_rca(take("alpha")?, "alpha")?;
                let beta = take_rca(take("beta")?, "beta")?;
                Ok(LazyTerm::right_gen_cp(alpha, beta))
            }
            "cp_square_left" => LazyTerm::square_left(take_rca(take("base")?, "base")?),
            "cp_square_right" => LazyTerm::square_right(take_rca(take("base")?, "base")?),
            other => return Err(D::Error::custom(format!("unknown lazy construction {other}"))),
        };
        built.map_err(|e| D::Error::custom(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn pairing_is_a_bijection() {
        assert_eq!(pair(2, 0), 3);
        assert_eq!(pair(0, 1), 2);
        for i in 0..60 {
            for j in 0..60 {
                assert_eq!(unpair(pair(i, j)), (i, j));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for z in 0..5000 {
            let (i, j) = unpair(z);
            assert_eq!(pair(i, j), z);
            assert!(seen.insert((i, j)));
        }
    }

    #[test]
    fn eval_follows_the_right_action_order() {
        assert_eq!(Term::ColProj.eval(3), 2);
        assert_eq!(Term::ColEmbed.eval(2), 3);
        let round = Term::compose(Term::Rca(canon::dbl()), Term::Rca(canon::half()));
        assert_eq!(round.eval(7), 7);
        let embed_then_proj = Term::compose(Term::ColEmbed, Term::ColProj);
        for n in 0..200 {
            assert_eq!(embed_then_proj.eval(n), n);
        }
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..60 {
            let f = canon::sample_term(&mut rng, 2);
            let g = canon::sample_term(&mut rng, 2);
            let fg = Term::compose(f.clone(), g.clone());
            for n in 0..safe_window(&fg, 2000) {
                assert_eq!(fg.eval(n), g.eval(f.eval(n)));
            }
        }
    }

    #[test]
    fn rca_chains_collapse_exactly() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let a = canon::sample_rca(&mut rng);
            let b = canon::sample_rca(&mut rng);
            let c = canon::sample_rca(&mut rng);
            let t = Term::compose(
                Term::compose(Term::Rca(a), Term::Rca(b)),
                Term::Rca(c),
            );
            let exact = t.as_rca().unwrap();
            for n in 0..500 {
                assert_eq!(exact.eval(n), t.eval(n));
            }
        }
        assert!(Term::ColProj.as_rca().is_none());
        assert!(Term::compose(Term::ColProj, Term::identity()).as_rca().is_none());
    }

    #[test]
    fn reports_of_the_leaves_are_exact() {
        let rep = Term::Rca(canon::dbl()).report();
        assert_eq!(rep.d, Quantity::exact(Inf));
        assert_eq!(rep.c, Quantity::exact(Fin(0)));
        assert_eq!(rep.k, Quantity::exact(Fin(0)));

        let rep = Term::ColProj.report();
        assert_eq!(rep.d, Quantity::exact(Fin(0)));
        assert_eq!(rep.c, Quantity::exact(Inf));
        assert_eq!(rep.k, Quantity::exact(Inf));
        assert_eq!(rep.rank, Quantity::exact(Inf));
        assert_eq!(rep.has_infinite_kernel_class, Trilean::Yes);

        let rep = Term::ColEmbed.report();
        assert_eq!(rep.c, Quantity::exact(Fin(0)));
        assert_eq!(rep.k, Quantity::exact(Fin(0)));
        assert_eq!(rep.d, Quantity::exact(Inf));
        assert_eq!(rep.rank, Quantity::exact(Inf));
    }

    #[test]
    fn rule_engine_resolves_the_documented_composites() {
        // ColProj then half: surjective first factor and fiber-finite second.
        let t = Term::compose(Term::ColProj, Term::Rca(canon::half()));
        let rep = t.report();
        assert_eq!(rep.d, Quantity::exact(Fin(0)));
        assert_eq!(rep.c, Quantity::exact(Inf));
        assert_eq!(rep.k, Quantity::exact(Inf));

        // half then dbl is pure Rca: exact bypass.
        let t = Term::compose(Term::Rca(canon::half()), Term::Rca(canon::dbl()));
        let rep = t.report();
        assert_eq!(rep.c, Quantity::exact(Inf));
        assert_eq!(rep.d, Quantity::exact(Inf));
        assert_eq!(rep.k, Quantity::exact(Fin(0)));
    }

    fn flags_of(term: &Term) -> Vec<Flag> {
        term.classify().yes_set()
    }

    #[test]
    fn classification_of_the_canonical_terms() {
        use Flag::*;
        assert_eq!(flags_of(&Term::Rca(canon::succ())), vec![Inj]);
        assert_eq!(flags_of(&Term::Rca(canon::dbl())), vec![Inj, FiClass]);
        assert_eq!(flags_of(&Term::Rca(canon::half())), vec![Sur, IfClass]);
        assert_eq!(flags_of(&Term::Rca(canon::pred())), vec![Sur]);
        assert_eq!(flags_of(&Term::Rca(canon::cst0())), vec![FiniteRank, CpGenerated]);
        assert_eq!(flags_of(&Term::Rca(canon::mix())), vec![Sur, IfClass, CpGenerated]);
        assert_eq!(flags_of(&Term::ColProj), vec![Sur, Cp, IfClass, CpGenerated]);
        assert_eq!(flags_of(&Term::ColEmbed), vec![Inj, FiClass]);
        assert_eq!(flags_of(&Term::identity()), vec![Sym]);

        // Nothing unresolved on any of them.
        for t in [
            Term::Rca(canon::succ()),
            Term::Rca(canon::cst0()),
            Term::ColProj,
            Term::ColEmbed,
        ] {
            assert!(t.classify().iter().all(|(_, v)| v != Trilean::Unknown));
        }
    }

    #[test]
    fn flag_exclusions_hold_on_random_terms() {
        let exclusions = [
            (Flag::Inj, Flag::Sur),
            (Flag::IfClass, Flag::FiClass),
            (Flag::Cp, Flag::FiClass),
            (Flag::Cp, Flag::Inj),
            (Flag::Sur, Flag::FiClass),
            (Flag::Inj, Flag::IfClass),
        ];
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..500 {
            let t = canon::sample_term(&mut rng, 3);
            let flags = t.classify();
            for (a, b) in exclusions {
                assert!(
                    !(flags.get(a) == Trilean::Yes && flags.get(b) == Trilean::Yes),
                    "{a} and {b} both Yes for {t}"
                );
            }
            if flags.cp_generated == Trilean::Yes {
                assert_ne!(flags.fi_class, Trilean::Yes, "{t}");
                assert_ne!(flags.inj, Trilean::Yes, "{t}");
            }
        }
    }

    #[test]
    fn if_and_fi_are_closed_under_composition() {
        let mut rng = StdRng::seed_from_u64(13);
        let mut fi_seen = 0;
        let mut if_seen = 0;
        while fi_seen < 40 || if_seen < 40 {
            let a = canon::sample_rca(&mut rng);
            let b = canon::sample_rca(&mut rng);
            let fa = Term::Rca(a.clone()).classify();
            let fb = Term::Rca(b.clone()).classify();
            let composite = Term::Rca(a.compose(&b)).classify();
            if fa.fi_class == Trilean::Yes && fb.fi_class == Trilean::Yes {
                fi_seen += 1;
                assert_eq!(composite.fi_class, Trilean::Yes);
            }
            if fa.if_class == Trilean::Yes && fb.if_class == Trilean::Yes {
                if_seen += 1;
                assert_eq!(composite.if_class, Trilean::Yes);
            }
        }
    }

    #[test]
    fn window_reports_count_collisions() {
        let rep = window_report(&Term::Rca(canon::half()), 1000);
        assert_eq!(rep.observed_collapse, 500);
        let rep = window_report(&Term::Rca(canon::succ()), 1000);
        assert_eq!(rep.observed_collapse, 0);
        let rep = window_report(&Term::ColProj, 15);
        assert_eq!(rep.largest_fibers[0], (0, 5));
        assert!(rep.largest_fibers[0].1 >= 4);
    }

    #[test]
    fn window_observations_respect_certified_bounds() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..120 {
            let t = canon::sample_term(&mut rng, 2);
            let rep = t.report();
            for w in [100, 1000] {
                let win = window_report(&t, safe_window(&t, w));
                assert!(Fin(win.observed_collapse) <= rep.c.hi, "{t}");
                assert!(Fin(win.distinct_values) <= rep.rank.hi, "{t}");
                if let Some(Fin(c)) = rep.c.as_exact() {
                    assert!(win.observed_collapse <= c, "{t}");
                }
                if let Some(image) = &rep.image {
                    for (v, _) in win.observed_values() {
                        assert!(image.contains(v), "value {v} outside image of {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn fiber_streams_enumerate_preimages_in_order() {
        let collect = |t: &Term, y: u64, n: usize| -> Vec<u64> {
            t.fiber_stream(y).take(n).collect()
        };
        assert_eq!(collect(&Term::Rca(canon::half()), 3, 5), vec![6, 7]);
        assert_eq!(collect(&Term::ColProj, 1, 3), vec![1, 4, 8]);
        assert_eq!(collect(&Term::Rca(canon::dbl()), 3, 5), Vec::<u64>::new());
        assert_eq!(collect(&Term::ColEmbed, 3, 5), vec![2]);
        assert_eq!(collect(&Term::ColEmbed, 2, 5), Vec::<u64>::new());

        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..40 {
            let t = canon::sample_term(&mut rng, 2);
            let window = safe_window(&t, 600);
            for y in 0..8 {
                let expected = fiber_in_window(&t, y, window);
                let got: Vec<u64> = t
                    .fiber_stream(y)
                    .take_while(|&n| n < window)
                    .collect();
                assert_eq!(got, expected, "{t} fiber {y}");
            }
        }
    }

    #[test]
    fn kernel_ids_appear_in_first_appearance_order() {
        let mut idx = KernelIndex::new(&Term::ColProj);
        assert_eq!(idx.class_of(3), 2);
        assert_eq!(idx.first_of_class(2), 3);

        let mut idx = KernelIndex::new(&Term::identity());
        for n in 0..50 {
            assert_eq!(idx.class_of(n), n);
        }

        let mut idx = KernelIndex::new(&Term::Rca(canon::cst0()));
        for n in 0..50 {
            assert_eq!(idx.class_of(n), 0);
        }

        // Composing with an injective second factor keeps ids; the peeled
        // backend must agree with a raw scan.
        let composed = Term::compose(Term::ColProj, Term::Rca(canon::succ()));
        let mut fast = KernelIndex::new(&composed);
        let mut slow = KernelIndex {
            backend: KernelBackend::Scan {
                term: composed.clone(),
                assignments: Vec::new(),
                firsts: Vec::new(),
                counts: Vec::new(),
                ids: HashMap::new(),
                scanned: 0,
            },
        };
        for n in 0..300 {
            assert_eq!(fast.class_and_rank(n), slow.class_and_rank(n));
        }

        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..40 {
            let t = canon::sample_term(&mut rng, 1);
            let mut idx = KernelIndex::new(&t);
            let mut firsts_seen: Vec<u64> = Vec::new();
            for n in 0..200 {
                let (id, rank) = idx.class_and_rank(n);
                if id as usize == firsts_seen.len() {
                    firsts_seen.push(n);
                    assert_eq!(rank, 0);
                }
                assert!((id as usize) < firsts_seen.len(), "ids must be contiguous");
                assert_eq!(t.eval(n), t.eval(firsts_seen[id as usize]));
                assert_eq!(idx.first_of_class(id), firsts_seen[id as usize]);
            }
        }
    }

    #[test]
    fn lazy_square_factors_multiply_back_to_the_base() {
        for base in [canon::cst0(), canon::mix()] {
            let b1 = LazyTerm::square_left(base.clone()).unwrap();
            let b2 = LazyTerm::square_right(base.clone()).unwrap();
            let product = Term::compose(Term::Lazy(b1), Term::Lazy(b2));
            for n in 0..3000 {
                assert_eq!(product.eval(n), base.eval(n), "n={n}");
            }
        }
        assert_eq!(
            LazyTerm::square_left(canon::dbl()).unwrap_err(),
            LazyError::NoInfiniteClass
        );
    }

    #[test]
    fn lazy_cp_factorization_reassembles_beta() {
        for beta in [
            Term::ColProj,
            Term::compose(Term::ColProj, Term::Rca(canon::succ())),
        ] {
            let gamma = LazyTerm::cp_factor(Term::ColProj, beta.clone()).unwrap();
            let delta = LazyTerm::cp_completer(Term::ColProj, beta.clone()).unwrap();
            let product = Term::compose(
                Term::compose(Term::Lazy(gamma), Term::ColProj),
                Term::Lazy(delta),
            );
            for n in 0..2000 {
                assert_eq!(product.eval(n), beta.eval(n), "n={n} beta={beta}");
            }
        }
        // The completer for a shifted beta is the shift itself.
        let beta = Term::compose(Term::ColProj, Term::Rca(canon::succ()));
        let delta = LazyTerm::cp_completer(Term::ColProj, beta).unwrap();
        for y in 0..50 {
            assert_eq!(delta.eval(y), y + 1);
        }
        assert!(LazyTerm::cp_factor(Term::Rca(canon::dbl()), Term::ColProj).is_err());
    }

    #[test]
    fn lazy_right_gen_cp_completes_alpha_to_beta() {
        let gamma = LazyTerm::right_gen_cp(canon::dbl(), canon::succ());
        // On the image of dbl: undo then apply succ.
        assert_eq!(gamma.eval(0), 1);
        assert_eq!(gamma.eval(4), 3);
        // Off the image: column membership of the position index.
        assert_eq!(gamma.eval(1), 1);
        assert_eq!(gamma.eval(3), 2);
        let product = Term::compose(Term::Rca(canon::dbl()), Term::Lazy(gamma));
        for n in 0..2000 {
            assert_eq!(product.eval(n), canon::succ().eval(n));
        }
    }

    #[test]
    fn term_serde_round_trips() {
        let dbl_json = r#"{"type":"rca","N":0,"m":1,"patch":[],"tails":[{"kind":"affine","a":2,"b":0}]}"#;
        let t: Term = serde_json::from_str(dbl_json).unwrap();
        assert_eq!(t, Term::Rca(canon::dbl()));

        let t: Term = serde_json::from_str(r#"{"type":"colproj"}"#).unwrap();
        assert_eq!(t, Term::ColProj);

        let nested = Term::compose(Term::ColEmbed, Term::Rca(canon::half()));
        let json = serde_json::to_string(&nested).unwrap();
        assert_eq!(serde_json::from_str::<Term>(&json).unwrap(), nested);

        let lazy = Term::Lazy(LazyTerm::square_left(canon::mix()).unwrap());
        let json = serde_json::to_string(&lazy).unwrap();
        assert!(json.contains("\"cp_square_left\""));
        let back: Term = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lazy);
        for n in 0..500 {
            assert_eq!(back.eval(n), lazy.eval(n));
        }

        let bad = r#"{"type":"rca","N":0,"m":1,"patch":[],"tails":[{"kind":"affine","a":0,"b":3}]}"#;
        let err = serde_json::from_str::<Term>(bad).unwrap_err().to_string();
        assert!(err.contains("a must be positive"), "{err}");
    }

    #[test]
    fn quantity_atoms_and_serde() {
        assert_eq!(Quantity::exact(Fin(0)).is_zero(), Trilean::Yes);
        assert_eq!(Quantity::bounds(Fin(1), Inf).is_zero(), Trilean::No);
        assert_eq!(Quantity::unknown().is_zero(), Trilean::Unknown);
        assert_eq!(Quantity::exact(Inf).is_infinite(), Trilean::Yes);
        assert_eq!(Quantity::bounds(Fin(0), Fin(9)).is_infinite(), Trilean::No);

        let q = Quantity::exact(Fin(3));
        assert_eq!(serde_json::to_string(&q).unwrap(), r#"{"exact":3}"#);
        let q = Quantity::bounds(Fin(1), Inf);
        assert_eq!(serde_json::to_string(&q).unwrap(), r#"{"lo":1,"hi":"inf"}"#);
        for json in [r#"{"exact":3}"#, r#"{"lo":1,"hi":"inf"}"#] {
            let parsed: Quantity = serde_json::from_str(json).unwrap();
            assert_eq!(serde_json::to_string(&parsed).unwrap(), json);
        }
    }
}
