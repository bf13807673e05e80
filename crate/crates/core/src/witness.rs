//! Factorization witnesses packaged as verifiable certificates.
//!
//! Each construction takes terms satisfying stated class-flag preconditions,
//! builds explicit cofactors realizing a factorization equation, and returns
//! a certificate. Verification re-checks the equation pointwise on a window,
//! evaluates the cofactors' class flags against the required ones, and runs a
//! window census against each cofactor's invariant report so that a wrong
//! asserted report is caught rather than trusted.

use serde::Serialize;
use thiserror::Error;

use crate::epset::EPSet;
use crate::extnat::{ExtNat, Fin};
use crate::rca::{Affine, Const, RcaMap};
use crate::term::{
    window_report, Flag, InvariantReport, LazyError, LazyTerm, Term, Trilean, WindowReport,
};

#[derive(Debug, Error, PartialEq)]
pub enum WitnessError {
    #[error("{role} violates a precondition: {requirement}")]
    PreconditionViolation { role: String, requirement: String },
    #[error("the map has no infinite kernel class")]
    NoInfiniteClass,
    #[error("unsupported structure: {detail}")]
    UnsupportedStructure { detail: String },
}

impl From<LazyError> for WitnessError {
    fn from(e: LazyError) -> WitnessError {
        match e {
            LazyError::UnsupportedStructure(detail) => {
                WitnessError::UnsupportedStructure { detail }
            }
            LazyError::NoInfiniteClass => WitnessError::NoInfiniteClass,
        }
    }
}

/// First point where the two sides of the equation disagree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PointMismatch {
    pub n: u64,
    pub left: u64,
    pub right: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlagOutcome {
    /// The flag resolves to the expected value. `asserted` records whether it
    /// rests on a construction-asserted report rather than exact computation.
    Match { asserted: bool },
    Mismatch { actual: Trilean },
    /// The window census refutes the cofactor's invariant report, so its
    /// flags cannot be trusted.
    ContradictedByWindow,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlagCheck {
    pub role: String,
    pub flag: Flag,
    pub expected: Trilean,
    pub outcome: FlagOutcome,
}

/// A factorization together with everything needed to re-check it.
#[derive(Clone, Debug, Serialize)]
pub struct WitnessCertificate {
    pub name: String,
    /// The defining equation, with factor roles named as in `factors`.
    pub equation: String,
    pub factors: Vec<(String, Term)>,
    pub lhs: Term,
    pub rhs: Term,
    pub window: u64,
    pub verified: bool,
    pub first_mismatch: Option<PointMismatch>,
    pub required_flags: Vec<FlagCheck>,
}

/// True when the census observes something the report rules out.
fn window_contradicts(rep: &InvariantReport, win: &WindowReport) -> bool {
    if let Fin(c) = rep.c.hi {
        if win.observed_collapse > c {
            return true;
        }
    }
    if let Fin(r) = rep.rank.hi {
        if win.distinct_values > r {
            return true;
        }
    }
    if let Some(image) = &rep.image {
        if win.observed_values().any(|(v, _)| !image.contains(v)) {
            return true;
        }
    }
    false
}

fn certify(
    name: &str,
    equation: &str,
    factors: Vec<(String, Term)>,
    lhs: Term,
    rhs: Term,
    window: u64,
    required: Vec<(&str, Flag, Trilean)>,
) -> WitnessCertificate {
    assert!(window >= 1, "window must be positive");
    let mut first_mismatch = None;
    for n in 0..window {
        let left = lhs.eval(n);
        let right = rhs.eval(n);
        if left != right {
            first_mismatch = Some(PointMismatch { n, left, right });
            break;
        }
    }
    let contradicted: Vec<bool> = factors
        .iter()
        .map(|(_, t)| window_contradicts(&t.report(), &window_report(t, window)))
        .collect();
    let mut verified = first_mismatch.is_none();
    let mut required_flags = Vec::new();
    for (role, flag, expected) in required {
        let idx = factors
            .iter()
            .position(|(r, _)| r == role)
            .expect("required role is a factor");
        let term = &factors[idx].1;
        let actual = term.classify().get(flag);
        let outcome = if contradicted[idx] {
            FlagOutcome::ContradictedByWindow
        } else if actual == expected {
            FlagOutcome::Match {
                asserted: term.contains_lazy(),
            }
        } else {
            FlagOutcome::Mismatch { actual }
        };
        if !matches!(outcome, FlagOutcome::Match { .. }) {
            verified = false;
        }
        required_flags.push(FlagCheck {
            role: role.to_string(),
            flag,
            expected,
            outcome,
        });
    }
    WitnessCertificate {
        name: name.to_string(),
        equation: equation.to_string(),
        factors,
        lhs,
        rhs,
        window,
        verified,
        first_mismatch,
        required_flags,
    }
}

fn require_flag(role: &str, term: &Term, flag: Flag, expected: Trilean) -> Result<(), WitnessError> {
    let actual = term.classify().get(flag);
    if actual == expected {
        Ok(())
    } else {
        Err(WitnessError::PreconditionViolation {
            role: role.to_string(),
            requirement: format!("{flag} must be {expected}, found {actual}"),
        })
    }
}

fn require_rca(role: &str, term: &Term) -> Result<RcaMap, WitnessError> {
    term.as_rca().ok_or_else(|| WitnessError::PreconditionViolation {
        role: role.to_string(),
        requirement: "must be a residue-class affine term".to_string(),
    })
}

/// Right cofactor for a pair of injective maps: γ with α;γ = β. The cofactor
/// undoes α on its image and parks everything else on the least β-value, so
/// it is never injective itself.
pub fn w_inj(alpha: &Term, beta: &Term, window: u64) -> Result<WitnessCertificate, WitnessError> {
    let a = require_rca("alpha", alpha)?;
    let b = require_rca("beta", beta)?;
    require_flag("alpha", alpha, Flag::Inj, Trilean::Yes)?;
    require_flag("beta", beta, Flag::Inj, Trilean::Yes)?;
    let (sa, im_a) = a.section();
    let v0 = b.image().first().expect("total maps have nonempty image");
    let gamma = RcaMap::piecewise(&im_a, &sa.compose(&b), &RcaMap::constant(v0));
    let lhs = Term::compose(alpha.clone(), Term::Rca(gamma.clone()));
    Ok(certify(
        "w_inj",
        "compose(alpha, gamma) = beta",
        vec![("gamma".to_string(), Term::Rca(gamma))],
        lhs,
        beta.clone(),
        window,
        vec![("gamma", Flag::Inj, Trilean::No)],
    ))
}

/// Left cofactor for a pair of surjective maps: δ with δ;α = β. The cofactor
/// lands in the transversal of least α-preimages, which misses every
/// non-least preimage, so it is never surjective itself.
pub fn w_sur(alpha: &Term, beta: &Term, window: u64) -> Result<WitnessCertificate, WitnessError> {
    let a = require_rca("alpha", alpha)?;
    let b = require_rca("beta", beta)?;
    require_flag("alpha", alpha, Flag::Sur, Trilean::Yes)?;
    require_flag("beta", beta, Flag::Sur, Trilean::Yes)?;
    let (sa, _) = a.section();
    let delta = b.compose(&sa);
    let lhs = Term::compose(Term::Rca(delta.clone()), alpha.clone());
    Ok(certify(
        "w_sur",
        "compose(delta, alpha) = beta",
        vec![("delta".to_string(), Term::Rca(delta))],
        lhs,
        beta.clone(),
        window,
        vec![("delta", Flag::Sur, Trilean::No)],
    ))
}

/// Two-sided factorization through a map with infinitely many infinite
/// fibers: γ;α;δ = β with both cofactors outside that class. γ sends n into
/// the α-fiber addressed by n's kernel class under β, δ reads the β-value
/// back off the class representative.
pub fn w_cp(alpha: &Term, beta: &Term, window: u64) -> Result<WitnessCertificate, WitnessError> {
    require_flag("alpha", alpha, Flag::Cp, Trilean::Yes)?;
    require_flag("beta", beta, Flag::Cp, Trilean::Yes)?;
    let gamma = LazyTerm::cp_factor(alpha.clone(), beta.clone())?;
    let delta = LazyTerm::cp_completer(alpha.clone(), beta.clone())?;
    let lhs = Term::compose(
        Term::compose(Term::Lazy(gamma.clone()), alpha.clone()),
        Term::Lazy(delta.clone()),
    );
    Ok(certify(
        "w_cp",
        "compose(compose(gamma, alpha), delta) = beta",
        vec![
            ("gamma".to_string(), Term::Lazy(gamma)),
            ("delta".to_string(), Term::Lazy(delta)),
        ],
        lhs,
        beta.clone(),
        window,
        vec![
            ("gamma", Flag::Cp, Trilean::No),
            ("delta", Flag::Cp, Trilean::No),
        ],
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualKind {
    IfClass,
    FiClass,
}

impl DualKind {
    fn flag(self) -> Flag {
        match self {
            DualKind::IfClass => Flag::IfClass,
            DualKind::FiClass => Flag::FiClass,
        }
    }
}

/// Two-sided factorization for the two dual classes: γ;α;δ = β with both
/// cofactors outside the named class. γ routes each β-kernel class to the
/// transversal of least α-preimages, δ reads β back off the image of γ;α.
pub fn w_dual(
    kind: DualKind,
    alpha: &Term,
    beta: &Term,
    window: u64,
) -> Result<WitnessCertificate, WitnessError> {
    let a = require_rca("alpha", alpha)?;
    let b = require_rca("beta", beta)?;
    let flag = kind.flag();
    require_flag("alpha", alpha, flag, Trilean::Yes)?;
    require_flag("beta", beta, flag, Trilean::Yes)?;
    let (sb, _) = b.section();
    let t_beta = sb.image();
    let (sa, im_a) = a.section();
    let t_alpha = sa.image();
    // Class index of n's kernel class under β, classes ordered by least
    // element, which is also first-appearance order.
    let ci = b.compose(&sb).compose(&RcaMap::rank_map(&t_beta));
    let gamma = ci.compose(&RcaMap::index_map(&t_alpha));
    let ga = gamma.compose(&a);
    let (sga, _) = ga.section();
    let main = sga.compose(&b);
    let d_alpha = im_a.complement();
    let off = RcaMap::rank_map(&d_alpha)
        .compose(&RcaMap::index_map(&im_a))
        .compose(&main);
    let delta = RcaMap::piecewise(&im_a, &main, &off);
    let lhs = Term::compose(
        Term::compose(Term::Rca(gamma.clone()), alpha.clone()),
        Term::Rca(delta.clone()),
    );
    Ok(certify(
        "w_dual",
        "compose(compose(gamma, alpha), delta) = beta",
        vec![
            ("gamma".to_string(), Term::Rca(gamma)),
            ("delta".to_string(), Term::Rca(delta)),
        ],
        lhs,
        beta.clone(),
        window,
        vec![("gamma", flag, Trilean::No), ("delta", flag, Trilean::No)],
    ))
}

/// Completes an injective map to a permutation-like target: γ with β;γ =
/// α_target. γ undoes β on its image and is the identity elsewhere; the two
/// branches overlap in value, so γ is surjective but never injective.
pub fn w_sym_from_inj(
    beta: &Term,
    alpha_target: &Term,
    window: u64,
) -> Result<WitnessCertificate, WitnessError> {
    let b = require_rca("beta", beta)?;
    let at = require_rca("alpha_target", alpha_target)?;
    require_flag("beta", beta, Flag::Inj, Trilean::Yes)?;
    require_flag("alpha_target", alpha_target, Flag::Sym, Trilean::Yes)?;
    let (sb, im_b) = b.section();
    let gamma = RcaMap::piecewise(&im_b, &sb.compose(&at), &RcaMap::identity());
    let lhs = Term::compose(beta.clone(), Term::Rca(gamma.clone()));
    Ok(certify(
        "w_sym_from_inj",
        "compose(beta, gamma) = alpha_target",
        vec![("gamma".to_string(), Term::Rca(gamma))],
        lhs,
        alpha_target.clone(),
        window,
        vec![("gamma", Flag::Sur, Trilean::Yes)],
    ))
}

/// Left cofactor through the column projection: γ with γ;α = β, where γ lifts
/// β-values onto column bases and is therefore finite-to-one with infinite
/// defect.
pub fn w_left_gen_fi(
    alpha: &Term,
    beta: &Term,
    window: u64,
) -> Result<WitnessCertificate, WitnessError> {
    require_flag("alpha", alpha, Flag::Cp, Trilean::Yes)?;
    require_flag("alpha", alpha, Flag::Sur, Trilean::Yes)?;
    require_flag("beta", beta, Flag::Inj, Trilean::Yes)?;
    if *alpha != Term::ColProj {
        return Err(WitnessError::UnsupportedStructure {
            detail: "alpha must be the column projection".to_string(),
        });
    }
    let gamma = Term::compose(beta.clone(), Term::ColEmbed);
    let lhs = Term::compose(gamma.clone(), alpha.clone());
    Ok(certify(
        "w_left_gen_fi",
        "compose(gamma, alpha) = beta",
        vec![("gamma".to_string(), gamma)],
        lhs,
        beta.clone(),
        window,
        vec![("gamma", Flag::FiClass, Trilean::Yes)],
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RightGenKind {
    IfClass,
    Cp,
}

/// Right cofactor γ with α;γ = β for an injective α of infinite defect,
/// where γ is forced into the named class: off the image of α it either
/// cycles through the missed β-values with one value repeated forever, or
/// spreads whole columns over the β-values.
pub fn w_right_gen(
    kind: RightGenKind,
    alpha: &Term,
    beta: &Term,
    window: u64,
) -> Result<WitnessCertificate, WitnessError> {
    let a = require_rca("alpha", alpha)?;
    let b = require_rca("beta", beta)?;
    require_flag("alpha", alpha, Flag::FiClass, Trilean::Yes)?;
    require_flag("alpha", alpha, Flag::Inj, Trilean::Yes)?;
    require_flag("beta", beta, Flag::Inj, Trilean::Yes)?;
    let (gamma, flag) = match kind {
        RightGenKind::IfClass => {
            let t = b.image().complement().union(&EPSet::singleton(a.eval(0)));
            let g = match t.cardinality() {
                Fin(tau) => {
                    RcaMap::new((0..tau).collect(), 1, vec![Const { b: tau - 1 }])
                        .expect("valid rank squasher")
                }
                ExtNat::Inf => RcaMap::new(
                    vec![],
                    2,
                    vec![Affine { a: 1, b: 0 }, Const { b: 0 }],
                )
                .expect("valid rank squasher"),
            };
            let (sa, im_a) = a.section();
            let off = RcaMap::rank_map(&im_a.complement())
                .compose(&g)
                .compose(&RcaMap::index_map(&t));
            let gamma = RcaMap::piecewise(&im_a, &sa.compose(&b), &off);
            (Term::Rca(gamma), Flag::IfClass)
        }
        RightGenKind::Cp => (Term::Lazy(LazyTerm::right_gen_cp(a, b)), Flag::Cp),
    };
    let lhs = Term::compose(alpha.clone(), gamma.clone());
    Ok(certify(
        "w_right_gen",
        "compose(alpha, gamma) = beta",
        vec![("gamma".to_string(), gamma)],
        lhs,
        beta.clone(),
        window,
        vec![("gamma", flag, Trilean::Yes)],
    ))
}

/// Splits a map with an infinite kernel class into two factors that both
/// have infinitely many infinite fibers.
pub fn cp_square(alpha: &Term, window: u64) -> Result<WitnessCertificate, WitnessError> {
    let a = require_rca("alpha", alpha)?;
    let beta1 = LazyTerm::square_left(a.clone())?;
    let beta2 = LazyTerm::square_right(a)?;
    let lhs = Term::compose(Term::Lazy(beta1.clone()), Term::Lazy(beta2.clone()));
    Ok(certify(
        "cp_square",
        "compose(beta1, beta2) = alpha",
        vec![
            ("beta1".to_string(), Term::Lazy(beta1)),
            ("beta2".to_string(), Term::Lazy(beta2)),
        ],
        lhs,
        alpha.clone(),
        window,
        vec![
            ("beta1", Flag::Cp, Trilean::Yes),
            ("beta2", Flag::Cp, Trilean::Yes),
        ],
    ))
}
