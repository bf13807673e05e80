//! Exact computation with transformations of the natural numbers.
//!
//! The crate models total maps `ℕ → ℕ` whose eventual behaviour is affine on
//! residue classes, computes their image-and-fiber invariants exactly, and
//! builds on that three executable layers: a term algebra with an interval
//! rule engine for composites, factorization witnesses packaged as verifiable
//! certificates, and a finite sandbox plus hitting-set machinery for the
//! combinatorial side.
//!
//! Composition is written left to right throughout: `compose(f, g)` applies
//! `f` first and `g` second.

pub mod canon;
pub mod epset;
pub mod extnat;
mod num;
pub mod rca;
pub mod sandbox;
pub mod term;
pub mod transversal;
pub mod witness;

pub use epset::{EPSet, EpsError};
pub use extnat::{ExtNat, Fin, Inf};
pub use rca::{RcaError, RcaInvariants, RcaMap, TailRule};
pub use sandbox::{
    all_maps, closure, gen_family, is_maximal, maps_of_rank, preset_inputs, run_preset,
    theorem1_pipeline, CandidateOutcome, FinMap, PipelineReport, Preset, SandboxError,
    SubsemigroupReport,
};
pub use term::{
    pair, unpair, window_report, ClassFlags, Flag, InvariantReport, LazyError, LazyTerm, Quantity,
    Term, Trilean, WindowReport,
};
pub use transversal::{
    construct_h, enumerate_j, family_corpus, filter_h, is_in_j, FamilyParseError, SetFamily,
    TieBreak, TransversalError,
};
pub use witness::{
    cp_square, w_cp, w_dual, w_inj, w_left_gen_fi, w_right_gen, w_sur, w_sym_from_inj, DualKind,
    FlagCheck, FlagOutcome, PointMismatch, RightGenKind, WitnessCertificate, WitnessError,
};
