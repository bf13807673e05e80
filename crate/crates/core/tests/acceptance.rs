//! Acceptance suite: eight end-to-end checks, each printing one PASS line
//! with its measured runtime. Sample counts, windows, and time budgets are
//! pinned in the code; run with `--nocapture` to see the lines.

use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::SeedableRng;
use tnat::{
    all_maps, canon, construct_h, cp_square, enumerate_j, family_corpus, is_in_j, run_preset,
    w_cp, w_dual, w_inj, w_left_gen_fi, w_right_gen, w_sur, w_sym_from_inj, window_report,
    DualKind, Flag, FlagOutcome, FinMap, Preset, RcaMap, RightGenKind, SetFamily, Term, Trilean,
    WitnessCertificate,
};

fn finish(label: &str, detail: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    println!("acceptance {label}: PASS ({detail}, {elapsed:.2?})");
    assert!(
        elapsed < budget,
        "{label} exceeded its {budget:?} budget: {elapsed:?}"
    );
}

#[test]
fn subadditivity_and_pointwise_composition() {
    const PAIRS: usize = 500;
    const ORACLE_POINTS: u64 = 2000;
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(101);
    for _ in 0..PAIRS {
        let f = canon::sample_rca(&mut rng);
        let g = canon::sample_rca(&mut rng);
        let fg = f.compose(&g);
        let (fi, gi, ci) = (f.invariants(), g.invariants(), fg.invariants());
        assert!(ci.defect <= fi.defect + gi.defect, "defect grew past the sum");
        assert!(
            ci.collapse <= fi.collapse + gi.collapse,
            "collapse grew past the sum"
        );
        assert!(
            ci.infinite_fibers <= fi.infinite_fibers + gi.infinite_fibers,
            "infinite fiber count grew past the sum"
        );
        for n in 0..ORACLE_POINTS {
            assert_eq!(fg.eval(n), g.eval(f.eval(n)), "composition oracle at {n}");
        }
    }
    finish(
        "1/8 subadditivity",
        &format!("{PAIRS} pairs, oracle on [0,{ORACLE_POINTS})"),
        start,
        Duration::from_secs(10),
    );
}

#[test]
fn canonical_classification_table() {
    let start = Instant::now();
    let core = [
        Flag::FiniteRank,
        Flag::Sym,
        Flag::Inj,
        Flag::Sur,
        Flag::Cp,
        Flag::IfClass,
        Flag::FiClass,
    ];
    let table: [(Term, &[Flag], Trilean); 8] = [
        (Term::Rca(canon::succ()), &[Flag::Inj], Trilean::No),
        (Term::Rca(canon::dbl()), &[Flag::Inj, Flag::FiClass], Trilean::No),
        (Term::Rca(canon::half()), &[Flag::Sur, Flag::IfClass], Trilean::No),
        (Term::Rca(canon::pred()), &[Flag::Sur], Trilean::No),
        (Term::Rca(canon::cst0()), &[Flag::FiniteRank], Trilean::Yes),
        (Term::Rca(canon::mix()), &[Flag::Sur, Flag::IfClass], Trilean::Yes),
        (
            Term::ColProj,
            &[Flag::Sur, Flag::Cp, Flag::IfClass],
            Trilean::Yes,
        ),
        (Term::ColEmbed, &[Flag::Inj, Flag::FiClass], Trilean::No),
    ];
    for (term, yes, cp_generated) in &table {
        let flags = term.classify();
        for (flag, value) in flags.iter() {
            assert_ne!(value, Trilean::Unknown, "{term}: {flag} unresolved");
        }
        for flag in core {
            let expected = Trilean::from_bool(yes.contains(&flag));
            assert_eq!(flags.get(flag), expected, "{term}: {flag}");
        }
        assert_eq!(flags.get(Flag::CpGenerated), *cp_generated, "{term}: CpGenerated");
    }
    finish(
        "2/8 classification",
        "eight canonical terms, all flags exact",
        start,
        Duration::from_secs(1),
    );
}

#[test]
fn class_complements_are_closed_under_composition() {
    const PAIRS_PER_CLASS: usize = 200;
    const MAX_ATTEMPTS: usize = 400_000;
    let start = Instant::now();
    let classes = [Flag::Inj, Flag::Sur, Flag::Cp, Flag::IfClass, Flag::FiClass];
    let mut rng = StdRng::seed_from_u64(202);
    for flag in classes {
        let mut found = 0;
        let mut attempts = 0;
        while found < PAIRS_PER_CLASS {
            attempts += 1;
            assert!(
                attempts < MAX_ATTEMPTS,
                "{flag}: too few resolved pairs after {attempts} samples"
            );
            let f = canon::sample_term(&mut rng, 2);
            let g = canon::sample_term(&mut rng, 2);
            if f.classify().get(flag) != Trilean::No || g.classify().get(flag) != Trilean::No {
                continue;
            }
            let composite = Term::compose(f, g).classify().get(flag);
            if composite == Trilean::Unknown {
                continue;
            }
            assert_eq!(composite, Trilean::No, "{flag}: composite left the complement");
            found += 1;
        }
    }
    finish(
        "3/8 complement closure",
        &format!("{PAIRS_PER_CLASS} resolved pairs per class, zero violations"),
        start,
        Duration::from_secs(30),
    );
}

#[test]
fn witness_suite_certifies() {
    const WINDOW: u64 = 10_000;
    let start = Instant::now();
    let succ = Term::Rca(canon::succ());
    let dbl = Term::Rca(canon::dbl());
    let half = Term::Rca(canon::half());
    let pred = Term::Rca(canon::pred());
    let id = Term::Rca(RcaMap::identity());
    let proj_then_succ = Term::compose(Term::ColProj, succ.clone());
    let certificates: Vec<WitnessCertificate> = vec![
        w_inj(&succ, &dbl, WINDOW).unwrap(),
        w_inj(&dbl, &dbl, WINDOW).unwrap(),
        w_sur(&half, &pred, WINDOW).unwrap(),
        w_sur(&half, &half, WINDOW).unwrap(),
        w_cp(&Term::ColProj, &Term::ColProj, WINDOW).unwrap(),
        w_cp(&Term::ColProj, &proj_then_succ, WINDOW).unwrap(),
        w_dual(DualKind::IfClass, &half, &half, WINDOW).unwrap(),
        w_dual(DualKind::FiClass, &dbl, &dbl, WINDOW).unwrap(),
        w_sym_from_inj(&succ, &id, WINDOW).unwrap(),
        w_left_gen_fi(&Term::ColProj, &dbl, WINDOW).unwrap(),
        w_right_gen(RightGenKind::IfClass, &dbl, &succ, WINDOW).unwrap(),
        w_right_gen(RightGenKind::Cp, &dbl, &succ, WINDOW).unwrap(),
        cp_square(&Term::Rca(canon::cst0()), WINDOW).unwrap(),
        cp_square(&Term::Rca(canon::mix()), WINDOW).unwrap(),
    ];
    assert_eq!(certificates.len(), 14);
    for cert in &certificates {
        assert_eq!(cert.window, WINDOW);
        assert!(cert.verified, "{}: not verified", cert.name);
        assert!(cert.first_mismatch.is_none(), "{}: mismatch", cert.name);
        for check in &cert.required_flags {
            assert!(
                matches!(check.outcome, FlagOutcome::Match { .. }),
                "{}: flag {} on {} did not match",
                cert.name,
                check.flag,
                check.role
            );
        }
    }
    finish(
        "4/8 witness suite",
        &format!("14 certificates verified at window {WINDOW}"),
        start,
        Duration::from_secs(60),
    );
}

/// Independent oracle: hitting sets none of whose elements can be dropped,
/// ordered by size then lexicographically.
fn minimal_hitting_brute(family: &SetFamily) -> Vec<Vec<u64>> {
    let universe = family.universe();
    let hits = |h: &[u64]| {
        family
            .members()
            .iter()
            .all(|m| m.iter().any(|x| h.contains(x)))
    };
    let mut result = Vec::new();
    for mask in 0u64..1 << universe.len() {
        let h: Vec<u64> = universe
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &x)| x)
            .collect();
        if !hits(&h) {
            continue;
        }
        let minimal = (0..h.len()).all(|i| {
            let mut smaller = h.clone();
            smaller.remove(i);
            !hits(&smaller)
        });
        if minimal {
            result.push(h);
        }
    }
    result.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    result
}

#[test]
fn hitting_set_enumeration_matches_brute_force() {
    const MAX_MEMBERS: usize = 4;
    const CLASS_CAP: usize = 5000;
    let start = Instant::now();
    let mut total = 0;
    for universe_size in 1..=6 {
        let corpus = family_corpus(universe_size, MAX_MEMBERS, CLASS_CAP - total);
        for family in &corpus {
            let enumerated = enumerate_j(family).expect("desk-scale universe");
            assert_eq!(
                enumerated,
                minimal_hitting_brute(family),
                "enumeration disagrees with brute force"
            );
            assert!(!enumerated.is_empty(), "every finite family has a hitting set");
            let constructed =
                construct_h(family, Default::default()).expect("construction must not fail");
            assert!(is_in_j(&constructed, family), "construction left the target");
        }
        total += corpus.len();
        if total >= CLASS_CAP {
            break;
        }
    }
    finish(
        "5/8 hitting sets",
        &format!("{total} families up to isomorphism, enumeration == brute force"),
        start,
        Duration::from_secs(5),
    );
}

#[test]
fn degree_three_pipeline_is_exact() {
    let start = Instant::now();
    assert_eq!(all_maps(3).unwrap().len(), 27);
    let report = run_preset(Preset::Sym3).unwrap();
    assert_eq!(report.u.len(), 18);
    assert_eq!(report.candidates.len(), 1, "the candidate is forced");
    let candidate = &report.candidates[0];
    assert_eq!(candidate.h, report.u);
    assert_eq!(candidate.complement.elements.len(), 9);
    assert!(candidate.complement.closed);
    assert!(candidate.complement.maximal);
    assert!(candidate.readjoin_regenerates, "all 18 closures reach 27");
    finish(
        "6/8 degree-3 pipeline",
        "unique candidate, 9-element complement maximal",
        start,
        Duration::from_secs(5),
    );
}

#[test]
fn degree_four_pipeline_is_exact() {
    let start = Instant::now();
    let maps = all_maps(4).unwrap();
    assert_eq!(maps.len(), 256);
    // Independent count of the corank-one maps: image sets of size three
    // times surjections from four points onto them, 4 * 36 = 144.
    let brute_corank_one = maps
        .iter()
        .filter(|m| {
            let mut distinct: Vec<usize> = m.images().to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            distinct.len() == 3
        })
        .count();
    assert_eq!(brute_corank_one, 144);
    let report = run_preset(Preset::Sym4).unwrap();
    assert_eq!(report.u.len(), brute_corank_one);
    assert_eq!(report.candidates.len(), 1);
    let candidate = &report.candidates[0];
    assert_eq!(candidate.complement.elements.len(), 256 - 144);
    assert!(candidate.complement.closed);
    assert!(candidate.complement.maximal);
    assert!(candidate.readjoin_regenerates);
    // The complement of a maximal candidate keeps every constant map.
    for v in 0..4 {
        let id = FinMap::constant(4, v).unwrap().id();
        assert!(candidate.complement.elements.contains(&id));
    }
    finish(
        "7/8 degree-4 pipeline",
        "144 corank-one maps, 112-element complement maximal",
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn infinite_kernel_classes_and_square_factors() {
    const TERMS: usize = 200;
    const MAX_ATTEMPTS: usize = 400_000;
    const CENSUS_WINDOW: u64 = 100_000;
    const FIBERS: usize = 10;
    const FIBER_SIZE: u64 = 10;
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(808);
    let mut found = 0;
    let mut attempts = 0;
    while found < TERMS {
        attempts += 1;
        assert!(attempts < MAX_ATTEMPTS, "too few resolved terms");
        let t = canon::sample_term(&mut rng, 3);
        let flags = t.classify();
        if flags.get(Flag::CpGenerated) != Trilean::Yes {
            continue;
        }
        assert_eq!(flags.get(Flag::FiClass), Trilean::No, "{t}: FI not excluded");
        assert_eq!(flags.get(Flag::Inj), Trilean::No, "{t}: Inj not excluded");
        found += 1;
    }
    for base in [canon::cst0(), canon::mix()] {
        let cert = cp_square(&Term::Rca(base), 10_000).unwrap();
        assert!(cert.verified);
        for (role, factor) in &cert.factors {
            let census = window_report(factor, CENSUS_WINDOW);
            let big = census
                .observed_values()
                .filter(|&(_, count)| count >= FIBER_SIZE)
                .count();
            assert!(
                big >= FIBERS,
                "{}/{role}: only {big} fibers of size >= {FIBER_SIZE}",
                cert.name
            );
        }
    }
    finish(
        "8/8 infinite kernel classes",
        &format!("{TERMS} terms exclude FI and Inj; square factors show >= {FIBERS} fat fibers"),
        start,
        Duration::from_secs(30),
    );
}
