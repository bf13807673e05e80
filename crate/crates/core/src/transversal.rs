//! Hitting-set machinery over ordered finite set families.
//!
//! A family is an ordered list of non-empty finite sets of element ids. The
//! central predicate `is_in_j` picks out the sets that hit every member and
//! in which every element is the unique hit of some member; these coincide
//! with the minimal hitting sets, and the exhaustive corpus tests check that
//! equivalence against an independent brute force.

use std::collections::HashSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransversalError {
    #[error("member {index} is empty")]
    EmptyMember { index: usize },
    #[error("universe has {size} elements, exceeding the brute-force limit {limit}")]
    UniverseTooLarge { size: usize, limit: usize },
    #[error("the sequential construction exhausted every branch without a valid set")]
    NoResult,
}

#[derive(Debug, Error, PartialEq)]
#[error("parse error at byte {offset}: {reason}")]
pub struct FamilyParseError {
    pub offset: usize,
    pub reason: String,
}

/// Ordered family of non-empty finite sets. The member order is significant:
/// the sequential construction consumes the enumeration in order. Members
/// are stored as sorted deduplicated id lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetFamily {
    universe: Vec<u64>,
    members: Vec<Vec<u64>>,
}

impl SetFamily {
    pub fn new(members: Vec<Vec<u64>>) -> Result<SetFamily, TransversalError> {
        let mut cleaned = Vec::with_capacity(members.len());
        for (index, member) in members.into_iter().enumerate() {
            let mut m = member;
            m.sort_unstable();
            m.dedup();
            if m.is_empty() {
                return Err(TransversalError::EmptyMember { index });
            }
            cleaned.push(m);
        }
        let mut universe: Vec<u64> = cleaned.iter().flatten().copied().collect();
        universe.sort_unstable();
        universe.dedup();
        Ok(SetFamily {
            universe,
            members: cleaned,
        })
    }

    /// One member per line, ids separated by whitespace; blank lines are
    /// skipped.
    pub fn parse(text: &str) -> Result<SetFamily, FamilyParseError> {
        let mut members = Vec::new();
        let mut offset = 0;
        for line in text.split('\n') {
            let mut member = Vec::new();
            let bytes = line.as_bytes();
            let mut i = 0;
            while i < bytes.len() {
                if bytes[i].is_ascii_whitespace() {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                let token = &line[start..i];
                let id = token.parse::<u64>().map_err(|_| FamilyParseError {
                    offset: offset + start,
                    reason: format!("expected a nonnegative integer, found {token:?}"),
                })?;
                member.push(id);
            }
            if !member.is_empty() {
                members.push(member);
            }
            offset += line.len() + 1;
        }
        SetFamily::new(members).map_err(|e| FamilyParseError {
            offset: 0,
            reason: e.to_string(),
        })
    }

    pub fn universe(&self) -> &[u64] {
        &self.universe
    }

    pub fn members(&self) -> &[Vec<u64>] {
        &self.members
    }
}

fn intersects(a: &[u64], b: &[u64]) -> bool {
    a.iter().any(|x| b.binary_search(x).is_ok())
}

/// True iff `h` is a subset of the union, hits every member, and each of its
/// elements is the unique hit of some member.
pub fn is_in_j(h: &[u64], family: &SetFamily) -> bool {
    let mut h: Vec<u64> = h.to_vec();
    h.sort_unstable();
    h.dedup();
    if !h.iter().all(|x| family.universe.binary_search(x).is_ok()) {
        return false;
    }
    if !family.members.iter().all(|m| intersects(m, &h)) {
        return false;
    }
    h.iter().all(|&a| {
        family.members.iter().any(|m| {
            m.binary_search(&a).is_ok()
                && m.iter().all(|x| *x == a || h.binary_search(x).is_err())
        })
    })
}

const UNIVERSE_LIMIT: usize = 20;

/// All sets passing `is_in_j`, sorted by size then lexicographically.
///
/// Elements of singleton members lie in every hitting set; when those alone
/// already hit every member, no other set can give any further element a
/// unique hit, so the answer is exactly that one set, at any universe size.
/// Otherwise a subset scan runs behind the universe-size guard.
pub fn enumerate_j(family: &SetFamily) -> Result<Vec<Vec<u64>>, TransversalError> {
    let mut forced: Vec<u64> = family
        .members
        .iter()
        .filter(|m| m.len() == 1)
        .map(|m| m[0])
        .collect();
    forced.sort_unstable();
    forced.dedup();
    if family.members.iter().all(|m| intersects(m, &forced)) {
        return Ok(vec![forced]);
    }
    let u = &family.universe;
    if u.len() > UNIVERSE_LIMIT {
        return Err(TransversalError::UniverseTooLarge {
            size: u.len(),
            limit: UNIVERSE_LIMIT,
        });
    }
    let mut out = Vec::new();
    for mask in 0u64..(1 << u.len()) {
        let h: Vec<u64> = u
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &v)| v)
            .collect();
        if is_in_j(&h, family) {
            out.push(h);
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

/// Members of `enumerate_j` disjoint from `avoid`.
pub fn filter_h(family: &SetFamily, avoid: &[u64]) -> Result<Vec<Vec<u64>>, TransversalError> {
    let mut avoid: Vec<u64> = avoid.to_vec();
    avoid.sort_unstable();
    avoid.dedup();
    Ok(enumerate_j(family)?
        .into_iter()
        .filter(|h| !intersects(h, &avoid))
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    #[default]
    Smallest,
}

/// The sequential construction over the member enumeration: keep the current
/// set when the member is already hit or a later member's unbarred part fits
/// inside it, otherwise add the smallest unbarred element and bar the rest.
/// A stalled or invalid run backtracks over the earlier element choices.
pub fn construct_h(family: &SetFamily, _tie: TieBreak) -> Result<Vec<u64>, TransversalError> {
    fn run(
        family: &SetFamily,
        i: usize,
        h: &mut Vec<u64>,
        barred: &mut Vec<u64>,
    ) -> Option<Vec<u64>> {
        let members = &family.members;
        if i == members.len() {
            let mut result = h.clone();
            result.sort_unstable();
            return is_in_j(&result, family).then_some(result);
        }
        let a = &members[i];
        if a.iter().any(|x| h.contains(x)) {
            return run(family, i + 1, h, barred);
        }
        let deferred = members[i + 1..].iter().any(|aj| {
            aj.iter()
                .filter(|x| !barred.contains(x))
                .all(|x| a.binary_search(x).is_ok())
        });
        if deferred {
            return run(family, i + 1, h, barred);
        }
        let candidates: Vec<u64> = a.iter().copied().filter(|x| !barred.contains(x)).collect();
        for &c in &candidates {
            let barred_before = barred.clone();
            h.push(c);
            for &x in a {
                if x != c && !barred.contains(&x) {
                    barred.push(x);
                }
            }
            barred.retain(|&x| x != c);
            if let Some(result) = run(family, i + 1, h, barred) {
                return Some(result);
            }
            h.pop();
            *barred = barred_before;
        }
        None
    }
    run(family, 0, &mut Vec::new(), &mut Vec::new()).ok_or(TransversalError::NoResult)
}

/// Representatives of the families over `{0..universe_size}` with at most
/// `max_members` distinct non-empty members, one per class under relabeling
/// of the universe, in lexicographic scan order, cut off after `cap` classes.
pub fn family_corpus(universe_size: u32, max_members: usize, cap: usize) -> Vec<SetFamily> {
    assert!(universe_size >= 1 && universe_size <= 6, "corpus is desk-scale only");
    let n_masks = 1u64 << universe_size;
    let relabel_tables = permutation_mask_tables(universe_size);
    let pack = |masks: &[u64]| -> u64 {
        masks.iter().fold(0u64, |acc, &m| acc * n_masks + m)
    };
    let mut seen: HashSet<u64> = HashSet::new();
    let mut out = Vec::new();
    let mut stack: Vec<u64> = Vec::new();
    fn emit(
        stack: &mut Vec<u64>,
        next_min: u64,
        n_masks: u64,
        max_members: usize,
        cap: usize,
        tables: &[Vec<u64>],
        pack: &dyn Fn(&[u64]) -> u64,
        seen: &mut HashSet<u64>,
        out: &mut Vec<SetFamily>,
        universe_size: u32,
    ) {
        if out.len() >= cap {
            return;
        }
        if !stack.is_empty() && seen.insert(pack(stack)) {
            for table in tables {
                let mut image: Vec<u64> = stack.iter().map(|&m| table[m as usize]).collect();
                image.sort_unstable();
                seen.insert(pack(&image));
            }
            let members: Vec<Vec<u64>> = stack
                .iter()
                .map(|&mask| (0..universe_size as u64).filter(|i| mask >> i & 1 == 1).collect())
                .collect();
            out.push(SetFamily::new(members).expect("masks are non-zero"));
        }
        if stack.len() == max_members {
            return;
        }
        for mask in next_min..n_masks {
            stack.push(mask);
            emit(stack, mask + 1, n_masks, max_members, cap, tables, pack, seen, out, universe_size);
            stack.pop();
            if out.len() >= cap {
                return;
            }
        }
    }
    emit(
        &mut stack,
        1,
        n_masks,
        max_members,
        cap,
        &relabel_tables,
        &pack,
        &mut seen,
        &mut out,
        universe_size,
    );
    out
}

/// One mask-relabeling table per permutation of the universe.
fn permutation_mask_tables(universe_size: u32) -> Vec<Vec<u64>> {
    let mut perms = Vec::new();
    let mut elems: Vec<u32> = (0..universe_size).collect();
    fn heap(k: usize, elems: &mut Vec<u32>, perms: &mut Vec<Vec<u32>>) {
        if k == 1 {
            perms.push(elems.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, elems, perms);
            if k % 2 == 0 {
                elems.swap(i, k - 1);
            } else {
                elems.swap(0, k - 1);
            }
        }
    }
    heap(universe_size as usize, &mut elems, &mut perms);
    perms
        .into_iter()
        .map(|perm| {
            (0..1u64 << universe_size)
                .map(|mask| {
                    (0..universe_size)
                        .filter(|&i| mask >> i & 1 == 1)
                        .fold(0u64, |acc, i| acc | 1 << perm[i as usize])
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn fam(members: &[&[u64]]) -> SetFamily {
        SetFamily::new(members.iter().map(|m| m.to_vec()).collect()).unwrap()
    }

    /// Minimal hitting sets straight from the definition: hits everything,
    /// and dropping any one element breaks that.
    fn minimal_hitting_brute(family: &SetFamily) -> Vec<Vec<u64>> {
        let u = family.universe();
        assert!(u.len() <= 16);
        let hits = |h: &[u64]| family.members().iter().all(|m| intersects(m, h));
        let mut out = Vec::new();
        for mask in 0u64..(1 << u.len()) {
            let h: Vec<u64> = u
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &v)| v)
                .collect();
            if !hits(&h) {
                continue;
            }
            let minimal = h.iter().all(|&a| {
                let smaller: Vec<u64> = h.iter().copied().filter(|&x| x != a).collect();
                !hits(&smaller)
            });
            if minimal {
                out.push(h);
            }
        }
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }

    #[test]
    fn membership_checks_all_three_clauses() {
        let m = fam(&[&[1, 2], &[2, 3]]);
        assert!(is_in_j(&[2], &m));
        assert!(is_in_j(&[1, 3], &m));
        assert!(!is_in_j(&[1, 2], &m));
        assert!(!is_in_j(&[1], &m));
        assert!(!is_in_j(&[4], &m));
        assert!(!is_in_j(&[], &m));
    }

    #[test]
    fn enumeration_matches_the_frozen_examples() {
        let m = fam(&[&[1, 2], &[2, 3]]);
        assert_eq!(enumerate_j(&m).unwrap(), vec![vec![2], vec![1, 3]]);
        let m = fam(&[&[1]]);
        assert_eq!(enumerate_j(&m).unwrap(), vec![vec![1]]);
        let m = fam(&[&[1, 2], &[1, 2], &[2]]);
        assert_eq!(enumerate_j(&m).unwrap(), vec![vec![2]]);
    }

    #[test]
    fn forced_singletons_bypass_the_universe_guard() {
        let members: Vec<Vec<u64>> = (0..30).map(|i| vec![i]).collect();
        let m = SetFamily::new(members).unwrap();
        let expected: Vec<u64> = (0..30).collect();
        assert_eq!(enumerate_j(&m).unwrap(), vec![expected]);

        // A wide member alongside: still hit by the forced elements.
        let mut members: Vec<Vec<u64>> = (0..30).map(|i| vec![i]).collect();
        members.push((0..25).collect());
        let m = SetFamily::new(members).unwrap();
        assert_eq!(enumerate_j(&m).unwrap().len(), 1);

        let m = SetFamily::new(vec![(0..21).collect(), (21..42).collect()]).unwrap();
        assert_eq!(
            enumerate_j(&m).unwrap_err(),
            TransversalError::UniverseTooLarge { size: 42, limit: 20 }
        );
    }

    #[test]
    fn sequential_construction_follows_the_traces() {
        let m = fam(&[&[1, 2], &[2, 3]]);
        assert_eq!(construct_h(&m, TieBreak::Smallest).unwrap(), vec![1, 3]);
        let m = fam(&[&[1, 2], &[1, 2], &[2]]);
        assert_eq!(construct_h(&m, TieBreak::Smallest).unwrap(), vec![2]);
        let m = fam(&[&[1]]);
        assert_eq!(construct_h(&m, TieBreak::Smallest).unwrap(), vec![1]);
    }

    #[test]
    fn filtering_removes_avoided_sets() {
        let m = fam(&[&[1, 2], &[2, 3]]);
        assert_eq!(filter_h(&m, &[2]).unwrap(), vec![vec![1, 3]]);
        assert_eq!(filter_h(&m, &[]).unwrap(), vec![vec![2], vec![1, 3]]);
        let m = fam(&[&[1]]);
        assert_eq!(filter_h(&m, &[1]).unwrap(), Vec::<Vec<u64>>::new());
    }

    #[test]
    fn corpus_classes_are_distinct_and_exercised() {
        let corpus = family_corpus(5, 3, 1500);
        assert!(corpus.len() >= 100, "corpus too small: {}", corpus.len());
        for family in &corpus {
            let j = enumerate_j(family).unwrap();
            assert_eq!(j, minimal_hitting_brute(family), "{family:?}");
            assert!(!j.is_empty(), "J must be non-empty: {family:?}");
            let h = construct_h(family, TieBreak::Smallest).unwrap();
            assert!(is_in_j(&h, family), "{family:?} gave {h:?}");
        }
    }

    #[test]
    fn random_families_always_yield_a_valid_construction() {
        let mut rng = StdRng::seed_from_u64(37);
        for _ in 0..10_000 {
            let universe = rng.gen_range(1..=10u64);
            let n_members = rng.gen_range(1..=8);
            let members: Vec<Vec<u64>> = (0..n_members)
                .map(|_| {
                    let size = rng.gen_range(1..=universe);
                    let mut m: Vec<u64> =
                        (0..size).map(|_| rng.gen_range(0..universe)).collect();
                    m.sort_unstable();
                    m.dedup();
                    m
                })
                .collect();
            let family = SetFamily::new(members).unwrap();
            let h = construct_h(&family, TieBreak::Smallest).unwrap();
            assert!(is_in_j(&h, &family), "{family:?} gave {h:?}");
        }
    }

    #[test]
    fn text_format_round_trips_and_reports_offsets() {
        let family = SetFamily::parse("1 2\n2 3\n").unwrap();
        assert_eq!(family, fam(&[&[1, 2], &[2, 3]]));
        let family = SetFamily::parse("  4 4 1 \n\n7").unwrap();
        assert_eq!(family, fam(&[&[1, 4], &[7]]));

        let err = SetFamily::parse("1 2\n2 x").unwrap_err();
        assert_eq!(err.offset, 6);
        assert!(err.reason.contains("\"x\""));
        let err = SetFamily::parse("99999999999999999999999").unwrap_err();
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn empty_members_are_rejected() {
        assert_eq!(
            SetFamily::new(vec![vec![1], vec![]]).unwrap_err(),
            TransversalError::EmptyMember { index: 1 }
        );
    }
}
