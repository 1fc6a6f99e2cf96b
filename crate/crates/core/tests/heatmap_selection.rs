mod common;

use std::collections::BTreeSet;
use std::fs;

use common::{assignment, id, random_pair, recount};
use proptest::prelude::*;
use soi_core::selection::{
    export_subset, manifest_path, read_subset, select, select_with, SelectOptions, SubsetManifest, DEGRADING_CELLS,
};
use soi_core::transitions::{build_heatmap, build_heatmap_with};
use soi_core::{SoiAssignment, SoiCategory, Strategy, TransitionError};

use SoiCategory::*;

fn ids(a: &SoiAssignment, s: Strategy, b: &SoiAssignment) -> BTreeSet<String> {
    select(s, a, b).unwrap().example_ids
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heatmap_matches_recount(n in 1usize..300, seed in any::<u64>()) {
        let (a, b) = random_pair(n, seed);
        let m = build_heatmap(&a, &b).unwrap();
        let brute = recount(&a, &b);
        for from in SoiCategory::ALL {
            for to in SoiCategory::ALL {
                prop_assert_eq!(m.cell(from, to), brute.get(&(from, to)).copied().unwrap_or(0));
            }
        }
        prop_assert_eq!(m.row_sums, a.census().0);
        prop_assert_eq!(m.col_sums, b.census().0);
        prop_assert_eq!(m.total, n);
        prop_assert_eq!(build_heatmap(&b, &a).unwrap(), m.transpose());
        prop_assert!(build_heatmap(&a, &a).unwrap().is_diagonal());
    }

    #[test]
    fn strategy_algebra(n in 1usize..300, seed in any::<u64>()) {
        let (a, b) = random_pair(n, seed);
        let m = build_heatmap(&a, &b).unwrap();
        let [s1, s2, s3, s4, s5, s6] = Strategy::ALL.map(|s| ids(&a, s, &b));
        let nine: usize = DEGRADING_CELLS.iter().map(|&(f, t)| m.cell(f, t)).sum();
        prop_assert_eq!(s1.len(), nine);
        prop_assert!(s2.is_subset(&s3) && s3.is_subset(&s6));
        prop_assert!(s1.is_disjoint(&s3));
        prop_assert_eq!(s3.len() - s2.len(), m.cell(Ele, Ele));
        prop_assert_eq!(s6.len(), n);
        let forgettable = |x: &SoiAssignment| -> BTreeSet<String> {
            x.entries.iter().filter(|(_, e)| e.category.is_forgettable()).map(|(k, _)| k.clone()).collect()
        };
        prop_assert_eq!(&s4, &forgettable(&a));
        prop_assert_eq!(&s5, &forgettable(&b));
        prop_assert_eq!(ids(&a, Strategy::IV, &a), ids(&a, Strategy::V, &a));
        prop_assert!(ids(&a, Strategy::I, &a).is_empty());
    }

    #[test]
    fn iv_and_v_each_see_one_side(n in 1usize..200, s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = random_pair(n, s1);
        let (c, d) = random_pair(n, s2);
        prop_assert_eq!(ids(&a, Strategy::IV, &b), ids(&a, Strategy::IV, &d));
        prop_assert_eq!(ids(&a, Strategy::V, &b), ids(&c, Strategy::V, &b));
    }
}

#[test]
fn strategy_cells_are_as_named() {
    assert_eq!(DEGRADING_CELLS.len(), 9);
    assert!(DEGRADING_CELLS.iter().all(|(f, t)| f != t));
    assert_eq!(DEGRADING_CELLS.iter().collect::<BTreeSet<_>>().len(), 9);
    assert_eq!(Strategy::II.cells(), &[(Une, Une), (Frge1t, Frge1t), (FrgeGe2t, FrgeGe2t), (Lle, Lle)]);
    assert_eq!(Strategy::III.cells().len(), 5);
    assert!(!Strategy::III.cells().contains(&(Ace, Ace)));
    assert_eq!(Strategy::default(), Strategy::III);
    assert_eq!("vi".parse::<Strategy>().unwrap(), Strategy::VI);
    assert!("VII".parse::<Strategy>().is_err());
}

#[test]
fn identity_and_named_cells() {
    let mut cats: Vec<(String, SoiCategory)> = (0..24).map(|i| (id(i), Lle)).collect();
    cats.push((id(100), Ace));
    let a = assignment("single", cats.clone());
    let b = assignment(
        "multi",
        cats.iter().map(|(k, c)| (k.clone(), if *c == Lle { Ele } else { *c })),
    );
    let m = build_heatmap(&a, &b).unwrap();
    assert_eq!(m.cell(Lle, Ele), 24);
    assert_eq!(m.row_sums[Lle.index()], 24);
    assert_eq!(m.col_sums[Ele.index()], 24);

    let same = build_heatmap(&a, &a).unwrap();
    assert!(same.is_diagonal());
    assert_eq!(same.cell(Lle, Lle), 24);

    let iii = ids(&a, Strategy::III, &a);
    assert_eq!(iii.len(), 24);
    assert!(!iii.contains(&id(100)));
}

#[test]
fn mismatched_sets_need_intersect() {
    let a = assignment("a", (0..5).map(|i| (id(i), Ace)));
    let b = assignment("b", (2..8).map(|i| (id(i), Une)));
    match build_heatmap(&a, &b) {
        Err(TransitionError::ExampleSetMismatch { only_in_source, only_in_target, .. }) => {
            assert_eq!(only_in_source, vec![id(0), id(1)]);
            assert_eq!(only_in_target, vec![id(5), id(6), id(7)]);
        }
        other => panic!("{other:?}"),
    }
    let m = build_heatmap_with(&a, &b, true).unwrap();
    assert_eq!((m.total, m.cell(Ace, Une)), (3, 3));
    let opts = SelectOptions { include_une: false, intersect: true };
    assert_eq!(select_with(Strategy::VI, &a, &b, opts).unwrap().len(), 3);
    assert!(select(Strategy::VI, &a, &b).is_err());

    let c = assignment("c", (10..12).map(|i| (id(i), Ace)));
    assert!(matches!(build_heatmap_with(&a, &c, true), Err(TransitionError::EmptyIntersection(..))));
}

#[test]
fn include_une_widens_iv_and_v() {
    let a = assignment("a", [(id(0), Une), (id(1), Frge1t), (id(2), Ace)]);
    let b = assignment("b", [(id(0), Ace), (id(1), Ace), (id(2), Une)]);
    assert_eq!(ids(&a, Strategy::IV, &b).len(), 1);
    let wide = SelectOptions { include_une: true, intersect: false };
    assert_eq!(select_with(Strategy::IV, &a, &b, wide).unwrap().len(), 2);
    assert_eq!(select_with(Strategy::V, &a, &b, wide).unwrap().example_ids, BTreeSet::from([id(2)]));
}

#[test]
fn subset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = random_pair(50, 3);
    for strategy in Strategy::ALL {
        let result = select(strategy, &a, &b).unwrap();
        let out = dir.path().join(format!("nested/{strategy}.txt"));
        let manifest = export_subset(&result, &out).unwrap();
        assert_eq!(manifest, manifest_path(&out));
        let back = read_subset(fs::read(&out).unwrap().as_slice()).unwrap();
        assert_eq!(back.into_iter().collect::<BTreeSet<_>>(), result.example_ids);
        let m: SubsetManifest = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
        assert_eq!((m.count, m.strategy, m.source_run.as_str()), (result.len(), strategy, "single"));
    }

    let same = assignment("x", [(id(0), Ace), (id(1), Ace), (id(2), Ace)]);
    let empty = select(Strategy::I, &same, &same).unwrap();
    let out = dir.path().join("empty.txt");
    export_subset(&empty, &out).unwrap();
    assert_eq!(fs::read(&out).unwrap(), b"");
    let m: SubsetManifest = serde_json::from_slice(&fs::read(manifest_path(&out)).unwrap()).unwrap();
    assert_eq!(m.count, 0);

    let all = select(Strategy::VI, &same, &same).unwrap();
    export_subset(&all, &out).unwrap();
    assert_eq!(fs::read_to_string(&out).unwrap(), format!("{}\n{}\n{}\n", id(0), id(1), id(2)));
}
