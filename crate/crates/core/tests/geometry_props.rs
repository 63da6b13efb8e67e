use std::collections::BTreeSet;

use proptest::prelude::*;

use fusedflow::geometry::{AffineRelation, IntBox, Region, Space, StridedInterval};
use fusedflow::workload::AffineExpr;
use fusedflow::RankId;

const EXTENT: i64 = 10;

fn space(names: &[&str]) -> Space {
    Space::new(names.iter().map(|n| RankId::new(n)))
}

fn interval() -> impl Strategy<Value = StridedInterval> {
    (0..EXTENT, 0..EXTENT, 1..4i64).prop_map(|(a, b, s)| {
        let lo = a.min(b);
        let hi = lo + (a.max(b) - lo) / s * s;
        StridedInterval::new(lo, hi, s)
    })
}

fn region(sp: Space) -> impl Strategy<Value = Region> {
    prop::collection::vec((interval(), interval()), 0..4)
        .prop_map(move |bs| Region::from_boxes(sp.clone(), bs.into_iter().map(|(x, y)| IntBox::new([x, y]))))
}

fn points(r: &Region) -> BTreeSet<Vec<i64>> {
    r.enumerate_points(1 << 16).unwrap().into_iter().collect()
}

proptest! {
    #[test]
    fn set_algebra_matches_point_sets(a in region(space(&["X", "Y"])), b in region(space(&["X", "Y"]))) {
        let (pa, pb) = (points(&a), points(&b));
        prop_assert_eq!(pa.len() as u64, a.count());
        let u = a.union(&b).unwrap();
        prop_assert_eq!(points(&u), pa.union(&pb).cloned().collect::<BTreeSet<_>>());
        prop_assert_eq!(u.count() as usize, pa.union(&pb).count());
        let i = a.intersect(&b).unwrap();
        prop_assert_eq!(points(&i), pa.intersection(&pb).cloned().collect::<BTreeSet<_>>());
        let d = a.difference(&b).unwrap();
        prop_assert_eq!(points(&d), pa.difference(&pb).cloned().collect::<BTreeSet<_>>());
        prop_assert_eq!(a.is_subset(&b).unwrap(), pa.is_subset(&pb));
    }

    #[test]
    fn sliding_window_image_is_exact(r in region(space(&["P", "R"])), stride in 1..4i64) {
        let expr = AffineExpr::new(vec![(stride, RankId::new("P")), (1, RankId::new("R"))], 0);
        let rel = AffineRelation::new(space(&["P", "R"]), space(&["H"]), &[expr]).unwrap();
        let want: BTreeSet<Vec<i64>> = points(&r).iter().map(|p| rel.apply(p)).collect();
        prop_assert_eq!(points(&rel.image(&r).unwrap()), want);
    }
}
