use proptest::prelude::*;

use sparse_ph::cech::build_filtration;
use sparse_ph::persistence::{
    betti_number, compute_diagram, count_rectangle, persistent_betti, persistent_betti_oracle, rectangle_by_betti,
    Rectangle,
};
use sparse_ph::sampling::PointCloud;

fn cloud(d: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), 3..14)
        .prop_map(move |rows| PointCloud::from_rows(d, rows).unwrap())
}

fn sorted4() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.0f64..1.0).prop_map(|mut a| {
        a.sort_by(f64::total_cmp);
        a
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn faces_never_enter_after_cofaces(c in cloud(2)) {
        let fc = build_filtration(&c, 1, 0.8).unwrap();
        let values: std::collections::HashMap<&[u32], f64> =
            fc.simplices().iter().map(|s| (s.vertices.as_slice(), s.value)).collect();
        for w in fc.simplices().windows(2) {
            prop_assert!(w[0].value <= w[1].value);
        }
        for s in fc.simplices().iter().filter(|s| s.dim() > 0) {
            for skip in 0..s.vertices.len() {
                let facet: Vec<u32> = s.vertices.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &v)| v).collect();
                prop_assert!(values[facet.as_slice()] <= s.value);
            }
        }
    }

    #[test]
    fn diagram_scales_with_the_cloud(c in cloud(2), lambda in 0.25f64..4.0) {
        let base = compute_diagram(&build_filtration(&c, 1, 0.8).unwrap(), 1, 1.0).unwrap();
        let big = compute_diagram(&build_filtration(&c.scaled(lambda), 1, 0.8 * lambda).unwrap(), 1, lambda).unwrap();
        prop_assert_eq!(base.pairs.len(), big.pairs.len());
        for (a, b) in base.pairs.iter().zip(&big.pairs) {
            prop_assert!((a.birth - b.birth).abs() <= 1e-9 * a.birth.max(1.0));
            prop_assert!(a.death == b.death || (a.death - b.death).abs() <= 1e-9 * a.death.max(1.0));
        }
    }

    #[test]
    fn betti_is_monotone_and_matches_oracle(c in cloud(2), st in sorted4()) {
        let cutoff = 1.0;
        let fc = build_filtration(&c, 1, cutoff).unwrap();
        let diag = compute_diagram(&fc, 1, 1.0).unwrap();
        let [a, b, x, y] = st;
        // Shrinking s or growing t can only lose classes.
        prop_assert!(persistent_betti(&diag, a, y).unwrap() <= persistent_betti(&diag, b, y).unwrap());
        prop_assert!(persistent_betti(&diag, b, y).unwrap() <= persistent_betti(&diag, b, x).unwrap());
        prop_assert_eq!(persistent_betti(&diag, b, x).unwrap(), persistent_betti_oracle(&fc, 1, b, x).unwrap());
        prop_assert_eq!(persistent_betti(&diag, x, x).unwrap(), betti_number(&fc, 1, x).unwrap());
    }

    #[test]
    fn rectangle_identity(c in cloud(2), st in sorted4(), unbounded in any::<bool>(), closed in any::<bool>()) {
        let fc = build_filtration(&c, 1, 0.6).unwrap();
        let diag = compute_diagram(&fc, 1, 1.0).unwrap();
        let [s, t, u, v] = st;
        let v = if unbounded { f64::INFINITY } else { v };
        let rect = if closed { Rectangle::left_closed(t, u, v).unwrap() } else { Rectangle::new(s, t, u, v).unwrap() };
        prop_assert_eq!(count_rectangle(&diag, &rect).unwrap() as i64, rectangle_by_betti(&diag, &rect).unwrap());
    }
}
