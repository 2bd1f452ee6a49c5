//! GPS feature invariances.

use blockcast::gps::{features_from_xy, FEATURE_LEN};
use proptest::prelude::*;

const T: [i64; 5] = [0, 300, 600, 900, 1200];

fn close(a: &[f64; FEATURE_LEN], b: &[f64; FEATURE_LEN]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0))
}

fn track() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 5).prop_map(|v| v.into_iter().map(|(x, y)| [x, y]).collect())
}

proptest! {
    #[test]
    fn translation_invariant(xy in track(), dx in -1e3f64..1e3, dy in -1e3f64..1e3) {
        let moved: Vec<[f64; 2]> = xy.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        prop_assert!(close(&features_from_xy(&xy, &T).unwrap(), &features_from_xy(&moved, &T).unwrap()));
    }

    #[test]
    fn rotation_invariant(xy in track(), theta in -3.1f64..3.1) {
        let (s, c) = theta.sin_cos();
        let rotated: Vec<[f64; 2]> = xy.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
        prop_assert!(close(&features_from_xy(&xy, &T).unwrap(), &features_from_xy(&rotated, &T).unwrap()));
    }

    #[test]
    fn path_length_bounds_net_displacement(xy in track()) {
        let f = features_from_xy(&xy, &T).unwrap();
        prop_assert!(f[5] >= f[4] - 1e-12);
    }
}
