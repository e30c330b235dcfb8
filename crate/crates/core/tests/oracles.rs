//! Geometry and safety metrics against dense 1 cm rasterization oracles.

mod common;

use common::{box_pair_sweep, collision_sweep, offroad_sweep};

#[test]
fn boxes_intersect_matches_raster() {
    let t = box_pair_sweep(2024, 1000);
    assert_eq!(t.mismatches, 0, "{t:?}");
    assert!(t.checked > 950 && t.positive > 100 && t.positive < t.checked - 100, "{t:?}");
}

#[test]
fn collision_matches_raster() {
    let t = collision_sweep(7, 500);
    assert_eq!(t.mismatches, 0, "{t:?}");
    assert!(t.checked > 900 && t.positive > 50, "{t:?}");
}

#[test]
fn offroad_matches_containment_oracle() {
    let t = offroad_sweep(11, 500);
    assert_eq!(t.mismatches, 0, "{t:?}");
    assert!(t.checked > 900 && t.positive > 100 && t.positive < t.checked - 100, "{t:?}");
}
