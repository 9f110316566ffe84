mod common;

use flowfair::geodata::{
    distance, haversine_km, load_flows, load_zones, save_flows, save_zones, EARTH_RADIUS_KM,
};
use flowfair::synth::{make_city, SynthConfig};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn synthetic_city_round_trips_through_csv() {
    let (tess, flows) = make_city(&SynthConfig {
        n: 3,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (zp, fp) = (dir.path().join("zones.csv"), dir.path().join("flows.csv"));
    save_zones(&tess, &zp).unwrap();
    save_flows(&flows, &tess, &fp).unwrap();
    let tess2 = load_zones(&zp).unwrap();
    assert_eq!(tess2, tess);
    assert_eq!(load_flows(&fp, &tess2).unwrap(), flows);
}

#[test]
fn grand_total_matches_column_sum() {
    let mut rng = common::rng(100);
    let tess = common::random_tess(&mut rng, 20, 0);
    let mut csv = String::from("origin_id,destination_id,flow\n");
    let mut column_sum = 0.0;
    for _ in 0..100 {
        let (o, d) = (rng.gen_range(0..20), rng.gen_range(0..20));
        let v: f64 = rng.gen_range(0.0..50.0);
        column_sum += v;
        csv.push_str(&format!("{},{},{v}\n", tess.zone(o).id, tess.zone(d).id));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flows.csv");
    std::fs::write(&path, csv).unwrap();
    let flows = load_flows(&path, &tess).unwrap();
    assert!(common::relative_close(flows.total(), column_sum, 1e-12));
    let fresh: f64 = flows.iter().map(|(_, _, v)| v).sum();
    assert!(common::relative_close(flows.total(), fresh, 1e-12));
    for o in 0..20 {
        let row: f64 = flows.row(o).map(|(_, v)| v).sum();
        assert!(common::relative_close(flows.origin_total(o), row, 1e-12) || row == 0.0);
    }
}

#[test]
fn distance_is_symmetric_on_random_pairs() {
    let mut rng = common::rng(3);
    let tess = common::random_tess(&mut rng, 200, 0);
    for k in 0..100 {
        let (a, b) = (tess.zone(2 * k), tess.zone(2 * k + 1));
        assert_eq!(distance(a, b), distance(b, a));
    }
}

proptest! {
    #[test]
    fn distance_bounds(lon1 in -180.0..=180.0f64, lat1 in -90.0..=90.0f64, lon2 in -180.0..=180.0f64, lat2 in -90.0..=90.0f64) {
        let d = haversine_km(lon1, lat1, lon2, lat2);
        prop_assert!(d >= 0.0);
        prop_assert!(d <= std::f64::consts::PI * EARTH_RADIUS_KM);
        prop_assert_eq!(d, haversine_km(lon2, lat2, lon1, lat1));
    }
}
