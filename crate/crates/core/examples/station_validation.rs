//! Validates a field against synthetic in-situ stations with the default
//! depth, quality and season rules.
//!
//! `cargo run --example station_validation`

use stdown::evalkit::validate_vs_stations;
use stdown::geodata::{GeoGrid, StationRules};
use stdown::synthlab::{gen_scene, SceneSpec};

fn main() -> stdown::Result<()> {
    let spec = SceneSpec {
        fine: GeoGrid::from_edges(45.0, -100.0, 0.1, 0.1, 30, 30)?,
        coarse: GeoGrid::from_edges(45.0, -100.0, 0.3, 0.3, 10, 10)?,
        days: 30,
        stations: 8,
        ..SceneSpec::default()
    };
    let scene = gen_scene(&spec)?;
    // the noise-free truth stands in for a product here
    let report = validate_vs_stations(&scene.truth_fine, &scene.stations, &StationRules::default())?;
    for s in &report.stations {
        let m = &s.metrics;
        println!(
            "{:<10} cell {:?}  n {:>3}  R {:.3}  ubRMSE {:.4}",
            s.id,
            s.cell,
            m.n,
            m.r.unwrap_or(f64::NAN),
            m.ubrmse.unwrap_or(f64::NAN)
        );
    }
    for (net, m) in &report.networks {
        println!("network {net}: n {}  ubRMSE {:.4} (station noise {})", m.n, m.ubrmse.unwrap_or(f64::NAN), spec.station_noise);
    }
    for x in &report.skipped {
        println!("skipped {}: {}", x.id, x.reason);
    }
    Ok(())
}
