//! Relative generalization errors of a field at the held-out UTC hours,
//! relative to the 06/18 UTC baseline.
//!
//! `cargo run --example relgen_table`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stdown::evalkit::{metrics_by_hour, relgen, HourMetrics};
use stdown::geodata::GeoGrid;
use stdown::synthlab::{gen_scene, SceneSpec};

fn main() -> stdown::Result<()> {
    let spec = SceneSpec {
        fine: GeoGrid::from_edges(45.0, -100.0, 0.1, 0.1, 20, 20)?,
        coarse: GeoGrid::from_edges(45.0, -100.0, 0.4, 0.4, 5, 5)?,
        days: 20,
        ..SceneSpec::default()
    };
    let scene = gen_scene(&spec)?;

    // A stand-in product whose error grows with distance from 06/18 UTC.
    let mut product = scene.truth_fine.clone();
    let px = product.grid.cells();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, t) in product.times.iter().enumerate() {
        let hour = t.rem_euclid(86_400) / 3600;
        let off = ((hour - 6).rem_euclid(12)).min((6 - hour).rem_euclid(12)) as f64;
        let noise = Normal::new(0.0, 0.01 + 0.002 * off).expect("positive sigma");
        for v in &mut product.values[k * px..(k + 1) * px] {
            *v += noise.sample(&mut rng);
        }
    }

    let by_hour: Vec<HourMetrics> = metrics_by_hour(&product, &scene.truth_fine)?
        .iter()
        .map(|(h, m)| HourMetrics::from_metrics(*h, m))
        .collect();
    let table = relgen(&by_hour);
    println!("baseline R {:.4}, ubRMSE {:.4}", table.baseline_r.unwrap(), table.baseline_ubrmse.unwrap());
    println!("hour   RE_R      RE_ubRMSE");
    for row in &table.rows {
        println!("{:>4}  {:+7.2}%  {:+7.2}%", row.hour, row.re_r.unwrap() * 100.0, row.re_ubrmse.unwrap() * 100.0);
    }
    println!("mean  {:+7.2}%  {:+7.2}%", table.mean_re_r.unwrap() * 100.0, table.mean_re_ubrmse.unwrap() * 100.0);
    Ok(())
}
