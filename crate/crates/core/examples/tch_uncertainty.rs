//! Three-cornered-hat error variances of three products that share a
//! signal but carry independent noise, at 3-hourly and daily sampling.
//!
//! `cargo run --example tch_uncertainty`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stdown::evalkit::{daily_mean, tch_maps};
use stdown::geodata::{FieldSeries, GeoGrid};
use stdown::synthlab::{gen_scene, SceneSpec};

fn main() -> stdown::Result<()> {
    let spec = SceneSpec {
        fine: GeoGrid::from_edges(45.0, -100.0, 0.1, 0.1, 12, 12)?,
        coarse: GeoGrid::from_edges(45.0, -100.0, 0.4, 0.4, 3, 3)?,
        days: 60,
        ..SceneSpec::default()
    };
    let truth = gen_scene(&spec)?.truth_fine;
    let sigmas = [0.01, 0.02, 0.03];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let products: Vec<FieldSeries> = sigmas
        .iter()
        .map(|&s| {
            let noise = Normal::new(0.0, s).expect("positive sigma");
            let mut p = truth.clone();
            p.values.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            p
        })
        .collect();
    let daily: Vec<FieldSeries> = products.iter().map(daily_mean).collect::<stdown::Result<_>>()?;

    let three = tch_maps(&products.iter().collect::<Vec<_>>())?;
    let day = tch_maps(&daily.iter().collect::<Vec<_>>())?;
    let mean = |m: &[f64], valid: &[bool]| {
        let v: Vec<f64> = m.iter().zip(valid).filter(|(_, &ok)| ok).map(|(x, _)| *x).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    println!("method {:?}", three.method);
    println!("planted  3-hourly sigma  daily sigma");
    for (i, s) in sigmas.iter().enumerate() {
        println!(
            "{s:.3}    {:.4}            {:.4}",
            mean(&three.variances[i], &three.valid).sqrt(),
            mean(&day.variances[i], &day.valid).sqrt()
        );
    }
    Ok(())
}
