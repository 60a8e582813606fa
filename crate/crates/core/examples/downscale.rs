//! Trains on the coarse grid, then applies the model to the fine grid and
//! scores the product against the fine truth.
//!
//! `cargo run --example downscale`

use stdown::evalkit::{compare_fields, validate_vs_coarse};
use stdown::geodata::GeoGrid;
use stdown::objective::LossConfig;
use stdown::pscnet::{init_params, InitScheme, ModelConfig, Network, Predictor};
use stdown::synthlab::{gen_scene, SceneSpec};
use stdown::trainer::{fit, prepare_dataset, TrainConfig};

fn main() -> stdown::Result<()> {
    let spec = SceneSpec {
        fine: GeoGrid::from_edges(45.0, -100.0, 0.1, 0.1, 45, 45)?,
        coarse: GeoGrid::from_edges(45.0, -100.0, 0.36, 0.36, 12, 12)?,
        days: 20,
        ..SceneSpec::default()
    };
    let scene = gen_scene(&spec)?;
    let train = TrainConfig { epochs: 10, batch_size: 8, ..TrainConfig::default() };
    let data = prepare_dataset(&scene.cube_coarse, &scene.target_coarse, train.patch, train.seed)?;
    let model = ModelConfig { base_channels: 16, ..ModelConfig::with_inputs(data.input_schema.len()) };
    let net = Network::new(model.clone(), init_params(&model, InitScheme::Default, train.seed)?)?;
    let out = fit(net, &data.splits, &train, &LossConfig::default())?;
    println!("trained {} epochs, best val loss {:.4}", out.state.history.len(), out.best_val_loss);

    let predictor = Predictor {
        net: out.best,
        norm: data.norm,
        bounds: data.bounds,
        t_len: data.patch.t_len,
    };
    let product = predictor.infer_full(&scene.cube_fine)?;
    let valid = product.mask.iter().filter(|&&m| m).count();
    println!("fine product: {} maps, {valid} valid cells", product.times.len());

    let fine = compare_fields(&product, &scene.truth_fine, "fine")?.pooled;
    let coarse = validate_vs_coarse(&product, &scene.truth_coarse)?.pooled;
    for (label, m) in [("vs fine truth", fine), ("vs coarse truth", coarse)] {
        println!(
            "{label:<16} R {:.4}  bias {:+.4}  RMSE {:.4}  ubRMSE {:.4}",
            m.r.unwrap_or(f64::NAN),
            m.bias.unwrap_or(f64::NAN),
            m.rmse.unwrap_or(f64::NAN),
            m.ubrmse.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
