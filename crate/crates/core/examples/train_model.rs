//! Trains a compact network on a small synthetic scene and saves a checkpoint.
//!
//! `cargo run --example train_model -- [checkpoint_dir]`

use std::path::PathBuf;

use stdown::geodata::GeoGrid;
use stdown::objective::LossConfig;
use stdown::pscnet::{init_params, InitScheme, ModelConfig, Network};
use stdown::synthlab::{gen_scene, SceneSpec};
use stdown::trainer::{prepare_dataset, save_checkpoint, TrainConfig, Trainer};

fn main() -> stdown::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("stdown-ckpt"));
    let spec = SceneSpec {
        fine: GeoGrid::from_edges(45.0, -100.0, 0.1, 0.1, 48, 48)?,
        coarse: GeoGrid::from_edges(45.0, -100.0, 0.3, 0.3, 16, 16)?,
        days: 20,
        ..SceneSpec::default()
    };
    let scene = gen_scene(&spec)?;

    let train = TrainConfig { epochs: 8, batch_size: 8, ..TrainConfig::default() };
    let data = prepare_dataset(&scene.cube_coarse, &scene.target_coarse, train.patch, train.seed)?;
    println!(
        "patches: {} train, {} val, {} test",
        data.splits.train.len(),
        data.splits.val.len(),
        data.splits.test.len()
    );

    let model = ModelConfig { base_channels: 16, ..ModelConfig::with_inputs(data.input_schema.len()) };
    let net = Network::new(model.clone(), init_params(&model, InitScheme::Default, train.seed)?)?;
    let mut trainer = Trainer::new(net, train, LossConfig::default(), &data.splits)?;
    while !trainer.finished() {
        let rec = trainer.run_epoch()?;
        println!(
            "epoch {:>2}  train {:.4}  val {:.4}  hint fraction {:.3}",
            rec.epoch, rec.train_loss, rec.val_loss, rec.mask_fraction
        );
    }
    let outcome = trainer.outcome()?;
    println!("best epoch {} (val {:.4}), test {:?}", outcome.best_epoch, outcome.best_val_loss, outcome.test_loss);
    save_checkpoint(&out, &trainer, &data, outcome.test_loss)?;
    println!("checkpoint in {}", out.display());
    Ok(())
}
