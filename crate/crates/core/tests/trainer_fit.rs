use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdown::geodata::{DataCube, GeoGrid, PatchConfig, VarKind, VarSchema, VarSpec};
use stdown::objective::LossConfig;
use stdown::pscnet::{init_params, InitScheme, ModelConfig, Network};
use stdown::synthlab::{gen_scene, MappingKind, Scene, SceneSpec};
use stdown::trainer::{
    downscale, evaluate, fit, load_checkpoint, load_train_state, mask_schedule, prepare_dataset, save_checkpoint,
    train_step, Adam, AdamConfig, Dataset, TrainConfig, Trainer,
};

fn small_scene(kind: MappingKind) -> Scene {
    let mut spec = SceneSpec {
        fine: GeoGrid::from_edges(45.0, -100.0, 0.1, 0.1, 24, 24).unwrap(),
        coarse: GeoGrid::from_edges(45.0, -100.0, 0.3, 0.3, 8, 8).unwrap(),
        days: 6,
        stations: 4,
        ..SceneSpec::default()
    };
    spec.mapping.kind = kind;
    gen_scene(&spec).unwrap()
}

fn dataset(scene: &Scene) -> Dataset {
    prepare_dataset(&scene.cube_coarse, &scene.target_coarse, PatchConfig::default(), 3).unwrap()
}

fn small_net(in_channels: usize, seed: u64) -> Network {
    let cfg = ModelConfig {
        base_channels: 8,
        se_reduction: 4,
        ffn_expansion: 2,
        se_window: Some(1),
        ..ModelConfig::with_inputs(in_channels)
    };
    Network::new(cfg.clone(), init_params(&cfg, InitScheme::Default, seed).unwrap()).unwrap()
}

fn short_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        patience: epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_examples_and_monotonicity() {
    assert_eq!(mask_schedule(0, 0.5, 10), 0.5);
    assert_eq!(mask_schedule(5, 0.5, 10), 0.25);
    assert_eq!(mask_schedule(10, 0.5, 10), 0.0);
    assert_eq!(mask_schedule(40, 0.5, 10), 0.0);
    assert_eq!(mask_schedule(0, 0.5, 0), 0.0);
    let ps: Vec<f64> = (0..70).map(|e| mask_schedule(e, 0.7, 30)).collect();
    assert!(ps.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(TrainConfig::default().e_mask(), 30);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { p0: 1.5, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { e_mask: Some(61), ..TrainConfig::default() }.validate().is_err());
    let adam = AdamConfig { lr: 0.0, ..AdamConfig::default() };
    assert!(TrainConfig { adam, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn seeded_runs_are_identical_and_test_patches_never_train() {
    let scene = small_scene(MappingKind::Logistic);
    let data = dataset(&scene);
    let c = data.input_schema.len();
    let loss = LossConfig::default();
    let a = fit(small_net(c, 1), &data.splits, &short_cfg(3), &loss).unwrap();
    let b = fit(small_net(c, 1), &data.splits, &short_cfg(3), &loss).unwrap();
    assert_eq!(a.state.history, b.state.history);
    assert_eq!(a.best.params, b.best.params);
    assert_eq!(a.test_loss, b.test_loss);

    let test_ids: BTreeSet<usize> = data.splits.test.iter().map(|p| p.id).collect();
    let val_ids: BTreeSet<usize> = data.splits.val.iter().map(|p| p.id).collect();
    assert!(!test_ids.is_empty());
    assert!(a.trained_ids.is_disjoint(&test_ids));
    assert!(a.trained_ids.is_disjoint(&val_ids));
    let train_ids: BTreeSet<usize> = data.splits.train.iter().map(|p| p.id).collect();
    assert_eq!(a.trained_ids, train_ids);
}

#[test]
fn zero_patience_stops_at_first_non_improving_epoch() {
    let scene = small_scene(MappingKind::Logistic);
    let data = dataset(&scene);
    let cfg = TrainConfig {
        patience: 0,
        adam: AdamConfig { lr: 0.05, ..AdamConfig::default() },
        ..short_cfg(30)
    };
    let out = fit(small_net(data.input_schema.len(), 2), &data.splits, &cfg, &LossConfig::default()).unwrap();
    let h = &out.state.history;
    assert!(out.state.stopped);
    assert!(h.len() < 30);
    let (last, before) = h.split_last().unwrap();
    assert!(before.windows(2).all(|w| w[1].val_loss < w[0].val_loss));
    assert!(last.val_loss >= before.last().unwrap().val_loss);
    assert_eq!(out.best_epoch, h.len() - 2);
}

#[test]
fn resume_reproduces_the_next_epoch() {
    let scene = small_scene(MappingKind::Logistic);
    let data = dataset(&scene);
    let loss = LossConfig::default();
    let net = small_net(data.input_schema.len(), 4);
    let mut trainer = Trainer::new(net, short_cfg(4), loss, &data.splits).unwrap();
    trainer.run_epoch().unwrap();
    trainer.run_epoch().unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &trainer, &data, None).unwrap();
    let expected = trainer.run_epoch().unwrap();
    let expected_params = trainer.state.net.params.clone();

    let (ck, state) = load_train_state(dir.path()).unwrap();
    assert_eq!(ck.history.len(), 2);
    let mut resumed = Trainer::resume(state, ck.meta.train.clone(), ck.meta.loss, &data.splits).unwrap();
    let got = resumed.run_epoch().unwrap();
    assert_eq!(got, expected);
    assert_eq!(resumed.state.net.params, expected_params);
}

#[test]
fn checkpoint_reload_reproduces_validation_loss() {
    let scene = small_scene(MappingKind::Logistic);
    let data = dataset(&scene);
    let loss = LossConfig::default();
    let mut trainer = Trainer::new(small_net(data.input_schema.len(), 5), short_cfg(2), loss, &data.splits).unwrap();
    trainer.run_epoch().unwrap();
    trainer.run_epoch().unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &trainer, &data, None).unwrap();
    for f in ["config.json", "params.bin", "norm_stats.json", "history.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let ck = load_checkpoint(dir.path()).unwrap();
    let reloaded = evaluate(&ck.predictor.net, &data.splits.val, &loss).unwrap().unwrap();
    assert_eq!(reloaded.to_bits(), ck.meta.best_val_loss.to_bits());
    assert_eq!(ck.history, trainer.state.history);
}

#[test]
fn single_patch_overfits() {
    let scene = small_scene(MappingKind::Logistic);
    let data = dataset(&scene);
    let patch = &data.splits.train[0];
    let mut net = small_net(data.input_schema.len(), 6);
    let mut opt = Adam::new(AdamConfig { lr: 3e-3, ..AdamConfig::default() }, &net.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = LossConfig::default();
    let mut best = f64::INFINITY;
    for _ in 0..200 {
        best = best.min(train_step(&mut net, &mut opt, &[patch], 0.0, false, &loss, &mut rng).unwrap());
    }
    assert!(best < 0.02, "best loss {best}");
}

#[test]
fn default_model_improves_on_linear_scene() {
    let scene = small_scene(MappingKind::Linear);
    let data = dataset(&scene);
    let cfg = ModelConfig::with_inputs(data.input_schema.len());
    let net = Network::new(cfg.clone(), init_params(&cfg, InitScheme::Default, 0).unwrap()).unwrap();
    let out = fit(net, &data.splits, &TrainConfig { epochs: 5, ..TrainConfig::default() }, &LossConfig::default()).unwrap();
    let h = &out.state.history;
    assert!(h[1..].iter().any(|r| r.val_loss < h[0].val_loss), "{h:?}");
}

#[test]
fn downscale_contract() {
    let scene = small_scene(MappingKind::Logistic);
    let data = dataset(&scene);
    let mut trainer =
        Trainer::new(small_net(data.input_schema.len(), 7), short_cfg(1), LossConfig::default(), &data.splits).unwrap();
    trainer.run_epoch().unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &trainer, &data, None).unwrap();
    let ck = load_checkpoint(dir.path()).unwrap();

    let mut cube = scene.cube_fine.clone();
    let blank = 20;
    let px = cube.grid.cells();
    let (_, m) = cube.plane(blank, 0);
    cube.set_plane(blank, 0, &vec![0.0; px], &vec![false; m.len()]);
    let out = downscale(&ck, &cube).unwrap();
    assert_eq!(out.grid, scene.cube_fine.grid);
    assert_eq!(out.times, scene.cube_fine.times);
    assert_eq!(out.times.len(), scene.spec.days * 8);
    let per_day = out.times.iter().filter(|&&t| t < out.times[0] + 86_400).count();
    assert_eq!(per_day, 8);
    assert!(out.mask[blank * px..(blank + 1) * px].iter().all(|&m| !m));
    assert!(out.mask[(blank + 5) * px..(blank + 6) * px].iter().any(|&m| m));
    assert!(out.mask[..px].iter().all(|&m| !m));
    assert!(out.values.iter().all(|v| (0.0..=1.0).contains(v)));

    let coarse = downscale(&ck, &scene.cube_coarse).unwrap();
    let t = scene.cube_coarse.time_index(scene.target_coarse.times[3]).unwrap();
    let (pred, mask) = ck.predictor.predict_prepared(&ck.predictor.prepare(&scene.cube_coarse).unwrap(), t).unwrap();
    let cpx = scene.cube_coarse.grid.cells();
    for k in 0..cpx {
        if mask[k] {
            assert_eq!(coarse.values[t * cpx + k], pred[k]);
        }
    }

    let renamed = VarSchema::new(
        cube.schema.vars().iter().enumerate().map(|(i, v)| {
            let name = if i == 0 { "rain".to_string() } else { v.name.clone() };
            VarSpec::new(name, VarKind::Dynamic, v.units.clone())
        }).collect(),
    )
    .unwrap();
    let bad = DataCube::new(cube.grid, renamed, cube.times.clone(), cube.values.clone(), cube.mask.clone()).unwrap();
    assert!(downscale(&ck, &bad).is_err());
}
