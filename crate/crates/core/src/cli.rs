//! Command-line workflow: synth, train, infer, evaluation and checks.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diffcore::{op_suite, SuiteResult, OPERATORS};
use crate::error::{Error, Result};
use crate::evalkit::{
    daily_mean, metrics_by_hour, read_hour_metrics_csv, relgen, tch_maps, validate_vs_coarse, validate_vs_stations,
    write_hour_metrics_csv, write_metrics_csv, write_pgm, write_re_table_csv, MetricsRow, TchMaps,
};
use crate::geodata::{
    load_cube, load_field, read_stations_csv, save_field, save_field_named, Dtype, FieldSeries, StationRules,
};
use crate::objective::LossConfig;
use crate::pscnet::{init_params, model_suite, InitScheme, ModelConfig, Network};
use crate::synthlab::{gen_scene, parse_manifest, write_scene, SceneSpec, COARSE_DIR, TARGET_DIR};
use crate::trainer::{
    downscale, load_checkpoint, load_train_state, prepare_dataset, save_checkpoint, TrainConfig, Trainer,
};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const PRODUCT_DIR: &str = "product";

#[derive(Debug, Parser)]
#[command(name = "stdown", version, about = "Soil-moisture downscaling toolkit")]
pub struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true, env = "STDOWN_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    pub log_level: LogLevel,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Error,
    Info,
    Debug,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32le,
    F64le,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Dtype {
        match d {
            DtypeArg::F32le => Dtype::F32Le,
            DtypeArg::F64le => Dtype::F64Le,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Train a model on a coarse cube and target.
    Train(TrainArgs),
    /// Apply a checkpoint to a fine-grid cube.
    Infer(InferArgs),
    /// Compare a product with a reference field, aggregating when grids differ.
    EvalCoarse(EvalCoarseArgs),
    /// Compare a product with in-situ stations.
    EvalStations(EvalStationsArgs),
    /// Relative generalization errors from per-hour metrics.
    Relgen(RelgenArgs),
    /// Three-cornered-hat uncertainty maps.
    Tch(TchArgs),
    /// Gradient checks of the operators and the composed model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene spec or manifest JSON; defaults to the built-in scene.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32le)]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene directory holding `coarse/` and `target/`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Input cube directory (overrides `--data`).
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// Target field directory (overrides `--data`).
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Continue from the checkpoint already in `--out`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub fine: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DtypeArg::F32le)]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
pub struct EvalCoarseArgs {
    #[arg(long)]
    pub product: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalStationsArgs {
    #[arg(long)]
    pub product: PathBuf,
    #[arg(long)]
    pub stations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use all dates instead of the April–November window.
    #[arg(long)]
    pub no_season: bool,
    #[arg(long, default_value_t = 5.0)]
    pub max_depth_cm: f64,
    #[arg(long, default_value_t = 0.95)]
    pub max_missing_rate: f64,
    /// Accept dubious-quality samples.
    #[arg(long)]
    pub include_dubious: bool,
}

#[derive(Debug, Args)]
pub struct RelgenArgs {
    /// `metrics_by_hour.csv` from an evaluation run.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Defaults to the directory of `--metrics`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TchArgs {
    /// Three or more co-gridded field directories.
    #[arg(long, num_args = 3.., required = true)]
    pub products: Vec<PathBuf>,
    /// Comma-separated product names; defaults to directory names.
    #[arg(long, value_delimiter = ',')]
    pub names: Option<Vec<String>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// "all" or a comma-separated list of operator names ("model" for the
    /// composed network and loss).
    #[arg(long, default_value = "all")]
    pub ops: String,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reproducibility record written into every output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub config: Option<String>,
    pub out: String,
    pub seed: Option<u64>,
    pub log_level: LogLevel,
    pub threads: usize,
}

struct Ctx {
    argv: Vec<String>,
    log: LogLevel,
    threads: usize,
}

impl Ctx {
    fn info(&self, msg: impl AsRef<str>) {
        if self.log != LogLevel::Error {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn manifest(&self, sub: &str, out: &Path, inputs: &[(&str, &Path)], config: Option<&Path>, seed: Option<u64>) -> Result<()> {
        let m = RunManifest {
            tool: "stdown".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: sub.into(),
            argv: self.argv.clone(),
            inputs: inputs.iter().map(|(k, p)| (k.to_string(), p.display().to_string())).collect(),
            config: config.map(|p| p.display().to_string()),
            out: out.display().to_string(),
            seed,
            log_level: self.log,
            threads: self.threads,
        };
        write_json(&out.join(MANIFEST_FILE), &m)
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `argv` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let ctx = Ctx {
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        log: cli.log_level,
        threads,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&ctx, &cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(ctx: &Ctx, cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Infer(a) => infer(ctx, a),
        Command::EvalCoarse(a) => eval_coarse(ctx, a),
        Command::EvalStations(a) => eval_stations(ctx, a),
        Command::Relgen(a) => relgen_cmd(ctx, a),
        Command::Tch(a) => tch_cmd(ctx, a),
        Command::Gradcheck(a) => gradcheck(ctx, a),
    }
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<i32> {
    let mut spec = match &a.spec {
        Some(p) => parse_manifest(&read_text(p)?)?,
        None => SceneSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    ctx.info(format!("generating scene (hash {})", spec.hash()));
    let scene = gen_scene(&spec)?;
    write_scene(&a.out, &scene, a.dtype.into())?;
    let inputs: Vec<(&str, &Path)> = a.spec.iter().map(|p| ("spec", p.as_path())).collect();
    ctx.manifest("synth", &a.out, &inputs, a.spec.as_deref(), Some(spec.seed))?;
    ctx.info(format!("scene written to {}", a.out.display()));
    Ok(0)
}

/// Architecture fields a training config may override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub base_channels: Option<usize>,
    pub tcn_dilations: Option<Vec<usize>>,
    pub tcn_kernel: Option<usize>,
    pub distill_kernel: Option<usize>,
    pub stage_kernel: Option<usize>,
    pub stage_dilations: Option<Vec<usize>>,
    pub se_reduction: Option<usize>,
    pub ffn_expansion: Option<usize>,
    /// Negative values select a global squeeze.
    pub se_window: Option<i64>,
    pub sm_hint: Option<bool>,
}

impl ModelOverrides {
    pub fn apply(&self, in_channels: usize) -> ModelConfig {
        let mut c = ModelConfig::with_inputs(in_channels);
        if let Some(v) = self.base_channels {
            c.base_channels = v;
        }
        if let Some(v) = &self.tcn_dilations {
            c.tcn_dilations = v.clone();
        }
        if let Some(v) = self.tcn_kernel {
            c.tcn_kernel = v;
        }
        if let Some(v) = self.distill_kernel {
            c.distill_kernel = v;
        }
        if let Some(v) = self.stage_kernel {
            c.stage_kernel = v;
        }
        if let Some(v) = &self.stage_dilations {
            c.stage_dilations = v.clone();
        }
        if let Some(v) = self.se_reduction {
            c.se_reduction = v;
        }
        if let Some(v) = self.ffn_expansion {
            c.ffn_expansion = v;
        }
        if let Some(v) = self.se_window {
            c.se_window = (v >= 0).then_some(v as usize);
        }
        if let Some(v) = self.sm_hint {
            c.sm_hint = v;
        }
        c
    }
}

/// Training configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Seed of the parameter initialization; defaults to the training seed.
    pub init_seed: Option<u64>,
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<i32> {
    let mut rc: RunConfig = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Error::format(p, e.to_string()))?,
        None => RunConfig::default(),
    };
    let t = &mut rc.train;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.adam.lr = v;
    }
    if let Some(v) = a.patience {
        t.patience = v;
    }
    let inputs_dir = a
        .inputs
        .clone()
        .or_else(|| a.data.as_ref().map(|d| d.join(COARSE_DIR)))
        .ok_or_else(|| Error::Config("train needs --data or --inputs".into()))?;
    let target_dir = a
        .target
        .clone()
        .or_else(|| a.data.as_ref().map(|d| d.join(TARGET_DIR)))
        .ok_or_else(|| Error::Config("train needs --data or --target".into()))?;
    let cube = load_cube(&inputs_dir)?;
    let target = load_field(&target_dir)?;
    target.check_sm_range()?;
    let data = prepare_dataset(&cube, &target, rc.train.patch, rc.train.seed)?;
    ctx.info(format!(
        "patches: {} train / {} val / {} test ({}x{}, T={})",
        data.splits.train.len(),
        data.splits.val.len(),
        data.splits.test.len(),
        data.patch.size,
        data.patch.size,
        data.patch.t_len
    ));
    mkdir(&a.out)?;
    let mut trainer = if a.resume {
        let (ck, state) = load_train_state(&a.out)?;
        if ck.meta.schema_hash != cube.schema.fingerprint() {
            return Err(Error::Schema("resumed checkpoint was trained on different variables".into()));
        }
        ctx.info(format!("resuming at epoch {}", state.epoch));
        Trainer::resume(state, rc.train.clone(), rc.loss, &data.splits)?
    } else {
        let mc = rc.model.apply(cube.channels());
        let params = init_params(&mc, InitScheme::Default, rc.init_seed.unwrap_or(rc.train.seed))?;
        Trainer::new(Network::new(mc, params)?, rc.train.clone(), rc.loss, &data.splits)?
    };
    let record_inputs = [("inputs", inputs_dir.as_path()), ("target", target_dir.as_path())];
    while !trainer.finished() {
        let rec = match trainer.run_epoch() {
            Ok(r) => r,
            Err(e) => {
                if trainer.state.best.is_some() {
                    save_checkpoint(&a.out, &trainer, &data, None)?;
                    ctx.info("training aborted; last good checkpoint kept");
                }
                return Err(e);
            }
        };
        ctx.info(format!(
            "epoch {:>3}  p={:.3}  train {:.5}  val {:.5}",
            rec.epoch, rec.mask_fraction, rec.train_loss, rec.val_loss
        ));
        save_checkpoint(&a.out, &trainer, &data, None)?;
    }
    ctx.manifest("train", &a.out, &record_inputs, a.config.as_deref(), Some(rc.train.seed))?;
    if trainer.state.diverged {
        eprintln!("error: validation loss diverged; last good checkpoint kept");
        return Ok(1);
    }
    let outcome = trainer.outcome()?;
    save_checkpoint(&a.out, &trainer, &data, outcome.test_loss)?;
    let leaked = data.splits.test.iter().filter(|p| outcome.trained_ids.contains(&p.id)).count();
    if leaked > 0 && !a.resume {
        return Err(Error::Domain(format!("{leaked} test patches reached a gradient step")));
    }
    ctx.info(format!(
        "best epoch {} (val {:.5}); test loss {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        outcome.test_loss.map_or("n/a".into(), |v| format!("{v:.5}"))
    ));
    Ok(0)
}

fn infer(ctx: &Ctx, a: &InferArgs) -> Result<i32> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cube = load_cube(&a.fine)?;
    ctx.info(format!("downscaling {} time steps on {}x{}", cube.t_len(), cube.grid.nlat, cube.grid.nlon));
    let product = downscale(&ck, &cube)?;
    mkdir(&a.out)?;
    save_field(&a.out.join(PRODUCT_DIR), &product, a.dtype.into())?;
    let (mean, valid) = temporal_mean(&product);
    write_pgm(&a.out.join("mean_sm.pgm"), &mean, &valid, product.grid.nlat, product.grid.nlon)?;
    ctx.manifest(
        "infer",
        &a.out,
        &[("checkpoint", a.checkpoint.as_path()), ("fine", a.fine.as_path())],
        None,
        None,
    )?;
    Ok(0)
}

fn temporal_mean(f: &FieldSeries) -> (Vec<f64>, Vec<bool>) {
    let px = f.grid.cells();
    let mut sum = vec![0.0; px];
    let mut n = vec![0usize; px];
    for t in 0..f.t_len() {
        let (v, m) = f.plane(t);
        for c in 0..px {
            if m[c] {
                sum[c] += v[c];
                n[c] += 1;
            }
        }
    }
    let mean = sum.iter().zip(&n).map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 }).collect();
    (mean, n.iter().map(|&k| k > 0).collect())
}

/// Loads an STC field; `dir` may also be an infer output holding `product/`.
fn load_product(dir: &Path) -> Result<FieldSeries> {
    let nested = dir.join(PRODUCT_DIR);
    if nested.join("manifest.json").exists() {
        load_field(&nested)
    } else {
        load_field(dir)
    }
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    kind: &'a str,
    label: String,
    pooled: crate::evalkit::Metrics,
    by_hour: Vec<(u32, crate::evalkit::Metrics)>,
}

fn eval_coarse(ctx: &Ctx, a: &EvalCoarseArgs) -> Result<i32> {
    let product = load_product(&a.product)?;
    let truth = load_field(&a.truth)?;
    let (report, on_grid) = if product.grid == truth.grid {
        (crate::evalkit::compare_fields(&product, &truth, "product vs reference")?, product)
    } else {
        let agg = crate::evalkit::aggregate_series(&product, &truth.grid)?;
        (validate_vs_coarse(&product, &truth)?, agg)
    };
    let by_hour = metrics_by_hour(&on_grid, &truth)?;
    mkdir(&a.out)?;
    let mut rows = vec![MetricsRow::new("pooled", "all", &report.pooled)];
    for (k, m) in report.per_pixel.iter().enumerate() {
        rows.push(MetricsRow::new("pixel", format!("{}_{}", k / report.grid.nlon, k % report.grid.nlon), m));
    }
    write_metrics_csv(&a.out.join("metrics.csv"), &rows)?;
    write_hour_metrics_csv(&a.out.join("metrics_by_hour.csv"), &by_hour)?;
    let (r, rm) = report.r_map();
    let r_field = FieldSeries::new(report.grid, vec![truth.times[0]], r.clone(), rm.clone())?;
    save_field_named(&a.out.join("r_map"), &r_field, Dtype::F32Le, "r", "-")?;
    write_pgm(&a.out.join("r_map.pgm"), &r, &rm, report.grid.nlat, report.grid.nlon)?;
    write_json(
        &a.out.join("summary.json"),
        &EvalSummary {
            kind: "eval-coarse",
            label: report.label.clone(),
            pooled: report.pooled,
            by_hour,
        },
    )?;
    ctx.manifest(
        "eval-coarse",
        &a.out,
        &[("product", a.product.as_path()), ("truth", a.truth.as_path())],
        None,
        None,
    )?;
    let p = report.pooled;
    ctx.info(format!(
        "pooled n={} R={} bias={} RMSE={} ubRMSE={}",
        p.n,
        fmt_opt(p.r),
        fmt_opt(p.bias),
        fmt_opt(p.rmse),
        fmt_opt(p.ubrmse)
    ));
    Ok(0)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn eval_stations(ctx: &Ctx, a: &EvalStationsArgs) -> Result<i32> {
    let product = load_product(&a.product)?;
    let stations = read_stations_csv(&a.stations)?;
    let rules = StationRules {
        max_depth_cm: a.max_depth_cm,
        good_only: !a.include_dubious,
        season: if a.no_season { None } else { StationRules::default().season },
        max_missing_rate: a.max_missing_rate,
    };
    let report = validate_vs_stations(&product, &stations, &rules)?;
    mkdir(&a.out)?;
    let mut rows: Vec<MetricsRow> = report.stations.iter().map(|s| MetricsRow::new("station", &s.id, &s.metrics)).collect();
    rows.extend(report.networks.iter().map(|(n, m)| MetricsRow::new("network", n, m)));
    write_metrics_csv(&a.out.join("metrics.csv"), &rows)?;
    let mut w = csv::Writer::from_path(a.out.join("skipped.csv"))?;
    for s in &report.skipped {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    write_json(
        &a.out.join("summary.json"),
        &serde_json::json!({
            "kind": "eval-stations",
            "networks": report.networks,
            "stations": report.stations,
            "skipped": report.skipped,
        }),
    )?;
    ctx.manifest(
        "eval-stations",
        &a.out,
        &[("product", a.product.as_path()), ("stations", a.stations.as_path())],
        None,
        None,
    )?;
    for (n, m) in &report.networks {
        ctx.info(format!("{n}: n={} R={} ubRMSE={}", m.n, fmt_opt(m.r), fmt_opt(m.ubrmse)));
    }
    Ok(0)
}

fn relgen_cmd(ctx: &Ctx, a: &RelgenArgs) -> Result<i32> {
    let by_hour = read_hour_metrics_csv(&a.metrics)?;
    let table = relgen(&by_hour);
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.metrics.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    mkdir(&out)?;
    write_re_table_csv(&out.join("re_table.csv"), &table)?;
    write_json(&out.join("re_summary.json"), &table)?;
    ctx.manifest("relgen", &out, &[("metrics", a.metrics.as_path())], None, None)?;
    ctx.info(format!(
        "mean RE_R={} mean RE_ubRMSE={}",
        fmt_opt(table.mean_re_r),
        fmt_opt(table.mean_re_ubrmse)
    ));
    Ok(0)
}

#[derive(Serialize)]
struct TchProductSummary {
    name: String,
    median_var_3h: Option<f64>,
    median_var_daily: Option<f64>,
    clamped_cells_3h: usize,
    clamped_cells_daily: usize,
}

fn median(v: &[f64], valid: &[bool]) -> Option<f64> {
    let mut x: Vec<f64> = v.iter().zip(valid).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    if x.is_empty() {
        return None;
    }
    x.sort_by(f64::total_cmp);
    let n = x.len();
    Some(if n % 2 == 1 { x[n / 2] } else { 0.5 * (x[n / 2 - 1] + x[n / 2]) })
}

fn write_tch_maps(out: &Path, names: &[String], maps: &TchMaps, suffix: &str, grid: crate::geodata::GeoGrid, time: i64) -> Result<()> {
    for (i, name) in names.iter().enumerate() {
        let f = FieldSeries::new(grid, vec![time], maps.variances[i].clone(), maps.valid.clone())?;
        save_field_named(&out.join(format!("{name}_var_{suffix}")), &f, Dtype::F64Le, "tch_var", "m6/m6")?;
        write_pgm(&out.join(format!("{name}_var_{suffix}.pgm")), &maps.variances[i], &maps.valid, grid.nlat, grid.nlon)?;
    }
    Ok(())
}

fn tch_cmd(ctx: &Ctx, a: &TchArgs) -> Result<i32> {
    let fields: Vec<FieldSeries> = a.products.iter().map(|p| load_product(p)).collect::<Result<_>>()?;
    let names: Vec<String> = match &a.names {
        Some(n) if n.len() == fields.len() => n.clone(),
        Some(n) => {
            return Err(Error::Config(format!("{} names for {} products", n.len(), fields.len())));
        }
        None => a
            .products
            .iter()
            .enumerate()
            .map(|(i, p)| p.file_name().map_or(format!("p{i}"), |s| s.to_string_lossy().into_owned()))
            .collect(),
    };
    let refs: Vec<&FieldSeries> = fields.iter().collect();
    let three_hourly = tch_maps(&refs)?;
    let daily_fields: Vec<FieldSeries> = fields.iter().map(daily_mean).collect::<Result<_>>()?;
    let drefs: Vec<&FieldSeries> = daily_fields.iter().collect();
    let daily = tch_maps(&drefs)?;
    mkdir(&a.out)?;
    let grid = fields[0].grid;
    write_tch_maps(&a.out, &names, &three_hourly, "3h", grid, fields[0].times[0])?;
    write_tch_maps(&a.out, &names, &daily, "daily", grid, daily_fields[0].times[0])?;
    let summary: Vec<TchProductSummary> = names
        .iter()
        .enumerate()
        .map(|(i, n)| TchProductSummary {
            name: n.clone(),
            median_var_3h: median(&three_hourly.variances[i], &three_hourly.valid),
            median_var_daily: median(&daily.variances[i], &daily.valid),
            clamped_cells_3h: three_hourly.clamped[i].iter().filter(|&&c| c).count(),
            clamped_cells_daily: daily.clamped[i].iter().filter(|&&c| c).count(),
        })
        .collect();
    write_json(
        &a.out.join("tch_summary.json"),
        &serde_json::json!({
            "method": three_hourly.method,
            "valid_cells_3h": three_hourly.valid.iter().filter(|&&v| v).count(),
            "valid_cells_daily": daily.valid.iter().filter(|&&v| v).count(),
            "products": summary,
        }),
    )?;
    let inputs: Vec<(&str, &Path)> = a.products.iter().map(|p| ("product", p.as_path())).collect();
    ctx.manifest("tch", &a.out, &inputs, None, None)?;
    for s in &summary {
        ctx.info(format!(
            "{}: median variance 3h={} daily={}",
            s.name,
            s.median_var_3h.map_or("n/a".into(), |v| format!("{v:.3e}")),
            s.median_var_daily.map_or("n/a".into(), |v| format!("{v:.3e}"))
        ));
    }
    Ok(0)
}

/// Runs the requested gradient suites; "model" is the composed objective.
pub fn gradcheck_suites(ops: &str, instances: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let names: Vec<String> = if ops == "all" {
        OPERATORS.iter().map(|s| s.to_string()).chain(["model".to_string()]).collect()
    } else {
        ops.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    };
    names
        .iter()
        .map(|n| if n == "model" { model_suite(instances, seed) } else { op_suite(n, instances, seed) })
        .collect()
}

fn gradcheck(ctx: &Ctx, a: &GradcheckArgs) -> Result<i32> {
    let results = gradcheck_suites(&a.ops, a.instances, a.seed)?;
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        ctx.info(format!(
            "{:<26} {:>3} instances {:>6} probes  max rel err {:.3e}  {}",
            r.name,
            r.instances,
            r.checked,
            r.max_rel_error,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    if let Some(out) = &a.out {
        mkdir(out)?;
        let mut w = csv::Writer::from_path(out.join("gradcheck.csv"))?;
        for r in &results {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(out, e))?;
        ctx.manifest("gradcheck", out, &[], None, Some(a.seed))?;
    }
    Ok(if ok { 0 } else { 1 })
}
