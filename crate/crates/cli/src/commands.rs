//! Subcommand arguments and bodies. Every command writes under `--out-dir`:
//! `manifest.json` and the domain CSVs (make-data), `flow.ckpt` and
//! `history.csv` (train-flow), `report.csv` and `trace/` (run, select-alpha).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use gdaflow::cnf::{load_flow, save_flow, train_flow, transport_batch, FlowModel, TransportOptions};
use gdaflow::data::{
    load_manifest, make_rotating_sequence, save_dataset, save_manifest, DatasetFile, EvaluatedSequence, Generator,
    ManifestEntry, SequenceManifest,
};
use gdaflow::diffmath::Activation;
use gdaflow::eval::{emit_report, write_step_trace, ExperimentReport, WriteMode};
use gdaflow::interpolate::CycleMode;
use gdaflow::rng::SeedTree;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{run_method, source_classifier, AlphaChoice, CliError, Method};

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Directory for every artifact of the command.
    #[arg(long, default_value = "gdaflow-out")]
    pub out_dir: PathBuf,
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn ensure_out_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", self.out_dir.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorKind {
    TwoMoons,
    Blobs,
}

#[derive(Debug, Clone, Args)]
pub struct MakeDataArgs {
    pub generator: GeneratorKind,
    /// Rotation of each domain in degrees, starting at 0.
    #[arg(long, value_delimiter = ',', required = true)]
    pub angles: Vec<f64>,
    /// Samples per domain.
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    /// Gaussian noise (moons) or blob standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Centre the moons on the origin before rotating.
    #[arg(long)]
    pub centered: bool,
    /// Rotate one draw instead of drawing every domain afresh.
    #[arg(long)]
    pub shared_cloud: bool,
    #[command(flatten)]
    pub common: Common,
}

pub fn cmd_make_data(args: &MakeDataArgs) -> Result<(), CliError> {
    let cfg = args.common.config()?;
    let generator = match args.generator {
        GeneratorKind::TwoMoons => Generator::TwoMoons {
            n: args.n,
            noise_sd: args.noise,
            centered: args.centered,
        },
        GeneratorKind::Blobs => Generator::Blobs {
            n_per_class: args.n / 2,
            centers: vec![vec![-1.5, 0.0], vec![1.5, 0.0]],
            sd: args.noise,
        },
    };
    let radians: Vec<f64> = args.angles.iter().map(|a| a.to_radians()).collect();
    let ev: EvaluatedSequence<f64> =
        make_rotating_sequence(&generator, &radians, SeedTree::new(cfg.seed), args.shared_cloud).map_err(|e| CliError::Usage(e.to_string()))?;
    args.common.ensure_out_dir()?;
    let mut entries = Vec::new();
    let source = ev.sequence.source();
    let mut files = vec![(1.0, DatasetFile::from_labeled(source))];
    for (k, u) in ev.sequence.unlabeled().iter().enumerate() {
        files.push((u.time_index, DatasetFile::from_unlabeled(u, ev.held_out.get(k))));
    }
    for (t, file) in files {
        let name = format!("domain_{t}.csv");
        let path = args.common.out_dir.join(&name);
        save_dataset(&path, &file)?;
        println!("{}", path.display());
        entries.push(ManifestEntry { path: name, time_index: t });
    }
    let mut generator_json = serde_json::to_value(&generator).expect("generator serializes");
    generator_json["angles_deg"] = serde_json::json!(args.angles);
    generator_json["seed"] = serde_json::json!(cfg.seed);
    let manifest = SequenceManifest {
        version: 1,
        class_count: source.class_count(),
        domains: entries,
        generator: Some(generator_json),
    };
    let path = args.common.out_dir.join("manifest.json");
    save_manifest(&path, &manifest)?;
    println!("{}", path.display());
    Ok(())
}

fn load_sequence(path: &Path) -> Result<EvaluatedSequence<f64>, CliError> {
    let manifest = load_manifest(path).map_err(|e| CliError::Usage(format!("cannot load manifest: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(manifest.load_sequence(base)?)
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    /// Sequence manifest (default: <out-dir>/manifest.json).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of trajectory points per sample in the straightness penalty.
    #[arg(long)]
    pub penalty_points: Option<usize>,
    #[arg(long)]
    pub steps_per_unit_time: Option<usize>,
    #[arg(long)]
    pub block_count: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden widths of the velocity network, e.g. `32,32`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Tanh,
    Softplus,
    Relu,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Softplus => Activation::Softplus,
            ActivationArg::Relu => Activation::Relu,
        }
    }
}

impl FlowArgs {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = self.common.config()?;
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(m) = self.penalty_points {
            cfg.penalty_points = m;
        }
        let f = &mut cfg.flow;
        if let Some(v) = self.steps_per_unit_time {
            f.steps_per_unit_time = v;
        }
        if let Some(v) = self.block_count {
            f.block_count = v;
        }
        if let Some(v) = self.epochs {
            f.epochs = v;
        }
        if let Some(v) = self.batch_size {
            f.batch_size = v;
        }
        if let Some(v) = self.lr {
            f.optimizer.lr = v;
        }
        let act = self.activation.map(Activation::from);
        match (&self.hidden, act) {
            (Some(widths), a) => f.hidden = widths.iter().map(|&w| (w, a.unwrap_or(Activation::Tanh))).collect(),
            (None, Some(a)) => f.hidden.iter_mut().for_each(|l| l.1 = a),
            (None, None) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Max coordinate error of target → base → target on the flow's own grid.
pub fn round_trip_error(flow: &FlowModel<f64>, ev: &EvaluatedSequence<f64>) -> Result<f64, CliError> {
    let x = ev.sequence.target();
    let k = flow.horizon();
    let z = transport_batch(flow, x, k, 0.0, TransportOptions::default())?;
    let back = transport_batch(flow, &z.endpoints, 0.0, k, TransportOptions::default())?;
    Ok(back.endpoints.max_abs_diff(x))
}

fn stamped(hash: &str, body: &str) -> String {
    format!("# config_hash={hash}\n{body}")
}

pub fn cmd_train_flow(args: &FlowArgs) -> Result<(), CliError> {
    let cfg = args.config()?;
    let ev = load_sequence(&cfg.data_path(&args.common.out_dir))?;
    args.common.ensure_out_dir()?;
    let hash = cfg.hash();
    let history_path = args.common.out_dir.join("history.csv");
    let write_history = |csv: String| fs::write(&history_path, stamped(&hash, &csv)).map_err(|e| CliError::Usage(format!("{}: {e}", history_path.display())));
    match train_flow(&ev.sequence, cfg.gamma, cfg.penalty_points, &cfg.flow_config()) {
        Ok(trained) => {
            write_history(trained.history.to_csv())?;
            let ckpt = args.common.out_dir.join("flow.ckpt");
            save_flow(&trained.flow, &ckpt)?;
            println!("{}", ckpt.display());
            println!("{}", history_path.display());
            println!("round_trip_max_error={:e}", round_trip_error(&trained.flow, &ev)?);
            Ok(())
        }
        Err(failure) => {
            write_history(failure.history.to_csv())?;
            eprintln!("history written to {}", history_path.display());
            Err(CliError::Run(failure.error))
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ClassifierArgs {
    /// Epochs per self-training step.
    #[arg(long)]
    pub self_train_epochs: Option<usize>,
    /// Epochs for fitting from scratch.
    #[arg(long)]
    pub classifier_epochs: Option<usize>,
    /// Start each self-training step from the previous parameters.
    #[arg(long)]
    pub warm_start: Option<bool>,
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    #[arg(long)]
    pub n_generate: Option<usize>,
    #[arg(long, value_enum)]
    pub cycle_mode: Option<CycleModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CycleModeArg {
    Symmetric,
    RealOnly,
}

impl ClassifierArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.gda.classifier;
        if let Some(v) = self.self_train_epochs {
            c.self_train_epochs = v;
        }
        if let Some(v) = self.classifier_epochs {
            c.epochs = v;
        }
        if let Some(v) = self.warm_start {
            c.warm_start = v;
        }
        if self.confidence_threshold.is_some() {
            c.confidence_threshold = self.confidence_threshold;
        }
        if self.n_generate.is_some() {
            cfg.gda.n_generate = self.n_generate;
        }
        if let Some(m) = self.cycle_mode {
            cfg.gda.cycle_mode = match m {
                CycleModeArg::Symmetric => CycleMode::Symmetric,
                CycleModeArg::RealOnly => CycleMode::RealOnly,
            };
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// One or more of ours, gradual, source-only.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub method: Vec<Method>,
    /// Interpolation interval for `ours`; selected over `--grid` when absent.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Flow checkpoint (default: <out-dir>/flow.ckpt).
    #[arg(long)]
    pub flow: Option<PathBuf>,
    /// Add rows to an existing report instead of replacing it.
    #[arg(long)]
    pub append: bool,
    /// Fill the wallclock_s column (reruns are then no longer byte-identical).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[command(flatten)]
    pub common: Common,
}

struct Prepared {
    cfg: RunConfig,
    ev: EvaluatedSequence<f64>,
    flow: Option<FlowModel<f64>>,
    flow_path: Option<PathBuf>,
}

impl Prepared {
    fn load_flow(&mut self, common: &Common) -> Result<(), CliError> {
        let path = self.cfg.flow_path(&common.out_dir);
        if !path.exists() {
            return Err(CliError::Usage(format!("flow checkpoint {} not found; run train-flow first", path.display())));
        }
        self.flow = Some(load_flow(&path)?);
        self.flow_path = Some(path);
        Ok(())
    }
}

fn prepare(common: &Common, data: &Option<PathBuf>, flow: &Option<PathBuf>, grid: &Option<Vec<f64>>, classifier: &ClassifierArgs) -> Result<Prepared, CliError> {
    let mut cfg = common.config()?;
    if data.is_some() {
        cfg.data = data.clone();
    }
    if flow.is_some() {
        cfg.flow_checkpoint = flow.clone();
    }
    if let Some(g) = grid {
        cfg.alpha_grid = g.clone();
    }
    classifier.apply(&mut cfg);
    cfg.validate()?;
    let ev = load_sequence(&cfg.data_path(&common.out_dir))?;
    common.ensure_out_dir()?;
    fs::create_dir_all(common.out_dir.join("trace")).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Prepared {
        cfg,
        ev,
        flow: None,
        flow_path: None,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn trace_name(method: Method, alpha: Option<f64>) -> String {
    match alpha {
        Some(a) => format!("{}_alpha{a}", method.name()),
        None => method.name().to_string(),
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut methods = args.method.clone();
    methods.dedup();
    let wants_ours = methods.contains(&Method::Ours);
    let flow_given = args.flow.is_some() || args.alpha.is_some() || args.grid.is_some() || args.classifier.n_generate.is_some();
    if !wants_ours && flow_given {
        log::warn!("flow and interpolation options are ignored by {}", methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(", "));
    }
    if args.alpha.is_some() && args.grid.is_some() {
        return Err(CliError::Usage("give either --alpha or --grid, not both".into()));
    }
    let mut p = prepare(&args.common, &args.data, &args.flow, &args.grid, &args.classifier)?;
    if args.alpha.is_some() {
        p.cfg.alpha = args.alpha;
        p.cfg.validate()?;
    }
    // α = 1 never needs pseudo-domains
    if wants_ours && p.cfg.alpha != Some(1.0) {
        p.load_flow(&args.common)?;
    }
    let hash = p.cfg.hash();
    let theta1 = source_classifier(&p.ev, &p.cfg)?;
    let choice = match p.cfg.alpha {
        Some(a) => AlphaChoice::Fixed(a),
        None => AlphaChoice::Select(p.cfg.alpha_grid.clone()),
    };
    let ckpt = p.flow_path.as_ref().map(|q| q.display().to_string());
    let mut report = ExperimentReport::default();
    for &m in &methods {
        let start = Instant::now();
        let mut out = run_method(&p.ev, p.flow.as_ref(), &theta1, m, &choice, &p.cfg, ckpt.clone())?;
        if args.timing {
            out.row.wallclock_s = Some(start.elapsed().as_secs_f64());
        }
        for w in &out.warnings {
            log::warn!("{}: {w}", m.name());
        }
        let fixed = match (m, &choice) {
            (Method::Ours, AlphaChoice::Fixed(a)) => Some(*a),
            _ => None,
        };
        let stem = trace_name(m, fixed);
        write_step_trace(&out.trace, &args.common.out_dir.join("trace").join(format!("{stem}.csv")), &hash)?;
        if let Some(manifest) = &out.manifest {
            write_json(&args.common.out_dir.join("trace").join(format!("{stem}.manifest.json")), &StampedManifest { config_hash: &hash, run: manifest })?;
        }
        if m == Method::Ours && !out.candidates.is_empty() {
            println!("selected_alpha={}", out.row.alpha.expect("ours has α"));
        }
        report.rows.push(out.row);
    }
    let mode = if args.append { WriteMode::Append } else { WriteMode::Overwrite };
    let path = args.common.out_dir.join("report.csv");
    emit_report(&report, &path, &hash, mode)?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct StampedManifest<'a, T> {
    config_hash: &'a str,
    run: &'a T,
}

#[derive(Debug, Clone, Args)]
pub struct SelectAlphaArgs {
    /// Candidate α values (default: 0.1,0.2,0.3,0.5,0.8,1.0).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub flow: Option<PathBuf>,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[command(flatten)]
    pub common: Common,
}

pub fn cmd_select_alpha(args: &SelectAlphaArgs) -> Result<(), CliError> {
    let cfg_grid = args.common.config()?.alpha_grid;
    let grid = args.grid.clone().unwrap_or(cfg_grid);
    let mut p = prepare(&args.common, &args.data, &args.flow, &Some(grid.clone()), &args.classifier)?;
    if grid.iter().any(|&a| a != 1.0) {
        p.load_flow(&args.common)?;
    }
    let hash = p.cfg.hash();
    let theta1 = source_classifier(&p.ev, &p.cfg)?;
    let ckpt = p.flow_path.as_ref().map(|q| q.display().to_string());
    let out = run_method(&p.ev, p.flow.as_ref(), &theta1, Method::Ours, &AlphaChoice::Select(grid), &p.cfg, ckpt)?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    let rows = out
        .candidates
        .iter()
        .map(|c| gdaflow::eval::ReportRow {
            method: "ours".into(),
            alpha: Some(c.alpha),
            seed: p.cfg.seed,
            target_accuracy: c.forward_target_accuracy,
            cycle_loss: Some(c.cycle_loss),
            cycle_accuracy: Some(c.cycle_accuracy),
            adjacent_max_w2: None,
            wallclock_s: None,
        })
        .collect();
    write_step_trace(&out.trace, &args.common.out_dir.join("trace").join("select_alpha.csv"), &hash)?;
    let path = args.common.out_dir.join("report.csv");
    emit_report(&ExperimentReport { rows }, &path, &hash, WriteMode::Overwrite)?;
    let best = out.row.alpha.expect("ours has α");
    println!("best_alpha={best} cycle_loss={}", out.row.cycle_loss.expect("cycle computed"));
    println!("{}", path.display());
    Ok(())
}
