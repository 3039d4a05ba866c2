//! Library side of the `gdaflow` command: configuration, the per-method
//! experiment driver, and the subcommand bodies.

pub mod commands;
pub mod config;

use gdaflow::cnf::FlowModel;
use gdaflow::data::EvaluatedSequence;
use gdaflow::diffmath::Mat;
use gdaflow::eval::{accuracy, adjacent_max_w2, step_accuracies, ReportRow, TraceRow, W2_MAX_POINTS};
use gdaflow::interpolate::{cycle_for_run, run_gda, GdaRun, RunManifest};
use gdaflow::selftrain::{select_alpha, train_source, Classifier, CycleReport, CycleScore};
use serde::Serialize;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, missing inputs or invalid configuration; exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    /// The computation itself failed; exit code 1.
    #[error(transparent)]
    Run(#[from] gdaflow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ours,
    Gradual,
    SourceOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Gradual => "gradual",
            Method::SourceOnly => "source-only",
        }
    }
}

/// How `ours` picks α.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaChoice {
    Fixed(f64),
    Select(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub row: ReportRow,
    pub trace: Vec<TraceRow>,
    /// Replay manifest of the reported chain; absent for source-only.
    pub manifest: Option<RunManifest>,
    /// One entry per α candidate when α was selected.
    pub candidates: Vec<CycleReport>,
    pub warnings: Vec<String>,
}

/// θ^(1) of a run: the source classifier seeded from `root/source`.
pub fn source_classifier(ev: &EvaluatedSequence<f64>, cfg: &RunConfig) -> Result<Classifier<f64>, CliError> {
    let fit = train_source(ev.sequence.source(), &cfg.gda.classifier, cfg.root().child("source"))?;
    Ok(fit.classifier)
}

fn target_accuracy(ev: &EvaluatedSequence<f64>, h: &Classifier<f64>) -> Result<Option<f64>, CliError> {
    Ok(ev.labeled_target().map(|t| accuracy(h, &t)).transpose()?)
}

fn trace_rows(run: &GdaRun<f64>, ev: &EvaluatedSequence<f64>, score: &CycleScore) -> Result<Vec<TraceRow>, CliError> {
    let accs = step_accuracies(run, ev)?;
    Ok(run
        .datasets
        .iter()
        .zip(accs)
        .enumerate()
        .map(|(k, (d, acc))| TraceRow {
            alpha: run.alpha,
            step_index: k,
            time_index: d.time_index,
            dataset_kind: d.origin.as_str().to_string(),
            step_accuracy_if_labeled: acc,
            cycle_loss: Some(score.loss),
            cycle_accuracy: Some(score.accuracy),
        })
        .collect())
}

fn chain_w2(run: &GdaRun<f64>, cfg: &RunConfig) -> Result<f64, CliError> {
    let chain: Vec<&Mat<f64>> = run.datasets.iter().map(|d| &d.features).collect();
    Ok(adjacent_max_w2(&chain, W2_MAX_POINTS, cfg.root().child("w2"))?)
}

fn manifest_of(run: &GdaRun<f64>, cfg: &RunConfig, checkpoint: Option<String>) -> RunManifest {
    RunManifest {
        seed: cfg.seed,
        alpha: run.alpha,
        horizon: run.index_set.entries().last().map_or(1.0, |e| e.0),
        time_indices: run.index_set.indices(),
        n_generate: run.n_generate,
        flow_checkpoint: if run.index_set.generated_count() > 0 { checkpoint } else { None },
        steps: run.provenance(),
    }
}

fn gda_result(
    method: Method,
    run: &GdaRun<f64>,
    score: CycleScore,
    ev: &EvaluatedSequence<f64>,
    cfg: &RunConfig,
    checkpoint: Option<String>,
) -> Result<MethodResult, CliError> {
    Ok(MethodResult {
        row: ReportRow {
            method: method.name().into(),
            alpha: Some(run.alpha),
            seed: cfg.seed,
            target_accuracy: target_accuracy(ev, run.classifier())?,
            cycle_loss: Some(score.loss),
            cycle_accuracy: Some(score.accuracy),
            adjacent_max_w2: Some(chain_w2(run, cfg)?),
            wallclock_s: None,
        },
        trace: trace_rows(run, ev, &score)?,
        manifest: Some(manifest_of(run, cfg, checkpoint)),
        candidates: Vec::new(),
        warnings: run.warnings.clone(),
    })
}

/// Runs one method end to end from θ^(1). `gradual` is `ours` at α = 1
/// under the same seeds, so the two agree exactly.
pub fn run_method(
    ev: &EvaluatedSequence<f64>,
    flow: Option<&FlowModel<f64>>,
    theta1: &Classifier<f64>,
    method: Method,
    alpha: &AlphaChoice,
    cfg: &RunConfig,
    checkpoint: Option<String>,
) -> Result<MethodResult, CliError> {
    let seq = &ev.sequence;
    let gda_seed = cfg.root().child("gda");
    match method {
        Method::SourceOnly => {
            let chain = [seq.source().features(), seq.target()];
            let acc = step_accuracies_source_only(ev, theta1)?;
            Ok(MethodResult {
                row: ReportRow {
                    method: method.name().into(),
                    alpha: None,
                    seed: cfg.seed,
                    target_accuracy: target_accuracy(ev, theta1)?,
                    cycle_loss: None,
                    cycle_accuracy: None,
                    adjacent_max_w2: Some(adjacent_max_w2(&chain, W2_MAX_POINTS, cfg.root().child("w2"))?),
                    wallclock_s: None,
                },
                trace: acc,
                manifest: None,
                candidates: Vec::new(),
                warnings: Vec::new(),
            })
        }
        Method::Gradual => {
            let run = run_gda(seq, None, theta1, 1.0, &cfg.gda, gda_seed)?;
            let score = cycle_for_run(&run, seq, &cfg.gda, gda_seed)?;
            gda_result(method, &run, score, ev, cfg, checkpoint)
        }
        Method::Ours => match alpha {
            AlphaChoice::Fixed(a) => {
                let run = run_gda(seq, flow, theta1, *a, &cfg.gda, gda_seed)?;
                let score = cycle_for_run(&run, seq, &cfg.gda, gda_seed)?;
                gda_result(method, &run, score, ev, cfg, checkpoint)
            }
            AlphaChoice::Select(grid) => {
                let sel = select_alpha(seq, flow, theta1, grid, &cfg.gda, gda_seed)?;
                let mut trace = Vec::new();
                let mut candidates = Vec::new();
                for o in &sel.outcomes {
                    if let (Some(run), Some(r)) = (&o.run, &o.report) {
                        let score = CycleScore {
                            loss: r.cycle_loss,
                            accuracy: r.cycle_accuracy,
                        };
                        trace.extend(trace_rows(run, ev, &score)?);
                        candidates.push(CycleReport {
                            forward_target_accuracy: target_accuracy(ev, run.classifier())?,
                            ..r.clone()
                        });
                    }
                }
                let best = sel.best();
                let run = best.run.as_ref().expect("best α has a run");
                let report = best.report.as_ref().expect("best α has a report");
                let score = CycleScore {
                    loss: report.cycle_loss,
                    accuracy: report.cycle_accuracy,
                };
                let mut out = gda_result(method, run, score, ev, cfg, checkpoint)?;
                out.trace = trace;
                out.candidates = candidates;
                out.warnings.extend(sel.warnings.iter().cloned());
                Ok(out)
            }
        },
    }
}

fn step_accuracies_source_only(ev: &EvaluatedSequence<f64>, theta1: &Classifier<f64>) -> Result<Vec<TraceRow>, CliError> {
    let seq = &ev.sequence;
    let mut rows = vec![TraceRow {
        alpha: seq.horizon() - 1.0,
        step_index: 0,
        time_index: 1.0,
        dataset_kind: "real".into(),
        step_accuracy_if_labeled: Some(accuracy(theta1, seq.source())?),
        cycle_loss: None,
        cycle_accuracy: None,
    }];
    if seq.horizon() > 1.0 {
        rows.push(TraceRow {
            alpha: seq.horizon() - 1.0,
            step_index: 1,
            time_index: seq.horizon(),
            dataset_kind: "real".into(),
            step_accuracy_if_labeled: target_accuracy(ev, theta1)?,
            cycle_loss: None,
            cycle_accuracy: None,
        });
    }
    Ok(rows)
}
