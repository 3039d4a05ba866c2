use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::DomainSequence;
use crate::diffmath::{optimizer_step, Activation, AdamConfig, Mat, OptimState, Tape};
use crate::error::Error;
use crate::rng::SeedTree;
use crate::scalar::Scalar;

use super::loss::{domain_loss_tape, draw_taus};
use super::model::{FlowModel, FlowShape};

pub const DEFAULT_GAMMA: f64 = 5.0;
pub const DEFAULT_PENALTY_POINTS: usize = 4;

/// Trainer hyperparameters other than γ and m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<(usize, Activation)>,
    pub steps_per_unit_time: usize,
    pub block_count: usize,
    /// Scale of the initial output layer; small values start near the identity map.
    pub output_gain: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            epochs: 100,
            batch_size: 64,
            hidden: vec![(32, Activation::Tanh), (32, Activation::Tanh)],
            steps_per_unit_time: 16,
            block_count: 1,
            output_gain: 0.1,
            optimizer: AdamConfig {
                lr: 5e-3,
                max_grad_norm: Some(10.0),
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Per-domain averages over one epoch. `penalty` is per sample (the batch sum divided by the batch size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub time_index: f64,
    pub nll: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub domains: Vec<DomainRecord>,
}

impl EpochRecord {
    /// `Σ_j (L_0^(j) + γ P^(j))`.
    pub fn total(&self, gamma: f64) -> f64 {
        self.domains.iter().map(|d| d.nll + gamma * d.penalty).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub gamma: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total(self.gamma)).collect()
    }

    /// CSV with one row per (epoch, domain).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,time_index,nll,penalty\n");
        for e in &self.epochs {
            for d in &e.domains {
                out.push_str(&format!("{},{},{:e},{:e}\n", e.epoch, d.time_index, d.nll, d.penalty));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainedFlow<F> {
    pub flow: FlowModel<F>,
    pub history: TrainHistory,
}

/// Training aborted; carries everything recorded up to the failure.
#[derive(Debug)]
pub struct FlowTrainFailure {
    pub error: Error,
    pub history: TrainHistory,
}

impl fmt::Display for FlowTrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} completed epochs)", self.error, self.history.epochs.len())
    }
}

impl std::error::Error for FlowTrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<FlowTrainFailure> for Error {
    fn from(f: FlowTrainFailure) -> Self {
        f.error
    }
}

fn pooled_stats<F: Scalar>(domains: &[(F, &Mat<F>)], dim: usize) -> (Vec<F>, Vec<F>) {
    let n: usize = domains.iter().map(|(_, m)| m.rows()).sum();
    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    for (_, m) in domains {
        for row in m.iter_rows() {
            for (acc, x) in mean.iter_mut().zip(row) {
                *acc += x.to_f64_lossy() / nf;
            }
        }
    }
    let mut var = vec![0.0; dim];
    for (_, m) in domains {
        for row in m.iter_rows() {
            for ((acc, x), mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = x.to_f64_lossy() - mu;
                *acc += d * d / nf;
            }
        }
    }
    let std = var.iter().map(|v| F::of(v.sqrt().max(1e-6))).collect();
    (mean.into_iter().map(F::of).collect(), std)
}

/// Jointly fits one flow to every domain of the sequence by minimising
/// `Σ_j L_0^(j) + γ P^(j)`. Each epoch round-robins minibatches over the
/// domains; smaller domains wrap around so all contribute equally often.
pub fn train_flow<F: Scalar>(
    domains: &DomainSequence<F>,
    gamma: f64,
    penalty_points: usize,
    config: &FlowConfig,
) -> std::result::Result<TrainedFlow<F>, FlowTrainFailure> {
    let mut history = TrainHistory {
        gamma,
        epochs: Vec::new(),
    };
    let fail = |error: Error, history: TrainHistory| FlowTrainFailure { error, history };
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(fail(Error::InvalidArgument(format!("gamma must be finite and >= 0, got {gamma}")), history));
    }
    if penalty_points < 2 {
        return Err(fail(
            Error::InvalidArgument(format!("penalty needs m >= 2 time points, got {penalty_points}")),
            history,
        ));
    }
    if config.batch_size == 0 {
        return Err(fail(Error::InvalidArgument("batch_size must be positive".into()), history));
    }
    let data = domains.all_features();
    if let Some((t, _)) = data.iter().find(|(_, m)| m.rows() == 0) {
        return Err(fail(Error::InvalidArgument(format!("domain at time index {t} is empty")), history));
    }

    let tree = SeedTree::new(config.seed);
    let shape = FlowShape {
        dim: domains.dim(),
        horizon: domains.horizon().to_f64_lossy(),
        steps_per_unit_time: config.steps_per_unit_time,
        block_count: config.block_count,
        hidden: config.hidden.clone(),
    };
    let mut flow = match FlowModel::<F>::init(&shape, config.output_gain, &mut tree.child("init").rng()) {
        Ok(f) => f,
        Err(e) => return Err(fail(e, history)),
    };
    flow.gamma = gamma;
    flow.penalty_points = penalty_points;
    let (mean, std) = pooled_stats(&data, flow.dim());
    for norm in flow.norms_mut() {
        norm.mean = mean.clone();
        norm.std = std.clone();
    }

    let mut optim = OptimState::new(config.optimizer, flow.params().len());
    let mut batch_rng = tree.child("batches").rng();
    let mut tau_rng = tree.child("taus").rng();
    let max_n = data.iter().map(|(_, m)| m.rows()).max().unwrap_or(0);
    let steps_per_domain = max_n.div_ceil(config.batch_size);
    let gamma_f = F::of(gamma);

    for epoch in 0..config.epochs {
        let orders: Vec<Vec<usize>> = data
            .iter()
            .map(|(_, m)| {
                let mut idx: Vec<usize> = (0..m.rows()).collect();
                idx.shuffle(&mut batch_rng);
                idx
            })
            .collect();
        let mut sums = vec![(0.0f64, 0.0f64); data.len()];
        for s in 0..steps_per_domain {
            for (d, &(j, x)) in data.iter().enumerate() {
                let n_d = x.rows();
                let take = config.batch_size.min(n_d);
                let rows: Vec<usize> = (0..take).map(|k| orders[d][(s * config.batch_size + k) % n_d]).collect();
                let batch = x.select_rows(&rows);

                let mut tape = Tape::new();
                let vars = tape.bind_params(flow.params());
                let taus = draw_taus(j, penalty_points, &mut tau_rng);
                let parts = match domain_loss_tape(&mut tape, &flow, &vars, &batch, j, &taus) {
                    Ok(p) => p,
                    Err(e) => return Err(fail(e, history)),
                };
                let per_sample = tape.scale(parts.penalty, gamma_f / F::of_usize(take));
                let loss = tape.add(parts.nll, per_sample);
                let nll = tape.scalar(parts.nll).to_f64_lossy();
                let pen = tape.scalar(parts.penalty).to_f64_lossy() / take as f64;
                if !tape.scalar(loss).is_finite() {
                    return Err(fail(
                        Error::Diverged {
                            epoch,
                            reason: format!("non-finite loss on domain {j} (nll {nll}, penalty {pen})"),
                        },
                        history,
                    ));
                }
                let grads = tape
                    .backward(loss)
                    .map(|g| g.params().expect("parameters bound on this tape"));
                let step = grads.and_then(|g| optimizer_step(flow.params_mut(), &g, &mut optim));
                if let Err(e) = step {
                    return Err(fail(
                        Error::Diverged {
                            epoch,
                            reason: e.to_string(),
                        },
                        history,
                    ));
                }
                sums[d].0 += nll;
                sums[d].1 += pen;
            }
        }
        let record = EpochRecord {
            epoch,
            domains: data
                .iter()
                .zip(&sums)
                .map(|(&(j, _), &(nll, pen))| DomainRecord {
                    time_index: j.to_f64_lossy(),
                    nll: nll / steps_per_domain as f64,
                    penalty: pen / steps_per_domain as f64,
                })
                .collect(),
        };
        log::debug!("flow epoch {epoch}: L_all = {:.5}", record.total(gamma));
        history.epochs.push(record);
    }
    Ok(TrainedFlow { flow, history })
}
