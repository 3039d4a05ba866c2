use serde::{Deserialize, Serialize};

use crate::cnf::FlowModel;
use crate::data::{DomainSequence, TIME_EPS};
use crate::diffmath::Mat;
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::Scalar;
use crate::selftrain::{cycle_consistency, self_train, Classifier, ClassifierConfig, CycleScore};

use super::index_set::{time_index_set, IndexOrigin, TimeIndexSet};
use super::pseudo::{generate_pseudo_domain, pseudo_domain_seed};

/// Which datasets the backward cycle walks through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CycleMode {
    /// The same `T_gradual` as the forward pass, pseudo-domains included.
    #[default]
    Symmetric,
    /// Only the real domains.
    RealOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdaConfig {
    pub classifier: ClassifierConfig,
    /// Pseudo-domain size; defaults to the mean real-domain size.
    pub n_generate: Option<usize>,
    pub cycle_mode: CycleMode,
}

impl Default for GdaConfig {
    fn default() -> Self {
        GdaConfig {
            classifier: ClassifierConfig::default(),
            n_generate: None,
            cycle_mode: CycleMode::Symmetric,
        }
    }
}

/// One dataset of the densified chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDataset<F> {
    pub time_index: F,
    pub origin: IndexOrigin,
    pub features: Mat<F>,
    /// Generator seed of a pseudo-domain.
    pub seed: Option<u64>,
}

/// Result of walking `T_gradual` with self-training.
#[derive(Debug, Clone)]
pub struct GdaRun<F> {
    pub alpha: F,
    pub index_set: TimeIndexSet<F>,
    /// `datasets[0]` is the unlabeled source; one entry per index of `T_gradual`.
    pub datasets: Vec<ChainDataset<F>>,
    /// `classifiers[0]` is θ^(1); `classifiers[i]` was trained on `datasets[i]`.
    pub classifiers: Vec<Classifier<F>>,
    pub warnings: Vec<String>,
    pub n_generate: usize,
}

impl<F: Scalar> GdaRun<F> {
    pub fn classifier(&self) -> &Classifier<F> {
        self.classifiers.last().expect("θ^(1) always present")
    }

    pub fn self_train_steps(&self) -> usize {
        self.classifiers.len() - 1
    }

    pub fn provenance(&self) -> Vec<StepProvenance> {
        self.datasets
            .iter()
            .enumerate()
            .map(|(i, d)| StepProvenance {
                step_index: i,
                time_index: d.time_index.to_f64_lossy(),
                dataset_kind: d.origin,
                n_samples: d.features.rows(),
                seed: d.seed,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProvenance {
    pub step_index: usize,
    pub time_index: f64,
    pub dataset_kind: IndexOrigin,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

/// Everything needed to replay one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub alpha: f64,
    pub horizon: f64,
    pub time_indices: Vec<f64>,
    pub n_generate: usize,
    pub flow_checkpoint: Option<String>,
    pub steps: Vec<StepProvenance>,
}

fn find_real<'a, F: Scalar>(domains: &[(F, &'a Mat<F>)], t: F) -> Option<&'a Mat<F>> {
    domains.iter().find(|(r, _)| (*r - t).abs() <= F::of(TIME_EPS)).map(|(_, m)| *m)
}

/// The adaptation loop from θ^(1): walk `T_gradual(α)` upward, using the real
/// dataset at indices of `T` and a flow-generated pseudo-domain elsewhere,
/// self-training at every index after the first. `flow` may be omitted only
/// when no pseudo-domain is needed.
pub fn run_gda<F: Scalar>(
    sequence: &DomainSequence<F>,
    flow: Option<&FlowModel<F>>,
    theta1: &Classifier<F>,
    alpha: F,
    config: &GdaConfig,
    seed: SeedTree,
) -> Result<GdaRun<F>> {
    let horizon = sequence.horizon();
    let real = sequence.all_features();
    let index_set = time_index_set(horizon, &sequence.time_indices(), alpha)?;
    let n_generate = match config.n_generate {
        Some(0) => return Err(Error::InvalidArgument("n_generate must be positive".into())),
        Some(n) => n,
        None => {
            let total: usize = real.iter().map(|(_, m)| m.rows()).sum();
            (total as f64 / real.len() as f64).round().max(1.0) as usize
        }
    };
    if index_set.generated_count() > 0 {
        let flow = flow.ok_or_else(|| Error::InvalidArgument("a trained flow is required when alpha adds pseudo-domains".into()))?;
        if (flow.horizon() - horizon).abs() > F::of(TIME_EPS) || flow.dim() != sequence.dim() {
            return Err(Error::InvalidArgument(format!(
                "flow was trained for K = {} and D = {}, sequence has K = {horizon} and D = {}",
                flow.horizon(),
                flow.dim(),
                sequence.dim()
            )));
        }
    }
    let mut datasets = Vec::with_capacity(index_set.len());
    for &(t, origin) in index_set.entries() {
        let ds = match origin {
            IndexOrigin::Real => ChainDataset {
                time_index: t,
                origin,
                features: find_real(&real, t).expect("real index present").clone(),
                seed: None,
            },
            IndexOrigin::Generated => {
                let s = pseudo_domain_seed(seed, t);
                let p = generate_pseudo_domain(flow.expect("checked above"), t, n_generate, s)
                    .map_err(|e| e.at_time(t.to_f64_lossy()))?;
                ChainDataset {
                    time_index: t,
                    origin,
                    features: p.samples,
                    seed: Some(p.seed),
                }
            }
        };
        datasets.push(ds);
    }
    // same seed derivation as gradual_chain, so α = 1 reproduces it exactly
    let chain_seed = seed.child("chain");
    let mut classifiers = Vec::with_capacity(datasets.len());
    classifiers.push(theta1.clone());
    let mut warnings = Vec::new();
    for (k, d) in datasets.iter().enumerate().skip(1) {
        let step = self_train(&classifiers[k - 1], &d.features, &config.classifier, chain_seed.child_index("step", k as u64))
            .map_err(|e| e.at_time(d.time_index.to_f64_lossy()))?;
        warnings.extend(step.warnings.iter().map(|w| format!("t = {}: {w}", d.time_index)));
        classifiers.push(step.classifier);
    }
    Ok(GdaRun {
        alpha,
        index_set,
        datasets,
        classifiers,
        warnings,
        n_generate,
    })
}

/// Cycle-consistency score of a finished run against the labeled source.
pub fn cycle_for_run<F: Scalar>(
    run: &GdaRun<F>,
    sequence: &DomainSequence<F>,
    config: &GdaConfig,
    seed: SeedTree,
) -> Result<CycleScore> {
    let chain: Vec<&Mat<F>> = run
        .datasets
        .iter()
        .filter(|d| config.cycle_mode == CycleMode::Symmetric || d.origin == IndexOrigin::Real)
        .map(|d| &d.features)
        .collect();
    let (_, score) = cycle_consistency(run.classifier(), &chain, sequence.source(), &config.classifier, seed.child("cycle"))?;
    Ok(score)
}
