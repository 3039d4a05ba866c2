use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::diffmath::Mat;
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

use super::classifier::{fit, label_from_scores, Classifier, ClassifierConfig, Fitted};

/// ST(θ_t, U): pseudo-labels are computed once from `theta_t`, then a
/// classifier is fitted to them.
pub fn self_train<F: Scalar>(
    theta_t: &Classifier<F>,
    unlabeled: &Mat<F>,
    config: &ClassifierConfig,
    seed: SeedTree,
) -> Result<Fitted<F>> {
    if unlabeled.rows() == 0 {
        return Err(Error::InvalidArgument("self-training needs a nonempty unlabeled set".into()));
    }
    let probs = theta_t.predict_proba(unlabeled)?;
    let mut warnings = Vec::new();
    let mut rows: Vec<usize> = (0..unlabeled.rows()).collect();
    if let Some(c) = config.confidence_threshold {
        let c = F::of(c);
        let kept: Vec<usize> = probs
            .iter_rows()
            .enumerate()
            .filter(|(_, p)| p.iter().copied().fold(F::zero(), F::max) >= c)
            .map(|(i, _)| i)
            .collect();
        if kept.is_empty() {
            warnings.push("no pseudo-label passed the confidence threshold; using all of them".to_string());
        } else {
            rows = kept;
        }
    }
    let x = if rows.len() == unlabeled.rows() {
        unlabeled.clone()
    } else {
        unlabeled.select_rows(&rows)
    };
    let labels: Vec<u32> = rows.iter().map(|&i| label_from_scores(probs.row(i))).collect();
    if labels.windows(2).all(|w| w[0] == w[1]) && theta_t.class_count() > 1 {
        warnings.push(format!("degenerate pseudo-labels: every point assigned class {}", labels[0]));
    }
    let start = if config.warm_start {
        theta_t.clone()
    } else {
        Classifier::init(theta_t.spec().clone(), &mut seed.child("init").rng())?
    };
    let mut fitted = fit(start, &x, &labels, config.self_train_epochs, config, seed.child("fit"))?;
    for w in &warnings {
        log::warn!("{w}");
    }
    fitted.warnings.extend(warnings);
    Ok(fitted)
}

#[derive(Debug, Clone)]
pub struct ChainResult<F> {
    pub classifier: Classifier<F>,
    /// One entry per self-training step, in chain order.
    pub steps: Vec<Fitted<F>>,
}

/// θ^(k+1) = ST(θ^(k), U_k) folded over `chain`. Step `k` (1-based) draws its
/// randomness from `seed.child_index("step", k)`.
pub fn gradual_chain<F: Scalar>(
    theta1: &Classifier<F>,
    chain: &[&Mat<F>],
    config: &ClassifierConfig,
    seed: SeedTree,
) -> Result<ChainResult<F>> {
    let mut current = theta1.clone();
    let mut steps = Vec::with_capacity(chain.len());
    for (k, u) in chain.iter().enumerate() {
        let fitted = self_train(&current, u, config, seed.child_index("step", k as u64 + 1))?;
        current = fitted.classifier.clone();
        steps.push(fitted);
    }
    Ok(ChainResult {
        classifier: current,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub alpha: f64,
    pub forward_target_accuracy: Option<f64>,
    /// Mean cross-entropy of the cycled classifier on the labeled source.
    pub cycle_loss: f64,
    pub cycle_accuracy: f64,
}

/// Trains θ̂^(K) from scratch on θ^(K)'s target pseudo-labels, self-trains it
/// back through `chain` (ascending, `chain[0]` the unlabeled source, last the
/// target) and scores the result against the source labels.
pub fn cycle_consistency<F: Scalar>(
    theta_k: &Classifier<F>,
    chain: &[&Mat<F>],
    source: &LabeledDataset<F>,
    config: &ClassifierConfig,
    seed: SeedTree,
) -> Result<(Classifier<F>, CycleScore)> {
    let Some((target, rest)) = chain.split_last() else {
        return Err(Error::InvalidArgument("cycle consistency needs at least the target domain".into()));
    };
    let pseudo = theta_k.predict(target)?;
    let fresh = Classifier::init(theta_k.spec().clone(), &mut seed.child("init").rng())?;
    let mut current = fit(fresh, target, &pseudo, config.epochs, config, seed.child("fit"))?.classifier;
    for (k, u) in rest.iter().enumerate().rev() {
        current = self_train(&current, u, config, seed.child_index("back", k as u64))?.classifier;
    }
    let score = CycleScore {
        loss: current.loss(source.features(), source.labels())?.to_f64_lossy(),
        accuracy: crate::eval::accuracy(&current, source)?,
    };
    Ok((current, score))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleScore {
    pub loss: f64,
    pub accuracy: f64,
}
