use rayon::prelude::*;

use crate::cnf::FlowModel;
use crate::data::DomainSequence;
use crate::error::{Error, Result};
use crate::interpolate::{cycle_for_run, run_gda, GdaConfig, GdaRun};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

use super::chain::CycleReport;
use super::classifier::Classifier;

/// Candidate grid for α.
pub const DEFAULT_ALPHA_GRID: [f64; 6] = [0.1, 0.2, 0.3, 0.5, 0.8, 1.0];

#[derive(Debug, Clone)]
pub struct AlphaOutcome<F> {
    pub alpha: f64,
    /// Absent when the candidate failed.
    pub run: Option<GdaRun<F>>,
    pub report: Option<CycleReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AlphaSelection<F> {
    pub best_alpha: f64,
    /// Sorted by α.
    pub outcomes: Vec<AlphaOutcome<F>>,
    pub warnings: Vec<String>,
}

impl<F> AlphaSelection<F> {
    pub fn reports(&self) -> Vec<&CycleReport> {
        self.outcomes.iter().filter_map(|o| o.report.as_ref()).collect()
    }

    pub fn best(&self) -> &AlphaOutcome<F> {
        self.outcomes
            .iter()
            .find(|o| o.alpha == self.best_alpha)
            .expect("best α is one of the outcomes")
    }
}

/// Runs the forward chain and the cycle check for every α and keeps the one
/// with the lowest cycle loss (ties go to the smaller α). Candidates run in
/// parallel; each uses the same seed tree, so shared pseudo-domains coincide.
pub fn select_alpha<F: Scalar>(
    sequence: &DomainSequence<F>,
    flow: Option<&FlowModel<F>>,
    theta1: &Classifier<F>,
    alphas: &[f64],
    config: &GdaConfig,
    seed: SeedTree,
) -> Result<AlphaSelection<F>> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    let span = sequence.horizon().to_f64_lossy() - 1.0;
    let mut grid = alphas.to_vec();
    if let Some(bad) = grid.iter().find(|&&a| !(a > 0.0 && a <= span + crate::data::TIME_EPS)) {
        return Err(Error::InvalidArgument(format!("alpha {bad} outside (0, K - 1] = (0, {span}]")));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut warnings = Vec::new();
    let before = grid.len();
    grid.dedup();
    if grid.len() < before {
        warnings.push(format!("removed {} duplicate alpha value(s)", before - grid.len()));
    }

    let outcomes: Vec<AlphaOutcome<F>> = grid
        .par_iter()
        .map(|&alpha| {
            let attempt = run_gda(sequence, flow, theta1, F::of(alpha), config, seed)
                .and_then(|run| cycle_for_run(&run, sequence, config, seed).map(|score| (run, score)));
            match attempt {
                Ok((run, score)) => AlphaOutcome {
                    alpha,
                    run: Some(run),
                    report: Some(CycleReport {
                        alpha,
                        forward_target_accuracy: None,
                        cycle_loss: score.loss,
                        cycle_accuracy: score.accuracy,
                    }),
                    error: None,
                },
                Err(e) => AlphaOutcome {
                    alpha,
                    run: None,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let scored: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| o.report.as_ref().map(|r| (o.alpha, r.cycle_loss)))
        .collect();
    let best = lowest_loss(&scored);
    for o in &outcomes {
        if let Some(e) = &o.error {
            warnings.push(format!("alpha {} failed: {e}", o.alpha));
        }
    }
    let Some(best_alpha) = best else {
        return Err(Error::InvalidArgument(format!("every alpha candidate failed: {}", warnings.join("; "))));
    };
    Ok(AlphaSelection {
        best_alpha,
        outcomes,
        warnings,
    })
}

/// α with the lowest finite loss; on ties the smaller α wins.
pub fn lowest_loss(scored: &[(f64, f64)]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(alpha, loss) in scored {
        if !loss.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((a, l)) => loss < l || (loss == l && alpha < a),
        };
        if better {
            best = Some((alpha, loss));
        }
    }
    best.map(|(a, _)| a)
}
