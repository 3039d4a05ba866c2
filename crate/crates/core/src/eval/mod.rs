//! Accuracy, exact empirical 2-Wasserstein distance, Pearson correlation and
//! report files.

mod assignment;
mod report;

pub use assignment::{min_cost_assignment, AssignmentError};
pub use report::{emit_report, write_step_trace, ExperimentReport, ReportRow, TraceRow, WriteMode, REPORT_COLUMNS, TRACE_COLUMNS};

use rand::seq::index::sample;

use crate::data::{EvaluatedSequence, LabeledDataset};
use crate::diffmath::Mat;
use crate::error::{Error, Result};
use crate::interpolate::{GdaRun, IndexOrigin};
use crate::rng::SeedTree;
use crate::scalar::Scalar;
use crate::selftrain::Classifier;

/// Largest point cloud accepted by [`wasserstein2`].
pub const W2_MAX_POINTS: usize = 512;

/// Fraction of argmax predictions equal to the labels.
pub fn accuracy<F: Scalar>(h: &Classifier<F>, labeled: &LabeledDataset<F>) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty dataset".into()));
    }
    let pred = h.predict(labeled.features())?;
    Ok(pred.iter().zip(labeled.labels()).filter(|(a, b)| a == b).count() as f64 / labeled.len() as f64)
}

/// Exact empirical W2 between equal-size clouds:
/// `sqrt(min_σ (1/n) Σ_i ‖a_i − b_σ(i)‖²)`.
pub fn wasserstein2<F: Scalar>(a: &Mat<F>, b: &Mat<F>) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(
            "wasserstein2 inputs",
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    let n = a.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("wasserstein2 of empty clouds".into()));
    }
    if n > W2_MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "wasserstein2 is exact only up to {W2_MAX_POINTS} points, got {n}; subsample first"
        )));
    }
    let cost: Vec<f64> = a
        .iter_rows()
        .flat_map(|ra| {
            b.iter_rows().map(move |rb| {
                ra.iter()
                    .zip(rb)
                    .map(|(&x, &y)| {
                        let d = (x - y).to_f64_lossy();
                        d * d
                    })
                    .sum::<f64>()
            })
        })
        .collect();
    let perm = min_cost_assignment(&cost, n).map_err(|e| Error::NonFinite(e.to_string()))?;
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// `n` distinct rows chosen uniformly at random (all rows, in order, when `n ≥ rows`).
pub fn subsample<F: Scalar>(m: &Mat<F>, n: usize, seed: SeedTree) -> Mat<F> {
    if n >= m.rows() {
        return m.clone();
    }
    let mut idx = sample(&mut seed.rng(), m.rows(), n).into_vec();
    idx.sort_unstable();
    m.select_rows(&idx)
}

/// W2 after subsampling both clouds to `min(|a|, |b|, cap)` points.
pub fn wasserstein2_subsampled<F: Scalar>(a: &Mat<F>, b: &Mat<F>, cap: usize, seed: SeedTree) -> Result<f64> {
    let n = a.rows().min(b.rows()).min(cap).min(W2_MAX_POINTS);
    wasserstein2(&subsample(a, n, seed.child("a")), &subsample(b, n, seed.child("b")))
}

/// Largest W2 between consecutive datasets.
pub fn adjacent_max_w2<F: Scalar>(chain: &[&Mat<F>], cap: usize, seed: SeedTree) -> Result<f64> {
    let mut best = 0.0f64;
    for (k, w) in chain.windows(2).enumerate() {
        best = best.max(wasserstein2_subsampled(w[0], w[1], cap, seed.child_index("pair", k as u64))?);
    }
    Ok(best)
}

/// Sample Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::shape("pearson inputs", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("pearson correlation is undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-step accuracies of a run on every real domain whose labels were held out.
pub fn step_accuracies<F: Scalar>(run: &GdaRun<F>, evaluated: &EvaluatedSequence<F>) -> Result<Vec<Option<f64>>> {
    run.datasets
        .iter()
        .zip(&run.classifiers)
        .map(|(d, h)| match d.origin {
            IndexOrigin::Real => evaluated.labeled_at(d.time_index).map(|l| accuracy(h, &l)).transpose(),
            IndexOrigin::Generated => Ok(None),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&xs, &[1.0; 4]).is_err());
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn pearson_hand_computed() {
        // means 3.5 and 4; Sxy = 6, Sxx = 17.5, Syy = 16
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ys = [2.0, 4.0, 3.0, 7.0, 5.0, 3.0];
        let r = pearson(&xs, &ys).unwrap();
        let expected = 6.0 / 280f64.sqrt();
        assert!((r - expected).abs() < 1e-15, "{r} vs {expected}");
    }

    #[test]
    fn w2_examples() {
        let a = Mat::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let b = Mat::from_vec(2, 1, vec![3.0, 2.0]).unwrap();
        assert_eq!(wasserstein2(&a, &b).unwrap(), 2.0);
        assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
        assert!(wasserstein2(&a, &Mat::zeros(3, 1)).is_err());
        assert!(wasserstein2(&Mat::<f64>::zeros(600, 1), &Mat::zeros(600, 1)).is_err());
    }
}
