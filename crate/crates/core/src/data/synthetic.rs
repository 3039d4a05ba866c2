use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffmath::Mat;
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

use super::{DomainSequence, EvaluatedSequence, HeldOutLabels, LabeledDataset, UnlabeledDomain};

/// Two interleaved half circles: class 1 on the unit upper half circle,
/// class 2 on the lower half circle centred at (1, 0.5). Rows are shuffled.
pub fn make_two_moons<F: Scalar>(n: usize, noise_sd: f64, seed: SeedTree) -> Result<LabeledDataset<F>> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("two-moons needs an even n >= 2, got {n}")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument("noise_sd must be nonnegative".into()));
    }
    let half = n / 2;
    let step = if half > 1 { std::f64::consts::PI / (half - 1) as f64 } else { 0.0 };
    let mut points: Vec<([f64; 2], u32)> = Vec::with_capacity(n);
    for i in 0..half {
        let a = i as f64 * step;
        points.push(([a.cos(), a.sin()], 1));
    }
    for i in 0..half {
        let a = i as f64 * step;
        points.push(([1.0 - a.cos(), 0.5 - a.sin()], 2));
    }
    let mut rng = seed.rng();
    points.shuffle(&mut rng);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (p, y) in points {
        let (dx, dy) = if noise_sd > 0.0 {
            (noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        data.push(F::of(p[0] + dx));
        data.push(F::of(p[1] + dy));
        labels.push(y);
    }
    LabeledDataset::with_class_count(Mat::from_vec(n, 2, data)?, labels, 2, F::one())
}

/// Isotropic Gaussian blobs, `n_per_class` samples around each centre.
pub fn make_gaussian_blobs<F: Scalar>(n_per_class: usize, centers: &[Vec<f64>], sd: f64, seed: SeedTree) -> Result<LabeledDataset<F>> {
    if n_per_class == 0 || centers.is_empty() {
        return Err(Error::InvalidArgument("blobs need at least one centre and one sample".into()));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::InvalidArgument("blob centres must share a positive dimension".into()));
    }
    let noise = Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed.rng();
    let mut order: Vec<usize> = (0..n_per_class * centers.len()).collect();
    order.shuffle(&mut rng);
    let mut data = Vec::with_capacity(order.len() * d);
    let mut labels = Vec::with_capacity(order.len());
    for k in order {
        let c = k / n_per_class;
        for &mu in &centers[c] {
            data.push(F::of(mu + noise.sample(&mut rng)));
        }
        labels.push(c as u32 + 1);
    }
    LabeledDataset::with_class_count(Mat::from_vec(labels.len(), d, data)?, labels, centers.len(), F::one())
}

/// Rotates each row of a two-column matrix by `angle` radians about the origin.
pub fn rotate_features<F: Scalar>(features: &Mat<F>, angle: F) -> Result<Mat<F>> {
    if features.cols() != 2 {
        return Err(Error::shape("rotate", "2 feature columns", features.cols()));
    }
    let (s, c) = angle.sin_cos();
    let mut out = features.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let (x, y) = (r[0], r[1]);
        r[0] = c * x - s * y;
        r[1] = s * x + c * y;
    }
    Ok(out)
}

pub fn rotate<F: Scalar>(dataset: &LabeledDataset<F>, angle: F) -> Result<LabeledDataset<F>> {
    dataset.rotated(angle)
}

/// Synthetic source generator for rotating sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    TwoMoons {
        n: usize,
        noise_sd: f64,
        /// Shift by −(0.5, 0.25) so the pair of moons sits around the origin.
        #[serde(default)]
        centered: bool,
    },
    Blobs { n_per_class: usize, centers: Vec<Vec<f64>>, sd: f64 },
}

impl Generator {
    pub fn sample<F: Scalar>(&self, seed: SeedTree) -> Result<LabeledDataset<F>> {
        match self {
            Generator::TwoMoons { n, noise_sd, centered } => {
                let d: LabeledDataset<F> = make_two_moons(*n, *noise_sd, seed)?;
                if !*centered {
                    return Ok(d);
                }
                let shift = [F::of(0.5), F::of(0.25)];
                let mut x = d.features().clone();
                for i in 0..x.rows() {
                    for (v, &s) in x.row_mut(i).iter_mut().zip(&shift) {
                        *v = *v - s;
                    }
                }
                LabeledDataset::with_class_count(x, d.labels().to_vec(), 2, d.time_index())
            }
            Generator::Blobs { n_per_class, centers, sd } => make_gaussian_blobs(*n_per_class, centers, *sd, seed),
        }
    }
}

/// Domain `j` (time index `j + 1`) is a fresh draw from `generator` rotated
/// by `angles[j]`. With `shared_cloud` every domain rotates the same draw.
/// Labels of domains after the source go to the held-out slot.
pub fn make_rotating_sequence<F: Scalar>(
    generator: &Generator,
    angles: &[f64],
    seed: SeedTree,
    shared_cloud: bool,
) -> Result<EvaluatedSequence<F>> {
    if angles.is_empty() || angles[0] != 0.0 {
        return Err(Error::InvalidArgument("angles must start at 0".into()));
    }
    if angles.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("angles must ascend".into()));
    }
    let base: LabeledDataset<F> = generator.sample(seed.child_index("domain", 0))?;
    let mut unlabeled = Vec::new();
    let mut held = Vec::new();
    for (j, &angle) in angles.iter().enumerate().skip(1) {
        let draw = if shared_cloud {
            base.clone()
        } else {
            generator.sample(seed.child_index("domain", j as u64))?
        };
        let rotated = draw.rotated(F::of(angle))?;
        unlabeled.push(UnlabeledDomain::new(rotated.features().clone(), F::of_usize(j + 1))?);
        held.push(Some(rotated.labels().to_vec()));
    }
    Ok(EvaluatedSequence {
        sequence: DomainSequence::new(base, unlabeled)?,
        held_out: HeldOutLabels::new(held),
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use proptest::prelude::*;

    #[test]
    fn noiseless_moon_on_unit_circle() {
        let d: LabeledDataset<f64> = make_two_moons(200, 0.0, SeedTree::new(1)).unwrap();
        for (row, &y) in d.features().iter_rows().zip(d.labels()) {
            if y == 1 {
                assert!((row[0].hypot(row[1]) - 1.0).abs() <= 1e-12);
                assert!(row[1] >= -1e-12);
            }
        }
        assert_eq!(d.labels().iter().filter(|&&y| y == 1).count(), 100);
    }

    #[test]
    fn moons_reproducible_and_reject_odd() {
        let a: LabeledDataset<f64> = make_two_moons(4, 0.1, SeedTree::new(5)).unwrap();
        let b: LabeledDataset<f64> = make_two_moons(4, 0.1, SeedTree::new(5)).unwrap();
        assert!(a.features().as_slice().iter().zip(b.features().as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.labels(), b.labels());
        assert!(make_two_moons::<f64>(5, 0.1, SeedTree::new(5)).is_err());
    }

    #[test]
    fn noisy_class_means_within_clt_bound() {
        let n = 2000;
        let noisy: LabeledDataset<f64> = make_two_moons(n, 0.1, SeedTree::new(9)).unwrap();
        let clean: LabeledDataset<f64> = make_two_moons(n, 0.0, SeedTree::new(9)).unwrap();
        let mean = |d: &LabeledDataset<f64>, c: u32| {
            let mut s = [0.0; 2];
            let mut k = 0.0;
            for (r, &y) in d.features().iter_rows().zip(d.labels()) {
                if y == c {
                    s[0] += r[0];
                    s[1] += r[1];
                    k += 1.0;
                }
            }
            [s[0] / k, s[1] / k]
        };
        let bound = 3.0 * 0.1 / (1000f64).sqrt();
        for c in [1, 2] {
            let (a, b) = (mean(&noisy, c), mean(&clean, c));
            assert!((a[0] - b[0]).abs() <= bound && (a[1] - b[1]).abs() <= bound, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn rotation_identities() {
        let d: LabeledDataset<f64> = make_two_moons(50, 0.1, SeedTree::new(2)).unwrap();
        assert_eq!(rotate(&d, 0.0).unwrap(), d);
        let back = rotate(&rotate(&d, PI).unwrap(), PI).unwrap();
        assert!(back.features().max_abs_diff(d.features()) <= 1e-12);
        let three = Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(rotate_features(&three, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn rotation_preserves_pairwise_distances(angle in -10.0f64..10.0, seed in 0u64..1000) {
            let d: LabeledDataset<f64> = make_two_moons(20, 0.2, SeedTree::new(seed)).unwrap();
            let r = rotate(&d, angle).unwrap();
            let dist = |m: &Mat<f64>, i: usize, j: usize| (m[(i, 0)] - m[(j, 0)]).hypot(m[(i, 1)] - m[(j, 1)]);
            for i in 0..20 {
                for j in 0..20 {
                    prop_assert!((dist(d.features(), i, j) - dist(r.features(), i, j)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn rotating_sequence_layout() {
        let g = Generator::TwoMoons { n: 40, noise_sd: 0.1, centered: false };
        let seq: EvaluatedSequence<f64> = make_rotating_sequence(&g, &[0.0, PI / 6.0, PI / 3.0], SeedTree::new(4), false).unwrap();
        assert_eq!(seq.sequence.time_indices(), vec![1.0, 2.0, 3.0]);
        assert_eq!(seq.held_out.len(), 2);
        assert!(seq.labeled_target().is_some());
        let single: EvaluatedSequence<f64> = make_rotating_sequence(&g, &[0.0], SeedTree::new(4), false).unwrap();
        assert_eq!(single.sequence.horizon(), 1.0);
        let other: EvaluatedSequence<f64> = make_rotating_sequence(&g, &[0.0, PI / 6.0, PI / 3.0], SeedTree::new(5), false).unwrap();
        assert_ne!(other.sequence.source().features(), seq.sequence.source().features());
        assert!(make_rotating_sequence::<f64>(&g, &[0.1, 0.2], SeedTree::new(1), false).is_err());
    }
}
