use serde::{Deserialize, Serialize};

use crate::data::TIME_EPS;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexOrigin {
    Real,
    Generated,
}

impl IndexOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexOrigin::Real => "real",
            IndexOrigin::Generated => "generated",
        }
    }
}

/// `T_gradual`: strictly ascending time indices, each flagged real or generated.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeIndexSet<F> {
    entries: Vec<(F, IndexOrigin)>,
}

impl<F: Scalar> TimeIndexSet<F> {
    pub fn entries(&self) -> &[(F, IndexOrigin)] {
        &self.entries
    }

    pub fn indices(&self) -> Vec<F> {
        self.entries.iter().map(|&(t, _)| t).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn generated_count(&self) -> usize {
        self.entries.iter().filter(|(_, o)| *o == IndexOrigin::Generated).count()
    }
}

/// `{1 + αk | k ∈ ℕ, 1 ≤ k, 1 + αk ≤ K} ∪ T`. A generated index within
/// 1e-9 of a real one is dropped in favour of the real index.
pub fn time_index_set<F: Scalar>(horizon: F, real: &[F], alpha: F) -> Result<TimeIndexSet<F>> {
    let tol = F::of(TIME_EPS);
    if !(alpha > F::zero()) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if !(horizon >= F::one()) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon K must be >= 1, got {horizon}")));
    }
    let has = |t: F| real.iter().any(|&r| (r - t).abs() <= tol);
    if !has(F::one()) || !has(horizon) {
        return Err(Error::InvalidArgument("T must contain both 1 and K".into()));
    }
    if real.iter().any(|&r| !(r >= F::one() - tol && r <= horizon + tol)) {
        return Err(Error::InvalidArgument("T must lie inside [1, K]".into()));
    }
    let mut entries: Vec<(F, IndexOrigin)> = real.iter().map(|&t| (t, IndexOrigin::Real)).collect();
    let mut k = 1u64;
    loop {
        let t = F::one() + alpha * F::of(k as f64);
        if t > horizon + tol {
            break;
        }
        if !has(t) {
            entries.push((t, IndexOrigin::Generated));
        }
        k += 1;
    }
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite indices"));
    entries.dedup_by(|b, a| (b.0 - a.0).abs() <= tol);
    Ok(TimeIndexSet { entries })
}
