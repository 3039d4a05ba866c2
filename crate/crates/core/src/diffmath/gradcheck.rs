use crate::error::Result;
use crate::scalar::Scalar;

use super::params::ParamVector;

#[derive(Debug, Clone)]
pub struct FdReport<F> {
    /// max |analytic − central| / max(1, |analytic|) over checked coordinates.
    pub max_rel_error: F,
    pub worst_index: Option<usize>,
    /// Coordinates where one-sided slopes disagree: a kink inside ±eps.
    pub kinks: Vec<usize>,
    /// Coordinates whose perturbed loss was not finite.
    pub non_finite: Vec<usize>,
    pub checked: usize,
}

/// Compares the analytic gradient of `loss` against central differences on
/// every coordinate.
pub fn finite_diff_check<F, L>(loss: L, params: &ParamVector<F>, eps: F) -> Result<FdReport<F>>
where
    F: Scalar,
    L: FnMut(&ParamVector<F>) -> Result<(F, ParamVector<F>)>,
{
    let all: Vec<usize> = (0..params.len()).collect();
    finite_diff_check_coords(loss, params, eps, &all)
}

pub fn finite_diff_check_coords<F, L>(mut loss: L, params: &ParamVector<F>, eps: F, coords: &[usize]) -> Result<FdReport<F>>
where
    F: Scalar,
    L: FnMut(&ParamVector<F>) -> Result<(F, ParamVector<F>)>,
{
    if !(eps > F::zero()) {
        return Err(crate::Error::InvalidArgument("finite-difference eps must be positive".into()));
    }
    let (f0, analytic) = loss(params)?;
    let two = F::one() + F::one();
    let kink_tol = eps.sqrt();
    let mut report = FdReport {
        max_rel_error: F::zero(),
        worst_index: None,
        kinks: Vec::new(),
        non_finite: Vec::new(),
        checked: 0,
    };
    let mut probe = params.clone();
    for &k in coords {
        let orig = params.values()[k];
        probe.values_mut()[k] = orig + eps;
        let fp = loss(&probe)?.0;
        probe.values_mut()[k] = orig - eps;
        let fm = loss(&probe)?.0;
        probe.values_mut()[k] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            report.non_finite.push(k);
            continue;
        }
        let central = (fp - fm) / (two * eps);
        let forward = (fp - f0) / eps;
        let backward = (f0 - fm) / eps;
        if (forward - backward).abs() > kink_tol * central.abs().max(F::one()) {
            report.kinks.push(k);
            continue;
        }
        let a = analytic.values()[k];
        let rel = (a - central).abs() / a.abs().max(F::one());
        report.checked += 1;
        if report.worst_index.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(k);
        }
    }
    Ok(report)
}
