use rand::Rng;

use crate::diffmath::{Mat, ParamVars, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::model::FlowModel;
use super::solver::{transport_batch, transport_tape, TransportOptions};

/// log N(z; 0, I).
pub fn standard_normal_logpdf<F: Scalar>(z: &[F]) -> F {
    let half = F::of(0.5);
    let sq: F = z.iter().map(|&x| x * x).sum();
    -half * sq - half * F::of_usize(z.len()) * F::of((2.0 * std::f64::consts::PI).ln())
}

fn check_domain_time<F: Scalar>(flow: &FlowModel<F>, j: F) -> Result<()> {
    if !(j > F::zero()) {
        return Err(Error::InvalidArgument(format!("domain time index must be positive, got {j}")));
    }
    flow.check_time(j)
}

/// log p_X(x) for a sample of domain `j`: transport to time 0, then
/// `log p_Z(z) + ∫_j^0 Tr(∂v/∂g) dt`.
pub fn log_likelihood<F: Scalar>(flow: &FlowModel<F>, x: &[F], j: F) -> Result<F> {
    Ok(log_likelihood_batch(flow, &Mat::row_vector(x), j)?[0])
}

pub fn log_likelihood_batch<F: Scalar>(flow: &FlowModel<F>, x: &Mat<F>, j: F) -> Result<Vec<F>> {
    check_domain_time(flow, j)?;
    let out = transport_batch(
        flow,
        x,
        j,
        F::zero(),
        TransportOptions {
            with_trace: true,
            record_trajectory: false,
        },
    )?;
    Ok(out
        .endpoints
        .iter_rows()
        .zip(&out.delta_logdensity)
        .map(|(z, &d)| standard_normal_logpdf(z) + d)
        .collect())
}

/// Least-squares line fitted to one sample's trajectory points.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerSample<F> {
    pub taus: Vec<F>,
    pub states: Vec<Vec<F>>,
    pub slope: Vec<F>,
    pub intercept: Vec<F>,
}

impl<F: Scalar> RegularizerSample<F> {
    /// Euclidean residual norm at each τ.
    pub fn residual_norms(&self) -> Vec<F> {
        self.taus
            .iter()
            .zip(&self.states)
            .map(|(&t, g)| {
                g.iter()
                    .zip(self.slope.iter().zip(&self.intercept))
                    .map(|(&gi, (&b1, &b0))| {
                        let r = gi - b1 * t - b0;
                        r * r
                    })
                    .sum::<F>()
                    .sqrt()
            })
            .collect()
    }
}

fn check_taus<F: Scalar>(taus: &[F]) -> Result<()> {
    if taus.len() < 2 {
        return Err(Error::InvalidArgument(format!("penalty needs m >= 2 time points, got {}", taus.len())));
    }
    if taus.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("penalty time points must increase strictly".into()));
    }
    Ok(())
}

pub fn fit_trajectory_line<F: Scalar>(taus: &[F], states: &[Vec<F>]) -> Result<RegularizerSample<F>> {
    check_taus(taus)?;
    if states.len() != taus.len() {
        return Err(Error::shape("trajectory states", taus.len(), states.len()));
    }
    let d = states[0].len();
    let m = F::of_usize(taus.len());
    let tbar = taus.iter().copied().sum::<F>() / m;
    let stt: F = taus.iter().map(|&t| (t - tbar) * (t - tbar)).sum();
    let mut slope = vec![F::zero(); d];
    let mut intercept = vec![F::zero(); d];
    for k in 0..d {
        let gbar = states.iter().map(|g| g[k]).sum::<F>() / m;
        let stg: F = taus.iter().zip(states).map(|(&t, g)| (t - tbar) * (g[k] - gbar)).sum();
        slope[k] = stg / stt;
        intercept[k] = gbar - slope[k] * tbar;
    }
    Ok(RegularizerSample {
        taus: taus.to_vec(),
        states: states.to_vec(),
        slope,
        intercept,
    })
}

/// Residual operator of the least-squares line fit: residual_q = Σ_p C[q][p] g_p.
pub(crate) fn residual_weights<F: Scalar>(taus: &[F]) -> Mat<F> {
    let m = taus.len();
    let mf = F::of_usize(m);
    let tbar = taus.iter().copied().sum::<F>() / mf;
    let stt: F = taus.iter().map(|&t| (t - tbar) * (t - tbar)).sum();
    let mut c = Mat::zeros(m, m);
    for q in 0..m {
        for p in 0..m {
            let delta = if p == q { F::one() } else { F::zero() };
            c[(q, p)] = delta - F::one() / mf - (taus[q] - tbar) * (taus[p] - tbar) / stt;
        }
    }
    c
}

/// Straightness penalty from precomputed states: `states[q]` holds every
/// sample's position at `taus[q]`. Returns
/// `(1/m) Σ_q Σ_i ‖g_i(τ_q) − β1_i τ_q − β0_i‖`.
pub fn penalty_from_states<F: Scalar>(taus: &[F], states: &[Mat<F>]) -> Result<F> {
    check_taus(taus)?;
    if states.len() != taus.len() {
        return Err(Error::shape("trajectory states", taus.len(), states.len()));
    }
    let n = states[0].rows();
    let mut total = F::zero();
    for i in 0..n {
        let per: Vec<Vec<F>> = states.iter().map(|s| s.row(i).to_vec()).collect();
        total = total + fit_trajectory_line(taus, &per)?.residual_norms().into_iter().sum::<F>();
    }
    Ok(total / F::of_usize(taus.len()))
}

/// Straightness penalty of the x→z trajectories of `batch` (domain `j`)
/// evaluated at `taus`, which must run from 0 to `j`.
pub fn trajectory_penalty<F: Scalar>(flow: &FlowModel<F>, batch: &Mat<F>, j: F, taus: &[F]) -> Result<F> {
    check_domain_time(flow, j)?;
    check_taus(taus)?;
    let tol = F::of(crate::data::TIME_EPS);
    if taus[0].abs() > tol || (taus[taus.len() - 1] - j).abs() > tol {
        return Err(Error::InvalidArgument("penalty time points must start at 0 and end at j".into()));
    }
    let states = taus
        .iter()
        .map(|&tau| {
            if (tau - j).abs() <= tol {
                Ok(batch.clone())
            } else {
                transport_batch(flow, batch, j, tau, TransportOptions::default()).map(|o| o.endpoints)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    penalty_from_states(taus, &states)
}

/// Differentiable pieces of one domain's loss on a minibatch.
pub(crate) struct DomainLoss {
    /// −mean log-likelihood (1×1).
    pub nll: Var,
    /// Straightness penalty in summed-over-batch form (1×1).
    pub penalty: Var,
}

/// Records the likelihood and penalty of a minibatch from domain `j`. The
/// x→z solve is split at `taus` so the states there are exact grid nodes.
pub(crate) fn domain_loss_tape<F: Scalar>(
    tape: &mut Tape<F>,
    flow: &FlowModel<F>,
    vars: &ParamVars,
    x: &Mat<F>,
    j: F,
    taus: &[F],
) -> Result<DomainLoss> {
    check_domain_time(flow, j)?;
    check_taus(taus)?;
    flow.check_state(x)?;
    let start = tape.leaf(x.clone());
    // walk from τ_{m-1} = j down to τ_0 = 0, keeping the state at each τ
    let mut states = vec![start; taus.len()];
    let mut delta: Option<Var> = None;
    let mut g = start;
    for q in (0..taus.len() - 1).rev() {
        let seg = transport_tape(tape, flow, vars, g, taus[q + 1], taus[q], true);
        let d = seg.delta.expect("trace requested");
        delta = Some(match delta {
            None => d,
            Some(acc) => tape.add(acc, d),
        });
        g = seg.end;
        states[q] = g;
    }
    let delta = delta.expect("m >= 2");

    let sq = tape.mul(g, g);
    let sq_sum = tape.row_sum(sq);
    let half_sq = tape.scale(sq_sum, -F::of(0.5));
    let log_pz = tape.add_scalar(half_sq, -F::of(0.5 * flow.dim() as f64 * (2.0 * std::f64::consts::PI).ln()));
    let ll = tape.add(log_pz, delta);
    let mean_ll = tape.mean(ll);
    let nll = tape.scale(mean_ll, -F::one());

    let c = residual_weights(&taus);
    let m = taus.len();
    let mut total: Option<Var> = None;
    for q in 0..m {
        let mut r: Option<Var> = None;
        for (p, &state) in states.iter().enumerate() {
            let term = tape.scale(state, c[(q, p)]);
            r = Some(match r {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        let norms = tape.row_norm(r.expect("m >= 2"));
        let s = tape.sum(norms);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s),
        });
    }
    let penalty = tape.scale(total.expect("m >= 2"), F::one() / F::of_usize(m));
    Ok(DomainLoss { nll, penalty })
}

/// One domain's minibatch for [`flow_loss_and_grad`].
#[derive(Debug, Clone)]
pub struct LossBatch<F> {
    pub time_index: F,
    pub features: Mat<F>,
    /// `0 = τ_0 < … < τ_{m-1} = time_index`.
    pub taus: Vec<F>,
}

/// Value and ω-gradient of `Σ_j (L_0^(j) + γ P^(j) / n_j)` over the given
/// minibatches, where `P^(j)` is the batch-summed straightness penalty.
pub fn flow_loss_and_grad<F: Scalar>(
    flow: &FlowModel<F>,
    batches: &[LossBatch<F>],
    gamma: F,
) -> Result<(F, ParamVector<F>)> {
    let mut tape = Tape::new();
    let vars = tape.bind_params(flow.params());
    let mut total: Option<Var> = None;
    for b in batches {
        let parts = domain_loss_tape(&mut tape, flow, &vars, &b.features, b.time_index, &b.taus)?;
        let pen = tape.scale(parts.penalty, gamma / F::of_usize(b.features.rows()));
        let l = tape.add(parts.nll, pen);
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("no batches".into()))?;
    let grads = tape.backward(total)?;
    Ok((tape.scalar(total), grads.params().expect("parameters bound")))
}

/// `0 = τ_0 < τ_1 < … < τ_{m-1} = j` with the interior drawn uniformly.
pub(crate) fn draw_taus<F: Scalar, R: Rng + ?Sized>(j: F, m: usize, rng: &mut R) -> Vec<F> {
    let jf = j.to_f64_lossy();
    let mut interior: Vec<f64> = (0..m.saturating_sub(2))
        .map(|_| loop {
            let u: f64 = rng.gen::<f64>() * jf;
            if u > 0.0 && u < jf {
                break u;
            }
        })
        .collect();
    interior.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    interior.dedup();
    let mut taus = vec![F::zero()];
    taus.extend(interior.into_iter().map(F::of));
    taus.push(j);
    taus
}
