//! Fixed-step classic RK4 transport along the flow's time axis.
//!
//! The state and the log-density change are integrated jointly. A transport
//! from `t_from` to `t_to` accumulates `delta = ∫_{t_from}^{t_to} Tr(∂v/∂g) dt`
//! (plus the log-determinants of any block normalizations crossed), so that
//! `log p(g(t_from)) = log p(g(t_to)) + delta`.

use crate::diffmath::{Mat, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::model::{velocity_tape, FlowModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Leg<F> {
    Integrate { block: usize, t0: F, t1: F, steps: usize },
    Norm { index: usize, inverse: bool },
}

/// Splits `[t_from, t_to]` at interior block boundaries. Each piece gets
/// `ceil(length · steps_per_unit_time)` equal steps, so a reverse transport
/// walks exactly the same grid backwards.
pub(crate) fn plan<F: Scalar>(flow: &FlowModel<F>, t_from: F, t_to: F) -> Vec<Leg<F>> {
    if t_from == t_to {
        return Vec::new();
    }
    let up = t_to > t_from;
    let (lo, hi) = if up { (t_from, t_to) } else { (t_to, t_from) };
    let crossings: Vec<(usize, F)> = flow
        .norms()
        .iter()
        .enumerate()
        .map(|(i, n)| (i, n.boundary))
        .filter(|&(_, b)| lo <= b && b < hi)
        .collect();
    let mut cuts = vec![lo];
    cuts.extend(crossings.iter().map(|&(_, b)| b).filter(|&b| b > lo));
    cuts.push(hi);

    let spu = F::of_usize(flow.steps_per_unit_time());
    let tol = F::of(1e-9);
    let pieces: Vec<Leg<F>> = cuts
        .windows(2)
        .map(|w| {
            let steps = ((w[1] - w[0]) * spu - tol).ceil().to_usize().unwrap_or(1).max(1);
            let block = flow.block_of_interval(w[0], w[1]);
            if up {
                Leg::Integrate { block, t0: w[0], t1: w[1], steps }
            } else {
                Leg::Integrate { block, t0: w[1], t1: w[0], steps }
            }
        })
        .collect();
    let norm_at = |t: F| crossings.iter().find(|&&(_, b)| b == t).map(|&(i, _)| i);

    let mut legs = Vec::new();
    if up {
        for piece in pieces {
            if let Leg::Integrate { t0, .. } = piece {
                if let Some(index) = norm_at(t0) {
                    legs.push(Leg::Norm { index, inverse: false });
                }
            }
            legs.push(piece);
        }
    } else {
        for piece in pieces.into_iter().rev() {
            legs.push(piece);
            if let Leg::Integrate { t1, .. } = piece {
                if let Some(index) = norm_at(t1) {
                    legs.push(Leg::Norm { index, inverse: true });
                }
            }
        }
    }
    legs
}

pub(crate) fn rk4_step<F: Scalar>(
    tape: &mut Tape<F>,
    flow: &FlowModel<F>,
    vars: &ParamVars,
    block: usize,
    g: Var,
    t: F,
    h: F,
    with_trace: bool,
) -> (Var, Option<Var>) {
    let two = F::one() + F::one();
    let half = h / two;
    let (k1, tr1) = velocity_tape(tape, flow, vars, block, g, t, with_trace);
    let s1 = tape.scale(k1, half);
    let g2 = tape.add(g, s1);
    let (k2, tr2) = velocity_tape(tape, flow, vars, block, g2, t + half, with_trace);
    let s2 = tape.scale(k2, half);
    let g3 = tape.add(g, s2);
    let (k3, tr3) = velocity_tape(tape, flow, vars, block, g3, t + half, with_trace);
    let s3 = tape.scale(k3, h);
    let g4 = tape.add(g, s3);
    let (k4, tr4) = velocity_tape(tape, flow, vars, block, g4, t + h, with_trace);

    let sixth = h / F::of(6.0);
    let combine = |tape: &mut Tape<F>, a: Var, b: Var, c: Var, d: Var| {
        let bc = tape.add(b, c);
        let bc2 = tape.scale(bc, two);
        let ad = tape.add(a, d);
        let sum = tape.add(ad, bc2);
        tape.scale(sum, sixth)
    };
    let inc = combine(tape, k1, k2, k3, k4);
    let next = tape.add(g, inc);
    let dl = match (tr1, tr2, tr3, tr4) {
        (Some(a), Some(b), Some(c), Some(d)) => Some(combine(tape, a, b, c, d)),
        _ => None,
    };
    (next, dl)
}

/// Applies block normalization `index` (or its inverse). Returns the new
/// state and its contribution to `delta`.
pub(crate) fn norm_tape<F: Scalar>(
    tape: &mut Tape<F>,
    flow: &FlowModel<F>,
    vars: &ParamVars,
    index: usize,
    g: Var,
    inverse: bool,
) -> (Var, Var) {
    let n = tape.value(g).rows();
    let norm = &flow.norms()[index];
    let log_scale = vars.get(norm.log_scale_slot);
    let shift = vars.get(norm.shift_slot);
    let mean = tape.leaf(Mat::row_vector(&norm.mean));
    let neg_mean = tape.leaf(Mat::row_vector(&norm.mean.iter().map(|&m| -m).collect::<Vec<_>>()));
    let inv_std = tape.leaf(Mat::row_vector(&norm.std.iter().map(|&s| F::one() / s).collect::<Vec<_>>()));
    let std = tape.leaf(Mat::row_vector(&norm.std));
    let log_std_sum: F = norm.std.iter().map(|s| s.ln()).sum();

    let ls_sum = tape.sum(log_scale);
    let logdet = tape.add_scalar(ls_sum, -log_std_sum);
    let out = if inverse {
        let neg_shift = tape.scale(shift, -F::one());
        let centred = tape.add_row(g, neg_shift);
        let neg_ls = tape.scale(log_scale, -F::one());
        let inv_scale = tape.exp(neg_ls);
        let unscaled = tape.mul_row(centred, inv_scale);
        let restd = tape.mul_row(unscaled, std);
        tape.add_row(restd, mean)
    } else {
        let centred = tape.add_row(g, neg_mean);
        let standard = tape.mul_row(centred, inv_std);
        let scale = tape.exp(log_scale);
        let scaled = tape.mul_row(standard, scale);
        tape.add_row(scaled, shift)
    };
    let signed = if inverse { tape.scale(logdet, -F::one()) } else { logdet };
    (out, tape.broadcast_rows(signed, n))
}

/// A transport recorded on a tape.
pub(crate) struct TapeTransport {
    pub end: Var,
    pub delta: Option<Var>,
}

pub(crate) fn transport_tape<F: Scalar>(
    tape: &mut Tape<F>,
    flow: &FlowModel<F>,
    vars: &ParamVars,
    start: Var,
    t_from: F,
    t_to: F,
    with_trace: bool,
) -> TapeTransport {
    let n = tape.value(start).rows();
    let mut g = start;
    let mut delta = with_trace.then(|| tape.leaf(Mat::zeros(n, 1)));
    for leg in plan(flow, t_from, t_to) {
        match leg {
            Leg::Integrate { block, t0, t1, steps } => {
                let h = (t1 - t0) / F::of_usize(steps);
                for s in 0..steps {
                    let t = t0 + h * F::of_usize(s);
                    let (next, dl) = rk4_step(tape, flow, vars, block, g, t, h, with_trace);
                    g = next;
                    if let (Some(acc), Some(dl)) = (delta, dl) {
                        delta = Some(tape.add(acc, dl));
                    }
                }
            }
            Leg::Norm { index, inverse } => {
                let (next, ld) = norm_tape(tape, flow, vars, index, g, inverse);
                g = next;
                if let Some(acc) = delta {
                    delta = Some(tape.add(acc, ld));
                }
            }
        }
    }
    TapeTransport { end: g, delta }
}

/// Result of transporting a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult<F> {
    pub endpoint: Vec<F>,
    pub delta_logdensity: F,
    pub trajectory: Option<Vec<(F, Vec<F>)>>,
}

/// Result of transporting a batch of states (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTransport<F> {
    pub endpoints: Mat<F>,
    /// Empty when the trace was not requested.
    pub delta_logdensity: Vec<F>,
    pub trajectory: Option<Vec<(F, Mat<F>)>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TransportOptions {
    pub with_trace: bool,
    pub record_trajectory: bool,
}

/// Transports every row of `start` from `t_from` to `t_to`. Each step is
/// evaluated on a fresh tape, so memory stays flat in the number of steps.
pub fn transport_batch<F: Scalar>(
    flow: &FlowModel<F>,
    start: &Mat<F>,
    t_from: F,
    t_to: F,
    opts: TransportOptions,
) -> Result<BatchTransport<F>> {
    flow.check_time(t_from)?;
    flow.check_time(t_to)?;
    flow.check_state(start)?;
    let n = start.rows();
    let mut g = start.clone();
    let mut delta = vec![F::zero(); n];
    let mut traj = opts.record_trajectory.then(|| vec![(t_from, start.clone())]);
    let mut step_index = 0usize;
    for leg in plan(flow, t_from, t_to) {
        match leg {
            Leg::Integrate { block, t0, t1, steps } => {
                let h = (t1 - t0) / F::of_usize(steps);
                for s in 0..steps {
                    let t = t0 + h * F::of_usize(s);
                    let mut tape = Tape::new();
                    let vars = tape.bind_params(flow.params());
                    let gv = tape.leaf(g);
                    let (next, dl) = rk4_step(&mut tape, flow, &vars, block, gv, t, h, opts.with_trace);
                    g = tape.value(next).clone();
                    if let Some(dl) = dl {
                        for (acc, &x) in delta.iter_mut().zip(tape.value(dl).as_slice()) {
                            *acc = *acc + x;
                        }
                    }
                    let t_next = if s + 1 == steps { t1 } else { t0 + h * F::of_usize(s + 1) };
                    if !g.all_finite() || delta.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Integration {
                            step: step_index,
                            time: t_next.to_f64_lossy(),
                        });
                    }
                    step_index += 1;
                    if let Some(tr) = traj.as_mut() {
                        tr.push((t_next, g.clone()));
                    }
                }
            }
            Leg::Norm { index, inverse } => {
                let mut tape = Tape::new();
                let vars = tape.bind_params(flow.params());
                let gv = tape.leaf(g);
                let (next, ld) = norm_tape(&mut tape, flow, &vars, index, gv, inverse);
                g = tape.value(next).clone();
                if opts.with_trace {
                    for (acc, &x) in delta.iter_mut().zip(tape.value(ld).as_slice()) {
                        *acc = *acc + x;
                    }
                }
                if let Some(tr) = traj.as_mut() {
                    tr.last_mut().expect("start recorded").1 = g.clone();
                }
            }
        }
    }
    if !opts.with_trace {
        delta.clear();
    }
    Ok(BatchTransport {
        endpoints: g,
        delta_logdensity: delta,
        trajectory: traj,
    })
}

/// Transports one state; `t_from > t_to` is the data→base direction.
pub fn transport<F: Scalar>(flow: &FlowModel<F>, start: &[F], t_from: F, t_to: F) -> Result<TransportResult<F>> {
    let m = Mat::row_vector(start);
    let out = transport_batch(
        flow,
        &m,
        t_from,
        t_to,
        TransportOptions {
            with_trace: true,
            record_trajectory: true,
        },
    )?;
    Ok(TransportResult {
        endpoint: out.endpoints.row(0).to_vec(),
        delta_logdensity: out.delta_logdensity[0],
        trajectory: out
            .trajectory
            .map(|tr| tr.into_iter().map(|(t, m)| (t, m.row(0).to_vec())).collect()),
    })
}
