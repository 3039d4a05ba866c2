use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{
    init_into, Activation, Mat, MlpSlots, MlpSpec, ParamLayout, ParamVars, ParamVector, SliceKind, Tape, Var,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest state dimension supported by the exact trace.
pub const MAX_DIM: usize = 32;

/// Invertible per-feature affine map applied where two time blocks meet:
/// `g ↦ (g − mean) / std · exp(log_scale) + shift`. `mean` and `std` are
/// stored statistics; `log_scale` and `shift` are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockNorm<F> {
    pub boundary: F,
    pub mean: Vec<F>,
    pub std: Vec<F>,
    pub log_scale_slot: usize,
    pub shift_slot: usize,
}

/// Continuous normalizing flow over domain time `t ∈ [0, K]`. Time 0 carries
/// the standard-normal base; time `j` carries domain `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<F> {
    dim: usize,
    horizon: F,
    steps_per_unit_time: usize,
    velocity: MlpSpec,
    params: ParamVector<F>,
    blocks: Vec<MlpSlots>,
    norms: Vec<BlockNorm<F>>,
    pub gamma: f64,
    pub penalty_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowShape {
    pub dim: usize,
    pub horizon: f64,
    pub steps_per_unit_time: usize,
    pub block_count: usize,
    pub hidden: Vec<(usize, Activation)>,
}

impl<F: Scalar> FlowModel<F> {
    /// Builds a flow with zero parameters: the velocity field is identically 0.
    pub fn zeroed(shape: &FlowShape) -> Result<Self> {
        let FlowShape {
            dim,
            horizon,
            steps_per_unit_time,
            block_count,
            ref hidden,
        } = *shape;
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument(format!("flow dimension must be in 1..={MAX_DIM}, got {dim}")));
        }
        if !(horizon >= 1.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon K must be >= 1, got {horizon}")));
        }
        if steps_per_unit_time == 0 || block_count == 0 {
            return Err(Error::InvalidArgument("steps_per_unit_time and block_count must be positive".into()));
        }
        let velocity = MlpSpec::new(dim + 1, hidden, dim);
        velocity.validate()?;
        let mut layout = ParamLayout::new();
        let mut blocks = Vec::with_capacity(block_count);
        for b in 0..block_count {
            let layers = velocity.append_layout(&mut layout, b * velocity.layer_count());
            blocks.push(MlpSlots { layers });
        }
        let mut norms = Vec::with_capacity(block_count - 1);
        let horizon_f = F::of(horizon);
        for k in 1..block_count {
            let layer = block_count * velocity.layer_count() + k - 1;
            let log_scale_slot = layout.push(layer, SliceKind::LogScale, 1, dim);
            let shift_slot = layout.push(layer, SliceKind::Shift, 1, dim);
            norms.push(BlockNorm {
                boundary: horizon_f * F::of_usize(k) / F::of_usize(block_count),
                mean: vec![F::zero(); dim],
                std: vec![F::one(); dim],
                log_scale_slot,
                shift_slot,
            });
        }
        Ok(FlowModel {
            dim,
            horizon: horizon_f,
            steps_per_unit_time,
            velocity,
            params: ParamVector::zeros(Arc::new(layout)),
            blocks,
            norms,
            gamma: 0.0,
            penalty_points: 2,
        })
    }

    /// Glorot-initialised velocity networks; the output layer is scaled by
    /// `output_gain` so a fresh flow starts close to the identity map.
    pub fn init<R: Rng + ?Sized>(shape: &FlowShape, output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut flow = Self::zeroed(shape)?;
        for slots in &flow.blocks {
            init_into(&flow.velocity, &mut flow.params, slots, output_gain, rng);
        }
        Ok(flow)
    }

    /// Single-block flow with the time-independent linear field `v(g) = A·g`.
    pub fn linear(a: &Mat<F>, horizon: f64, steps_per_unit_time: usize) -> Result<Self> {
        let d = a.rows();
        if a.cols() != d {
            return Err(Error::shape("linear field", "square matrix", format!("{}x{}", a.rows(), a.cols())));
        }
        let mut flow = Self::zeroed(&FlowShape {
            dim: d,
            horizon,
            steps_per_unit_time,
            block_count: 1,
            hidden: vec![],
        })?;
        let (wi, _) = flow.blocks[0].layers[0];
        let w = flow.params.slice_mut(wi);
        // y = [g, t] · W, so W[i][j] = A[j][i]; the time row stays zero
        for i in 0..d {
            for j in 0..d {
                w[i * d + j] = a[(j, i)];
            }
        }
        Ok(flow)
    }

    pub fn shape(&self) -> FlowShape {
        FlowShape {
            dim: self.dim,
            horizon: self.horizon.to_f64_lossy(),
            steps_per_unit_time: self.steps_per_unit_time,
            block_count: self.blocks.len(),
            hidden: self.velocity.hidden.iter().map(|h| (h.width, h.activation)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> F {
        self.horizon
    }

    pub fn steps_per_unit_time(&self) -> usize {
        self.steps_per_unit_time
    }

    /// Same field on a different integration grid. Sampling with a finer grid
    /// than the one used in training tightens the x→z→x round trip.
    pub fn with_steps_per_unit_time(mut self, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("steps_per_unit_time must be positive".into()));
        }
        self.steps_per_unit_time = steps;
        Ok(self)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn velocity_spec(&self) -> &MlpSpec {
        &self.velocity
    }

    pub fn params(&self) -> &ParamVector<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<F> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector<F>) -> Result<()> {
        if !self.params.same_layout(&params) {
            return Err(Error::shape("flow parameters", self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    pub fn norms(&self) -> &[BlockNorm<F>] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [BlockNorm<F>] {
        &mut self.norms
    }

    /// Block whose open interval contains `(t0, t1)`.
    pub(crate) fn block_of_interval(&self, t0: F, t1: F) -> usize {
        let b = self.blocks.len();
        if b == 1 {
            return 0;
        }
        let mid = (t0 + t1) / (F::one() + F::one());
        let k = (mid / self.horizon * F::of_usize(b)).floor().to_usize().unwrap_or(0);
        k.min(b - 1)
    }

    /// Block used for a point evaluation at `t`; boundaries belong to the
    /// lower block.
    pub(crate) fn block_at(&self, t: F) -> usize {
        let b = self.blocks.len();
        if b == 1 || t <= F::zero() {
            return 0;
        }
        let k = (t / self.horizon * F::of_usize(b)).ceil().to_usize().unwrap_or(1);
        k.clamp(1, b) - 1
    }

    pub(crate) fn check_time(&self, t: F) -> Result<()> {
        let tol = F::of(crate::data::TIME_EPS);
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::InvalidArgument(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, g: &Mat<F>) -> Result<()> {
        if g.cols() != self.dim {
            return Err(Error::shape("flow state", self.dim, g.cols()));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite("flow state".into()));
        }
        Ok(())
    }
}

/// Velocity (and optionally the exact Jacobian trace) of block `block` at
/// time `t`, recorded on `tape`. `g` is n×D; returns n×D and n×1.
///
/// The trace is Σ_d ∂v_d/∂g_d, each term a forward-mode directional
/// derivative along basis vector e_d pushed through the network, so the cost
/// is O(D) network passes and the result is differentiable in ω.
pub(crate) fn velocity_tape<F: Scalar>(
    tape: &mut Tape<F>,
    flow: &FlowModel<F>,
    vars: &ParamVars,
    block: usize,
    g: Var,
    t: F,
    with_trace: bool,
) -> (Var, Option<Var>) {
    let n = tape.value(g).rows();
    let spec = &flow.velocity;
    let slots = &flow.blocks[block];
    let tcol = tape.leaf(Mat::filled(n, 1, t));
    let input = tape.concat_cols(g, tcol);

    let last = slots.layers.len() - 1;
    let mut h = input;
    let mut derivs = Vec::with_capacity(last);
    for (l, &(wi, bi)) in slots.layers.iter().enumerate() {
        let z = tape.matmul(h, vars.get(wi));
        let a = tape.add_row(z, vars.get(bi));
        if l == last {
            h = a;
        } else {
            let act = spec.activation(l);
            if with_trace {
                let (out, deriv) = tape.act_with_deriv(a, act);
                derivs.push(deriv);
                h = out;
            } else {
                h = tape.act(a, act);
            }
        }
    }
    if !with_trace {
        return (h, None);
    }

    let d = flow.dim;
    let w_first = vars.get(slots.layers[0].0);
    let w_last = vars.get(slots.layers[last].0);
    let mut trace: Option<Var> = None;
    for dir in 0..d {
        let row = tape.select_row(w_first, dir);
        let diag = if last == 0 {
            let entry = tape.select_col(row, dir);
            tape.broadcast_rows(entry, n)
        } else {
            let mut u = tape.mul_row(derivs[0], row);
            for l in 1..last {
                let wu = tape.matmul(u, vars.get(slots.layers[l].0));
                u = tape.mul(wu, derivs[l]);
            }
            let col = tape.select_col(w_last, dir);
            tape.matmul(u, col)
        };
        trace = Some(match trace {
            None => diag,
            Some(acc) => tape.add(acc, diag),
        });
    }
    (h, trace)
}

fn single_row<F: Scalar>(flow: &FlowModel<F>, g: &[F], t: F) -> Result<Mat<F>> {
    flow.check_time(t)?;
    let m = Mat::row_vector(g);
    flow.check_state(&m)?;
    Ok(m)
}

/// dg/dt at `(g, t)`.
pub fn velocity<F: Scalar>(flow: &FlowModel<F>, g: &[F], t: F) -> Result<Vec<F>> {
    let m = single_row(flow, g, t)?;
    let mut tape = Tape::new();
    let vars = tape.bind_params(&flow.params);
    let gv = tape.leaf(m);
    let (v, _) = velocity_tape(&mut tape, flow, &vars, flow.block_at(t), gv, t, false);
    Ok(tape.value(v).as_slice().to_vec())
}

/// Exact Tr(∂v/∂g) at `(g, t)`.
pub fn jacobian_trace<F: Scalar>(flow: &FlowModel<F>, g: &[F], t: F) -> Result<F> {
    let m = single_row(flow, g, t)?;
    let mut tape = Tape::new();
    let vars = tape.bind_params(&flow.params);
    let gv = tape.leaf(m);
    let (_, tr) = velocity_tape(&mut tape, flow, &vars, flow.block_at(t), gv, t, true);
    Ok(tape.value(tr.expect("trace requested"))[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn shape(hidden: Vec<(usize, Activation)>) -> FlowShape {
        FlowShape {
            dim: 2,
            horizon: 3.0,
            steps_per_unit_time: 8,
            block_count: 1,
            hidden,
        }
    }

    #[test]
    fn zero_network_has_zero_velocity() {
        let flow = FlowModel::<f64>::zeroed(&shape(vec![(8, Activation::Tanh)])).unwrap();
        assert_eq!(velocity(&flow, &[0.3, -2.0], 1.2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(jacobian_trace(&flow, &[0.3, -2.0], 1.2).unwrap(), 0.0);
    }

    #[test]
    fn linear_fields() {
        let neg = Mat::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let flow = FlowModel::<f64>::linear(&neg, 1.0, 16).unwrap();
        assert_eq!(velocity(&flow, &[0.5, -2.0], 0.3).unwrap(), vec![-0.5, 2.0]);
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let flow = FlowModel::<f64>::linear(&a, 1.0, 16).unwrap();
        assert_eq!(velocity(&flow, &[1.0, 1.0], 0.0).unwrap(), vec![3.0, 3.0]);
        assert_eq!(jacobian_trace(&flow, &[0.7, 0.1], 0.5).unwrap(), 5.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let flow = FlowModel::<f64>::zeroed(&shape(vec![])).unwrap();
        assert!(velocity(&flow, &[f64::NAN, 0.0], 0.5).is_err());
        assert!(velocity(&flow, &[0.0], 0.5).is_err());
        assert!(velocity(&flow, &[0.0, 0.0], 3.5).is_err());
        let mut big = shape(vec![]);
        big.dim = MAX_DIM + 1;
        assert!(FlowModel::<f64>::zeroed(&big).is_err());
    }

    /// Second, loop-based evaluation of a tanh velocity network.
    fn reference_velocity(flow: &FlowModel<f64>, g: &[f64], t: f64) -> Vec<f64> {
        let widths = flow.velocity_spec().widths();
        let p = flow.params().values();
        let mut h: Vec<f64> = g.iter().copied().chain([t]).collect();
        let mut off = 0;
        for l in 0..widths.len() - 1 {
            let (ni, no) = (widths[l], widths[l + 1]);
            let next: Vec<f64> = (0..no)
                .map(|j| {
                    let s = (0..ni).map(|i| h[i] * p[off + i * no + j]).sum::<f64>() + p[off + ni * no + j];
                    if l + 2 < widths.len() {
                        s.tanh()
                    } else {
                        s
                    }
                })
                .collect();
            off += ni * no + no;
            h = next;
        }
        h
    }

    #[test]
    fn random_velocity_matches_reference_and_trace_matches_fd() {
        for seed in 0..5 {
            let mut rng = SeedTree::new(seed).rng();
            let flow = FlowModel::<f64>::init(&shape(vec![(16, Activation::Tanh), (16, Activation::Tanh)]), 1.0, &mut rng).unwrap();
            let g = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(0.0..3.0);
            let v = velocity(&flow, &g, t).unwrap();
            let r = reference_velocity(&flow, &g, t);
            assert!(v.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-13));

            let eps = 1e-5;
            let mut fd = 0.0;
            for d in 0..2 {
                let mut gp = g;
                let mut gm = g;
                gp[d] += eps;
                gm[d] -= eps;
                fd += (reference_velocity(&flow, &gp, t)[d] - reference_velocity(&flow, &gm, t)[d]) / (2.0 * eps);
            }
            let tr = jacobian_trace(&flow, &g, t).unwrap();
            assert!((tr - fd).abs() <= 1e-5 * fd.abs().max(1.0), "seed {seed}: {tr} vs {fd}");
        }
    }

    #[test]
    fn block_lookup() {
        let mut s = shape(vec![]);
        s.block_count = 3;
        let flow = FlowModel::<f64>::zeroed(&s).unwrap();
        assert_eq!(flow.norms().len(), 2);
        assert_eq!(flow.block_at(0.0), 0);
        assert_eq!(flow.block_at(1.0), 0);
        assert_eq!(flow.block_at(1.0001), 1);
        assert_eq!(flow.block_at(3.0), 2);
        assert_eq!(flow.block_of_interval(1.0, 2.0), 1);
        assert_eq!(flow.block_of_interval(2.5, 3.0), 2);
    }
}
