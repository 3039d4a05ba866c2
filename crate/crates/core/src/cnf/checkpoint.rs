//! Text checkpoint: a magic line, a JSON header, then one parameter per line
//! in layout order. Values are written with enough digits to round-trip
//! bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffmath::{MlpSpec, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::model::{FlowModel, FlowShape};

pub const CHECKPOINT_MAGIC: &str = "GDAFLOW-CKPT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub dim: usize,
    pub horizon: f64,
    pub steps_per_unit_time: usize,
    pub block_count: usize,
    pub velocity: MlpSpec,
    pub gamma: f64,
    pub penalty_points: usize,
    /// Per boundary: stored mean and std, as exact decimal strings.
    pub norms: Vec<(Vec<String>, Vec<String>)>,
    pub param_count: usize,
}

pub fn checkpoint_to_string<F: Scalar>(flow: &FlowModel<F>) -> String {
    let shape = flow.shape();
    let header = CheckpointHeader {
        dim: shape.dim,
        horizon: shape.horizon,
        steps_per_unit_time: shape.steps_per_unit_time,
        block_count: shape.block_count,
        velocity: flow.velocity_spec().clone(),
        gamma: flow.gamma,
        penalty_points: flow.penalty_points,
        norms: flow
            .norms()
            .iter()
            .map(|n| {
                (
                    n.mean.iter().map(|x| x.to_exact_string()).collect(),
                    n.std.iter().map(|x| x.to_exact_string()).collect(),
                )
            })
            .collect(),
        param_count: flow.params().len(),
    };
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for v in flow.params().values() {
        out.push_str(&v.to_exact_string());
        out.push('\n');
    }
    out
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message: message.into(),
    }
}

fn parse_value<F: Scalar>(s: &str, path: &str, line: usize) -> Result<F> {
    let v: F = s
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number {s:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, "non-finite value"));
    }
    Ok(v)
}

/// Parses a checkpoint; `origin` only labels error messages.
pub fn checkpoint_from_str<F: Scalar>(text: &str, origin: &str) -> Result<FlowModel<F>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim_end() == CHECKPOINT_MAGIC => {}
        Some(l) => return Err(parse_err(origin, 1, format!("expected {CHECKPOINT_MAGIC:?}, found {l:?}"))),
        None => return Err(parse_err(origin, 1, "empty checkpoint")),
    }
    let header_line = lines.next().ok_or_else(|| parse_err(origin, 2, "missing header"))?;
    let header: CheckpointHeader =
        serde_json::from_str(header_line).map_err(|e| parse_err(origin, 2, format!("bad header: {e}")))?;
    if header.velocity.input_dim != header.dim + 1 || header.velocity.output_dim != header.dim {
        return Err(parse_err(origin, 2, "velocity network dimensions do not match D"));
    }
    let shape = FlowShape {
        dim: header.dim,
        horizon: header.horizon,
        steps_per_unit_time: header.steps_per_unit_time,
        block_count: header.block_count,
        hidden: header.velocity.hidden.iter().map(|h| (h.width, h.activation)).collect(),
    };
    let mut flow = FlowModel::<F>::zeroed(&shape).map_err(|e| parse_err(origin, 2, e.to_string()))?;
    if flow.params().len() != header.param_count {
        return Err(parse_err(
            origin,
            2,
            format!("header declares {} parameters, layout has {}", header.param_count, flow.params().len()),
        ));
    }
    if header.norms.len() != flow.norms().len() {
        return Err(parse_err(origin, 2, "wrong number of block normalizations"));
    }
    for (norm, (mean, std)) in flow.norms_mut().iter_mut().zip(&header.norms) {
        if mean.len() != header.dim || std.len() != header.dim {
            return Err(parse_err(origin, 2, "normalization statistics have the wrong length"));
        }
        norm.mean = mean.iter().map(|s| parse_value(s, origin, 2)).collect::<Result<_>>()?;
        norm.std = std.iter().map(|s| parse_value(s, origin, 2)).collect::<Result<_>>()?;
        if norm.std.iter().any(|&s| !(s > F::zero())) {
            return Err(parse_err(origin, 2, "normalization std must be positive"));
        }
    }
    flow.gamma = header.gamma;
    flow.penalty_points = header.penalty_points;

    let mut values = Vec::with_capacity(header.param_count);
    for (k, l) in lines.enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        values.push(parse_value(l, origin, k + 3)?);
    }
    if values.len() != header.param_count {
        return Err(parse_err(
            origin,
            header.param_count + 3,
            format!("expected {} parameters, found {}", header.param_count, values.len()),
        ));
    }
    let params = ParamVector::from_values(flow.params().layout().clone(), values)?;
    flow.set_params(params)?;
    Ok(flow)
}

pub fn save_flow<F: Scalar>(flow: &FlowModel<F>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(flow)).map_err(|e| Error::io(path, e))
}

pub fn load_flow<F: Scalar>(path: &Path) -> Result<FlowModel<F>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, &path.display().to_string())
}
