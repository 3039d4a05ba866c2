use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SliceKind {
    Weight,
    Bias,
    /// Per-feature log-scale of an affine normalization.
    LogScale,
    /// Per-feature shift of an affine normalization.
    Shift,
}

/// One contiguous block of a flat parameter vector, viewed as a matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlice {
    pub layer: usize,
    pub kind: SliceKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    slices: Vec<ParamSlice>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its index in the layout.
    pub fn push(&mut self, layer: usize, kind: SliceKind, rows: usize, cols: usize) -> usize {
        self.slices.push(ParamSlice {
            layer,
            kind,
            offset: self.total,
            rows,
            cols,
        });
        self.total += rows * cols;
        self.slices.len() - 1
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    /// Maps a flat index back to `(slice index, row, col)`.
    pub fn locate(&self, flat: usize) -> Option<(usize, usize, usize)> {
        let s = self.slices.iter().position(|s| s.range().contains(&flat))?;
        let local = flat - self.slices[s].offset;
        let cols = self.slices[s].cols;
        Some((s, local / cols, local % cols))
    }

    pub fn flat_index(&self, slice: usize, row: usize, col: usize) -> Option<usize> {
        let s = self.slices.get(slice)?;
        (row < s.rows && col < s.cols).then(|| s.offset + row * s.cols + col)
    }
}

/// Flat parameter storage plus the layout that gives it structure. Gradients
/// use the same type so that they line up index for index with parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<F> {
    values: Vec<F>,
    layout: Arc<ParamLayout>,
}

impl<F: Scalar> ParamVector<F> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        ParamVector {
            values: vec![F::zero(); layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<F>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::shape("ParamVector", layout.total_len(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn slice(&self, index: usize) -> &[F] {
        &self.values[self.layout.slices()[index].range()]
    }

    pub fn slice_mut(&mut self, index: usize) -> &mut [F] {
        let r = self.layout.slices()[index].range();
        &mut self.values[r]
    }

    pub fn slice_mat(&self, index: usize) -> Mat<F> {
        let s = &self.layout.slices()[index];
        Mat::from_vec(s.rows, s.cols, self.slice(index).to_vec()).expect("layout consistent")
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &Self, c: F) {
        debug_assert!(self.same_layout(other));
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + c * b;
        }
    }

    pub fn norm(&self) -> F {
        self.values.iter().map(|&v| v * v).sum::<F>().sqrt()
    }

    pub fn cast<G: Scalar>(&self) -> ParamVector<G> {
        ParamVector {
            values: self.values.iter().map(|v| G::of(v.to_f64_lossy())).collect(),
            layout: self.layout.clone(),
        }
    }
}
