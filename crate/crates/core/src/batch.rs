use crate::error::{check_dim, Error, Result};

/// Per-sample gradients of one device's batch.
///
/// Rows are stored contiguously (`len × dim`, row-major). `weights[i]` is the
/// importance correction `p_i / q_i` attached to row `i`; it is exactly 1 for
/// a batch that has not been resampled.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    dim: usize,
    grads: Vec<f64>,
    norms: Vec<f64>,
    weights: Vec<f64>,
    raw_count: usize,
    upsampled: bool,
}

impl GradientBatch {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            grads: Vec::new(),
            norms: Vec::new(),
            weights: Vec::new(),
            raw_count: 0,
            upsampled: false,
        }
    }

    /// Build from a flat row-major buffer of `n × dim` values.
    pub fn from_flat(dim: usize, grads: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("gradient dimension must be positive"));
        }
        if !grads.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                context: "gradient buffer",
                expected: dim * (grads.len() / dim + 1),
                got: grads.len(),
            });
        }
        let mut batch = Self::empty(dim);
        for row in grads.chunks_exact(dim) {
            batch.push(row)?;
        }
        Ok(batch)
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut batch = Self::empty(dim);
        for row in rows {
            batch.push(row.as_ref())?;
        }
        Ok(batch)
    }

    /// Append one freshly acquired gradient (unit weight).
    pub fn push(&mut self, grad: &[f64]) -> Result<()> {
        check_dim("gradient row", self.dim, grad.len())?;
        if self.upsampled {
            return Err(Error::invalid("cannot append to a resampled batch"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("per-sample gradient"));
        }
        self.grads.extend_from_slice(grad);
        self.norms.push(l2_norm(grad));
        self.weights.push(1.0);
        self.raw_count += 1;
        Ok(())
    }

    pub(crate) fn resampled(
        dim: usize,
        grads: Vec<f64>,
        norms: Vec<f64>,
        weights: Vec<f64>,
        raw_count: usize,
    ) -> Self {
        debug_assert_eq!(grads.len(), norms.len() * dim);
        debug_assert_eq!(norms.len(), weights.len());
        Self {
            dim,
            grads,
            norms,
            weights,
            raw_count,
            upsampled: true,
        }
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        &self.grads[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.chunks_exact(self.dim)
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Samples actually acquired before any resampling.
    pub fn raw_count(&self) -> usize {
        self.raw_count
    }

    pub fn is_upsampled(&self) -> bool {
        self.upsampled
    }

    /// `Σ_j w_j g_j / n`. For a batch that was never resampled every weight
    /// is 1 and this is the plain mean, bit for bit.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if self.is_empty() {
            return out;
        }
        for (row, &w) in self.rows().zip(&self.weights) {
            if w == 1.0 {
                for (o, g) in out.iter_mut().zip(row) {
                    *o += g;
                }
            } else {
                for (o, g) in out.iter_mut().zip(row) {
                    *o += w * g;
                }
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Unweighted mean of the rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.rows() {
            for (o, g) in out.iter_mut().zip(row) {
                *o += g;
            }
        }
        let n = self.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
