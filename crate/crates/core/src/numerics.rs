//! Differentiable kernels with hand-written forward and backward passes.
//!
//! Everything here is a pure function of its inputs. Backward functions
//! accumulate into caller-owned gradient buffers so that a mini-batch can
//! sum per-example gradients without extra allocation.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("filter width {width} exceeds {frames} input frames")]
    FilterTooWide { width: usize, frames: usize },
    #[error("filters in one bank must share a width ({first} vs {other})")]
    MixedFilterWidths { first: usize, other: usize },
    #[error("feature map has no rows")]
    EmptyMap,
    #[error("class index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("checked objective returned {0} values, expected a scalar")]
    NonScalarLoss(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Dense row-major matrix of doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(NumericsError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `start..end` as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor2D {
        Tensor2D {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

/// A filter spanning `width` consecutive frames and all `height` feature
/// dimensions. `weights[o * height + i]` multiplies frame offset `o`,
/// dimension `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ConvFilter {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            weights: vec![0.0; width * height],
            bias: 0.0,
        }
    }
}

fn check_bank(input: &Tensor2D, filters: &[ConvFilter]) -> Result<usize> {
    let Some(first) = filters.first() else {
        return Err(NumericsError::InvalidArgument("empty filter bank".into()));
    };
    for f in filters {
        if f.height != input.cols {
            return Err(NumericsError::DimensionMismatch {
                expected: input.cols,
                got: f.height,
            });
        }
        if f.width != first.width {
            return Err(NumericsError::MixedFilterWidths {
                first: first.width,
                other: f.width,
            });
        }
        if f.width == 0 || f.weights.len() != f.width * f.height {
            return Err(NumericsError::InvalidArgument(format!(
                "filter of width {} height {} holds {} weights",
                f.width,
                f.height,
                f.weights.len()
            )));
        }
    }
    if first.width > input.rows {
        return Err(NumericsError::FilterTooWide {
            width: first.width,
            frames: input.rows,
        });
    }
    Ok(first.width)
}

/// Valid (unpadded) convolution of a frames×d input with full-height
/// filters. Output is `(frames - width + 1) × n_filters`.
pub fn conv_valid(input: &Tensor2D, filters: &[ConvFilter]) -> Result<Tensor2D> {
    let width = check_bank(input, filters)?;
    let out_len = input.rows - width + 1;
    let n = filters.len();
    let span = width * input.cols;
    let mut out = Tensor2D::zeros(out_len, n);
    for x in 0..out_len {
        // Consecutive rows are contiguous in memory, so the receptive field
        // is a single slice.
        let field = &input.data[x * input.cols..x * input.cols + span];
        for (j, f) in filters.iter().enumerate() {
            let dot: f64 = field.iter().zip(&f.weights).map(|(a, b)| a * b).sum();
            out.data[x * n + j] = dot + f.bias;
        }
    }
    Ok(out)
}

/// Accumulates filter gradients for [`conv_valid`] into `grads`.
pub fn conv_valid_backward(
    input: &Tensor2D,
    filters: &[ConvFilter],
    grad_out: &Tensor2D,
    grads: &mut [ConvFilter],
) -> Result<()> {
    let width = check_bank(input, filters)?;
    let out_len = input.rows - width + 1;
    if grad_out.rows != out_len || grad_out.cols != filters.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: out_len * filters.len(),
            got: grad_out.data.len(),
        });
    }
    if grads.len() != filters.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: filters.len(),
            got: grads.len(),
        });
    }
    let span = width * input.cols;
    let n = filters.len();
    for x in 0..out_len {
        let field = &input.data[x * input.cols..x * input.cols + span];
        for (j, g) in grads.iter_mut().enumerate() {
            let go = grad_out.data[x * n + j];
            if go == 0.0 {
                continue;
            }
            g.bias += go;
            for (w, a) in g.weights.iter_mut().zip(field) {
                *w += go * a;
            }
        }
    }
    Ok(())
}

/// ReLU followed by non-overlapping max pooling, remembering where each
/// pooled value came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Vec<f64>,
    /// Flat index into the pre-pool map for each output, `None` when the
    /// ReLU floor produced the value.
    pub argmax: Vec<Option<usize>>,
    pub map_rows: usize,
    pub map_cols: usize,
}

/// ReLU then max over consecutive `pool_rows` rows per column; the
/// trailing remainder is dropped. Output is column-major: all pools of
/// column 0, then column 1, and so on.
pub fn relu_maxpool(map: &Tensor2D, pool_rows: usize) -> Result<Vec<f64>> {
    relu_maxpool_indexed(map, pool_rows).map(|p| p.values)
}

pub fn relu_maxpool_indexed(map: &Tensor2D, pool_rows: usize) -> Result<Pooled> {
    if map.rows == 0 {
        return Err(NumericsError::EmptyMap);
    }
    if pool_rows == 0 {
        return Err(NumericsError::InvalidArgument("pool_rows must be >= 1".into()));
    }
    let n_pools = map.rows / pool_rows;
    let mut values = Vec::with_capacity(n_pools * map.cols);
    let mut argmax = Vec::with_capacity(n_pools * map.cols);
    for c in 0..map.cols {
        for p in 0..n_pools {
            let mut best = 0.0;
            let mut at = None;
            for r in p * pool_rows..(p + 1) * pool_rows {
                let v = map.get(r, c);
                if v > best {
                    best = v;
                    at = Some(r * map.cols + c);
                }
            }
            values.push(best);
            argmax.push(at);
        }
    }
    Ok(Pooled {
        values,
        argmax,
        map_rows: map.rows,
        map_cols: map.cols,
    })
}

/// Routes pooled gradients back to the winning map entries.
pub fn relu_maxpool_backward(pooled: &Pooled, grad_out: &[f64]) -> Result<Tensor2D> {
    if grad_out.len() != pooled.values.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: pooled.values.len(),
            got: grad_out.len(),
        });
    }
    let mut grad = Tensor2D::zeros(pooled.map_rows, pooled.map_cols);
    for (g, at) in grad_out.iter().zip(&pooled.argmax) {
        if let Some(i) = at {
            grad.data[*i] += g;
        }
    }
    Ok(grad)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln(max(probs[gold], 1e-12))`. A NaN probability gives a NaN loss.
pub fn cross_entropy(probs: &[f64], gold: usize) -> Result<f64> {
    let p = *probs.get(gold).ok_or(NumericsError::IndexOutOfRange {
        index: gold,
        len: probs.len(),
    })?;
    if p.is_nan() {
        return Ok(f64::NAN);
    }
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(z), gold)` with respect to `z`.
pub fn softmax_cross_entropy_grad(probs: &[f64], gold: usize) -> Result<Vec<f64>> {
    let p_gold = *probs.get(gold).ok_or(NumericsError::IndexOutOfRange {
        index: gold,
        len: probs.len(),
    })?;
    if p_gold < PROB_FLOOR {
        // the floor is flat, so the loss does not move with the logits
        return Ok(vec![0.0; probs.len()]);
    }
    let mut g = probs.to_vec();
    g[gold] -= 1.0;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-entry multipliers for inverted dropout: 0 for dropped entries,
/// `1 / (1 - rate)` for survivors. Eval mode yields all ones.
pub fn dropout_mask<R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumericsError::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

pub fn dropout<R: Rng + ?Sized>(v: &[f64], rate: f64, mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
    let mask = dropout_mask(v.len(), rate, mode, rng)?;
    Ok(v.iter().zip(&mask).map(|(x, m)| x * m).collect())
}

/// Fully connected layer `y = W x + b`, `W` stored out×in row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = Self::zeros(dim, dim);
        for i in 0..dim {
            a.weight[i * dim + i] = 1.0;
        }
        a
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(NumericsError::DimensionMismatch {
                expected: self.in_dim,
                got: x.len(),
            });
        }
        Ok(self
            .weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to `x`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Affine) -> Result<Vec<f64>> {
        if x.len() != self.in_dim || grad_out.len() != self.out_dim {
            return Err(NumericsError::DimensionMismatch {
                expected: self.in_dim + self.out_dim,
                got: x.len() + grad_out.len(),
            });
        }
        let mut gx = vec![0.0; self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grads.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        Ok(gx)
    }
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Backward of elementwise tanh given its output `y`.
pub fn tanh_backward(y: &[f64], grad_out: &[f64]) -> Vec<f64> {
    y.iter().zip(grad_out).map(|(y, g)| g * (1.0 - y * y)).collect()
}

pub const DEFAULT_GRAD_EPS: f64 = 1e-5;

/// Denominator floor for relative errors; gradients smaller than this are
/// compared absolutely.
pub const GRAD_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_relative_error: f64,
    pub worst_parameter_index: Option<usize>,
    pub n_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_ABS_FLOOR)
}

/// Compares `analytic` against central differences of `objective` around
/// `theta`. The objective must return exactly one value.
pub fn grad_check<F>(
    op_name: &str,
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
    mut objective: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(NumericsError::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    if analytic.len() != theta.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: theta.len(),
            got: analytic.len(),
        });
    }
    let scalar = |out: Vec<f64>| -> Result<f64> {
        match out.as_slice() {
            [v] => Ok(*v),
            _ => Err(NumericsError::NonScalarLoss(out.len())),
        }
    };
    let mut probe = theta.to_vec();
    let mut worst = 0.0;
    let mut worst_at = None;
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let up = scalar(objective(&probe))?;
        probe[i] = theta[i] - eps;
        let down = scalar(objective(&probe))?;
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > worst || worst_at.is_none() {
            worst = err;
            worst_at = Some(i);
        }
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_relative_error: worst,
        worst_parameter_index: worst_at,
        n_checked: theta.len(),
    })
}
