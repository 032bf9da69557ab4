//! Dense 64-bit kernels with hand-written backward passes.
//!
//! Everything the model needs fits in a handful of operations: an affine map,
//! softmax, sigmoid and logsumexp. Each forward function has a matching
//! `*_backward` that takes the upstream gradient and returns the gradient with
//! respect to its inputs. [`grad_check`] compares those analytic gradients to
//! central finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(
                "Tensor2::from_vec",
                format!("{} values for a {rows}x{cols} tensor", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// A single column vector.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(shape(
                "matvec",
                format!("{}x{} times vector of {}", self.rows, self.cols, x.len()),
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(shape(
                "matvec_t",
                format!("({}x{})ᵀ times vector of {}", self.rows, self.cols, y.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(&mut out, yr, self.row(r));
            }
        }
        Ok(out)
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let a = scale * ur;
            if a != 0.0 {
                axpy(self.row_mut(r), a, v);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl Param {
    pub fn new(value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Tensor2::zeros(rows, cols))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `W x + b`
pub fn affine(x: &[f64], w: &Tensor2, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.rows() {
        return Err(shape(
            "affine",
            format!("bias of {} for {} output rows", b.len(), w.rows()),
        ));
    }
    let mut out = w.matvec(x)?;
    axpy(&mut out, 1.0, b);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrad {
    pub x: Vec<f64>,
    pub w: Tensor2,
    pub b: Vec<f64>,
}

pub fn affine_backward(x: &[f64], w: &Tensor2, upstream: &[f64]) -> Result<AffineGrad> {
    if x.len() != w.cols() || upstream.len() != w.rows() {
        return Err(shape(
            "affine_backward",
            format!(
                "x {} / upstream {} against {}x{}",
                x.len(),
                upstream.len(),
                w.rows(),
                w.cols()
            ),
        ));
    }
    let mut dw = Tensor2::zeros(w.rows(), w.cols());
    dw.add_outer(1.0, upstream, x);
    Ok(AffineGrad {
        x: w.matvec_t(upstream)?,
        w: dw,
        b: upstream.to_vec(),
    })
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    let max = max_value(s);
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let exps: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Gradient of softmax given its output `y`: `y ⊙ (g − ⟨y, g⟩)`.
pub fn softmax_backward(y: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner = dot(y, upstream);
    y.iter()
        .zip(upstream)
        .map(|(yi, gi)| yi * (gi - inner))
        .collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient of sigmoid given its output `y`.
pub fn sigmoid_backward(y: f64, upstream: f64) -> f64 {
    upstream * y * (1.0 - y)
}

/// `max(x) + ln Σ exp(x − max(x))`
pub fn logsumexp(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Empty("logsumexp"));
    }
    let max = max_value(x);
    if !max.is_finite() {
        return Err(Error::NonFinite("logsumexp input".into()));
    }
    let total: f64 = x.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + total.ln())
}

/// The gradient of logsumexp is the softmax of its input.
pub fn logsumexp_backward(x: &[f64], upstream: f64) -> Result<Vec<f64>> {
    Ok(softmax(x)?.into_iter().map(|p| p * upstream).collect())
}

/// First index of the maximum.
pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in x.iter().enumerate() {
        match best {
            Some(b) if x[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

fn max_value(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// A scalar function of a fixed list of parameters.
pub trait Objective {
    /// Parameters with stable display names, in a fixed order.
    fn params(&self) -> Vec<(String, &Param)>;

    /// The same parameters, same order, mutably.
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn loss(&mut self) -> Result<f64>;

    /// Evaluates the loss and adds its gradient into every `Param::grad`.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub entries_checked: usize,
    pub max_error: f64,
    /// Name of the parameter holding the worst entry.
    pub worst_param: Option<String>,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

/// Relative error, falling back to absolute error when both sides are tiny.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Compares analytic gradients against `(f(p+h) − f(p−h)) / 2h` for every
/// entry of every parameter.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &mut O,
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(config.step > 0.0) {
        return Err(Error::Config {
            field: "step".into(),
            message: "must be positive".into(),
        });
    }
    for p in objective.params_mut() {
        p.zero_grad();
    }
    let base = objective.loss_and_grad()?;
    if !base.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    let analytic: Vec<(String, Vec<f64>)> = objective
        .params()
        .into_iter()
        .map(|(name, p)| (name, p.grad.data().to_vec()))
        .collect();

    let h = config.step;
    let mut checks = Vec::with_capacity(analytic.len());
    let mut total = 0;
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            entries: grads.len(),
            max_error: 0.0,
            worst_index: 0,
            analytic: grads.first().copied().unwrap_or(0.0),
            numeric: 0.0,
        };
        for (k, &g) in grads.iter().enumerate() {
            let original = objective.params_mut()[pi].value.data()[k];
            objective.params_mut()[pi].value.data_mut()[k] = original + h;
            let plus = objective.loss()?;
            objective.params_mut()[pi].value.data_mut()[k] = original - h;
            let minus = objective.loss()?;
            objective.params_mut()[pi].value.data_mut()[k] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective at {name}[{k}]")));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = gradient_error(g, numeric);
            if err > check.max_error || k == 0 {
                check.max_error = err;
                check.worst_index = k;
                check.analytic = g;
                check.numeric = numeric;
            }
        }
        total += grads.len();
        checks.push(check);
    }

    let worst = checks
        .iter()
        .filter(|c| c.entries > 0)
        .max_by(|a, b| a.max_error.total_cmp(&b.max_error));
    let max_error = worst.map_or(0.0, |c| c.max_error);
    Ok(GradCheckReport {
        step: h,
        tolerance: config.tolerance,
        entries_checked: total,
        max_error,
        worst_param: worst.map(|c| c.name.clone()),
        passed: max_error < config.tolerance,
        params: checks,
    })
}
