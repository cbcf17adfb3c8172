//! Fully connected networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector (per layer: row-major `out x in`
//! weights, then biases) so that the optimizer, target blending and
//! checkpoints all operate on plain slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, cols: usize) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
            n += 1;
        }
        Ok(Self { rows: n, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `[self | other]` row by row.
    pub fn hconcat(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }
}

/// `c = alpha * a b + beta * c` on strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(m == 0 || n == 0 || c.len() >= (m - 1) * rsc + n);
    // SAFETY: the asserts above bound every index matrixmultiply touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Linear => {}
        }
    }

    /// Multiply `grad` by the derivative, expressed through the activation output `y`.
    fn backprop(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => grad.iter_mut().zip(y).for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.iter_mut().zip(y).for_each(|(g, &y)| *g *= 1.0 - y * y),
            Activation::Linear => {}
        }
    }
}

/// Multilayer perceptron: ReLU hidden layers and a configurable output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    output: Activation,
    params: Vec<f64>,
}

/// Post-activation outputs of every layer (index 0 is the input).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Hidden layers uniform in `+-1/sqrt(fan_in)`, last layer in `+-final_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, final_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n_params = Self::count_params(sizes);
        let mut params = Vec::with_capacity(n_params);
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = if l + 1 == n_layers {
                final_scale
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self {
            sizes: sizes.to_vec(),
            output,
            params,
        }
    }

    /// Network with every parameter equal to zero.
    pub fn zeros(sizes: &[usize], output: Activation) -> Self {
        Self {
            sizes: sizes.to_vec(),
            output,
            params: vec![0.0; Self::count_params(sizes)],
        }
    }

    fn count_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let w_len = self.sizes[l] * self.sizes[l + 1];
        (start, start + w_len)
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 2 == self.sizes.len() {
            self.output
        } else {
            Activation::Relu
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.cols
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &Matrix) -> Matrix {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w_off, b_off) = self.layer_offsets(l);
        let w = &self.params[w_off..b_off];
        let b = &self.params[b_off..b_off + n_out];
        let mut z = Matrix::zeros(x.rows, n_out);
        for i in 0..x.rows {
            z.data[i * n_out..(i + 1) * n_out].copy_from_slice(b);
        }
        // z += x w^T
        gemm(
            x.rows,
            n_in,
            n_out,
            &x.data,
            (n_in, 1),
            w,
            (1, n_in),
            1.0,
            &mut z.data,
            n_out,
        );
        self.activation(l).apply(&mut z.data);
        z
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in 0..self.sizes.len() - 1 {
            a = self.layer_forward(l, &a);
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix {
            rows: 1,
            cols: x.len(),
            data: x.to_vec(),
        };
        Ok(self.forward_batch(&m)?.data)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = vec![x.clone()];
        for l in 0..self.sizes.len() - 1 {
            let next = self.layer_forward(l, activations.last().unwrap());
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Backpropagate `grad_out` (gradient of a scalar objective w.r.t. the
    /// network output). Parameter gradients are accumulated into `grads`
    /// when given; the gradient w.r.t. the input is returned when asked for.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &Matrix,
        mut grads: Option<&mut [f64]>,
        want_input_grad: bool,
    ) -> Option<Matrix> {
        let n_layers = self.sizes.len() - 1;
        let batch = grad_out.rows;
        let mut delta = grad_out.clone();
        self.output.backprop(&cache.activations[n_layers].data, &mut delta.data);
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let input = &cache.activations[l];
            if let Some(g) = grads.as_deref_mut() {
                // dW += delta^T x
                gemm(
                    n_out,
                    batch,
                    n_in,
                    &delta.data,
                    (1, n_out),
                    &input.data,
                    (n_in, 1),
                    1.0,
                    &mut g[w_off..b_off],
                    n_in,
                );
                let gb = &mut g[b_off..b_off + n_out];
                for i in 0..batch {
                    for (gb, d) in gb.iter_mut().zip(delta.row(i)) {
                        *gb += d;
                    }
                }
            }
            if l == 0 && !want_input_grad {
                return None;
            }
            // d input = delta w
            let mut prev = Matrix::zeros(batch, n_in);
            gemm(
                batch,
                n_out,
                n_in,
                &delta.data,
                (n_out, 1),
                &self.params[w_off..b_off],
                (n_in, 1),
                0.0,
                &mut prev.data,
                n_in,
            );
            if l == 0 {
                return Some(prev);
            }
            Activation::Relu.backprop(&input.data, &mut prev.data);
            delta = prev;
        }
        unreachable!("loop returns at the input layer")
    }

    /// `self <- rate * source + (1 - rate) * self`.
    pub fn blend_from(&mut self, source: &Mlp, rate: f64) {
        debug_assert_eq!(self.sizes, source.sizes);
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = rate * s + (1.0 - rate) * *t;
        }
    }

    /// Parameter count matches the layer sizes and all values are finite.
    pub fn check_params(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::ShapeMismatch(format!("invalid layer sizes {:?}", self.sizes)));
        }
        let expected = Self::count_params(&self.sizes);
        if self.params.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "layer sizes {:?} need {expected} parameters, found {}",
                self.sizes,
                self.params.len()
            )));
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.output == other.output
    }
}
