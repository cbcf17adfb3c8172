//! Fourier collocation of the forced Kuramoto–Sivashinsky equation
//!
//! ```text
//! u_t = -u u_x - u_xx - u_xxxx + f(x)
//! ```
//!
//! on a periodic domain of length `L`. Spectral coefficients are one-sided
//! (`k = 0..=n/2`) and normalized so that `F_0` is the spatial mean, i.e.
//! `u(x_j) = sum_k F_k exp(2 pi i k x_j / L)` over the two-sided spectrum.
//!
//! Time integration is the three-stage low-storage IMEX Runge–Kutta scheme of
//! Spalart, Moser & Rogers: the linear terms are treated with per-stage
//! Crank–Nicolson-type diagonal solves and the nonlinear and forcing terms
//! with explicit RK3 weights.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Any state with `max |u|` above this is reported as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

// Explicit weights (gamma, zeta) and implicit weights (alpha, beta) per stage.
const RK_GAMMA: [f64; 3] = [8.0 / 15.0, 5.0 / 12.0, 3.0 / 4.0];
const RK_ZETA: [f64; 3] = [0.0, -17.0 / 60.0, -5.0 / 12.0];
const RK_ALPHA: [f64; 3] = [29.0 / 96.0, -3.0 / 40.0, 1.0 / 6.0];
const RK_BETA: [f64; 3] = [37.0 / 160.0, 5.0 / 24.0, 1.0 / 6.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Domain length `L`.
    pub length: f64,
    /// Number of collocation points.
    pub n_points: usize,
    /// Time step.
    pub dt: f64,
    /// Apply the 2/3-rule to the nonlinear term.
    #[serde(default)]
    pub dealias: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            length: 22.0,
            n_points: 64,
            dt: 0.05,
            dealias: false,
        }
    }
}

impl GridConfig {
    pub fn new(length: f64, n_points: usize, dt: f64) -> Result<Self> {
        let grid = Self {
            length,
            n_points,
            dt,
            dealias: false,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 16 || !self.n_points.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "n_points must be even and >= 16, got {}",
                self.n_points
            )));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Config(format!("length must be positive, got {}", self.length)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    /// Number of one-sided modes, `n/2 + 1`.
    pub fn n_modes(&self) -> usize {
        self.n_points / 2 + 1
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_points as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn wavenumber(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.length
    }

    /// Number of dt steps in `duration`, or an error if it is not an integer multiple.
    pub fn steps_in(&self, duration: f64) -> Result<usize> {
        let ratio = duration / self.dt;
        let steps = ratio.round();
        if steps < 0.0 || (ratio - steps).abs() > 1e-9 * ratio.abs().max(1.0) {
            return Err(Error::Config(format!(
                "duration {duration} is not an integer multiple of dt = {}",
                self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// Grid values of a field, `u(x_j)` at `x_j = j L / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealField(pub Vec<f64>);

impl RealField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn from_fn(grid: &GridConfig, f: impl Fn(f64) -> f64) -> Self {
        Self((0..grid.n_points).map(|j| f(grid.x(j))).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Root-mean-square distance, the discrete L2 norm on the periodic domain.
    pub fn rms_distance(&self, other: &RealField) -> f64 {
        let n = self.0.len() as f64;
        (self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
    }

    pub fn scaled(&self, s: f64) -> RealField {
        RealField(self.0.iter().map(|v| v * s).collect())
    }

    pub fn add(&self, other: &RealField) -> RealField {
        RealField(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &RealField) -> RealField {
        RealField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// One-sided Fourier coefficients `F_k`, `k = 0..=n/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField(pub Vec<Complex64>);

impl SpectralField {
    pub fn zeros(n_modes: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n_modes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Upper bound on `max |u|` from the triangle inequality.
    pub fn sup_bound(&self) -> f64 {
        let n = self.0.len();
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| if k == 0 || k == n - 1 { c.norm() } else { 2.0 * c.norm() })
            .sum()
    }
}

/// Mean square `<u^2>` of the real field with one-sided coefficients `f` (Parseval).
pub fn mean_square(f: &[Complex64]) -> f64 {
    mean_product(f, f)
}

/// Spatial average `<u v>` from one-sided coefficients (Parseval).
pub fn mean_product(a: &[Complex64], b: &[Complex64]) -> f64 {
    let last = a.len() - 1;
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (x, y))| {
            let p = x.re * y.re + x.im * y.im;
            if k == 0 || k == last {
                p
            } else {
                2.0 * p
            }
        })
        .sum()
}

/// Forward/inverse real transform pair for one grid.
#[derive(Clone)]
pub struct Fourier {
    grid: GridConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fourier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fourier").field("grid", &self.grid).finish()
    }
}

impl Fourier {
    pub fn new(grid: GridConfig) -> Result<Self> {
        grid.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            grid,
            forward: planner.plan_fft_forward(grid.n_points),
            inverse: planner.plan_fft_inverse(grid.n_points),
        })
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn to_spectral(&self, u: &RealField) -> Result<SpectralField> {
        let n = self.grid.n_points;
        if u.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: u.len(),
            });
        }
        Ok(SpectralField(self.forward_raw(&u.0)))
    }

    /// Inverse transform. Imaginary parts of `F_0` and `F_{n/2}` are ignored.
    pub fn from_spectral(&self, f: &SpectralField) -> RealField {
        RealField(self.inverse_raw(&f.0))
    }

    pub(crate) fn forward_raw(&self, u: &[f64]) -> Vec<Complex64> {
        let n = self.grid.n_points;
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let scale = 1.0 / n as f64;
        let mut out: Vec<Complex64> = buf[..=n / 2].iter().map(|c| c * scale).collect();
        out[0].im = 0.0;
        out[n / 2].im = 0.0;
        out
    }

    pub(crate) fn inverse_raw(&self, f: &[Complex64]) -> Vec<f64> {
        let n = self.grid.n_points;
        let half = n / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(f[0].re, 0.0);
        for k in 1..half {
            buf[k] = f[k];
            buf[n - k] = f[k].conj();
        }
        buf[half] = Complex64::new(f[half].re, 0.0);
        self.inverse.process(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Spectral multiplier of `d^order/dx^order` for mode `k`. The Nyquist
    /// mode has no odd derivative on the grid.
    pub fn derivative_symbol(&self, k: usize, order: u32) -> Complex64 {
        let half = self.grid.n_points / 2;
        if k == half && order % 2 == 1 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(0.0, self.grid.wavenumber(k)).powu(order)
    }

    pub fn derivative(&self, f: &SpectralField, order: u32) -> SpectralField {
        SpectralField(
            f.0.iter()
                .enumerate()
                .map(|(k, c)| c * self.derivative_symbol(k, order))
                .collect(),
        )
    }

    /// `D = <u_xx^2>`.
    pub fn dissipation(&self, u: &RealField) -> Result<f64> {
        Ok(self.dissipation_spectral(&self.to_spectral(u)?))
    }

    /// `P_f = <u_x^2> + <u f>`.
    pub fn power_input(&self, u: &RealField, f: &RealField) -> Result<f64> {
        Ok(self.power_input_spectral(&self.to_spectral(u)?, &self.to_spectral(f)?))
    }

    /// `E = <u^2 / 2>`.
    pub fn energy(&self, u: &RealField) -> Result<f64> {
        Ok(0.5 * mean_square(&self.to_spectral(u)?.0))
    }

    pub fn dissipation_spectral(&self, f: &SpectralField) -> f64 {
        mean_square(&self.derivative(f, 2).0)
    }

    pub fn power_input_spectral(&self, f: &SpectralField, forcing: &SpectralField) -> f64 {
        mean_square(&self.derivative(f, 1).0) + mean_product(&f.0, &forcing.0)
    }

    pub fn energy_spectral(&self, f: &SpectralField) -> f64 {
        0.5 * mean_square(&f.0)
    }
}

/// Precomputed IMEX stepper for one grid.
#[derive(Debug, Clone)]
pub struct Stepper {
    fourier: Fourier,
    linear_symbol: Vec<f64>,
    implicit_inv: [Vec<f64>; 3],
    explicit_lin: [Vec<f64>; 3],
    dealias_mask: Option<Vec<f64>>,
}

impl Stepper {
    pub fn new(grid: GridConfig) -> Result<Self> {
        let fourier = Fourier::new(grid)?;
        let linear_symbol: Vec<f64> = (0..grid.n_modes())
            .map(|k| {
                let q = grid.wavenumber(k);
                q * q - q.powi(4)
            })
            .collect();
        let dt = grid.dt;
        let implicit_inv = std::array::from_fn(|i| {
            linear_symbol
                .iter()
                .map(|l| 1.0 / (1.0 - dt * RK_BETA[i] * l))
                .collect()
        });
        let explicit_lin = std::array::from_fn(|i| linear_symbol.iter().map(|l| 1.0 + dt * RK_ALPHA[i] * l).collect());
        let dealias_mask = grid.dealias.then(|| {
            let cutoff = grid.n_points as f64 / 3.0;
            (0..grid.n_modes())
                .map(|k| if (k as f64) < cutoff { 1.0 } else { 0.0 })
                .collect()
        });
        Ok(Self {
            fourier,
            linear_symbol,
            implicit_inv,
            explicit_lin,
            dealias_mask,
        })
    }

    pub fn grid(&self) -> &GridConfig {
        self.fourier.grid()
    }

    pub fn fourier(&self) -> &Fourier {
        &self.fourier
    }

    /// `lambda_k = q^2 - q^4`.
    pub fn linear_symbol(&self) -> &[f64] {
        &self.linear_symbol
    }

    /// Transform of `-u u_x`, formed as `-(u^2/2)_x` with the product taken on the grid.
    pub fn nonlinear_term(&self, f: &SpectralField) -> SpectralField {
        let u = self.fourier.inverse_raw(&f.0);
        let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
        let mut w = self.fourier.forward_raw(&sq);
        for (k, c) in w.iter_mut().enumerate() {
            *c *= -0.5 * self.fourier.derivative_symbol(k, 1);
        }
        if let Some(mask) = &self.dealias_mask {
            for (c, m) in w.iter_mut().zip(mask) {
                *c *= m;
            }
        }
        SpectralField(w)
    }

    /// Advance one `dt` with the forcing held constant.
    pub fn step(&self, f: &SpectralField, forcing: &RealField) -> Result<SpectralField> {
        let forcing = self.fourier.to_spectral(forcing)?;
        self.step_spectral(f, &forcing)
    }

    /// As [`Stepper::step`] with the forcing already transformed.
    pub fn step_spectral(&self, f: &SpectralField, forcing: &SpectralField) -> Result<SpectralField> {
        let m = self.grid().n_modes();
        if f.len() != m || forcing.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: if f.len() != m { f.len() } else { forcing.len() },
            });
        }
        let dt = self.grid().dt;
        let mut state = f.0.clone();
        let mut prev_rhs: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); m];
        for stage in 0..3 {
            let mut rhs = self.nonlinear_term(&SpectralField(state.clone())).0;
            for (r, g) in rhs.iter_mut().zip(&forcing.0) {
                *r += g;
            }
            for k in 0..m {
                let explicit = state[k] * self.explicit_lin[stage][k]
                    + rhs[k] * (dt * RK_GAMMA[stage])
                    + prev_rhs[k] * (dt * RK_ZETA[stage]);
                state[k] = explicit * self.implicit_inv[stage][k];
            }
            prev_rhs = rhs;
        }
        let out = SpectralField(state);
        check_bounded(&self.fourier, &out)?;
        Ok(out)
    }

    /// Integrate a piecewise-constant forcing schedule of `(forcing, hold)`
    /// windows. Returns the state at every `dt`, starting with `f0`.
    pub fn evolve(&self, f0: &SpectralField, schedule: &[(RealField, f64)]) -> Result<Vec<SpectralField>> {
        let mut out = vec![f0.clone()];
        let mut state = f0.clone();
        let mut t = 0.0;
        for (forcing, hold) in schedule {
            let steps = self.grid().steps_in(*hold)?;
            let fh = self.fourier.to_spectral(forcing)?;
            for _ in 0..steps {
                state = self.step_spectral(&state, &fh).map_err(|e| at_time(e, t))?;
                t += self.grid().dt;
                out.push(state.clone());
            }
        }
        Ok(out)
    }

    /// Unforced integration for `steps` steps, returning only the final state.
    pub fn advance_unforced(&self, f0: &SpectralField, steps: usize) -> Result<SpectralField> {
        let zero = SpectralField::zeros(self.grid().n_modes());
        let mut state = f0.clone();
        for i in 0..steps {
            state = self
                .step_spectral(&state, &zero)
                .map_err(|e| at_time(e, i as f64 * self.grid().dt))?;
        }
        Ok(state)
    }
}

fn check_bounded(fourier: &Fourier, f: &SpectralField) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::Diverged {
            time: f64::NAN,
            max_abs: f64::INFINITY,
        });
    }
    if f.sup_bound() > DIVERGENCE_LIMIT {
        let max_abs = fourier.from_spectral(f).max_abs();
        if max_abs > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                time: f64::NAN,
                max_abs,
            });
        }
    }
    Ok(())
}

/// Stamp the elapsed time onto a divergence error.
pub(crate) fn at_time(e: Error, time: f64) -> Error {
    match e {
        Error::Diverged { max_abs, .. } => Error::Diverged { time, max_abs },
        other => other,
    }
}

/// Zero-mean random field with Gaussian coefficients on modes `1..=max_mode`,
/// scaled to the given RMS amplitude.
pub fn smooth_random_state<R: Rng + ?Sized>(
    grid: &GridConfig,
    rng: &mut R,
    rms: f64,
    max_mode: usize,
) -> SpectralField {
    let mut f = SpectralField::zeros(grid.n_modes());
    let top = max_mode.min(grid.n_points / 2 - 1);
    for c in f.0.iter_mut().take(top + 1).skip(1) {
        *c = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    }
    let norm = mean_square(&f.0).sqrt();
    if norm > 0.0 {
        for c in f.0.iter_mut() {
            *c *= rms / norm;
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid22() -> GridConfig {
        GridConfig::default()
    }

    #[test]
    fn constant_field_has_only_mean_mode() {
        let fourier = Fourier::new(grid22()).unwrap();
        let f = fourier.to_spectral(&RealField(vec![1.7; 64])).unwrap();
        assert_relative_eq!(f.0[0].re, 1.7, epsilon = 1e-14);
        assert!(f.0.iter().skip(1).all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn single_cosine_has_half_amplitude() {
        let grid = grid22();
        let fourier = Fourier::new(grid).unwrap();
        let u = RealField::from_fn(&grid, |x| (2.0 * PI * x / grid.length).cos());
        let f = fourier.to_spectral(&u).unwrap();
        assert_relative_eq!(f.0[1].re, 0.5, epsilon = 1e-14);
        assert!(f.0[1].im.abs() < 1e-14);
        for (k, c) in f.0.iter().enumerate() {
            if k != 1 {
                assert!(c.norm() < 1e-14, "mode {k} = {c}");
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let grid = grid22();
        let fourier = Fourier::new(grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = RealField((0..64).map(|_| rng.random_range(-2.0..2.0)).collect());
        let back = fourier.from_spectral(&fourier.to_spectral(&u).unwrap());
        for (a, b) in u.0.iter().zip(&back.0) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn length_mismatch_is_reported() {
        let fourier = Fourier::new(grid22()).unwrap();
        let err = fourier.to_spectral(&RealField::zeros(10)).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 64, got: 10 }));
    }

    #[test]
    fn invalid_grid_is_rejected() {
        assert!(GridConfig::new(22.0, 15, 0.05).is_err());
        assert!(GridConfig::new(22.0, 8, 0.05).is_err());
        assert!(GridConfig::new(-1.0, 64, 0.05).is_err());
        assert!(GridConfig::new(22.0, 64, 0.0).is_err());
    }

    #[test]
    fn nonlinear_term_of_zero_and_constant_vanishes() {
        let grid = grid22();
        let stepper = Stepper::new(grid).unwrap();
        let zero = SpectralField::zeros(grid.n_modes());
        assert!(stepper.nonlinear_term(&zero).0.iter().all(|c| c.norm() == 0.0));
        let fourier = stepper.fourier();
        let c = fourier.to_spectral(&RealField(vec![0.8; 64])).unwrap();
        assert!(stepper.nonlinear_term(&c).0.iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn nonlinear_term_of_sine_matches_product_identity() {
        // -u u_x = -(q/2) sin(2 q x) for u = sin(q x); compare with a brute-force grid product.
        let grid = grid22();
        let stepper = Stepper::new(grid).unwrap();
        let fourier = stepper.fourier();
        let q = grid.wavenumber(1);
        let u = RealField::from_fn(&grid, |x| (q * x).sin());
        let n = stepper.nonlinear_term(&fourier.to_spectral(&u).unwrap());
        let brute = RealField::from_fn(&grid, |x| -(q * x).sin() * q * (q * x).cos());
        let analytic = RealField::from_fn(&grid, |x| -(q / 2.0) * (2.0 * q * x).sin());
        let got = fourier.from_spectral(&n);
        for j in 0..64 {
            assert!((got.0[j] - brute.0[j]).abs() < 1e-14);
            assert!((got.0[j] - analytic.0[j]).abs() < 1e-14);
        }
        for (k, c) in n.0.iter().enumerate() {
            if k != 2 {
                assert!(c.norm() < 1e-14, "mode {k} populated: {c}");
            }
        }
    }

    #[test]
    fn dealias_mask_removes_high_modes() {
        let mut grid = grid22();
        grid.dealias = true;
        let stepper = Stepper::new(grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = smooth_random_state(&grid, &mut rng, 1.0, 20);
        let n = stepper.nonlinear_term(&f);
        for (k, c) in n.0.iter().enumerate() {
            if k as f64 >= 64.0 / 3.0 {
                assert_eq!(c.norm(), 0.0);
            }
        }
    }

    #[test]
    fn linear_symbol_signs() {
        let stepper = Stepper::new(grid22()).unwrap();
        let lam = stepper.linear_symbol();
        assert_eq!(lam[0], 0.0);
        for k in 1..lam.len() {
            let q = stepper.grid().wavenumber(k);
            if q > 1.0 {
                assert!(lam[k] < 0.0);
            } else {
                assert!(lam[k] > 0.0);
            }
        }
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let grid = grid22();
        let stepper = Stepper::new(grid).unwrap();
        let zero = SpectralField::zeros(grid.n_modes());
        let next = stepper.step(&zero, &RealField::zeros(64)).unwrap();
        assert!(next.0.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn high_mode_decays_like_linear_solution() {
        // A tiny amplitude keeps the nonlinear term at round-off, so the
        // mode obeys a' = lambda a; compare with exp(lambda t) at t = 1.
        let grid = grid22();
        let stepper = Stepper::new(grid).unwrap();
        let k = 5;
        let lam = stepper.linear_symbol()[k];
        assert!(lam < 0.0);
        let mut f = SpectralField::zeros(grid.n_modes());
        f.0[k] = Complex64::new(1e-8, 0.0);
        let mut prev = f.0[k].norm();
        for _ in 0..20 {
            f = stepper.advance_unforced(&f, 1).unwrap();
            let amp = f.0[k].norm();
            assert!(amp < prev);
            prev = amp;
        }
        let exact = 1e-8 * lam.exp();
        assert!((prev - exact).abs() / exact < 1e-3, "{prev} vs {exact}");
    }

    #[test]
    fn diagnostics_of_zero_field() {
        let fourier = Fourier::new(grid22()).unwrap();
        let z = RealField::zeros(64);
        assert_eq!(fourier.dissipation(&z).unwrap(), 0.0);
        assert_eq!(fourier.power_input(&z, &z).unwrap(), 0.0);
        assert_eq!(fourier.energy(&z).unwrap(), 0.0);
    }

    #[test]
    fn diagnostics_of_single_sine() {
        let grid = grid22();
        let fourier = Fourier::new(grid).unwrap();
        let q = 2.0 * PI / 22.0;
        let u = RealField::from_fn(&grid, |x| (q * x).sin());
        let z = RealField::zeros(64);
        let d = fourier.dissipation(&u).unwrap();
        let p = fourier.power_input(&u, &z).unwrap();
        assert_relative_eq!(d, 0.5 * q.powi(4), max_relative = 1e-12);
        assert_relative_eq!(d, 3.3266e-3, max_relative = 1e-4);
        assert_relative_eq!(p, 0.5 * q.powi(2), max_relative = 1e-12);
        assert_relative_eq!(p, 4.0783e-2, max_relative = 1e-4);
        assert_relative_eq!(fourier.energy(&u).unwrap(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn power_input_includes_forcing_correlation() {
        let grid = grid22();
        let fourier = Fourier::new(grid).unwrap();
        let u = RealField::from_fn(&grid, |x| 1.0 + x.cos().powi(2));
        let f = RealField::from_fn(&grid, |x| (0.3 * x).sin() - 0.2);
        let quad: f64 = u.0.iter().zip(&f.0).map(|(a, b)| a * b).sum::<f64>() / 64.0;
        let ux = fourier.from_spectral(&fourier.derivative(&fourier.to_spectral(&u).unwrap(), 1));
        let ux2: f64 = ux.0.iter().map(|v| v * v).sum::<f64>() / 64.0;
        assert_relative_eq!(fourier.power_input(&u, &f).unwrap(), ux2 + quad, max_relative = 1e-12);
    }

    #[test]
    fn evolve_schedules() {
        let grid = grid22();
        let stepper = Stepper::new(grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f0 = smooth_random_state(&grid, &mut rng, 1.0, 4);
        assert_eq!(stepper.evolve(&f0, &[]).unwrap(), vec![f0.clone()]);

        let zero = RealField::zeros(64);
        let traj = stepper.evolve(&f0, &[(zero.clone(), 0.25)]).unwrap();
        assert_eq!(traj.len(), 6);
        assert_eq!(traj[5], stepper.advance_unforced(&f0, 5).unwrap());

        assert!(stepper.evolve(&f0, &[(zero, 0.26)]).is_err());
    }

    #[test]
    fn mean_is_preserved_without_mean_forcing() {
        let grid = grid22();
        let stepper = Stepper::new(grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = smooth_random_state(&grid, &mut rng, 1.0, 6);
        f.0[0] = Complex64::new(0.37, 0.0);
        let forcing = RealField::from_fn(&grid, |x| (2.0 * PI * 3.0 * x / 22.0).sin());
        let fh = stepper.fourier().to_spectral(&forcing).unwrap();
        for _ in 0..400 {
            f = stepper.step_spectral(&f, &fh).unwrap();
        }
        assert!((f.0[0].re - 0.37).abs() < 1e-13);
    }

    #[test]
    fn divergence_is_reported() {
        let grid = grid22();
        let stepper = Stepper::new(grid).unwrap();
        let mut f = SpectralField::zeros(grid.n_modes());
        f.0[0] = Complex64::new(999.0, 0.0);
        let forcing = RealField(vec![1000.0; 64]);
        let err = stepper.step(&f, &forcing).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }
}
