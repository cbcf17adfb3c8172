//! Symmetry operators of the controlled KSE and the discrete slice reduction.
//!
//! The state is handled as an interleaved real vector
//! `[b_0, c_0, b_1, c_1, ...]` with `F_k = b_k + i c_k` over all `n/2 + 1`
//! one-sided modes. With `N` equidistant jets the symmetry group of the
//! controlled system is generated by the quarter-domain shift (for `N = 4`)
//! and the reflection `u(x) -> -u(-x)`: `2N` elements in total.
//!
//! Conventions:
//! * `shift(theta)` multiplies `F_k` by `exp(-i k theta)`, which moves the
//!   field to the right by `dx = L theta / 2 pi`, i.e. `u(x) -> u(x - dx)`.
//! * `discrete_shift(theta_n)` multiplies by `exp(+i k theta_n)`.
//! * Jet `j` sits at `x = j L / N`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{RealField, SpectralField};

/// Below this `|F_1|` the phase of the first mode is treated as undefined.
pub const DEGENERATE_PHASE_THRESHOLD: f64 = 1e-12;

/// Interleaved real Fourier vector `[b_0, c_0, b_1, c_1, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierStateVector(pub Vec<f64>);

impl FourierStateVector {
    pub fn n_modes(&self) -> usize {
        self.0.len() / 2
    }

    pub fn mode(&self, k: usize) -> Complex64 {
        Complex64::new(self.0[2 * k], self.0[2 * k + 1])
    }

    fn set_mode(&mut self, k: usize, c: Complex64) {
        self.0[2 * k] = c.re;
        self.0[2 * k + 1] = c.im;
    }

    fn map_modes(&self, f: impl Fn(usize, Complex64) -> Complex64) -> Self {
        let mut out = self.clone();
        for k in 0..self.n_modes() {
            out.set_mode(k, f(k, self.mode(k)));
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl From<&SpectralField> for FourierStateVector {
    fn from(f: &SpectralField) -> Self {
        Self(f.0.iter().flat_map(|c| [c.re, c.im]).collect())
    }
}

impl From<&FourierStateVector> for SpectralField {
    /// The imaginary parts of the mean and Nyquist modes are dropped; they
    /// have no representation on the real grid.
    fn from(v: &FourierStateVector) -> Self {
        let m = v.n_modes();
        let mut f: Vec<Complex64> = (0..m).map(|k| v.mode(k)).collect();
        f[0].im = 0.0;
        f[m - 1].im = 0.0;
        SpectralField(f)
    }
}

/// `exp(i * 2 pi * j / n)`, exact on the quarter turns.
fn root_of_unity(j: i64, n: usize) -> Complex64 {
    let n = n as i64;
    let j = j.rem_euclid(n);
    if (4 * j) % n == 0 {
        match 4 * j / n {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    } else {
        Complex64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64)
    }
}

/// `theta_1 = atan2(b_1, c_1)`, in `(-pi, pi]`.
pub fn phase_angle(f: &FourierStateVector) -> Result<f64> {
    let f1 = f.mode(1);
    if f1.norm() < DEGENERATE_PHASE_THRESHOLD {
        return Err(Error::DegeneratePhase(f1.norm()));
    }
    Ok(f1.re.atan2(f1.im))
}

/// Continuous translation `F_k -> exp(-i k theta) F_k`.
pub fn shift(theta: f64, f: &FourierStateVector) -> FourierStateVector {
    f.map_modes(|k, c| c * Complex64::from_polar(1.0, -(k as f64) * theta))
}

/// Reflection `u(x) -> -u(-x)`: `[b_k, c_k] -> [-b_k, c_k]`.
pub fn reflect(f: &FourierStateVector) -> FourierStateVector {
    let mut out = f.clone();
    for k in 0..f.n_modes() {
        out.0[2 * k] = -out.0[2 * k];
    }
    out
}

/// Index `m` with `theta_N = 2 pi m / N = (2 pi / N) ceil(theta_1 / (2 pi / N))`.
pub fn discrete_phase_index(theta1: f64, n: usize) -> i64 {
    let sector = 2.0 * PI / n as f64;
    (theta1 / sector).ceil() as i64
}

/// `theta_1` rounded up to the nearest multiple of `2 pi / N`.
pub fn discrete_phase(theta1: f64, n: usize) -> f64 {
    2.0 * PI / n as f64 * discrete_phase_index(theta1, n) as f64
}

/// Discrete translation `F_k -> exp(+i k theta_N) F_k` with `theta_N = 2 pi m / N`.
pub fn discrete_shift(m: i64, n: usize, f: &FourierStateVector) -> FourierStateVector {
    f.map_modes(|k, c| c * root_of_unity(k as i64 * m, n))
}

/// Reflection within the discrete-translation-reduced subspace:
/// `sigma_N(F) = exp(2 pi i k / N) sigma(F)`.
pub fn reflect_reduced(f: &FourierStateVector, n: usize) -> FourierStateVector {
    discrete_shift(1, n, &reflect(f))
}

/// Closed-form interleaved pattern of `sigma_4`:
/// `[-b0, c0, -c1, -b1, b2, -c2, c3, b3, ...]`, repeating with period 4 in `k`.
pub fn reflect_reduced4(f: &FourierStateVector) -> FourierStateVector {
    let mut out = f.clone();
    for k in 0..f.n_modes() {
        let (b, c) = (f.0[2 * k], f.0[2 * k + 1]);
        let (nb, nc) = match k % 4 {
            0 => (-b, c),
            1 => (-c, -b),
            2 => (b, -c),
            _ => (c, b),
        };
        out.0[2 * k] = nb;
        out.0[2 * k + 1] = nc;
    }
    out
}

/// Which group element reduced a state: `theta_N = 2 pi index / N`, and
/// whether `sigma_N` was applied (`rho < 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryTag {
    pub index: usize,
    pub reflected: bool,
    pub n: usize,
}

impl SymmetryTag {
    pub fn identity(n: usize) -> Self {
        Self {
            index: 0,
            reflected: false,
            n,
        }
    }

    pub fn theta(&self) -> f64 {
        2.0 * PI * self.index as f64 / self.n as f64
    }

    pub fn rho(&self) -> i8 {
        if self.reflected {
            -1
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub state: FourierStateVector,
    pub tag: SymmetryTag,
    /// `|F_1|` fell below [`DEGENERATE_PHASE_THRESHOLD`]; `theta_N` was taken as 0.
    pub degenerate: bool,
}

/// Discrete translation reduction followed by reflection collapse.
pub fn reduce(f: &FourierStateVector, n: usize) -> ReducedState {
    let (m, degenerate) = match phase_angle(f) {
        Ok(theta1) => (discrete_phase_index(theta1, n), false),
        Err(_) => (0, true),
    };
    let shifted = discrete_shift(m, n, f);
    // sign(0) = +1: no reflection on ties.
    let reflected = shifted.0[5] < 0.0;
    let state = if reflected {
        if n == 4 {
            reflect_reduced4(&shifted)
        } else {
            reflect_reduced(&shifted, n)
        }
    } else {
        shifted
    };
    ReducedState {
        state,
        tag: SymmetryTag {
            index: m.rem_euclid(n as i64) as usize,
            reflected,
            n,
        },
        degenerate,
    }
}

/// Map an action chosen for the reduced state back to the frame of the true
/// state: reflect if `rho < 0`, then rotate by `index` jet positions.
///
/// The forcing field of the result equals the inverse reduction applied to
/// the forcing field of `reduced`.
pub fn restore_action(reduced: &[f64], tag: &SymmetryTag) -> Result<Vec<f64>> {
    let n = tag.n;
    if reduced.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: reduced.len(),
        });
    }
    let reflected: Vec<f64> = if tag.reflected {
        // sigma_N acts on jet amplitudes as a_j -> -a_{(-j-1) mod N}.
        (0..n).map(|j| -reduced[(2 * n - j - 1) % n]).collect()
    } else {
        reduced.to_vec()
    };
    Ok((0..n).map(|j| reflected[(j + n - tag.index) % n]).collect())
}

/// Element of the `2N`-element symmetry group of the controlled system:
/// `g = T_shift o R^reflect` where `T_m` moves the field right by `m L / N`
/// and `R` is `u(x) -> -u(-x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupElement {
    pub shift: usize,
    pub reflect: bool,
    pub n: usize,
}

impl GroupElement {
    pub fn all(n: usize) -> impl Iterator<Item = GroupElement> {
        (0..2 * n).map(move |i| GroupElement {
            shift: i % n,
            reflect: i >= n,
            n,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.shift == 0 && !self.reflect
    }

    pub fn apply_state(&self, f: &FourierStateVector) -> FourierStateVector {
        let r = if self.reflect { reflect(f) } else { f.clone() };
        discrete_shift(-(self.shift as i64), self.n, &r)
    }

    /// Exact action on grid values; requires `N` to divide the grid size.
    pub fn apply_field(&self, u: &RealField) -> RealField {
        let n = u.len();
        let step = n / self.n * self.shift;
        let reflected: Vec<f64> = if self.reflect {
            (0..n).map(|j| -u.0[(n - j) % n]).collect()
        } else {
            u.0.clone()
        };
        RealField((0..n).map(|j| reflected[(j + n - step) % n]).collect())
    }

    /// Action on jet amplitudes, consistent with [`GroupElement::apply_field`]
    /// on the forcing field.
    pub fn apply_action(&self, a: &[f64]) -> Vec<f64> {
        let n = self.n;
        let reflected: Vec<f64> = if self.reflect {
            (0..n).map(|j| -a[(n - j) % n]).collect()
        } else {
            a.to_vec()
        };
        (0..n).map(|j| reflected[(j + n - self.shift) % n]).collect()
    }
}
