//! Linear-quadratic regulation about a steady state of the forced KSE.
//!
//! The state is the vector of grid values. `A` is the Jacobian of the
//! right-hand side at the target and the columns of `B` are the unit-amplitude
//! jet fields, so `x' = A x + B a` is the linearization of the controlled
//! equation about the target.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actuation::{clip, Actuator};
use crate::equilibria::SteadyOperator;
use crate::error::{Error, Result};
use crate::spectral::{at_time, RealField, SpectralField, Stepper};

/// LQR saturation relative to the agent's amplitude limit.
pub const SATURATION_FACTOR: f64 = 10.0;

/// Largest CARE residual (Frobenius norm) accepted from [`solve_care`].
pub const CARE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub target: RealField,
    /// Constant forcing that holds the target steady.
    pub forcing: RealField,
}

impl LinearModel {
    pub fn linearize(
        op: &SteadyOperator,
        actuator: &Actuator,
        target: &RealField,
        forcing: &RealField,
    ) -> Result<Self> {
        let n = op.grid().n_points;
        if target.len() != n || forcing.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: if target.len() != n { target.len() } else { forcing.len() },
            });
        }
        let mut b = DMatrix::zeros(n, actuator.n_jets());
        for j in 0..actuator.n_jets() {
            b.set_column(j, &DVector::from_column_slice(&actuator.basis(j).0));
        }
        Ok(Self {
            a: op.jacobian(target),
            b,
            target: target.clone(),
            forcing: forcing.clone(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// Rank test of `[A - lambda I, B]` at one eigenvalue of `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenCheck {
    pub re: f64,
    pub im: f64,
    pub min_singular_value: f64,
    pub rank: usize,
    pub full_rank: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbhReport {
    pub pass: bool,
    pub tolerance: f64,
    /// Every eigenvalue that was tested, in the order returned by the eigensolver.
    pub checks: Vec<EigenCheck>,
}

impl PbhReport {
    pub fn failing(&self) -> impl Iterator<Item = &EigenCheck> {
        self.checks.iter().filter(|c| !c.full_rank)
    }
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "A is {}x{} and B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.complex_eigenvalues().iter().copied().collect()
}

fn pbh_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: Complex<f64>) -> DMatrix<Complex<f64>> {
    let n = a.nrows();
    DMatrix::from_fn(n, n + b.ncols(), |i, j| {
        if j < n {
            let v = Complex::new(a[(i, j)], 0.0);
            if i == j {
                v - lambda
            } else {
                v
            }
        } else {
            Complex::new(b[(i, j - n)], 0.0)
        }
    })
}

/// Left singular vectors of `[A - lambda I, B]` below the rank tolerance.
/// These are the left eigenvectors of `A` that `B` cannot reach.
fn pbh_test(a: &DMatrix<f64>, b: &DMatrix<f64>, only_unstable: bool) -> (PbhReport, Vec<DVector<Complex<f64>>>) {
    let n = a.nrows();
    let a_scale = a.norm().max(1.0);
    let marginal = n as f64 * f64::EPSILON * a_scale;
    let mut checks = Vec::new();
    let mut null_vectors = Vec::new();
    let mut tolerance: f64 = 0.0;
    for lambda in eigenvalues(a) {
        // Conjugate eigenvalues give conjugate matrices with equal ranks.
        if lambda.im < 0.0 || (only_unstable && lambda.re < -marginal) {
            continue;
        }
        let svd = pbh_matrix(a, b, lambda).svd(true, false);
        let sv = &svd.singular_values;
        let tol = n as f64 * f64::EPSILON * sv.max();
        tolerance = tolerance.max(tol);
        let rank = sv.iter().filter(|&&s| s > tol).count();
        let u = svd.u.expect("left vectors requested");
        for (k, &s) in sv.iter().enumerate() {
            if s <= tol {
                null_vectors.push(u.column(k).into_owned());
            }
        }
        checks.push(EigenCheck {
            re: lambda.re,
            im: lambda.im,
            min_singular_value: sv.min(),
            rank,
            full_rank: rank == n,
        });
    }
    let pass = checks.iter().all(|c| c.full_rank);
    (
        PbhReport {
            pass,
            tolerance,
            checks,
        },
        null_vectors,
    )
}

/// `rank [A - lambda I, B] = n` at every eigenvalue of `A`.
pub fn pbh_controllability(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<PbhReport> {
    check_shapes(a, b)?;
    Ok(pbh_test(a, b, false).0)
}

/// As [`pbh_controllability`] restricted to eigenvalues with `Re lambda >= 0`.
/// Eigenvalues within round-off of the imaginary axis are tested as well.
pub fn pbh_stabilizability(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<PbhReport> {
    check_shapes(a, b)?;
    Ok(pbh_test(a, b, true).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrGain {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LqrGain {
    /// `a = -K (u - target)`.
    pub fn action(&self, deviation: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(deviation);
        (-(&self.k * x)).iter().copied().collect()
    }
}

/// Frobenius norm of `A^T P + P A - P B R^-1 B^T P + Q`.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let g = input_gram(b, r)?;
    Ok((a.transpose() * p + p * a - p * &g * p + q).norm())
}

fn input_gram(b: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("R must be symmetric positive definite".into()))?;
    Ok(b * chol.solve(&b.transpose()))
}

fn max_real_part(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Inverse together with `ln |det|`.
fn inverse_and_log_det(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let lu = m.clone().lu();
    let u = lu.u();
    let log_det = u.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    let inv = lu.try_inverse()?;
    Some((inv, log_det))
}

const SIGN_MAX_ITER: usize = 100;

/// Matrix sign function by the determinant-scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = h.nrows() as f64;
    let mut z = h.clone();
    let mut scale = true;
    for _ in 0..SIGN_MAX_ITER {
        let (inv, log_det) = inverse_and_log_det(&z)
            .ok_or_else(|| Error::NoStabilizingSolution("Hamiltonian has imaginary-axis eigenvalues".into()))?;
        let c = if scale { (-log_det / dim).exp() } else { 1.0 };
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm();
        let size = next.norm();
        z = next;
        if !size.is_finite() {
            break;
        }
        if change <= 1e-2 * size {
            scale = false;
        }
        if change <= 1e-14 * size {
            return Ok(z);
        }
    }
    Err(Error::NoStabilizingSolution("sign iteration did not converge".into()))
}

/// Solve `F^T X + X F + C = 0` for Hurwitz `F` by the sign iteration.
fn solve_lyapunov(f: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows() as f64;
    let mut e = f.clone();
    let mut x = c.clone();
    let mut scale = true;
    for _ in 0..SIGN_MAX_ITER {
        let (inv, log_det) =
            inverse_and_log_det(&e).ok_or_else(|| Error::NoStabilizingSolution("closed loop is singular".into()))?;
        let s = if scale { (-log_det / n).exp() } else { 1.0 };
        let next_e = (&e * s + &inv / s) * 0.5;
        x = (&x * s + inv.transpose() * &x * &inv / s) * 0.5;
        let change = (&next_e - &e).norm();
        let size = next_e.norm();
        e = next_e;
        if change <= 1e-2 * size {
            scale = false;
        }
        if change <= 1e-14 * size {
            return Ok(symmetrize(&(x * 0.5)));
        }
    }
    Err(Error::NoStabilizingSolution(
        "lyapunov iteration did not converge".into(),
    ))
}

/// Stable invariant subspace of the Hamiltonian, read off its sign.
fn care_by_sign(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let w = matrix_sign(&h)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let svd = lhs.svd(true, true);
    let cutoff = 1e-14 * svd.singular_values.max();
    let p = svd
        .solve(&rhs, cutoff)
        .map_err(|e| Error::NoStabilizingSolution(e.to_string()))?;
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NoStabilizingSolution("singular invariant subspace".into()));
    }
    Ok(symmetrize(&p))
}

const KLEINMAN_STEPS: usize = 4;

/// Stabilizing solution of the CARE with `K = R^-1 B^T P`.
///
/// Stabilizability is checked first. The Hamiltonian sign-function solution
/// is polished by Newton–Kleinman steps while they reduce the residual.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<LqrGain> {
    check_shapes(a, b)?;
    let n = a.nrows();
    let m = b.ncols();
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "Q must be {n}x{n} and R {m}x{m}, got {:?} and {:?}",
            q.shape(),
            r.shape()
        )));
    }
    let report = pbh_stabilizability(a, b)?;
    if !report.pass {
        return Err(Error::NotStabilizable(report.failing().count()));
    }
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("R must be symmetric positive definite".into()))?;
    let g = b * chol.solve(&b.transpose());
    let gain_of = |p: &DMatrix<f64>| chol.solve(&(b.transpose() * p));
    let residual_of = |p: &DMatrix<f64>| (a.transpose() * p + p * a - p * &g * p + q).norm();

    let mut p = care_by_sign(a, &g, q)?;
    let mut residual = residual_of(&p);
    for _ in 0..KLEINMAN_STEPS {
        if residual <= 1e-3 * CARE_TOLERANCE {
            break;
        }
        // Newton step in correction form: (A - G P)^T D + D (A - G P) = -Res(P).
        let closed = a - &g * &p;
        if max_real_part(&closed) >= 0.0 {
            break;
        }
        let defect = a.transpose() * &p + &p * a - &p * &g * &p + q;
        let Ok(correction) = solve_lyapunov(&closed, &defect) else {
            break;
        };
        let next = symmetrize(&(&p + correction));
        let next_residual = residual_of(&next);
        if !(next_residual < residual) {
            break;
        }
        p = next;
        residual = next_residual;
    }
    let k = gain_of(&p);
    let closed_max = max_real_part(&(a - b * &k));
    if !(closed_max < 0.0) {
        return Err(Error::NoStabilizingSolution(format!(
            "closed loop has an eigenvalue with real part {closed_max:e}"
        )));
    }
    if !(residual <= CARE_TOLERANCE) {
        return Err(Error::NoStabilizingSolution(format!("riccati residual {residual:e}")));
    }
    Ok(LqrGain {
        k,
        p,
        q: q.clone(),
        r: r.clone(),
    })
}

/// Result of [`solve_care_partial`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLqr {
    pub gain: LqrGain,
    /// Orthonormal basis of the unstable directions no input can reach.
    pub uncontrollable: DMatrix<f64>,
    /// Largest real part of the closed-loop spectrum; non-negative whenever
    /// `uncontrollable` is non-empty.
    pub closed_loop_max_real: f64,
}

/// Best-effort LQR for systems that fail the stabilizability test.
///
/// The left eigenvectors of unstable modes that `B` cannot reach span an
/// invariant subspace of `A^T`. The CARE is solved on its orthogonal
/// complement, which carries a stabilizable quotient system, and the gain is
/// lifted back. The unreachable modes are left to evolve freely.
pub fn solve_care_partial(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<PartialLqr> {
    check_shapes(a, b)?;
    let n = a.nrows();
    let (_, null_vectors) = pbh_test(a, b, true);
    let w = real_basis(n, &null_vectors);
    let rank = w.ncols();
    let v = complement(&w);
    let a_z = v.transpose() * a * &v;
    let b_z = v.transpose() * b;
    let q_z = v.transpose() * q * &v;
    let reduced = solve_care(&a_z, &b_z, &q_z, r)?;
    let k = &reduced.k * v.transpose();
    let p = &v * &reduced.p * v.transpose();
    let closed_loop_max_real = max_real_part(&(a - b * &k));
    debug_assert!(rank == 0 || closed_loop_max_real >= -1e-8);
    Ok(PartialLqr {
        gain: LqrGain {
            k,
            p,
            q: q.clone(),
            r: r.clone(),
        },
        uncontrollable: w,
        closed_loop_max_real,
    })
}

/// Orthonormal real basis of the span of the real and imaginary parts.
fn real_basis(n: usize, vectors: &[DVector<Complex<f64>>]) -> DMatrix<f64> {
    if vectors.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    let mut cols = Vec::with_capacity(2 * vectors.len());
    for v in vectors {
        cols.push(v.map(|c| c.re));
        cols.push(v.map(|c| c.im));
    }
    let m = DMatrix::from_columns(&cols);
    let svd = m.svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let tol = 1e-8 * svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > tol)
        .collect();
    DMatrix::from_fn(n, keep.len(), |i, j| u[(i, keep[j])])
}

/// Orthonormal basis of the orthogonal complement of the columns of `w`.
fn complement(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    if w.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    let projector = DMatrix::<f64>::identity(n, n) - w * w.transpose();
    let eig = projector.symmetric_eigen();
    let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub times: Vec<f64>,
    pub states: Vec<RealField>,
    /// Saturated actions held over the step that follows each recorded state.
    pub actions: Vec<Vec<f64>>,
}

/// Full nonlinear integration with `a = clip(-K (u - target), sat)` refreshed
/// every time step and held constant over it.
///
/// Every `record_every`-th state is kept, starting with `u0`.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_sim(
    stepper: &Stepper,
    model: &LinearModel,
    gain: &LqrGain,
    actuator: &Actuator,
    u0: &RealField,
    t_end: f64,
    sat: f64,
    record_every: usize,
) -> Result<ClosedLoopRun> {
    let grid = *stepper.grid();
    if gain.k.shape() != (actuator.n_jets(), grid.n_points) {
        return Err(Error::ShapeMismatch(format!(
            "gain is {:?}, expected {}x{}",
            gain.k.shape(),
            actuator.n_jets(),
            grid.n_points
        )));
    }
    if !(sat > 0.0) || record_every == 0 {
        return Err(Error::Config("saturation and record interval must be positive".into()));
    }
    let steps = grid.steps_in(t_end)?;
    let fourier = stepper.fourier();
    let mut spec: SpectralField = fourier.to_spectral(u0)?;
    let mut u = u0.clone();
    let mut run = ClosedLoopRun {
        times: Vec::new(),
        states: Vec::new(),
        actions: Vec::new(),
    };
    for i in 0..steps {
        let t = i as f64 * grid.dt;
        let action = clip(&gain.action(&u.sub(&model.target).0), sat);
        if i % record_every == 0 {
            run.times.push(t);
            run.states.push(u.clone());
            run.actions.push(action.clone());
        }
        let forcing = model.forcing.add(&actuator.forcing_field(&action)?);
        spec = stepper.step(&spec, &forcing).map_err(|e| at_time(e, t))?;
        u = fourier.from_spectral(&spec);
    }
    if steps % record_every == 0 {
        run.times.push(steps as f64 * grid.dt);
        run.states.push(u.clone());
        run.actions.push(clip(&gain.action(&u.sub(&model.target).0), sat));
    }
    Ok(run)
}
