//! Steady solutions of the forced KSE: residual and Jacobian, damped Newton,
//! parameter continuation and linear stability.
//!
//! All operators act on grid values and are assembled from the same
//! spectral building blocks as the time stepper, so a converged equilibrium
//! is a fixed point of the integrator up to round-off.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{GridConfig, RealField, SpectralField, Stepper};
use crate::symmetry::{shift, FourierStateVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    /// Target Euclidean norm of the residual on the grid.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra iterations after reaching `tol`, taken while they still reduce the residual.
    pub polish: usize,
    /// Number of eigenvalues kept on each solution.
    pub n_eigs: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            polish: 3,
            n_eigs: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub grid: GridConfig,
    pub u: RealField,
    pub f: RealField,
    pub residual_norm: f64,
    /// Newton iterations needed to reach the tolerance (polishing excluded).
    pub iterations: usize,
    /// Sorted by descending real part.
    pub leading_eigs: Vec<Complex64>,
}

impl Equilibrium {
    pub fn length(&self) -> f64 {
        self.grid.length
    }

    pub fn max_real_eig(&self) -> f64 {
        self.leading_eigs.first().map_or(f64::NAN, |e| e.re)
    }
}

/// Sequence of converged solutions along a parameter path.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationRun {
    pub params: Vec<f64>,
    pub solutions: Vec<Equilibrium>,
    /// Largest `|du| / |dp|` (L2) between consecutive solutions.
    pub continuity: f64,
    /// Number of step halvings needed along the way.
    pub halvings: usize,
}

impl ContinuationRun {
    fn single(p: f64, eq: Equilibrium) -> Self {
        Self {
            params: vec![p],
            solutions: vec![eq],
            continuity: 0.0,
            halvings: 0,
        }
    }

    fn push(&mut self, p: f64, eq: Equilibrium) {
        let last_p = *self.params.last().unwrap();
        let last_u = &self.solutions.last().unwrap().u;
        let dp = (p - last_p).abs();
        if dp > 0.0 {
            self.continuity = self.continuity.max(eq.u.rms_distance(last_u) / dp);
        }
        self.params.push(p);
        self.solutions.push(eq);
    }

    pub fn terminal(&self) -> &Equilibrium {
        self.solutions.last().unwrap()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Steady-state operator `R(u) = -u u_x - u_xx - u_xxxx + f` on one grid.
#[derive(Debug, Clone)]
pub struct SteadyOperator {
    stepper: Stepper,
    /// Grid matrix of the linear part `-d_xx - d_xxxx`.
    lin: DMatrix<f64>,
    /// Grid matrix of `d_x` (masked like the nonlinear term).
    deriv: DMatrix<f64>,
}

impl SteadyOperator {
    pub fn new(grid: GridConfig) -> Result<Self> {
        let stepper = Stepper::new(grid)?;
        let n = grid.n_points;
        let fourier = stepper.fourier();
        let mut lin = DMatrix::zeros(n, n);
        let mut deriv = DMatrix::zeros(n, n);
        // Half the nonlinear term of (e_j)^2 = e_j recovers -d_x e_j with the
        // stepper's Nyquist and dealiasing treatment.
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let spec = fourier.to_spectral(&RealField(e))?;
            let nl = stepper.nonlinear_term(&spec);
            let dcol = fourier.from_spectral(&SpectralField(nl.0.iter().map(|c| -2.0 * c).collect()));
            let lspec = SpectralField(spec.0.iter().zip(stepper.linear_symbol()).map(|(c, l)| c * l).collect());
            let lcol = fourier.from_spectral(&lspec);
            for i in 0..n {
                deriv[(i, j)] = dcol.0[i];
                lin[(i, j)] = lcol.0[i];
            }
        }
        Ok(Self { stepper, lin, deriv })
    }

    pub fn grid(&self) -> &GridConfig {
        self.stepper.grid()
    }

    pub fn stepper(&self) -> &Stepper {
        &self.stepper
    }

    fn check(&self, u: &RealField) -> Result<()> {
        let n = self.grid().n_points;
        if u.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn residual(&self, u: &RealField, f: &RealField) -> Result<RealField> {
        self.check(u)?;
        self.check(f)?;
        let fourier = self.stepper.fourier();
        let spec = fourier.to_spectral(u)?;
        let mut rhs = self.stepper.nonlinear_term(&spec);
        for ((r, c), l) in rhs.0.iter_mut().zip(&spec.0).zip(self.stepper.linear_symbol()) {
            *r += c * l;
        }
        Ok(fourier.from_spectral(&rhs).add(f))
    }

    /// `J = lin - D diag(u)`, the derivative of the conservative form `-(u^2/2)_x`.
    pub fn jacobian(&self, u: &RealField) -> DMatrix<f64> {
        let mut j = self.lin.clone();
        for c in 0..u.len() {
            for r in 0..u.len() {
                j[(r, c)] -= self.deriv[(r, c)] * u.0[c];
            }
        }
        j
    }

    /// `u_x`, the generator of translations.
    pub fn tangent(&self, u: &RealField) -> RealField {
        let v = &self.deriv * DVector::from_column_slice(&u.0);
        RealField(v.iter().copied().collect())
    }

    /// Eigenvalues of `J(u)` with the largest real parts, in descending order.
    pub fn leading_eigenvalues(&self, u: &RealField, count: usize) -> Vec<Complex64> {
        let mut eigs: Vec<Complex64> = self
            .jacobian(u)
            .complex_eigenvalues()
            .iter()
            .map(|c| Complex64::new(c.re, c.im))
            .collect();
        eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
        eigs.truncate(count);
        eigs
    }

    /// Newton direction. The mean is fixed through a rank-one term; for
    /// unforced problems the translation direction is removed by bordering
    /// the system with the tangent. Forced problems use a truncated SVD.
    fn newton_step(&self, u: &RealField, r: &RealField, unforced: bool) -> Result<Vec<f64>> {
        let n = u.len();
        let mut m = self.jacobian(u);
        m.add_scalar_mut(1.0 / n as f64);
        let t = self.tangent(u);
        let t_norm = norm2(&t.0);
        let bordered = unforced && t_norm > 1e-8;
        let size = if bordered { n + 1 } else { n };
        let mut a = DMatrix::zeros(size, size);
        a.view_mut((0, 0), (n, n)).copy_from(&m);
        let mut b = DVector::zeros(size);
        for i in 0..n {
            b[i] = -r.0[i];
        }
        if bordered {
            for i in 0..n {
                a[(i, n)] = t.0[i] / t_norm;
                a[(n, i)] = t.0[i] / t_norm;
            }
        }
        let x = if bordered {
            a.lu().solve(&b).ok_or(Error::SingularJacobian)?
        } else {
            // Minimum-norm step: a forced problem started exactly on an
            // unforced equilibrium has a numerically null translation mode.
            let svd = a.svd(true, true);
            let cutoff = 1e-13 * svd.singular_values.max();
            svd.solve(&b, cutoff).map_err(|_| Error::SingularJacobian)?
        };
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularJacobian);
        }
        Ok(x.iter().take(n).copied().collect())
    }

    /// Damped Newton iteration for `R(u) = 0`.
    pub fn newton(&self, guess: &RealField, f: &RealField, cfg: &NewtonConfig) -> Result<Equilibrium> {
        self.check(guess)?;
        self.check(f)?;
        if !guess.is_finite() || !f.is_finite() {
            return Err(Error::Config("non-finite Newton guess or forcing".into()));
        }
        if f.mean().abs() > 1e-12 * f.max_abs().max(1.0) {
            return Err(Error::Config(format!(
                "forcing has mean {:e}; steady solutions require zero-mean forcing",
                f.mean()
            )));
        }
        let unforced = f.max_abs() == 0.0;
        let mut u = guess.clone();
        let mut res = self.residual(&u, f)?;
        let mut norm = norm2(&res.0);
        let mut iterations = 0;
        let mut polished = 0;
        loop {
            let converged = norm <= cfg.tol;
            if converged && polished >= cfg.polish {
                break;
            }
            if !converged && iterations >= cfg.max_iter {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: norm,
                });
            }
            let step = match self.newton_step(&u, &res, unforced) {
                Ok(s) => s,
                Err(_) if converged => break,
                Err(e) => return Err(e),
            };
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..16 {
                let trial = RealField(u.0.iter().zip(&step).map(|(a, d)| a + lambda * d).collect());
                let trial_res = self.residual(&trial, f)?;
                let trial_norm = norm2(&trial_res.0);
                if trial_norm.is_finite() && trial_norm < norm {
                    accepted = Some((trial, trial_res, trial_norm));
                    break;
                }
                if converged {
                    break;
                }
                lambda *= 0.5;
            }
            match accepted {
                Some((trial, trial_res, trial_norm)) => {
                    u = trial;
                    res = trial_res;
                    norm = trial_norm;
                    if converged {
                        polished += 1;
                    } else {
                        iterations += 1;
                    }
                }
                None if converged => break,
                None => {
                    return Err(Error::NoConvergence {
                        iterations,
                        residual: norm,
                    })
                }
            }
        }
        Ok(Equilibrium {
            grid: *self.grid(),
            leading_eigs: self.leading_eigenvalues(&u, cfg.n_eigs),
            u,
            f: f.clone(),
            residual_norm: norm,
            iterations,
        })
    }

    /// Translate an unforced equilibrium `u` to a phase from which a
    /// solution branch under small forcing `f` emanates: the component of
    /// `f` along the adjoint translation mode must vanish there. Returns
    /// `None` if no such phase exists.
    pub fn align_to_forcing(&self, u: &RealField, f: &RealField) -> Result<Option<RealField>> {
        self.check(u)?;
        self.check(f)?;
        let n = u.len();
        let mut m = self.jacobian(u);
        m.add_scalar_mut(1.0 / n as f64);
        let svd = m.svd(true, false);
        let left = svd.u.ok_or(Error::SingularJacobian)?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty spectrum");
        let mut psi: Vec<f64> = left.column(imin).iter().copied().collect();
        let mean = psi.iter().sum::<f64>() / n as f64;
        psi.iter_mut().for_each(|p| *p -= mean);
        let psi = RealField(psi);
        let fourier = self.stepper.fourier();
        let shifted = |field: &RealField, theta: f64| -> Result<RealField> {
            let v = FourierStateVector::from(&fourier.to_spectral(field)?);
            Ok(fourier.from_spectral(&SpectralField::from(&shift(theta, &v))))
        };
        let g = |theta: f64| -> Result<f64> {
            let p = shifted(&psi, theta)?;
            Ok(p.0.iter().zip(&f.0).map(|(a, b)| a * b).sum())
        };
        let samples = 720;
        let two_pi = 2.0 * std::f64::consts::PI;
        let thetas: Vec<f64> = (0..=samples)
            .map(|i| -std::f64::consts::PI + two_pi * i as f64 / samples as f64)
            .collect();
        let values: Vec<f64> = thetas.iter().map(|&t| g(t)).collect::<Result<_>>()?;
        let mut best: Option<f64> = None;
        for i in 0..samples {
            let (a, b) = (values[i], values[i + 1]);
            if a == 0.0 || a.signum() != b.signum() {
                let (mut lo, mut hi, mut glo) = (thetas[i], thetas[i + 1], a);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let gm = g(mid)?;
                    if gm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if gm.signum() == glo.signum() {
                        lo = mid;
                        glo = gm;
                    } else {
                        hi = mid;
                    }
                }
                let root = 0.5 * (lo + hi);
                if best.is_none_or(|b: f64| root.abs() < b.abs()) {
                    best = Some(root);
                }
            }
        }
        best.map(|theta| shifted(u, theta)).transpose()
    }

    /// Continue `eq` along `s f` for `s` from 1 down to 0 in `steps` equal steps.
    pub fn continue_forcing(&self, eq: &Equilibrium, steps: usize, cfg: &NewtonConfig) -> Result<ContinuationRun> {
        let mut run = ContinuationRun::single(1.0, eq.clone());
        if eq.f.max_abs() == 0.0 {
            return Ok(run);
        }
        if steps == 0 {
            return Err(Error::Config("continuation needs at least one step".into()));
        }
        let base = eq.f.clone();
        let solve = |p: f64, guess: &RealField| self.newton(guess, &base.scaled(p), cfg);
        follow(&mut run, steps, 1.0, 0.0, solve)?;
        Ok(run)
    }

    /// Continue an unforced equilibrium in the domain length from its own
    /// `L` to `l_end`. Grid values are kept, so the Fourier coefficients are
    /// reinterpreted on the new domain.
    pub fn continue_domain(eq: &Equilibrium, l_end: f64, steps: usize, cfg: &NewtonConfig) -> Result<ContinuationRun> {
        if eq.f.max_abs() != 0.0 {
            return Err(Error::Config(
                "domain continuation starts from an unforced equilibrium".into(),
            ));
        }
        let l_start = eq.length();
        let mut run = ContinuationRun::single(l_start, eq.clone());
        if l_start == l_end {
            return Ok(run);
        }
        if steps == 0 {
            return Err(Error::Config("continuation needs at least one step".into()));
        }
        let zero = RealField::zeros(eq.u.len());
        let solve = |l: f64, guess: &RealField| {
            let grid = GridConfig { length: l, ..eq.grid };
            SteadyOperator::new(grid)?.newton(guess, &zero, cfg)
        };
        follow(&mut run, steps, l_start, l_end, solve)?;
        Ok(run)
    }
}

/// March a parameter from `p0` to `p1` in `steps` equal steps, halving a
/// failing step up to five times before giving up.
fn follow(
    run: &mut ContinuationRun,
    steps: usize,
    p0: f64,
    p1: f64,
    solve: impl Fn(f64, &RealField) -> Result<Equilibrium>,
) -> Result<()> {
    const MAX_HALVINGS: usize = 5;
    let mut p = p0;
    let mut u = run.terminal().u.clone();
    for j in 1..=steps {
        let target = if j == steps {
            p1
        } else {
            p0 + (p1 - p0) * j as f64 / steps as f64
        };
        let mut h = target - p;
        let mut halvings = 0;
        while p != target {
            let next = if (target - (p + h)) * h.signum() <= 0.0 {
                target
            } else {
                p + h
            };
            match solve(next, &u) {
                Ok(eq) => {
                    u = eq.u.clone();
                    run.push(next, eq);
                    p = next;
                }
                Err(e) if e.is_numeric() => {
                    halvings += 1;
                    run.halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(Error::BranchLost(next));
                    }
                    h *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}

/// Grid states of an unforced trajectory at which `|u_t|` has a local
/// minimum, best first. Good Newton guesses for equilibria.
pub fn recurrence_seeds(
    op: &SteadyOperator,
    u0: &SpectralField,
    duration: f64,
    sample_every: f64,
    count: usize,
) -> Result<Vec<RealField>> {
    let grid = op.grid();
    let per_sample = grid.steps_in(sample_every)?;
    let n_samples = (duration / sample_every).floor() as usize;
    let zero = RealField::zeros(grid.n_points);
    let fourier = op.stepper().fourier();
    let mut state = u0.clone();
    let mut samples: Vec<(f64, RealField)> = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        state = op.stepper().advance_unforced(&state, per_sample)?;
        let u = fourier.from_spectral(&state);
        let rate = norm2(&op.residual(&u, &zero)?.0);
        samples.push((rate, u));
    }
    let mut minima: Vec<(f64, RealField)> = (1..samples.len().saturating_sub(1))
        .filter(|&i| samples[i].0 <= samples[i - 1].0 && samples[i].0 <= samples[i + 1].0)
        .map(|i| samples[i].clone())
        .collect();
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(minima.into_iter().take(count).map(|(_, u)| u).collect())
}

/// Single-harmonic guesses `A sin(2 pi k x / L)` and `A cos(...)` for
/// `k = 1..=max_k`. Near-recurrences of chaotic trajectories rarely visit
/// the lowest-dissipation equilibrium, while these guesses reach it directly.
pub fn harmonic_seeds(grid: &GridConfig, max_k: usize, amplitudes: &[f64]) -> Vec<RealField> {
    let mut seeds = Vec::new();
    for k in 1..=max_k {
        let q = grid.wavenumber(k);
        for &amp in amplitudes {
            seeds.push(RealField::from_fn(grid, |x| amp * (q * x).sin()));
            seeds.push(RealField::from_fn(grid, |x| amp * (q * x).cos()));
        }
    }
    seeds
}

/// Newton from each seed; returns the distinct nontrivial unforced
/// equilibria (compared through translation- and reflection-invariant
/// quantities), ordered by increasing dissipation.
pub fn distinct_equilibria(op: &SteadyOperator, seeds: &[RealField], cfg: &NewtonConfig) -> Vec<Equilibrium> {
    let zero = RealField::zeros(op.grid().n_points);
    let fourier = op.stepper().fourier();
    let invariants = |u: &RealField| {
        let s = fourier.to_spectral(u).expect("grid-sized field");
        (fourier.dissipation_spectral(&s), fourier.energy_spectral(&s))
    };
    let mut found: Vec<(f64, f64, Equilibrium)> = Vec::new();
    for seed in seeds {
        let Ok(eq) = op.newton(seed, &zero, cfg) else { continue };
        if eq.u.max_abs() < 1e-3 {
            continue;
        }
        let (d, e) = invariants(&eq.u);
        let same = |&(d2, e2, _): &(f64, f64, Equilibrium)| {
            (d - d2).abs() <= 1e-7 * d.abs().max(1e-12) && (e - e2).abs() <= 1e-7 * e.abs().max(1e-12)
        };
        if !found.iter().any(same) {
            found.push((d, e, eq));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    found.into_iter().map(|(_, _, eq)| eq).collect()
}

/// L2 distance between `a` and the closest translate of `b`.
pub fn distance_modulo_translation(op: &SteadyOperator, a: &RealField, b: &RealField) -> Result<f64> {
    let fourier = op.stepper().fourier();
    let vb = FourierStateVector::from(&fourier.to_spectral(b)?);
    let dist = |theta: f64| -> f64 {
        let shifted = fourier.from_spectral(&SpectralField::from(&shift(theta, &vb)));
        a.rms_distance(&shifted)
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    let samples = 1024;
    let h = two_pi / samples as f64;
    let (mut best_theta, mut best) = (0.0, dist(0.0));
    for i in 1..samples {
        let theta = i as f64 * h;
        let d = dist(theta);
        if d < best {
            best = d;
            best_theta = theta;
        }
    }
    // Golden-section refinement inside the bracketing cell.
    let (mut lo, mut hi) = (best_theta - h, best_theta + h);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut d1, mut d2) = (dist(x1), dist(x2));
    for _ in 0..100 {
        if d1 < d2 {
            hi = x2;
            x2 = x1;
            d2 = d1;
            x1 = hi - ratio * (hi - lo);
            d1 = dist(x1);
        } else {
            lo = x1;
            x1 = x2;
            d1 = d2;
            x2 = lo + ratio * (hi - lo);
            d2 = dist(x2);
        }
    }
    Ok(best.min(d1).min(d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op22() -> SteadyOperator {
        SteadyOperator::new(GridConfig::default()).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, grid: &GridConfig, amp: f64) -> RealField {
        let spec = crate::spectral::smooth_random_state(grid, rng, amp, 8);
        crate::spectral::Fourier::new(*grid).unwrap().from_spectral(&spec)
    }

    #[test]
    fn zero_state_is_an_unforced_equilibrium() {
        let op = op22();
        let zero = RealField::zeros(64);
        assert_eq!(norm2(&op.residual(&zero, &zero).unwrap().0), 0.0);
        let eq = op.newton(&zero, &zero, &NewtonConfig::default()).unwrap();
        assert_eq!(eq.iterations, 0);
        assert_eq!(eq.u, zero);
    }

    #[test]
    fn zero_state_spectrum() {
        let op = op22();
        let eigs = op.leading_eigenvalues(&RealField::zeros(64), 7);
        let q = |k: f64| 2.0 * std::f64::consts::PI * k / 22.0;
        let lam = |k: f64| q(k).powi(2) - q(k).powi(4);
        let expected = [lam(2.0), lam(2.0), lam(3.0), lam(3.0), lam(1.0), lam(1.0), 0.0];
        for (e, x) in eigs.iter().zip(expected) {
            assert!((e.re - x).abs() < 1e-10 && e.im.abs() < 1e-10, "{e} vs {x}");
        }
        assert!((lam(2.0) - 0.21982).abs() < 1e-5);
        assert!((lam(3.0) - 0.19520).abs() < 1e-5);
        assert!((lam(1.0) - 0.07491).abs() < 1e-5);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let op = op22();
        let grid = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = random_field(&mut rng, &grid, 1.2);
        let f = random_field(&mut rng, &grid, 0.3);
        let v = random_field(&mut rng, &grid, 1.0);
        let jv = &op.jacobian(&u) * DVector::from_column_slice(&v.0);
        let eps = 1e-6;
        let rp = op.residual(&u.add(&v.scaled(eps)), &f).unwrap();
        let rm = op.residual(&u.sub(&v.scaled(eps)), &f).unwrap();
        let fd: Vec<f64> = rp.0.iter().zip(&rm.0).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let diff: Vec<f64> = fd.iter().zip(jv.iter()).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) / norm2(&fd) < 1e-6, "{}", norm2(&diff) / norm2(&fd));
    }

    #[test]
    fn tangent_is_a_null_vector_at_equilibria_only() {
        let op = op22();
        let grid = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_field(&mut rng, &grid, 1.0);
        let jt = &op.jacobian(&u) * DVector::from_column_slice(&op.tangent(&u).0);
        assert!(jt.norm() > 1e-3);
    }

    #[test]
    fn eigenvalues_come_in_conjugate_pairs() {
        let op = op22();
        let grid = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_field(&mut rng, &grid, 1.0);
        let eigs = op.leading_eigenvalues(&u, 64);
        for e in &eigs {
            if e.im.abs() > 1e-9 {
                assert!(eigs.iter().any(|o| (o - e.conj()).norm() < 1e-8 * e.norm().max(1.0)));
            }
        }
        assert!(eigs.windows(2).all(|w| w[0].re >= w[1].re));
    }

    #[test]
    fn forced_solve_from_small_forcing() {
        // Small zero-mean forcing around the trivial state.
        let op = op22();
        let grid = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut f = random_field(&mut rng, &grid, 0.01);
        let m = f.mean();
        f.0.iter_mut().for_each(|v| *v -= m);
        let eq = op.newton(&RealField::zeros(64), &f, &NewtonConfig::default()).unwrap();
        assert!(eq.residual_norm <= 1e-10);
        assert!(norm2(&op.residual(&eq.u, &f).unwrap().0) <= 1e-10);
        let run = op.continue_forcing(&eq, 4, &NewtonConfig::default()).unwrap();
        assert_eq!(run.params, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        assert!(run.terminal().u.max_abs() < 1e-10);
        assert!(run.continuity.is_finite());
    }

    #[test]
    fn nonzero_mean_forcing_is_rejected() {
        let op = op22();
        let f = RealField(vec![0.1; 64]);
        assert!(matches!(
            op.newton(&RealField::zeros(64), &f, &NewtonConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identity_continuations() {
        let op = op22();
        let zero = RealField::zeros(64);
        let eq = op.newton(&zero, &zero, &NewtonConfig::default()).unwrap();
        assert_eq!(
            op.continue_forcing(&eq, 5, &NewtonConfig::default())
                .unwrap()
                .solutions
                .len(),
            1
        );
        let run = SteadyOperator::continue_domain(&eq, 22.0, 5, &NewtonConfig::default()).unwrap();
        assert_eq!(run.params, vec![22.0]);
    }

    #[test]
    fn translation_distance_recovers_shifted_copies() {
        let op = op22();
        let grid = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u = random_field(&mut rng, &grid, 1.0);
        let fourier = op.stepper().fourier();
        let theta = rng.random_range(0.0..6.0);
        let v = FourierStateVector::from(&fourier.to_spectral(&u).unwrap());
        let moved = fourier.from_spectral(&SpectralField::from(&shift(theta, &v)));
        assert!(distance_modulo_translation(&op, &u, &moved).unwrap() < 1e-9);
        assert!(distance_modulo_translation(&op, &u, &moved.scaled(0.5)).unwrap() > 1e-2);
    }
}
