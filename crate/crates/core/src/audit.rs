//! Numerical audits shared by the test suites and the `audit-symmetry`
//! command: symmetry-operator identities, equivariance of the wrapped
//! policy and of the solver, energy balance and temporal convergence.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actuation::{clip, Actuator};
use crate::env::{rollout, ControlEnv};
use crate::error::{Error, Result};
use crate::rl::Mlp;
use crate::rng::{stream_rng, Stream};
use crate::spectral::{Fourier, GridConfig, RealField, SpectralField, Stepper};
use crate::symmetry::{
    discrete_shift, phase_angle, reduce, reflect, reflect_reduced, reflect_reduced4, restore_action, shift,
    FourierStateVector, GroupElement,
};

/// Largest deviation from each group identity over a set of random states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryAudit {
    pub states: usize,
    /// `sigma(sigma(F)) = F`.
    pub reflection_involution: f64,
    /// `sigma_4(sigma_4(F)) = F`.
    pub reduced_reflection_involution: f64,
    /// `tau(theta) tau(-theta) F = F`.
    pub shift_inverse: f64,
    /// `tau_N^N F = F`.
    pub discrete_shift_order: f64,
    /// Closed-form `sigma_4` pattern against `exp(2 pi i k / 4) sigma(F)`.
    pub reduced_reflection_pattern: f64,
}

impl SymmetryAudit {
    pub fn max_error(&self) -> f64 {
        [
            self.reflection_involution,
            self.reduced_reflection_involution,
            self.shift_inverse,
            self.discrete_shift_order,
            self.reduced_reflection_pattern,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Random interleaved state with unit-variance coefficients.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, n_modes: usize) -> FourierStateVector {
    FourierStateVector((0..2 * n_modes).map(|_| rng.sample(StandardNormal)).collect())
}

pub fn symmetry_suite<R: Rng + ?Sized>(rng: &mut R, states: usize, n_modes: usize) -> SymmetryAudit {
    let mut audit = SymmetryAudit {
        states,
        reflection_involution: 0.0,
        reduced_reflection_involution: 0.0,
        shift_inverse: 0.0,
        discrete_shift_order: 0.0,
        reduced_reflection_pattern: 0.0,
    };
    for _ in 0..states {
        let f = random_state(rng, n_modes);
        let theta = rng.random_range(-PI..PI);
        let mut rotated = f.clone();
        for _ in 0..4 {
            rotated = discrete_shift(1, 4, &rotated);
        }
        let max = |a: &mut f64, e: f64| *a = a.max(e);
        max(&mut audit.reflection_involution, reflect(&reflect(&f)).max_abs_diff(&f));
        max(
            &mut audit.reduced_reflection_involution,
            reflect_reduced4(&reflect_reduced4(&f)).max_abs_diff(&f),
        );
        max(
            &mut audit.shift_inverse,
            shift(-theta, &shift(theta, &f)).max_abs_diff(&f),
        );
        max(&mut audit.discrete_shift_order, rotated.max_abs_diff(&f));
        max(
            &mut audit.reduced_reflection_pattern,
            reflect_reduced4(&f).max_abs_diff(&reflect_reduced(&f, 4)),
        );
    }
    audit
}

/// Distance of `f` from the places where the reduction is discontinuous:
/// the sector edges of `theta_1` (as an angle) and the sign change of the
/// reflection indicator, relative to the size of the state.
pub fn reduction_margin(f: &FourierStateVector, n: usize) -> f64 {
    let Ok(theta1) = phase_angle(f) else { return 0.0 };
    let sector = 2.0 * PI / n as f64;
    let frac = theta1 / sector;
    let edge = (frac - frac.round()).abs() * sector;
    let reduced = reduce(f, n);
    let scale = f.0.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    edge.min(reduced.state.0[5].abs() / scale)
}

/// Jet forcing the reduced-mode wrapper produces in state `u`.
pub fn wrapped_forcing(actor: &Mlp, actuator: &Actuator, stepper: &Stepper, u: &RealField) -> Result<RealField> {
    let n = actuator.n_jets();
    let fourier = stepper.fourier();
    let reduced = reduce(&FourierStateVector::from(&fourier.to_spectral(u)?), n);
    let obs = fourier.from_spectral(&SpectralField::from(&reduced.state));
    let a = clip(&actor.forward(obs.as_slice())?, 1.0);
    let phys = clip(&restore_action(&a, &reduced.tag)?, 1.0);
    let limit = actuator.jets().amp_limit;
    actuator.forcing_field(&phys.iter().map(|v| v * limit).collect::<Vec<_>>())
}

/// `max_g max_x |F(g u) - g F(u)|` over the given states and every group element.
pub fn forcing_equivariance(actor: &Mlp, actuator: &Actuator, stepper: &Stepper, states: &[RealField]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for u in states {
        let reference = wrapped_forcing(actor, actuator, stepper, u)?;
        for g in GroupElement::all(actuator.n_jets()) {
            let moved = wrapped_forcing(actor, actuator, stepper, &g.apply_field(u))?;
            let expected = g.apply_field(&reference);
            worst = worst.max(moved.sub(&expected).max_abs());
        }
    }
    Ok(worst)
}

/// `sqrt(int |u - v|^2 dx)` on the periodic grid.
pub fn l2_distance(grid: &GridConfig, u: &RealField, v: &RealField) -> f64 {
    (u.0.iter().zip(&v.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * grid.dx()).sqrt()
}

/// Largest L2 distance, over every recorded `dt` sample and group element,
/// between the controlled trajectory from `g u0` and `g` applied to the
/// trajectory from `u0`. The environment must be noise-free.
pub fn trajectory_equivariance(env: &mut ControlEnv, actor: &Mlp, u0: &RealField) -> Result<f64> {
    if env.config().obs_noise != 0.0 || env.config().act_noise != 0.0 {
        return Err(Error::Config(
            "trajectory equivariance needs a noise-free environment".into(),
        ));
    }
    let grid = *env.grid();
    let fourier = Fourier::new(grid)?;
    // Never consulted by a noise-free environment.
    let mut unused = stream_rng(0, Stream::EnvNoise);
    let mut run = |u: &RealField, env: &mut ControlEnv| -> Result<Vec<RealField>> {
        let log = rollout(env, Some(actor), &fourier.to_spectral(u)?, &mut unused, true)?;
        if let Some(time) = log.diverged {
            return Err(Error::Diverged {
                time,
                max_abs: f64::INFINITY,
            });
        }
        Ok(log.states.unwrap_or_default())
    };
    let reference = run(u0, env)?;
    let mut worst: f64 = 0.0;
    for g in GroupElement::all(env.act_dim()) {
        let moved = run(&g.apply_field(u0), env)?;
        for (a, b) in moved.iter().zip(&reference) {
            worst = worst.max(l2_distance(&grid, a, &g.apply_field(b)));
        }
    }
    Ok(worst)
}

/// Remove the Nyquist coefficient so that every continuous shift of the
/// field is representable on the grid.
pub fn band_limited(f: &SpectralField) -> SpectralField {
    let mut out = f.clone();
    if let Some(last) = out.0.last_mut() {
        *last = Default::default();
    }
    out
}

/// Largest coefficient mismatch between stepping a transformed state and
/// transforming the stepped state, for the shifts `thetas` and the
/// reflection. States should be band-limited (see [`band_limited`]).
pub fn step_equivariance(stepper: &Stepper, states: &[SpectralField], thetas: &[f64]) -> Result<f64> {
    let zero = SpectralField::zeros(stepper.grid().n_modes());
    let step = |f: &FourierStateVector| -> Result<FourierStateVector> {
        Ok(FourierStateVector::from(
            &stepper.step_spectral(&SpectralField::from(f), &zero)?,
        ))
    };
    let mut worst: f64 = 0.0;
    for s in states {
        let f = FourierStateVector::from(s);
        let stepped = step(&f)?;
        for &theta in thetas {
            let err = step(&shift(theta, &f))?.max_abs_diff(&shift(theta, &stepped));
            worst = worst.max(err);
        }
        worst = worst.max(step(&reflect(&f))?.max_abs_diff(&reflect(&stepped)));
    }
    Ok(worst)
}

/// Relative L2 mismatch, over a window of `duration`, between the centred
/// difference of `E(t)` and `P - D` along an unforced trajectory.
pub fn energy_balance_error(grid: &GridConfig, u0: &SpectralField, duration: f64) -> Result<f64> {
    let stepper = Stepper::new(*grid)?;
    let fourier = stepper.fourier();
    let steps = grid.steps_in(duration)?;
    let zero = SpectralField::zeros(grid.n_modes());
    let mut state = u0.clone();
    let mut energy = Vec::with_capacity(steps + 1);
    let mut rate = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        energy.push(fourier.energy_spectral(&state));
        rate.push(fourier.power_input_spectral(&state, &zero) - fourier.dissipation_spectral(&state));
        if i < steps {
            state = stepper.step_spectral(&state, &zero)?;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 1..steps {
        let fd = (energy[i + 1] - energy[i - 1]) / (2.0 * grid.dt);
        num += (fd - rate[i]).powi(2);
        den += rate[i].powi(2);
    }
    Ok((num / den).sqrt())
}

/// Observed order `log2(|u_h - u_{h/2}| / |u_{h/2} - u_{h/4}|)` at time `t_end`.
pub fn convergence_order(grid: &GridConfig, u0: &SpectralField, t_end: f64) -> Result<f64> {
    let mut finals = Vec::new();
    for refine in [1.0, 2.0, 4.0] {
        let g = GridConfig {
            dt: grid.dt / refine,
            ..*grid
        };
        let stepper = Stepper::new(g)?;
        let end = stepper.advance_unforced(u0, g.steps_in(t_end)?)?;
        finals.push(stepper.fourier().from_spectral(&end));
    }
    let e1 = l2_distance(grid, &finals[0], &finals[1]);
    let e2 = l2_distance(grid, &finals[1], &finals[2]);
    Ok((e1 / e2).log2())
}
