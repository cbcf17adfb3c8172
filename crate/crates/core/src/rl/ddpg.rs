use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::buffer::Experience;
use super::mlp::{Activation, Matrix, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Target blending rate.
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Half-width of the uniform init of both output layers.
    pub final_init: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            tau: 0.005,
            batch_size: 128,
            buffer_capacity: 500_000,
            final_init: 3e-3,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity");
        }
        Ok(())
    }
}

/// Actor-critic pair with target copies and optimizer state.
///
/// The critic sees `[s | a]` concatenated at its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgAgent {
    pub config: DdpgConfig,
    obs_dim: usize,
    act_dim: usize,
    actor: Mlp,
    critic: Mlp,
    target_actor: Mlp,
    target_critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
}

/// Batch of experiences laid out as matrices.
struct Batch {
    s: Matrix,
    a: Matrix,
    r: Vec<f64>,
    s_next: Matrix,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, config: DdpgConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(act_dim);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, Activation::Tanh, config.final_init, rng);
        let critic = Mlp::new(&critic_sizes, Activation::Linear, config.final_init, rng);
        Self::from_networks(actor, critic, config)
    }

    /// Agent around given live networks; targets start as copies.
    pub fn from_networks(actor: Mlp, critic: Mlp, config: DdpgConfig) -> Result<Self> {
        config.validate()?;
        let obs_dim = actor.input_dim();
        let act_dim = actor.output_dim();
        if critic.input_dim() != obs_dim + act_dim || critic.output_dim() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "critic {:?} does not fit actor {:?}",
                critic.sizes(),
                actor.sizes()
            )));
        }
        Ok(Self {
            actor_opt: Adam::new(actor.n_params(), config.actor_lr),
            critic_opt: Adam::new(critic.n_params(), config.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            config,
            obs_dim,
            act_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn target_actor(&self) -> &Mlp {
        &self.target_actor
    }

    pub fn target_critic(&self) -> &Mlp {
        &self.target_critic
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    /// Deterministic policy output in `[-1, 1]`.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(obs)
    }

    /// Critic value `Q(s, a)`.
    pub fn q_value(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mut x = obs.to_vec();
        x.extend_from_slice(action);
        Ok(self.critic.forward(&x)?[0])
    }

    fn collect(&self, batch: &[&Experience]) -> Result<Batch> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for e in batch {
            if e.s.len() != self.obs_dim || e.s_next.len() != self.obs_dim || e.a.len() != self.act_dim {
                return Err(Error::ShapeMismatch(format!(
                    "experience dims ({}, {}, {}) do not match agent ({}, {})",
                    e.s.len(),
                    e.a.len(),
                    e.s_next.len(),
                    self.obs_dim,
                    self.act_dim
                )));
            }
        }
        Ok(Batch {
            s: Matrix::from_rows(batch.iter().map(|e| e.s.as_slice()), self.obs_dim)?,
            a: Matrix::from_rows(batch.iter().map(|e| e.a.as_slice()), self.act_dim)?,
            r: batch.iter().map(|e| e.r).collect(),
            s_next: Matrix::from_rows(batch.iter().map(|e| e.s_next.as_slice()), self.obs_dim)?,
        })
    }

    /// Bellman targets `r + gamma Q'(s', P'(s'))`.
    pub fn td_targets(&self, batch: &[&Experience]) -> Result<Vec<f64>> {
        let b = self.collect(batch)?;
        self.targets(&b)
    }

    fn targets(&self, b: &Batch) -> Result<Vec<f64>> {
        let a_next = self.target_actor.forward_batch(&b.s_next)?;
        let q_next = self.target_critic.forward_batch(&b.s_next.hconcat(&a_next))?;
        Ok(b.r
            .iter()
            .zip(&q_next.data)
            .map(|(r, q)| r + self.config.gamma * q)
            .collect())
    }

    /// Mean squared Bellman residual and its gradient w.r.t. the critic parameters.
    pub fn critic_loss_and_grad(&self, batch: &[&Experience]) -> Result<(f64, Vec<f64>)> {
        let b = self.collect(batch)?;
        let y = self.targets(&b)?;
        let cache = self.critic.forward_cached(&b.s.hconcat(&b.a))?;
        let n = y.len() as f64;
        let diff: Vec<f64> = cache.output().data.iter().zip(&y).map(|(q, y)| q - y).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let grad_out = Matrix {
            rows: diff.len(),
            cols: 1,
            data: diff.iter().map(|d| 2.0 * d / n).collect(),
        };
        let mut grads = vec![0.0; self.critic.n_params()];
        self.critic.backward(&cache, &grad_out, Some(&mut grads), false);
        Ok((loss, grads))
    }

    /// Mean `Q(s, P(s))` over the batch and its gradient w.r.t. the actor parameters.
    pub fn actor_objective_and_grad(&self, batch: &[&Experience]) -> Result<(f64, Vec<f64>)> {
        let b = self.collect(batch)?;
        let actor_cache = self.actor.forward_cached(&b.s)?;
        let critic_cache = self.critic.forward_cached(&b.s.hconcat(actor_cache.output()))?;
        let n = b.r.len() as f64;
        let objective = critic_cache.output().data.iter().sum::<f64>() / n;
        let grad_q = Matrix {
            rows: b.r.len(),
            cols: 1,
            data: vec![1.0 / n; b.r.len()],
        };
        let grad_in = self
            .critic
            .backward(&critic_cache, &grad_q, None, true)
            .expect("input gradient requested");
        let grad_a = grad_in.columns(self.obs_dim, self.obs_dim + self.act_dim);
        let mut grads = vec![0.0; self.actor.n_params()];
        self.actor.backward(&actor_cache, &grad_a, Some(&mut grads), false);
        Ok((objective, grads))
    }

    /// One optimizer step on the critic; returns the loss before the step.
    pub fn critic_update(&mut self, batch: &[&Experience]) -> Result<f64> {
        let (loss, grads) = self.critic_loss_and_grad(batch)?;
        self.critic_opt.step(self.critic.params_mut(), &grads);
        Ok(loss)
    }

    /// One ascent step of the deterministic policy gradient; returns its norm.
    pub fn actor_update(&mut self, batch: &[&Experience]) -> Result<f64> {
        let (_, mut grads) = self.actor_objective_and_grad(batch)?;
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        grads.iter_mut().for_each(|g| *g = -*g);
        self.actor_opt.step(self.actor.params_mut(), &grads);
        Ok(norm)
    }

    pub fn soft_update(&mut self) {
        let tau = self.config.tau;
        self.target_actor.blend_from(&self.actor, tau);
        self.target_critic.blend_from(&self.critic, tau);
    }

    /// Critic step, actor step, target blend. Returns (critic loss, actor gradient norm).
    pub fn update(&mut self, batch: &[&Experience]) -> Result<(f64, f64)> {
        let loss = self.critic_update(batch)?;
        let norm = self.actor_update(batch)?;
        self.soft_update();
        Ok((loss, norm))
    }

    /// Structural consistency, used after deserialization.
    pub fn check_consistency(&self) -> Result<()> {
        let nets = [&self.actor, &self.critic, &self.target_actor, &self.target_critic];
        for net in nets {
            net.check_params()?;
        }
        if !self.target_actor.same_shape(&self.actor) || !self.target_critic.same_shape(&self.critic) {
            return Err(Error::ShapeMismatch("target networks differ from live networks".into()));
        }
        if self.actor.input_dim() != self.obs_dim
            || self.actor.output_dim() != self.act_dim
            || self.critic.input_dim() != self.obs_dim + self.act_dim
            || self.critic.output_dim() != 1
        {
            return Err(Error::ShapeMismatch("network dimensions disagree with agent".into()));
        }
        if self.actor_opt.n_params() != self.actor.n_params() || self.critic_opt.n_params() != self.critic.n_params() {
            return Err(Error::ShapeMismatch("optimizer state does not fit networks".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(gamma: f64) -> DdpgConfig {
        DdpgConfig {
            hidden: vec![6, 5],
            gamma,
            batch_size: 4,
            buffer_capacity: 100,
            final_init: 0.5,
            ..DdpgConfig::default()
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, obs: usize, act: usize) -> Vec<Experience> {
        (0..n)
            .map(|_| Experience {
                s: (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect(),
                a: (0..act).map(|_| rng.random_range(-1.0..1.0)).collect(),
                r: rng.random_range(-1.0..1.0),
                s_next: (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect()
    }

    /// Linear scalar critic `Q = ws s + wa a + b` and tanh scalar actor.
    fn scalar_agent(gamma: f64, ws: f64, wa: f64, b: f64, v: f64, c: f64) -> DdpgAgent {
        let mut actor = Mlp::zeros(&[1, 1], Activation::Tanh);
        actor.params_mut().copy_from_slice(&[v, c]);
        let mut critic = Mlp::zeros(&[2, 1], Activation::Linear);
        critic.params_mut().copy_from_slice(&[ws, wa, b]);
        DdpgAgent::from_networks(actor, critic, DdpgConfig { gamma, ..cfg(gamma) }).unwrap()
    }

    #[test]
    fn hand_evaluated_td_error() {
        let agent = scalar_agent(0.9, 0.5, -1.0, 0.2, 0.7, -0.1);
        let e = Experience {
            s: vec![0.4],
            a: vec![0.3],
            r: 1.5,
            s_next: vec![-0.2],
        };
        let a_next = (0.7f64 * -0.2 - 0.1).tanh();
        let y = 1.5 + 0.9 * (0.5 * -0.2 - a_next + 0.2);
        let q = 0.5 * 0.4 - 0.3 + 0.2;
        let (loss, _) = agent.critic_loss_and_grad(&[&e]).unwrap();
        assert!((loss - (y - q) * (y - q)).abs() < 1e-14);
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = DdpgAgent::new(3, 2, cfg(0.0), &mut rng).unwrap();
        let batch = random_batch(&mut rng, 5, 3, 2);
        let refs: Vec<&Experience> = batch.iter().collect();
        let y = agent.td_targets(&refs).unwrap();
        for (y, e) in y.iter().zip(&batch) {
            assert_eq!(*y, e.r);
        }
    }

    #[test]
    fn exact_critic_has_zero_loss_and_gradient() {
        let agent = scalar_agent(0.0, 0.0, 0.0, 0.7, 1.0, 0.0);
        let batch: Vec<Experience> = (0..3)
            .map(|i| Experience {
                s: vec![i as f64],
                a: vec![0.1],
                r: 0.7,
                s_next: vec![0.0],
            })
            .collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let (loss, grads) = agent.critic_loss_and_grad(&refs).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut agent = scalar_agent(0.9, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(agent.critic_update(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(agent.actor_update(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn critic_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut agent = DdpgAgent::new(3, 2, cfg(0.95), &mut rng).unwrap();
        // Separate the targets from the live critic so the check is not degenerate.
        agent.target_critic.params_mut().iter_mut().for_each(|p| *p *= 0.5);
        let batch = random_batch(&mut rng, 6, 3, 2);
        let refs: Vec<&Experience> = batch.iter().collect();
        let (_, grads) = agent.critic_loss_and_grad(&refs).unwrap();
        let h = 1e-5;
        for p in 0..agent.critic.n_params() {
            let orig = agent.critic.params()[p];
            agent.critic.params_mut()[p] = orig + h;
            let lp = agent.critic_loss_and_grad(&refs).unwrap().0;
            agent.critic.params_mut()[p] = orig - h;
            let lm = agent.critic_loss_and_grad(&refs).unwrap().0;
            agent.critic.params_mut()[p] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - grads[p]).abs() / fd.abs().max(grads[p].abs()).max(1e-3);
            assert!(err < 1e-5, "param {p}: {fd} vs {}", grads[p]);
        }
    }

    #[test]
    fn actor_chain_rule_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut agent = DdpgAgent::new(3, 2, cfg(0.95), &mut rng).unwrap();
        let batch = random_batch(&mut rng, 6, 3, 2);
        let refs: Vec<&Experience> = batch.iter().collect();
        let (_, grads) = agent.actor_objective_and_grad(&refs).unwrap();
        let h = 1e-5;
        for p in 0..agent.actor.n_params() {
            let orig = agent.actor.params()[p];
            agent.actor.params_mut()[p] = orig + h;
            let jp = agent.actor_objective_and_grad(&refs).unwrap().0;
            agent.actor.params_mut()[p] = orig - h;
            let jm = agent.actor_objective_and_grad(&refs).unwrap().0;
            agent.actor.params_mut()[p] = orig;
            let fd = (jp - jm) / (2.0 * h);
            let err = (fd - grads[p]).abs() / fd.abs().max(grads[p].abs()).max(1e-3);
            assert!(err < 1e-5, "param {p}: {fd} vs {}", grads[p]);
        }
    }

    #[test]
    fn action_gradient_of_critic_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let agent = DdpgAgent::new(3, 2, cfg(0.95), &mut rng).unwrap();
        let s = [0.2, -0.4, 0.9];
        let a = [0.1, -0.3];
        let mut x = s.to_vec();
        x.extend_from_slice(&a);
        let cache = agent
            .critic
            .forward_cached(&Matrix::from_rows([x.as_slice()], 5).unwrap())
            .unwrap();
        let one = Matrix {
            rows: 1,
            cols: 1,
            data: vec![1.0],
        };
        let g = agent.critic.backward(&cache, &one, None, true).unwrap();
        let h = 1e-4;
        for i in 0..2 {
            let mut ap = a;
            ap[i] += h;
            let mut am = a;
            am[i] -= h;
            let fd = (agent.q_value(&s, &ap).unwrap() - agent.q_value(&s, &am).unwrap()) / (2.0 * h);
            let an = g.data[3 + i];
            assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3) < 1e-5);
        }
    }

    #[test]
    fn zero_actor_rate_leaves_actor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut agent = DdpgAgent::new(
            3,
            2,
            DdpgConfig {
                actor_lr: 0.0,
                ..cfg(0.9)
            },
            &mut rng,
        )
        .unwrap();
        let before = agent.actor.clone();
        let batch = random_batch(&mut rng, 4, 3, 2);
        let refs: Vec<&Experience> = batch.iter().collect();
        agent.actor_update(&refs).unwrap();
        assert_eq!(agent.actor, before);
    }

    #[test]
    fn actor_moves_toward_critic_maximum() {
        // Q(s, a) = -|a - 1| built from two ReLU units; its gradient is +1 for a < 1.
        let mut critic = Mlp::zeros(&[2, 2, 1], Activation::Linear);
        critic
            .params_mut()
            .copy_from_slice(&[0.0, 1.0, 0.0, -1.0, -1.0, 1.0, -1.0, -1.0, 0.0]);
        let mut actor = Mlp::zeros(&[1, 1], Activation::Tanh);
        actor.params_mut().copy_from_slice(&[0.3, -0.2]);
        let mut agent = DdpgAgent::from_networks(
            actor,
            critic,
            DdpgConfig {
                actor_lr: 1e-2,
                ..cfg(0.9)
            },
        )
        .unwrap();
        assert!((agent.q_value(&[0.0], &[0.25]).unwrap() + 0.75).abs() < 1e-15);
        let e = Experience {
            s: vec![0.5],
            a: vec![0.0],
            r: 0.0,
            s_next: vec![0.5],
        };
        let a0 = agent.act(&[0.5]).unwrap()[0];
        assert!(a0 < 1.0);
        agent.actor_update(&[&e]).unwrap();
        assert!(agent.act(&[0.5]).unwrap()[0] > a0);
    }

    #[test]
    fn soft_update_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut agent = DdpgAgent::new(2, 1, DdpgConfig { tau: 0.0, ..cfg(0.9) }, &mut rng).unwrap();
        agent.actor.params_mut().iter_mut().for_each(|p| *p += 1.0);
        let frozen = agent.target_actor.clone();
        agent.soft_update();
        assert_eq!(agent.target_actor, frozen);
        agent.config.tau = 1.0;
        agent.soft_update();
        assert_eq!(agent.target_actor.params(), agent.actor.params());
    }

    #[test]
    fn identical_seeds_give_identical_training() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut agent = DdpgAgent::new(4, 2, cfg(0.9), &mut rng).unwrap();
            let data = random_batch(&mut rng, 40, 4, 2);
            for _ in 0..100 {
                let idx = rand::seq::index::sample(&mut rng, data.len(), 4);
                let batch: Vec<&Experience> = idx.iter().map(|i| &data[i]).collect();
                agent.update(&batch).unwrap();
            }
            agent
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn targets_stay_within_live_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut agent = DdpgAgent::new(
            3,
            1,
            DdpgConfig {
                tau: 0.3,
                actor_lr: 1e-2,
                critic_lr: 1e-2,
                ..cfg(0.9)
            },
            &mut rng,
        )
        .unwrap();
        let mut lo = agent.critic.params().to_vec();
        let mut hi = lo.clone();
        let data = random_batch(&mut rng, 20, 3, 1);
        for _ in 0..50 {
            let idx = rand::seq::index::sample(&mut rng, data.len(), 4);
            let batch: Vec<&Experience> = idx.iter().map(|i| &data[i]).collect();
            agent.critic_update(&batch).unwrap();
            agent.actor_update(&batch).unwrap();
            for (p, (l, h)) in agent.critic.params().iter().zip(lo.iter_mut().zip(hi.iter_mut())) {
                *l = l.min(*p);
                *h = h.max(*p);
            }
            agent.soft_update();
            for (t, (l, h)) in agent.target_critic.params().iter().zip(lo.iter().zip(&hi)) {
                assert!(*t >= l - 1e-12 && *t <= h + 1e-12);
            }
        }
    }
}
