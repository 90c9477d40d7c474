//! Two-layer retain/discard selector `p(retain | s) = σ(w2 · ReLU(w1 · s))`,
//! Bernoulli action sampling, the reward-weighted log-likelihood objective
//! with its analytic gradient, and an Adam optimizer with linear warm-up.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::reward::Reward;
use crate::state::PolicyState;

pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("state has dimension {got}, policy expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("step {index} has no reward")]
    MissingReward { index: usize },
    #[error("parameter buffers do not match shape {hidden}x{input}")]
    BadParams { hidden: usize, input: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    input_dim: usize,
    hidden_dim: usize,
    /// Row-major `hidden_dim × input_dim`.
    w1: Vec<f64>,
    w2: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Retain,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Claim,
    Post,
}

impl PolicyParams {
    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))` per layer.
    pub fn init(input_dim: usize, hidden_dim: usize, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let b1 = libm::sqrt(6.0 / (input_dim + hidden_dim) as f64);
        let b2 = libm::sqrt(6.0 / (hidden_dim + 1) as f64);
        let w1 = (0..hidden_dim * input_dim).map(|_| rng.random_range(-b1..=b1)).collect();
        let w2 = (0..hidden_dim).map(|_| rng.random_range(-b2..=b2)).collect();
        Self { input_dim, hidden_dim, w1, w2 }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self { input_dim, hidden_dim, w1: vec![0.0; hidden_dim * input_dim], w2: vec![0.0; hidden_dim] }
    }

    pub fn from_parts(input_dim: usize, hidden_dim: usize, w1: Vec<f64>, w2: Vec<f64>) -> Result<Self, PolicyError> {
        if w1.len() != input_dim * hidden_dim || w2.len() != hidden_dim {
            return Err(PolicyError::BadParams { hidden: hidden_dim, input: input_dim });
        }
        Ok(Self { input_dim, hidden_dim, w1, w2 })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    /// Flat view `[w1 ‖ w2]`, the layout used by the optimizer and gradients.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.w1.clone();
        v.extend_from_slice(&self.w2);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let (a, b) = flat.split_at(self.w1.len());
        self.w1.copy_from_slice(a);
        self.w2.copy_from_slice(b);
    }

    fn check(&self, state: &[f64]) -> Result<(), PolicyError> {
        if state.len() != self.input_dim {
            return Err(PolicyError::Shape { expected: self.input_dim, got: state.len() });
        }
        Ok(())
    }

    /// Hidden pre-activations `w1 · s`. Zero inputs are skipped; states are
    /// mostly sparse and skipping a zero term leaves every sum unchanged.
    fn hidden(&self, state: &[f64]) -> Vec<f64> {
        self.hidden_sparse(&nonzeros(state))
    }

    fn hidden_sparse(&self, nz: &[(usize, f64)]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input_dim)
            .map(|row| nz.iter().map(|&(i, x)| row[i] * x).sum())
            .collect()
    }

    /// Output pre-activation `w2 · ReLU(w1 · s)`.
    pub fn logit(&self, state: &PolicyState) -> Result<f64, PolicyError> {
        self.check(state.as_slice())?;
        let z = self.hidden(state.as_slice());
        Ok(z.iter().zip(&self.w2).map(|(z, w)| w * z.max(0.0)).sum())
    }

    /// Probability of retaining the instance described by `state`.
    pub fn forward(&self, state: &PolicyState) -> Result<f64, PolicyError> {
        self.logit(state).map(sigmoid)
    }

    pub fn log_prob(&self, state: &PolicyState, action: Action) -> Result<f64, PolicyError> {
        let u = self.logit(state)?;
        Ok(log_prob_from_logit(u, action))
    }
}

fn nonzeros(state: &[f64]) -> Vec<(usize, f64)> {
    state.iter().copied().enumerate().filter(|&(_, x)| x != 0.0).collect()
}

fn log_prob_from_logit(u: f64, action: Action) -> f64 {
    match action {
        Action::Retain => -softplus(-u),
        Action::Discard => -softplus(u),
    }
}

/// One decision of the selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: PolicyState,
    pub action: Action,
    /// `log π(action | state)` under the parameters used for sampling.
    pub logprob: f64,
    pub p_retain: f64,
    pub level: Level,
    pub reward: Option<Reward>,
}

pub fn sample_action<R: Rng + ?Sized>(
    params: &PolicyParams,
    state: PolicyState,
    level: Level,
    rng: &mut R,
) -> Result<Step, PolicyError> {
    let u = params.logit(&state)?;
    let p_retain = sigmoid(u);
    let action = if rng.random::<f64>() < p_retain { Action::Retain } else { Action::Discard };
    Ok(Step { logprob: log_prob_from_logit(u, action), p_retain, action, level, state, reward: None })
}

/// A claim-level step together with its post-level sub-steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimEpisode {
    pub claim_step: Step,
    pub post_steps: Vec<Step>,
}

/// Scalar weight of each step's log-probability in the objective:
/// `R_i / t` for claim steps and `r_ij / (t · t'_i)` for post steps.
fn step_weights(episodes: &[ClaimEpisode], baseline: f64) -> Result<Vec<(&Step, f64)>, PolicyError> {
    let t = episodes.len() as f64;
    let mut out = Vec::new();
    let mut index = 0;
    for ep in episodes {
        let r = ep.claim_step.reward.ok_or(PolicyError::MissingReward { index })?;
        index += 1;
        out.push((&ep.claim_step, (r.value() - baseline) / t));
        let tp = ep.post_steps.len() as f64;
        for step in &ep.post_steps {
            let r = step.reward.ok_or(PolicyError::MissingReward { index })?;
            index += 1;
            out.push((step, (r.value() - baseline) / (t * tp)));
        }
    }
    Ok(out)
}

/// Objective value from the log-probabilities recorded at sampling time.
pub fn objective(episodes: &[ClaimEpisode]) -> Result<f64, PolicyError> {
    if episodes.is_empty() {
        return Ok(0.0);
    }
    Ok(step_weights(episodes, 0.0)?.iter().map(|(s, w)| w * s.logprob).sum())
}

/// Objective with log-probabilities recomputed under `params`.
pub fn objective_at(params: &PolicyParams, episodes: &[ClaimEpisode], baseline: f64) -> Result<f64, PolicyError> {
    objective_and_gradient(params, episodes, baseline).map(|(v, _)| v)
}

/// Analytic gradient of [`objective_at`] with respect to `[w1 ‖ w2]`.
/// The ReLU subgradient at 0 is taken as 0.
pub fn objective_gradient(params: &PolicyParams, episodes: &[ClaimEpisode], baseline: f64) -> Result<Vec<f64>, PolicyError> {
    objective_and_gradient(params, episodes, baseline).map(|(_, g)| g)
}

fn objective_and_gradient(
    params: &PolicyParams,
    episodes: &[ClaimEpisode],
    baseline: f64,
) -> Result<(f64, Vec<f64>), PolicyError> {
    let n = params.input_dim;
    let mut grad = vec![0.0; params.num_params()];
    let mut total = 0.0;
    if episodes.is_empty() {
        return Ok((total, grad));
    }
    let (g1, g2) = grad.split_at_mut(params.w1.len());
    for (step, w) in step_weights(episodes, baseline)? {
        let s = step.state.as_slice();
        params.check(s)?;
        if w == 0.0 {
            continue;
        }
        let nz = nonzeros(s);
        let z = params.hidden_sparse(&nz);
        let u: f64 = z.iter().zip(&params.w2).map(|(z, w2)| w2 * z.max(0.0)).sum();
        total += w * log_prob_from_logit(u, step.action);
        let p = sigmoid(u);
        let dlog_du = match step.action {
            Action::Retain => 1.0 - p,
            Action::Discard => -p,
        };
        let g = w * dlog_du;
        for k in 0..params.hidden_dim {
            if z[k] > 0.0 {
                g2[k] += g * z[k];
                let scale = g * params.w2[k];
                let row = &mut g1[k * n..(k + 1) * n];
                for &(i, x) in &nz {
                    row[i] += scale * x;
                }
            }
        }
    }
    Ok((total, grad))
}

/// Learning-rate shape after the linear warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// Hold the peak rate.
    #[default]
    Constant,
    /// Decay linearly to 0 at `planned_updates`.
    Linear,
}

/// Adam state plus the selector's training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub batch_size: u32,
    pub max_epochs: u32,
    /// Total updates the run expects; the warm-up spans `warmup_fraction` of it.
    pub planned_updates: u64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(num_params: usize, planned_updates: u64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
            learning_rate: 5e-5,
            warmup_fraction: 0.1,
            batch_size: 4,
            max_epochs: 50,
            planned_updates,
            schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        libm::ceil(self.warmup_fraction * self.planned_updates as f64) as u64
    }

    /// Learning rate for update number `step` (1-based).
    pub fn rate_at(&self, step: u64) -> f64 {
        let warm = self.warmup_steps();
        if warm > 0 && step < warm {
            return self.learning_rate * step as f64 / warm as f64;
        }
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Linear => {
                let left = self.planned_updates.saturating_sub(step);
                let span = self.planned_updates.saturating_sub(warm).max(1);
                self.learning_rate * left as f64 / span as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub applied: bool,
    pub objective: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

/// One Adam ascent step on the objective over `episodes`. A non-finite
/// gradient leaves parameters and optimizer untouched (`applied == false`).
pub fn reinforce_update(
    params: &mut PolicyParams,
    opt: &mut OptimizerState,
    episodes: &[ClaimEpisode],
    baseline: f64,
) -> Result<UpdateOutcome, PolicyError> {
    let (objective, grad) = objective_and_gradient(params, episodes, baseline)?;
    let grad_norm = libm::sqrt(grad.iter().map(|g| g * g).sum());
    if !grad_norm.is_finite() || !objective.is_finite() {
        return Ok(UpdateOutcome { applied: false, objective, grad_norm, learning_rate: 0.0 });
    }
    opt.step += 1;
    let lr = opt.rate_at(opt.step);
    let bc1 = 1.0 - libm::pow(opt.beta1, opt.step as f64);
    let bc2 = 1.0 - libm::pow(opt.beta2, opt.step as f64);
    let mut flat = params.flat();
    for i in 0..flat.len() {
        let g = grad[i];
        opt.first_moment[i] = opt.beta1 * opt.first_moment[i] + (1.0 - opt.beta1) * g;
        opt.second_moment[i] = opt.beta2 * opt.second_moment[i] + (1.0 - opt.beta2) * g * g;
        let m_hat = opt.first_moment[i] / bc1;
        let v_hat = opt.second_moment[i] / bc2;
        flat[i] += lr * m_hat / (libm::sqrt(v_hat) + opt.eps);
    }
    params.set_flat(&flat);
    Ok(UpdateOutcome { applied: true, objective, grad_norm, learning_rate: lr })
}
