//! Learner-facing rewards: adversarial discriminators (plain and
//! variational), measure conditioning, observation-only inputs and the
//! episode-level measure bonus.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Occupancy;
use crate::demos::DemoSet;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::mlp::{
    backward, backward_params, forward, init_params, max_relative_error, numeric_gradient, randn, sigmoid, softplus, Adam, GradCheckReport,
    MlpSpec, OutputActivation, ParamVector,
};

pub const D_CLAMP: f64 = 1e-6;

/// Episode bonus `p + q * [measure lands in an empty cell]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BonusParams {
    pub p: f64,
    pub q: f64,
}

impl Default for BonusParams {
    fn default() -> Self {
        BonusParams { p: 0.5, q: 0.5 }
    }
}

impl BonusParams {
    pub const OFF: BonusParams = BonusParams { p: 0.0, q: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 0.0 && self.q >= 0.0 && self.p.is_finite() && self.q.is_finite()) {
            return Err(Error::Config(format!("bonus p and q must be finite and nonnegative, got p={} q={}", self.p, self.q)));
        }
        Ok(())
    }
}

/// Episode-level diversity reward. Implement this to swap in another bonus.
pub trait MeasureBonus {
    fn bonus(&self, measure: &[f64], occupancy: &Occupancy) -> Result<f64>;
}

impl MeasureBonus for BonusParams {
    fn bonus(&self, measure: &[f64], occupancy: &Occupancy) -> Result<f64> {
        measure_bonus(self, measure, occupancy)
    }
}

pub fn measure_bonus(bonus: &BonusParams, measure: &[f64], occupancy: &Occupancy) -> Result<f64> {
    Ok(if occupancy.is_unoccupied(measure)? { bonus.p + bonus.q } else { bonus.p })
}

/// `-ln(1 - D)` with `D` clamped away from 0 and 1.
pub fn gail_reward(d: f64) -> f64 {
    -(1.0 - d.clamp(D_CLAMP, 1.0 - D_CLAMP)).ln()
}

/// Which parts of a step feed the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub k: usize,
    pub use_actions: bool,
    pub conditioned: bool,
}

impl InputLayout {
    pub fn new(env: EnvKind, ifo: bool, conditioned: bool) -> Self {
        InputLayout {
            obs_dim: env.obs_dim(),
            act_dim: env.act_dim(),
            k: env.measure_dim(),
            use_actions: !ifo,
            conditioned,
        }
    }

    pub fn width(&self) -> usize {
        self.obs_dim + if self.use_actions { self.act_dim } else { 0 } + if self.conditioned { self.k } else { 0 }
    }

    /// Packs `n` steps into a row-major input matrix. Actions are clipped to
    /// the environment's action box.
    pub fn assemble(&self, obs: &[f64], actions: Option<&[f64]>, deltas: &[f64]) -> Result<Vec<f64>> {
        if obs.len() % self.obs_dim != 0 {
            return Err(Error::dims("discriminator observations", self.obs_dim, obs.len() % self.obs_dim));
        }
        let n = obs.len() / self.obs_dim;
        let actions = if self.use_actions {
            let a = actions.ok_or_else(|| Error::Config("discriminator expects actions but none were provided".into()))?;
            if a.len() != n * self.act_dim {
                return Err(Error::dims("discriminator actions", n * self.act_dim, a.len()));
            }
            Some(a)
        } else {
            None
        };
        if self.conditioned && deltas.len() != n * self.k {
            return Err(Error::dims("discriminator deltas", n * self.k, deltas.len()));
        }
        let mut x = Vec::with_capacity(n * self.width());
        for i in 0..n {
            x.extend_from_slice(&obs[i * self.obs_dim..(i + 1) * self.obs_dim]);
            if let Some(a) = actions {
                x.extend(a[i * self.act_dim..(i + 1) * self.act_dim].iter().map(|v| v.clamp(-1.0, 1.0)));
            }
            if self.conditioned {
                x.extend_from_slice(&deltas[i * self.k..(i + 1) * self.k]);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Gail,
    Vail,
    /// The environment's own reward; for building expert archives.
    TrueReward,
    /// Bonus only.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub kind: RewardKind,
    pub measure_conditioned: bool,
    pub ifo: bool,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub latent_dim: usize,
    pub info_constraint: f64,
    pub beta_lr: f64,
    pub beta_init: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            kind: RewardKind::Gail,
            measure_conditioned: true,
            ifo: false,
            hidden: vec![32, 32],
            lr: 3e-4,
            minibatch: 256,
            epochs: 1,
            latent_dim: 50,
            info_constraint: 0.5,
            beta_lr: 1e-4,
            beta_init: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("reward_model.hidden sizes must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("reward_model.lr must be nonnegative, got {}", self.lr)));
        }
        if self.minibatch == 0 || self.epochs == 0 || self.latent_dim == 0 {
            return Err(Error::Config("reward_model.minibatch, epochs and latent_dim must be positive".into()));
        }
        if !(self.info_constraint >= 0.0 && self.beta_lr >= 0.0 && self.beta_init >= 0.0) {
            return Err(Error::Config("reward_model.info_constraint, beta_lr and beta_init must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Binary cross-entropy on logits and its gradient with respect to them,
/// averaged over the batch.
fn bce_with_logits(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| {
            loss += softplus(l) - y * l;
            (sigmoid(l) - y) / n
        })
        .collect();
    (loss / n, grad)
}

/// Loss statistics of one reward-model update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub bce: f64,
    pub kl: f64,
    pub beta: f64,
    pub expert_d: f64,
    pub policy_d: f64,
    pub steps: usize,
}

/// Plain discriminator: an MLP producing a logit, `D = sigmoid(logit)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GailModel {
    pub layout: InputLayout,
    pub net: MlpSpec,
    pub params: ParamVector,
    opt: Adam,
}

impl GailModel {
    pub fn new(layout: InputLayout, hidden: &[usize], lr: f64, seed: u64) -> Result<Self> {
        let net = MlpSpec::with_hidden(layout.width(), hidden, 1, OutputActivation::Identity)?;
        let params = init_params(&net, std::f64::consts::SQRT_2, 1.0, seed);
        let opt = Adam::new(params.len(), lr);
        Ok(GailModel { layout, net, params, opt })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(forward(&self.net, &self.params, x)?.into_output())
    }

    pub fn prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn loss_and_grad(&self, params: &[f64], x: &[f64], labels: &[f64]) -> Result<(f64, ParamVector)> {
        let cache = forward(&self.net, params, x)?;
        let (loss, up) = bce_with_logits(cache.output(), labels);
        let g = backward_params(&self.net, params, &cache, &up)?;
        Ok((loss, g))
    }

    fn train_step(&mut self, x: &[f64], labels: &[f64]) -> Result<f64> {
        let (loss, g) = self.loss_and_grad(&self.params, x, labels)?;
        if !loss.is_finite() || !g.is_finite() {
            return Err(Error::Diverged(format!("discriminator loss {loss}")));
        }
        self.opt.step(&mut self.params, &g);
        Ok(loss)
    }
}

/// Variational discriminator: an encoder yields `(mu, log_sigma)` of a
/// latent code, a linear head maps the code to a logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VailModel {
    pub layout: InputLayout,
    pub encoder: MlpSpec,
    pub head: MlpSpec,
    /// Encoder parameters followed by head parameters.
    pub params: ParamVector,
    pub beta: f64,
    pub info_constraint: f64,
    pub beta_lr: f64,
    opt: Adam,
}

/// Output of [`VailModel::encode`] for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub kl: Vec<f64>,
}

/// KL divergence of a diagonal Gaussian from the standard normal.
pub fn gaussian_kl(mu: &[f64], log_sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_sigma)
        .map(|(&m, &ls)| m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls)
        .sum::<f64>()
}

impl VailModel {
    pub fn new(layout: InputLayout, hidden: &[usize], latent: usize, cfg: &RewardConfig, seed: u64) -> Result<Self> {
        let encoder = MlpSpec::with_hidden(layout.width(), hidden, 2 * latent, OutputActivation::Identity)?;
        let head = MlpSpec::new(vec![latent, 1], OutputActivation::Identity)?;
        let mut params = init_params(&encoder, std::f64::consts::SQRT_2, 0.1, seed);
        params.0.extend(init_params(&head, 1.0, 1.0, seed.wrapping_add(1)).0);
        let opt = Adam::new(params.len(), cfg.lr);
        Ok(VailModel {
            layout,
            encoder,
            head,
            params,
            beta: cfg.beta_init,
            info_constraint: cfg.info_constraint,
            beta_lr: cfg.beta_lr,
            opt,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.head.input_dim()
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.encoder.param_count())
    }

    pub fn encode(&self, x: &[f64]) -> Result<Encoding> {
        let (enc, _) = self.split(&self.params);
        let out = forward(&self.encoder, enc, x)?.into_output();
        let l = self.latent_dim();
        let n = out.len() / (2 * l);
        let mut e = Encoding {
            mu: Vec::with_capacity(n * l),
            log_sigma: Vec::with_capacity(n * l),
            kl: Vec::with_capacity(n),
        };
        for row in out.chunks(2 * l) {
            let (mu, ls) = row.split_at(l);
            if mu.iter().chain(ls).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("encoder output".into()));
            }
            e.kl.push(gaussian_kl(mu, ls));
            e.mu.extend_from_slice(mu);
            e.log_sigma.extend_from_slice(ls);
        }
        Ok(e)
    }

    /// Discriminator probability evaluated at the encoder mean.
    pub fn prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        let e = self.encode(x)?;
        let (_, head) = self.split(&self.params);
        Ok(forward(&self.head, head, &e.mu)?.into_output().into_iter().map(sigmoid).collect())
    }

    /// BCE on reparameterized codes `z = mu + sigma * eps` plus `beta` times
    /// the mean KL. Returns `(total loss, bce, mean kl, gradient)`.
    pub fn loss_and_grad(&self, params: &[f64], x: &[f64], labels: &[f64], eps: &[f64], beta: f64) -> Result<(f64, f64, f64, ParamVector)> {
        let (enc, head) = self.split(params);
        let l = self.latent_dim();
        let enc_cache = forward(&self.encoder, enc, x)?;
        let out = enc_cache.output();
        let n = labels.len();
        if eps.len() != n * l {
            return Err(Error::dims("latent noise", n * l, eps.len()));
        }
        let mut z = vec![0.0; n * l];
        let mut kl = 0.0;
        for i in 0..n {
            let (mu, ls) = out[i * 2 * l..(i + 1) * 2 * l].split_at(l);
            kl += gaussian_kl(mu, ls);
            for d in 0..l {
                z[i * l + d] = mu[d] + ls[d].exp() * eps[i * l + d];
            }
        }
        let mean_kl = kl / n as f64;
        let head_cache = forward(&self.head, head, &z)?;
        let (bce, up) = bce_with_logits(head_cache.output(), labels);
        let (g_head, g_z) = backward(&self.head, head, &head_cache, &up)?;
        let mut g_out = vec![0.0; n * 2 * l];
        let kl_scale = beta / n as f64;
        for i in 0..n {
            let row = &out[i * 2 * l..(i + 1) * 2 * l];
            for d in 0..l {
                let (mu, ls) = (row[d], row[l + d]);
                let sigma = ls.exp();
                let gz = g_z[i * l + d];
                g_out[i * 2 * l + d] = gz + kl_scale * mu;
                g_out[i * 2 * l + l + d] = gz * sigma * eps[i * l + d] + kl_scale * (sigma * sigma - 1.0);
            }
        }
        let mut g = backward_params(&self.encoder, enc, &enc_cache, &g_out)?;
        g.0.extend(g_head.0);
        Ok((bce + beta * mean_kl, bce, mean_kl, g))
    }

    /// One optimizer step followed by the dual ascent step on `beta`.
    pub fn train_step<R: Rng + ?Sized>(&mut self, x: &[f64], labels: &[f64], rng: &mut R) -> Result<(f64, f64)> {
        let eps: Vec<f64> = (0..labels.len() * self.latent_dim()).map(|_| randn(rng)).collect();
        let (loss, bce, kl, g) = self.loss_and_grad(&self.params, x, labels, &eps, self.beta)?;
        if !loss.is_finite() || !g.is_finite() {
            return Err(Error::Diverged(format!("variational discriminator loss {loss} (beta {})", self.beta)));
        }
        self.opt.step(&mut self.params, &g);
        self.beta = (self.beta + self.beta_lr * (kl - self.info_constraint)).max(0.0);
        Ok((bce, kl))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RewardSource {
    Gail(GailModel),
    Vail(VailModel),
    TrueReward,
    Zero,
}

/// One policy-side batch of steps handed to [`RewardModel::update`].
#[derive(Debug, Clone, Copy)]
pub struct StepBatch<'a> {
    pub obs: &'a [f64],
    pub actions: &'a [f64],
    pub deltas: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub source: RewardSource,
    pub bonus: BonusParams,
    pub minibatch: usize,
    pub epochs: usize,
    /// Expert steps packed with the model's input layout.
    #[serde(skip)]
    expert_inputs: Vec<f64>,
}

impl RewardModel {
    /// Builds the model; adversarial kinds need a compatible demonstration set.
    pub fn new(cfg: &RewardConfig, env: EnvKind, bonus: BonusParams, demos: Option<&DemoSet>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        bonus.validate()?;
        let layout = InputLayout::new(env, cfg.ifo, cfg.measure_conditioned);
        let source = match cfg.kind {
            RewardKind::Gail => RewardSource::Gail(GailModel::new(layout, &cfg.hidden, cfg.lr, seed)?),
            RewardKind::Vail => RewardSource::Vail(VailModel::new(layout, &cfg.hidden, cfg.latent_dim, cfg, seed)?),
            RewardKind::TrueReward => RewardSource::TrueReward,
            RewardKind::Zero => RewardSource::Zero,
        };
        let mut model = RewardModel {
            source,
            bonus,
            minibatch: cfg.minibatch,
            epochs: cfg.epochs,
            expert_inputs: Vec::new(),
        };
        if let Some(layout) = model.layout() {
            let demos = demos.ok_or_else(|| Error::Config("adversarial reward model needs demonstrations".into()))?;
            model.expert_inputs = expert_inputs(&layout, env, demos)?;
        }
        Ok(model)
    }

    pub fn layout(&self) -> Option<InputLayout> {
        match &self.source {
            RewardSource::Gail(m) => Some(m.layout),
            RewardSource::Vail(m) => Some(m.layout),
            _ => None,
        }
    }

    pub fn is_adversarial(&self) -> bool {
        self.layout().is_some()
    }

    /// Discriminator probabilities for packed inputs; `None` for
    /// non-adversarial sources.
    pub fn prob(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        match &self.source {
            RewardSource::Gail(m) => m.prob(x).map(Some),
            RewardSource::Vail(m) => m.prob(x).map(Some),
            _ => Ok(None),
        }
    }

    /// Per-step rewards for `n` steps, without the bonus.
    pub fn step_rewards(&self, steps: StepBatch<'_>, true_rewards: &[f64]) -> Result<Vec<f64>> {
        let r: Vec<f64> = match self.layout() {
            Some(layout) => {
                let x = layout.assemble(steps.obs, Some(steps.actions), steps.deltas)?;
                let d = self.prob(&x)?.expect("adversarial source");
                d.into_iter().map(gail_reward).collect()
            }
            None => match self.source {
                RewardSource::TrueReward => true_rewards.to_vec(),
                _ => vec![0.0; true_rewards.len()],
            },
        };
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("step reward".into()));
        }
        Ok(r)
    }

    /// Single-step reward.
    pub fn step_reward(&self, obs: &[f64], action: &[f64], delta: &[f64], true_reward: f64) -> Result<f64> {
        Ok(self.step_rewards(StepBatch { obs, actions: action, deltas: delta }, &[true_reward])?[0])
    }

    /// Per-step totals for one finished episode: step rewards plus the
    /// episode bonus on every step.
    pub fn episode_rewards(&self, steps: StepBatch<'_>, true_rewards: &[f64], measure: &[f64], occupancy: &Occupancy) -> Result<Vec<f64>> {
        episode_rewards_with(self, &self.bonus, steps, true_rewards, measure, occupancy)
    }

    /// One pass over the policy steps in shuffled minibatches, each paired
    /// with an equal number of expert steps.
    pub fn update(&mut self, policy: StepBatch<'_>, seed: u64) -> Result<UpdateStats> {
        let Some(layout) = self.layout() else {
            return Ok(UpdateStats::default());
        };
        let px = layout.assemble(policy.obs, Some(policy.actions), policy.deltas)?;
        let w = layout.width();
        let n_policy = px.len() / w;
        let n_expert = self.expert_inputs.len() / w;
        if n_policy == 0 || n_expert == 0 {
            return Err(Error::InvalidArgument("reward update needs expert and policy steps".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mb = self.minibatch.min(n_policy);
        let mut stats = UpdateStats::default();
        let mut expert_order: Vec<usize> = (0..n_expert).collect();
        expert_order.shuffle(&mut rng);
        let mut expert_cursor = 0;
        for _ in 0..self.epochs {
            let mut order: Vec<usize> = (0..n_policy).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(mb) {
                let mut x = Vec::with_capacity(2 * chunk.len() * w);
                let mut labels = Vec::with_capacity(2 * chunk.len());
                for _ in 0..chunk.len() {
                    if expert_cursor == n_expert {
                        expert_order.shuffle(&mut rng);
                        expert_cursor = 0;
                    }
                    let e = expert_order[expert_cursor];
                    expert_cursor += 1;
                    x.extend_from_slice(&self.expert_inputs[e * w..(e + 1) * w]);
                    labels.push(1.0);
                }
                for &i in chunk {
                    x.extend_from_slice(&px[i * w..(i + 1) * w]);
                    labels.push(0.0);
                }
                match &mut self.source {
                    RewardSource::Gail(m) => stats.bce += m.train_step(&x, &labels)?,
                    RewardSource::Vail(m) => {
                        let (bce, kl) = m.train_step(&x, &labels, &mut rng)?;
                        stats.bce += bce;
                        stats.kl += kl;
                        stats.beta = m.beta;
                    }
                    _ => unreachable!(),
                }
                stats.steps += 1;
            }
        }
        stats.bce /= stats.steps as f64;
        stats.kl /= stats.steps as f64;
        let pd = self.prob(&px)?.unwrap_or_default();
        let ed = self.prob(&self.expert_inputs)?.unwrap_or_default();
        stats.policy_d = pd.iter().sum::<f64>() / pd.len().max(1) as f64;
        stats.expert_d = ed.iter().sum::<f64>() / ed.len().max(1) as f64;
        Ok(stats)
    }
}

/// Episode rewards with an arbitrary bonus function.
pub fn episode_rewards_with(
    model: &RewardModel,
    bonus: &dyn MeasureBonus,
    steps: StepBatch<'_>,
    true_rewards: &[f64],
    measure: &[f64],
    occupancy: &Occupancy,
) -> Result<Vec<f64>> {
    let b = bonus.bonus(measure, occupancy)?;
    let mut r = model.step_rewards(steps, true_rewards)?;
    r.iter_mut().for_each(|v| *v += b);
    Ok(r)
}

fn expert_inputs(layout: &InputLayout, env: EnvKind, demos: &DemoSet) -> Result<Vec<f64>> {
    let h = &demos.header;
    if h.env != env.name() || h.obs_dim != layout.obs_dim || h.act_dim != layout.act_dim || h.k != layout.k {
        return Err(Error::Config(format!(
            "demonstrations are for {} (obs {}, act {}, k {}) but the run uses {} (obs {}, act {}, k {})",
            h.env, h.obs_dim, h.act_dim, h.k, env.name(), layout.obs_dim, layout.act_dim, layout.k
        )));
    }
    if layout.use_actions && demos.episodes.iter().any(|e| e.actions.is_none()) {
        return Err(Error::Config(
            "demonstrations carry no actions; enable observation-only mode (reward_model.ifo = true)".into(),
        ));
    }
    let mut x = Vec::new();
    for e in &demos.episodes {
        let obs: Vec<f64> = e.obs.concat();
        let deltas: Vec<f64> = e.deltas.concat();
        let actions = e.actions.as_ref().map(|a| a.concat());
        x.extend(layout.assemble(&obs, actions.as_deref(), &deltas)?);
    }
    Ok(x)
}

/// Finite-difference check of both discriminator losses with respect to
/// their parameters on a random frozen minibatch.
pub fn discriminator_grad_check(seed: u64) -> Result<GradCheckReport> {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heads = Vec::new();
    for (ifo, conditioned) in [(false, true), (true, true), (false, false)] {
        let layout = InputLayout::new(EnvKind::PointFlyer, ifo, conditioned);
        let n = 6;
        let x: Vec<f64> = (0..n * layout.width()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let gail = GailModel::new(layout, &[6, 5], 3e-4, seed)?;
        let (_, g) = gail.loss_and_grad(&gail.params, &x, &labels)?;
        let num = numeric_gradient(|p| gail.loss_and_grad(p, &x, &labels).unwrap().0, &gail.params, h);
        heads.push((format!("gail/ifo={ifo}/cond={conditioned}"), max_relative_error(&g, &num)));

        let cfg = RewardConfig::default();
        let vail = VailModel::new(layout, &[6, 5], 3, &cfg, seed)?;
        let eps: Vec<f64> = (0..n * 3).map(|_| randn(&mut rng)).collect();
        let beta = 0.7;
        let (_, _, _, g) = vail.loss_and_grad(&vail.params, &x, &labels, &eps, beta)?;
        let num = numeric_gradient(|p| vail.loss_and_grad(p, &x, &labels, &eps, beta).unwrap().0, &vail.params, h);
        heads.push((format!("vail/ifo={ifo}/cond={conditioned}"), max_relative_error(&g, &num)));
    }
    Ok(GradCheckReport { heads })
}
