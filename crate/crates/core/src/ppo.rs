//! Vectorized PPO: rollout collection with reward streams, GAE, the clipped
//! update, and the two uses the QD loop makes of it (gradient estimation by
//! parameter differencing and walking the search policy).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::Occupancy;
use crate::envs::{EnvSpec, VecEnv};
use crate::error::{Error, Result};
use crate::mlp::{
    backward_params, clip_grad_norm, forward, gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grad, init_params, randn, Adam,
    GaussianPolicy, MlpSpec, OutputActivation, ParamVector,
};
use crate::reward::{RewardModel, StepBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    /// Per-network gradient norm cap; 0 disables it.
    pub max_grad_norm: f64,
    /// Hidden sizes of the policy and value networks.
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            epochs: 4,
            minibatches: 8,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 3e-4,
            ent_coef: 0.0,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: vec![16, 16],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("ppo.gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("ppo.gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return bad("ppo.epochs and ppo.minibatches must be at least 1".into());
        }
        if !(self.clip > 0.0) || !(self.lr >= 0.0) || !(self.ent_coef >= 0.0) || !(self.vf_coef >= 0.0) || !(self.max_grad_norm >= 0.0) {
            return bad("ppo.clip must be positive; lr, ent_coef, vf_coef and max_grad_norm nonnegative".into());
        }
        if self.hidden.contains(&0) {
            return bad("ppo.hidden sizes must be positive".into());
        }
        Ok(())
    }
}

/// SplitMix64 finalizer folded over `parts`; derives independent seeds.
pub fn sub_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Welford running mean and population variance per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

pub const NORM_EPS: f64 = 1e-8;

impl RunningMeanStd {
    pub fn new(dim: usize) -> Self {
        RunningMeanStd {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Folds a row-major batch into the statistics.
    pub fn update(&mut self, batch: &[f64]) {
        let d = self.dim();
        let n = batch.len() / d;
        if n == 0 {
            return;
        }
        let nf = n as f64;
        let tot = self.count + nf;
        for j in 0..d {
            let col = || batch.iter().skip(j).step_by(d);
            let bmean = col().sum::<f64>() / nf;
            let bvar = col().map(|x| (x - bmean) * (x - bmean)).sum::<f64>() / nf;
            if self.count == 0.0 {
                self.mean[j] = bmean;
                self.var[j] = bvar;
                continue;
            }
            let delta = bmean - self.mean[j];
            let m2 = self.var[j] * self.count + bvar * nf + delta * delta * self.count * nf / tot;
            self.mean[j] += delta * nf / tot;
            self.var[j] = m2 / tot;
        }
        self.count = tot;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % d]) / (self.var[i % d] + NORM_EPS).sqrt())
            .collect()
    }
}

/// State-value network with its own optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub spec: MlpSpec,
    pub params: ParamVector,
    opt: Adam,
}

impl ValueNet {
    pub fn new(obs_dim: usize, hidden: &[usize], lr: f64, seed: u64) -> Result<Self> {
        let spec = MlpSpec::with_hidden(obs_dim, hidden, 1, OutputActivation::Identity)?;
        let params = init_params(&spec, std::f64::consts::SQRT_2, 1.0, seed);
        let opt = Adam::new(params.len(), lr);
        Ok(ValueNet { spec, params, opt })
    }

    pub fn predict(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(forward(&self.spec, &self.params, obs)?.into_output())
    }
}

/// Rollouts stored episode-major: step `t` of episode `e` sits at `e * T + t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryBatch {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub k: usize,
    pub horizon: usize,
    /// Observations as the policy saw them (normalized).
    pub obs: Vec<f64>,
    pub raw_obs: Vec<f64>,
    /// Sampled actions before the environment clips them.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    /// Model reward plus episode bonus.
    pub r_f: Vec<f64>,
    pub deltas: Vec<f64>,
    pub true_rewards: Vec<f64>,
    pub measures: Vec<Vec<f64>>,
    pub true_returns: Vec<f64>,
    pub model_returns: Vec<f64>,
    /// Episodes whose measure landed in an unoccupied cell.
    pub empty_hits: usize,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn episodes(&self) -> usize {
        self.measures.len()
    }

    /// Raw proxy stream `j`.
    pub fn delta_stream(&self, j: usize) -> Vec<f64> {
        self.deltas.iter().skip(j).step_by(self.k).copied().collect()
    }

    pub fn mean_measure(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for e in &self.measures {
            m.iter_mut().zip(e).for_each(|(a, b)| *a += b);
        }
        let n = self.episodes().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    pub fn mean_model_return(&self) -> f64 {
        mean(&self.model_returns)
    }

    pub fn mean_true_return(&self) -> f64 {
        mean(&self.true_returns)
    }

    pub fn empty_fraction(&self) -> f64 {
        if self.episodes() == 0 {
            0.0
        } else {
            self.empty_hits as f64 / self.episodes() as f64
        }
    }

    pub fn step_batch(&self) -> StepBatch<'_> {
        StepBatch {
            obs: &self.raw_obs,
            actions: &self.actions,
            deltas: &self.deltas,
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// Everything a rollout reads; all borrowed immutably.
#[derive(Clone, Copy)]
pub struct Rollout<'a> {
    pub policy: &'a GaussianPolicy,
    pub params: &'a [f64],
    pub obs_stats: &'a RunningMeanStd,
    pub env: &'a EnvSpec,
    pub reward: &'a RewardModel,
    pub occupancy: &'a Occupancy,
    /// Replaces the learned action spread; a tiny value gives a near
    /// deterministic policy.
    pub std_override: Option<f64>,
}

impl Rollout<'_> {
    /// Runs `rounds` full episodes on each of the env batch's instances.
    pub fn collect(&self, rounds: usize, seed: u64) -> Result<TrajectoryBatch> {
        let spec = *self.env;
        let (od, ad, k, t_max, b) = (spec.obs_dim(), spec.act_dim(), spec.measure_dim(), spec.horizon, spec.batch);
        if self.policy.obs_dim() != od || self.policy.act_dim() != ad {
            return Err(Error::dims("policy observation width", od, self.policy.obs_dim()));
        }
        let n = rounds * b * t_max;
        let mut out = TrajectoryBatch {
            obs_dim: od,
            act_dim: ad,
            k,
            horizon: t_max,
            obs: vec![0.0; n * od],
            raw_obs: vec![0.0; n * od],
            actions: vec![0.0; n * ad],
            log_probs: vec![0.0; n],
            dones: vec![false; n],
            r_f: vec![0.0; n],
            deltas: vec![0.0; n * k],
            true_rewards: vec![0.0; n],
            ..TrajectoryBatch::default()
        };
        let log_std: Vec<f64> = match self.std_override {
            Some(s) => vec![s.ln(); ad],
            None => self.policy.log_std(self.params).to_vec(),
        };
        let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for round in 0..rounds {
            let (mut env, mut raw) = VecEnv::reset(spec, seed)?;
            let base = round * b * t_max;
            let at = |e: usize, t: usize| base + e * t_max + t;
            for t in 0..t_max {
                let obs = self.obs_stats.normalize(&raw);
                let mu = self.policy.mean(self.params, &obs)?.into_output();
                let mut actions = vec![0.0; b * ad];
                for e in 0..b {
                    let i = at(e, t);
                    let a = &mut actions[e * ad..(e + 1) * ad];
                    for j in 0..ad {
                        a[j] = mu[e * ad + j] + std[j] * randn(&mut rng);
                    }
                    out.log_probs[i] = gaussian_log_prob(&mu[e * ad..(e + 1) * ad], &log_std, a);
                    out.obs[i * od..(i + 1) * od].copy_from_slice(&obs[e * od..(e + 1) * od]);
                    out.raw_obs[i * od..(i + 1) * od].copy_from_slice(&raw[e * od..(e + 1) * od]);
                    out.actions[i * ad..(i + 1) * ad].copy_from_slice(a);
                }
                let step = env.step(&actions)?;
                for e in 0..b {
                    let i = at(e, t);
                    out.true_rewards[i] = step.true_reward[e];
                    out.dones[i] = step.done[e];
                    out.deltas[i * k..(i + 1) * k].copy_from_slice(&step.deltas[e * k..(e + 1) * k]);
                }
                raw = step.obs;
            }
            let span = base..base + b * t_max;
            let model_r = self.reward.step_rewards(
                StepBatch {
                    obs: &out.raw_obs[span.start * od..span.end * od],
                    actions: &out.actions[span.start * ad..span.end * ad],
                    deltas: &out.deltas[span.start * k..span.end * k],
                },
                &out.true_rewards[span.clone()],
            )?;
            for e in 0..b {
                let s = at(e, 0);
                let mut m = vec![0.0; k];
                for t in 0..t_max {
                    m.iter_mut().zip(&out.deltas[(s + t) * k..(s + t + 1) * k]).for_each(|(a, d)| *a += d);
                }
                m.iter_mut().for_each(|a| *a /= t_max as f64);
                let empty = self.occupancy.is_unoccupied(&m)?;
                let bonus = self.reward.bonus.p + if empty { self.reward.bonus.q } else { 0.0 };
                let mut ret = 0.0;
                let mut true_ret = 0.0;
                for t in 0..t_max {
                    let r = model_r[s - base + t] + bonus;
                    out.r_f[s + t] = r;
                    ret += r;
                    true_ret += out.true_rewards[s + t];
                }
                out.empty_hits += empty as usize;
                out.measures.push(m);
                out.model_returns.push(ret);
                out.true_returns.push(true_ret);
            }
        }
        Ok(out)
    }
}

/// Generalized advantage estimation over a flat sequence whose episodes are
/// delimited by `dones`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n {
        return Err(Error::dims("gae values", n, values.len()));
    }
    if dones.len() != n {
        return Err(Error::dims("gae done flags", n, dones.len()));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for i in (0..n).rev() {
        let live = if dones[i] { 0.0 } else { 1.0 };
        let next_v = if i + 1 < n { values[i + 1] } else { 0.0 };
        let delta = rewards[i] + gamma * next_v * live - values[i];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[i] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Mean over samples of `min(r A, clip(r) A)` with `r = exp(logp - logp_old)`.
pub fn surrogate_objective(
    cfg: &PpoConfig,
    policy: &GaussianPolicy,
    params: &[f64],
    obs: &[f64],
    actions: &[f64],
    logp_old: &[f64],
    adv: &[f64],
) -> Result<f64> {
    let mu = policy.mean(params, obs)?.into_output();
    let ls = policy.log_std(params);
    let ad = policy.act_dim();
    let total: f64 = (0..adv.len())
        .map(|i| {
            let r = (gaussian_log_prob(&mu[i * ad..(i + 1) * ad], ls, &actions[i * ad..(i + 1) * ad]) - logp_old[i]).exp();
            (r * adv[i]).min(r.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv[i])
        })
        .sum();
    Ok(total / adv.len().max(1) as f64)
}

/// Clipped-surrogate policy loss (negated objective minus the entropy bonus)
/// and its gradient. Also returns the fraction of clipped samples.
pub fn policy_loss_and_grad(
    cfg: &PpoConfig,
    policy: &GaussianPolicy,
    params: &[f64],
    obs: &[f64],
    actions: &[f64],
    logp_old: &[f64],
    adv: &[f64],
) -> Result<(f64, ParamVector, f64)> {
    let n = adv.len();
    let ad = policy.act_dim();
    let cache = policy.mean(params, obs)?;
    let mu = cache.output();
    let ls = policy.log_std(params);
    let mut d_mean = vec![0.0; n * ad];
    let mut d_ls = vec![0.0; ad];
    let mut objective = 0.0;
    let mut clipped = 0usize;
    let nf = n.max(1) as f64;
    for i in 0..n {
        let (m, a) = (&mu[i * ad..(i + 1) * ad], &actions[i * ad..(i + 1) * ad]);
        let r = (gaussian_log_prob(m, ls, a) - logp_old[i]).exp();
        let a_i = adv[i];
        let unclipped = r * a_i;
        let clipped_term = r.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a_i;
        objective += unclipped.min(clipped_term);
        let saturated = (a_i > 0.0 && r > 1.0 + cfg.clip) || (a_i < 0.0 && r < 1.0 - cfg.clip);
        if saturated {
            clipped += 1;
            continue;
        }
        // d(-r A / n)/d logp = -r A / n
        let scale = -unclipped / nf;
        gaussian_log_prob_grad(m, ls, a, scale, &mut d_mean[i * ad..(i + 1) * ad], &mut d_ls);
    }
    let entropy = gaussian_entropy(ls);
    let loss = -objective / nf - cfg.ent_coef * entropy;
    let mut g = backward_params(&policy.net, params, &cache, &d_mean)?;
    g.0.extend(d_ls.iter().map(|d| d - cfg.ent_coef));
    Ok((loss, g, clipped as f64 / nf))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
    pub updates: usize,
}

/// One PPO update on `batch` with `rewards` as the only reward signal.
///
/// An all-zero reward stream yields zero policy advantages, so the policy
/// only moves when there is something to learn from.
pub fn ppo_update(
    cfg: &PpoConfig,
    policy: &GaussianPolicy,
    params: &mut ParamVector,
    opt: &mut Adam,
    value: &mut ValueNet,
    batch: &TrajectoryBatch,
    rewards: &[f64],
    seed: u64,
) -> Result<LossStats> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("ppo update on an empty batch".into()));
    }
    if rewards.len() != n {
        return Err(Error::dims("reward stream", n, rewards.len()));
    }
    let od = batch.obs_dim;
    let ad = batch.act_dim;
    let values = value.predict(&batch.obs)?;
    let (mut adv, returns) = gae(rewards, &values, &batch.dones, cfg.gamma, cfg.gae_lambda)?;
    if rewards.iter().all(|&r| r == 0.0) {
        adv.fill(0.0);
    } else {
        let m = mean(&adv);
        let sd = (adv.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n as f64).sqrt();
        adv.iter_mut().for_each(|a| *a = (*a - m) / (sd + NORM_EPS));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mb = n.div_ceil(cfg.minibatches);
    let mut stats = LossStats::default();
    let (mut obs, mut act, mut lp, mut a_mb, mut ret_mb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(mb) {
            obs.clear();
            act.clear();
            lp.clear();
            a_mb.clear();
            ret_mb.clear();
            for &i in chunk {
                obs.extend_from_slice(&batch.obs[i * od..(i + 1) * od]);
                act.extend_from_slice(&batch.actions[i * ad..(i + 1) * ad]);
                lp.push(batch.log_probs[i]);
                a_mb.push(adv[i]);
                ret_mb.push(returns[i]);
            }
            let (pl, mut pg, cf) = policy_loss_and_grad(cfg, policy, params, &obs, &act, &lp, &a_mb)?;

            let vcache = forward(&value.spec, &value.params, &obs)?;
            let m = chunk.len() as f64;
            let mut vl = 0.0;
            let up: Vec<f64> = vcache
                .output()
                .iter()
                .zip(&ret_mb)
                .map(|(v, r)| {
                    vl += (v - r) * (v - r);
                    2.0 * cfg.vf_coef * (v - r) / m
                })
                .collect();
            vl *= cfg.vf_coef / m;
            let mut vg = backward_params(&value.spec, &value.params, &vcache, &up)?;

            if !(pl.is_finite() && vl.is_finite() && pg.is_finite() && vg.is_finite()) {
                return Err(Error::Diverged(format!(
                    "ppo loss not finite: policy {pl}, value {vl}, |theta| {}, log_std {:?}",
                    params.norm(),
                    policy.log_std(params)
                )));
            }
            if cfg.max_grad_norm > 0.0 {
                clip_grad_norm(&mut pg, cfg.max_grad_norm);
                clip_grad_norm(&mut vg, cfg.max_grad_norm);
            }
            opt.step(params, &pg);
            policy.project(params);
            value.opt.step(&mut value.params, &vg);
            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.clip_frac += cf;
            stats.updates += 1;
        }
    }
    let u = stats.updates.max(1) as f64;
    stats.policy_loss /= u;
    stats.value_loss /= u;
    stats.clip_frac /= u;
    Ok(stats)
}

/// Result of [`Vppo::compute_jacobian`].
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    /// Mean undiscounted model return of the search policy.
    pub f_hat: f64,
    pub m_hat: Vec<f64>,
    pub true_return: f64,
    /// `k + 1` unit-norm (or zero) directions: fitness first, then measures.
    pub grads: Vec<ParamVector>,
    /// `true` where a direction came out exactly zero.
    pub zero: Vec<bool>,
    /// Episodes of the search policy itself.
    pub base: TrajectoryBatch,
}

/// PPO state shared by the gradient estimation streams and the walk.
#[derive(Debug, Clone, PartialEq)]
pub struct Vppo {
    pub cfg: PpoConfig,
    pub policy: GaussianPolicy,
    pub env: EnvSpec,
    /// Fitness stream first, then one per measure.
    pub stream_norms: Vec<RunningMeanStd>,
    pub stream_values: Vec<ValueNet>,
    pub walk_value: ValueNet,
    /// Run the streams on the rayon pool.
    pub parallel: bool,
}

impl Vppo {
    pub fn new(cfg: PpoConfig, env: EnvSpec, seed: u64) -> Result<Self> {
        cfg.validate()?;
        env.validate()?;
        let policy = GaussianPolicy::new(env.obs_dim(), &cfg.hidden, env.act_dim())?;
        let k = env.measure_dim();
        let stream_values = (0..=k)
            .map(|j| ValueNet::new(env.obs_dim(), &cfg.hidden, cfg.lr, sub_seed(seed, &[1, j as u64])))
            .collect::<Result<Vec<_>>>()?;
        let walk_value = ValueNet::new(env.obs_dim(), &cfg.hidden, cfg.lr, sub_seed(seed, &[2]))?;
        Ok(Vppo {
            policy,
            env,
            stream_norms: vec![RunningMeanStd::new(1); k + 1],
            stream_values,
            walk_value,
            cfg,
            parallel: false,
        })
    }

    pub fn k(&self) -> usize {
        self.env.measure_dim()
    }

    pub fn rollout<'a>(
        &'a self,
        params: &'a [f64],
        obs_stats: &'a RunningMeanStd,
        reward: &'a RewardModel,
        occupancy: &'a Occupancy,
    ) -> Rollout<'a> {
        Rollout {
            policy: &self.policy,
            params,
            obs_stats,
            env: &self.env,
            reward,
            occupancy,
            std_override: None,
        }
    }

    /// Estimates the fitness and measure gradients at `theta` by running
    /// `n1` PPO iterations per reward stream and differencing parameters.
    /// Observation statistics absorb the base batch, then stay frozen.
    pub fn compute_jacobian(
        &mut self,
        theta: &ParamVector,
        obs_stats: &mut RunningMeanStd,
        reward: &RewardModel,
        occupancy: &Occupancy,
        n1: usize,
        seed: u64,
    ) -> Result<Jacobian> {
        let base = self.rollout(theta, obs_stats, reward, occupancy).collect(1, sub_seed(seed, &[0]))?;
        obs_stats.update(&base.raw_obs);
        let frozen = obs_stats.clone();

        let k = self.k();
        let env = self.env;
        let cfg = &self.cfg;
        let policy = &self.policy;
        let run_stream = |j: usize, norm: &mut RunningMeanStd, value: &mut ValueNet| -> Result<ParamVector> {
            let mut params = theta.clone();
            let mut opt = Adam::new(params.len(), cfg.lr);
            let mut fresh;
            for it in 0..n1 {
                let batch = if it == 0 {
                    &base
                } else {
                    let r = Rollout {
                        policy,
                        params: &params,
                        obs_stats: &frozen,
                        env: &env,
                        reward,
                        occupancy,
                        std_override: None,
                    };
                    fresh = r.collect(1, sub_seed(seed, &[1, j as u64, it as u64]))?;
                    &fresh
                };
                let raw = if j == 0 { batch.r_f.clone() } else { batch.delta_stream(j - 1) };
                norm.update(&raw);
                let r = norm.normalize(&raw);
                ppo_update(cfg, policy, &mut params, &mut opt, value, batch, &r, sub_seed(seed, &[2, j as u64, it as u64]))?;
            }
            Ok(params.sub(theta))
        };
        let streams: Vec<Result<ParamVector>> = if self.parallel {
            self.stream_norms
                .par_iter_mut()
                .zip(self.stream_values.par_iter_mut())
                .enumerate()
                .map(|(j, (n, v))| run_stream(j, n, v))
                .collect()
        } else {
            self.stream_norms
                .iter_mut()
                .zip(self.stream_values.iter_mut())
                .enumerate()
                .map(|(j, (n, v))| run_stream(j, n, v))
                .collect()
        };
        let mut grads = Vec::with_capacity(k + 1);
        let mut zero = Vec::with_capacity(k + 1);
        for g in streams {
            let mut g = g?;
            zero.push(!g.normalize());
            grads.push(g);
        }
        Ok(Jacobian {
            f_hat: base.mean_model_return(),
            m_hat: base.mean_measure(),
            true_return: base.mean_true_return(),
            grads,
            zero,
            base,
        })
    }

    /// Moves `theta` with `n2` PPO iterations on the coefficient-weighted
    /// reward `|c0| f + sum_j c_j delta_j`, every stream normalized first.
    /// Returns the last batch collected.
    pub fn walk(
        &mut self,
        theta: &mut ParamVector,
        coeffs: &[f64],
        obs_stats: &mut RunningMeanStd,
        reward: &RewardModel,
        occupancy: &Occupancy,
        n2: usize,
        seed: u64,
    ) -> Result<Option<TrajectoryBatch>> {
        let k = self.k();
        if coeffs.len() != k + 1 {
            return Err(Error::dims("walk coefficients", k + 1, coeffs.len()));
        }
        let mut opt = Adam::new(theta.len(), self.cfg.lr);
        let mut last = None;
        for it in 0..n2 {
            let batch = self.rollout(theta, obs_stats, reward, occupancy).collect(1, sub_seed(seed, &[it as u64, 0]))?;
            obs_stats.update(&batch.raw_obs);
            let mut combined = vec![0.0; batch.len()];
            for j in 0..=k {
                let raw = if j == 0 { batch.r_f.clone() } else { batch.delta_stream(j - 1) };
                self.stream_norms[j].update(&raw);
                let w = if j == 0 { coeffs[0].abs() } else { coeffs[j] };
                for (c, x) in combined.iter_mut().zip(self.stream_norms[j].normalize(&raw)) {
                    *c += w * x;
                }
            }
            ppo_update(
                &self.cfg,
                &self.policy,
                theta,
                &mut opt,
                &mut self.walk_value,
                &batch,
                &combined,
                sub_seed(seed, &[it as u64, 1]),
            )?;
            last = Some(batch);
        }
        Ok(last)
    }
}
