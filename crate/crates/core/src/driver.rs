//! The QD imitation loop: gradient estimation, branching, archive insertion,
//! coefficient adaptation, walking, reward-model updates and restarts.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveConfig, ArchiveMetrics, InsertOutcome, Occupancy};
use crate::demos::DemoSet;
use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::mlp::{GaussianPolicy, ParamVector};
use crate::ppo::{ppo_update, sub_seed, PpoConfig, RunningMeanStd, TrajectoryBatch, ValueNet, Vppo};
use crate::reward::{BonusParams, RewardConfig, RewardKind, RewardModel, UpdateStats};
use crate::xnes::CoeffDistribution;

/// A policy as stored in the archive: parameters plus the observation
/// statistics it was evaluated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub params: ParamVector,
    pub obs_stats: RunningMeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdConfig {
    pub env: EnvSpec,
    pub archive: ArchiveConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub bonus: BonusParams,
    pub iterations: usize,
    pub n1: usize,
    pub n2: usize,
    pub lambda: usize,
    pub sigma_g: f64,
    pub seed: u64,
}

impl QdConfig {
    /// Desk defaults for an environment: 25 cells per measure dimension over
    /// `[0, 1]`, 300 iterations, 8 branches.
    pub fn defaults(kind: EnvKind) -> Self {
        QdConfig {
            env: EnvSpec { kind, horizon: 100, batch: 64 },
            archive: ArchiveConfig::uniform(kind.measure_dim(), 0.0, 1.0, 25, 0.1),
            ppo: PpoConfig::default(),
            reward: RewardConfig::default(),
            bonus: BonusParams::default(),
            iterations: 300,
            n1: 10,
            n2: 10,
            lambda: 8,
            sigma_g: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.archive.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.archive.dims() != self.env.measure_dim() {
            return Err(Error::Config(format!(
                "archive has {} measure dimensions but {} yields {}",
                self.archive.dims(),
                self.env.kind.name(),
                self.env.measure_dim()
            )));
        }
        self.ppo.validate()?;
        self.reward.validate()?;
        self.bonus.validate()?;
        if self.iterations == 0 {
            return Err(Error::Config("qd.iterations must be at least 1".into()));
        }
        if self.lambda < 2 {
            return Err(Error::Config(format!("qd.lambda must be at least 2, got {}", self.lambda)));
        }
        if !(self.sigma_g > 0.0 && self.sigma_g.is_finite()) {
            return Err(Error::Config(format!("qd.sigma_g must be positive, got {}", self.sigma_g)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    /// 1-based.
    pub iter: usize,
    /// Scored with the environment's true reward.
    pub metrics: ArchiveMetrics,
    /// Scored with the learned reward that drives the search.
    pub model_metrics: ArchiveMetrics,
    pub improvements: Vec<f64>,
    /// Share of branch episodes whose measure fell in an empty cell.
    pub empty_cell_fraction: f64,
    pub restart: bool,
    pub wall_s: f64,
    pub search_fitness: f64,
    pub search_true_return: f64,
    pub search_measure: Vec<f64>,
    pub reward_update: UpdateStats,
}

/// `theta + |c0| g0 + sum_j c_j g_j`.
pub fn branch_params(theta: &[f64], grads: &[ParamVector], coeffs: &[f64]) -> Result<ParamVector> {
    if grads.len() != coeffs.len() {
        return Err(Error::dims("branch coefficients", grads.len(), coeffs.len()));
    }
    let mut out = ParamVector(theta.to_vec());
    for (j, (g, &c)) in grads.iter().zip(coeffs).enumerate() {
        if g.len() != theta.len() {
            return Err(Error::dims("gradient length", theta.len(), g.len()));
        }
        out.axpy(if j == 0 { c.abs() } else { c }, g);
    }
    Ok(out)
}

/// Evaluation of one branched solution.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchResult {
    pub params: ParamVector,
    pub fitness: f64,
    pub true_return: f64,
    pub measure: Vec<f64>,
    pub outcome: InsertOutcome,
    pub empty_hits: usize,
    pub episodes: usize,
}

/// A QD run that can be advanced one iteration at a time.
#[derive(Debug, Clone)]
pub struct QdRun {
    pub cfg: QdConfig,
    pub vppo: Vppo,
    pub reward: RewardModel,
    pub dist: CoeffDistribution,
    /// Learned-fitness archive; drives acceptance, improvements and the bonus.
    pub archive: Archive<PolicySnapshot>,
    /// Same measures scored with the true reward; reported metrics.
    pub true_archive: Archive<()>,
    pub theta: ParamVector,
    pub obs_stats: RunningMeanStd,
    pub reports: Vec<IterationReport>,
    /// Run jacobian streams and branch rollouts on the rayon pool.
    pub parallel: bool,
    /// Record elapsed seconds in reports; off keeps reports reproducible.
    pub wall_clock: bool,
    rng: ChaCha8Rng,
}

impl QdRun {
    pub fn new(cfg: QdConfig, demos: Option<&DemoSet>) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let vppo = Vppo::new(cfg.ppo.clone(), cfg.env, sub_seed(seed, &[10]))?;
        let reward = RewardModel::new(&cfg.reward, cfg.env.kind, cfg.bonus, demos, sub_seed(seed, &[11]))?;
        let dist = CoeffDistribution::new(cfg.env.measure_dim() + 1, cfg.sigma_g)?;
        let theta = vppo.policy.init(sub_seed(seed, &[12]));
        Ok(QdRun {
            archive: Archive::new(cfg.archive.clone())?,
            true_archive: Archive::new(cfg.archive.clone())?,
            obs_stats: RunningMeanStd::new(cfg.env.obs_dim()),
            rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, &[13])),
            reports: Vec::new(),
            parallel: false,
            wall_clock: false,
            cfg,
            vppo,
            reward,
            dist,
            theta,
        })
    }

    pub fn set_parallel(&mut self, on: bool) {
        self.parallel = on;
        self.vppo.parallel = on;
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.vppo.policy
    }

    pub fn is_finished(&self) -> bool {
        self.reports.len() >= self.cfg.iterations
    }

    /// Rolls out each branch once and inserts the results in order.
    pub fn branch_and_evaluate(
        &mut self,
        grads: &[ParamVector],
        coeffs: &[Vec<f64>],
        occupancy: &Occupancy,
        seed: u64,
    ) -> Result<Vec<BranchResult>> {
        let mut params: Vec<ParamVector> = coeffs
            .iter()
            .map(|c| branch_params(&self.theta, grads, c))
            .collect::<Result<_>>()?;
        params.iter_mut().for_each(|p| self.vppo.policy.project(p));
        let vppo = &self.vppo;
        let stats = &self.obs_stats;
        let reward = &self.reward;
        let eval = |(i, p): (usize, &ParamVector)| -> Result<TrajectoryBatch> {
            vppo.rollout(p, stats, reward, occupancy).collect(1, sub_seed(seed, &[i as u64]))
        };
        let batches: Vec<Result<TrajectoryBatch>> = if self.parallel {
            params.par_iter().enumerate().map(eval).collect()
        } else {
            params.iter().enumerate().map(eval).collect()
        };
        let mut out = Vec::with_capacity(params.len());
        for (p, b) in params.into_iter().zip(batches) {
            let b = b?;
            let measure = b.mean_measure();
            let fitness = b.mean_model_return();
            let true_return = b.mean_true_return();
            let snap = PolicySnapshot {
                params: p.clone(),
                obs_stats: self.obs_stats.clone(),
            };
            let outcome = self.archive.insert(fitness, &measure, snap)?;
            self.true_archive.insert(true_return, &measure, ())?;
            out.push(BranchResult {
                params: p,
                fitness,
                true_return,
                measure,
                outcome,
                empty_hits: b.empty_hits,
                episodes: b.episodes(),
            });
        }
        Ok(out)
    }

    /// Restarts the coefficient search from a uniformly drawn elite when
    /// nothing was accepted this iteration.
    pub fn maybe_restart(&mut self, any_change: bool) -> Result<bool> {
        if any_change {
            return Ok(false);
        }
        let elite = self.archive.random_elite(&mut self.rng)?;
        self.theta = elite.solution.params.clone();
        self.obs_stats = elite.solution.obs_stats.clone();
        self.dist.restart(self.cfg.sigma_g)?;
        Ok(true)
    }

    /// One full iteration.
    pub fn step(&mut self) -> Result<&IterationReport> {
        let start = self.wall_clock.then(Instant::now);
        let iter = self.reports.len() + 1;
        let seed = sub_seed(self.cfg.seed, &[100, iter as u64]);
        let occupancy = self.archive.occupancy();

        let eval_stats = self.obs_stats.clone();
        let jac = self.vppo.compute_jacobian(
            &self.theta,
            &mut self.obs_stats,
            &self.reward,
            &occupancy,
            self.cfg.n1,
            sub_seed(seed, &[1]),
        )?;
        let own = self.archive.insert(
            jac.f_hat,
            &jac.m_hat,
            PolicySnapshot {
                params: self.theta.clone(),
                obs_stats: eval_stats,
            },
        )?;
        self.true_archive.insert(jac.true_return, &jac.m_hat, ())?;

        let sample = self.dist.sample(self.cfg.lambda, &mut self.rng)?;
        let branches = self.branch_and_evaluate(&jac.grads, &sample.coeffs, &occupancy, sub_seed(seed, &[2]))?;
        let improvements: Vec<f64> = branches.iter().map(|b| b.outcome.improvement).collect();
        let any_change = own.accepted || branches.iter().any(|b| b.outcome.accepted);
        self.dist.adapt(&sample.draws, &improvements)?;

        let coeffs = self.dist.mean();
        let walked = self.vppo.walk(
            &mut self.theta,
            &coeffs,
            &mut self.obs_stats,
            &self.reward,
            &occupancy,
            self.cfg.n2,
            sub_seed(seed, &[3]),
        )?;
        let policy_batch = walked.as_ref().unwrap_or(&jac.base);
        let reward_update = self.reward.update(policy_batch.step_batch(), sub_seed(seed, &[4]))?;
        let restart = self.maybe_restart(any_change)?;

        let hits: usize = branches.iter().map(|b| b.empty_hits).sum();
        let episodes: usize = branches.iter().map(|b| b.episodes).sum();
        self.reports.push(IterationReport {
            iter,
            metrics: self.true_archive.metrics(),
            model_metrics: self.archive.metrics(),
            improvements,
            empty_cell_fraction: if episodes == 0 { 0.0 } else { hits as f64 / episodes as f64 },
            restart,
            wall_s: start.map_or(0.0, |s| s.elapsed().as_secs_f64()),
            search_fitness: jac.f_hat,
            search_true_return: jac.true_return,
            search_measure: jac.m_hat,
            reward_update,
        });
        Ok(self.reports.last().unwrap())
    }

    /// Runs the remaining iterations, handing each report to `observe`.
    pub fn run_with(&mut self, mut observe: impl FnMut(&IterationReport) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let r = self.step()?;
            observe(r)?;
        }
        Ok(())
    }
}

/// Runs a full experiment. On failure the reports gathered so far are
/// returned alongside the error.
pub fn run(cfg: QdConfig, demos: Option<&DemoSet>) -> std::result::Result<(QdRun, Vec<IterationReport>), (Error, Vec<IterationReport>)> {
    let mut qd = QdRun::new(cfg, demos).map_err(|e| (e, Vec::new()))?;
    match qd.run_with(|_| Ok(())) {
        Ok(()) => {
            let reports = qd.reports.clone();
            Ok((qd, reports))
        }
        Err(e) => Err((e, qd.reports.clone())),
    }
}

/// Settings of the Monte-Carlo check that PPO on the empty-region indicator
/// raises the probability of reaching the empty region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaConfig {
    pub horizon: usize,
    /// Measures strictly above this value form the empty region.
    pub threshold: f64,
    pub n1: usize,
    /// Episodes per probability estimate.
    pub episodes: usize,
    /// Episodes per PPO iteration.
    pub batch: usize,
    pub seeds: Vec<u64>,
    pub ppo: PpoConfig,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig {
            horizon: 20,
            threshold: 0.8,
            n1: 10,
            episodes: 2000,
            batch: 1024,
            seeds: vec![0, 1, 2],
            ppo: PpoConfig::default(),
        }
    }
}

impl LemmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.batch == 0 {
            return Err(Error::Config("lemma.horizon and lemma.batch must be positive".into()));
        }
        if self.episodes < 2000 {
            return Err(Error::Config(format!("lemma.episodes must be at least 2000, got {}", self.episodes)));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("lemma.threshold must lie in [0, 1), got {}", self.threshold)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("lemma.seeds must not be empty".into()));
        }
        self.ppo.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaOutcome {
    pub seed: u64,
    pub p_old: f64,
    pub p_new: f64,
}

impl LemmaOutcome {
    /// Monte-Carlo standard error of a proportion estimate.
    pub fn std_error(p: f64, episodes: usize) -> f64 {
        (p * (1.0 - p) / episodes as f64).sqrt()
    }
}

/// Archive over ChainHopper measures with one cell per achievable measure
/// `i / T`, every cell at or below `threshold` pre-occupied.
pub fn lemma_archive(horizon: usize, threshold: f64) -> Result<Archive<()>> {
    let t = horizon as f64;
    let cfg = ArchiveConfig::uniform(1, -0.5 / t, 1.0 + 0.5 / t, horizon + 1, 0.1);
    let mut a = Archive::new(cfg)?;
    for i in 0..=horizon {
        let m = i as f64 / t;
        if m <= threshold {
            a.insert(0.0, &[m], ())?;
        }
    }
    Ok(a)
}

/// Estimates the probability of landing in the empty region before and
/// after `n1` PPO iterations on the indicator reward, once per seed. Both
/// estimates reuse the same action noise.
pub fn verify_lemma(cfg: &LemmaConfig) -> Result<Vec<LemmaOutcome>> {
    cfg.validate()?;
    let archive = lemma_archive(cfg.horizon, cfg.threshold)?;
    let occupancy = archive.occupancy();
    let kind = EnvKind::ChainHopper;
    let reward = RewardModel::new(
        &RewardConfig {
            kind: RewardKind::Zero,
            ..RewardConfig::default()
        },
        kind,
        BonusParams { p: 0.0, q: 1.0 },
        None,
        0,
    )?;
    let eval_env = EnvSpec::new(kind, cfg.horizon, cfg.episodes)?;
    let train_env = EnvSpec::new(kind, cfg.horizon, cfg.batch)?;
    let policy = GaussianPolicy::new(kind.obs_dim(), &cfg.ppo.hidden, kind.act_dim())?;

    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        // Zero mean head: actions are symmetric around 0, so every step moves
        // right with probability one half.
        let mut theta = policy.init(sub_seed(seed, &[0]));
        let head = policy.net.param_count() - policy.act_dim() * (policy.net.layer_sizes[policy.net.num_layers() - 1] + 1);
        theta[head..policy.net.param_count()].iter_mut().for_each(|w| *w = 0.0);

        let mut stats = RunningMeanStd::new(kind.obs_dim());
        let warm = crate::ppo::Rollout {
            policy: &policy,
            params: &theta,
            obs_stats: &stats,
            env: &train_env,
            reward: &reward,
            occupancy: &occupancy,
            std_override: None,
        }
        .collect(1, sub_seed(seed, &[1]))?;
        stats.update(&warm.raw_obs);

        let eval_seed = sub_seed(seed, &[2]);
        let estimate = |params: &[f64]| -> Result<f64> {
            let b = crate::ppo::Rollout {
                policy: &policy,
                params,
                obs_stats: &stats,
                env: &eval_env,
                reward: &reward,
                occupancy: &occupancy,
                std_override: None,
            }
            .collect(1, eval_seed)?;
            Ok(b.empty_fraction())
        };
        let p_old = estimate(&theta)?;

        let mut opt = crate::mlp::Adam::new(theta.len(), cfg.ppo.lr);
        let mut value = ValueNet::new(kind.obs_dim(), &cfg.ppo.hidden, cfg.ppo.lr, sub_seed(seed, &[3]))?;
        let mut norm = RunningMeanStd::new(1);
        for it in 0..cfg.n1 {
            let batch = crate::ppo::Rollout {
                policy: &policy,
                params: &theta,
                obs_stats: &stats,
                env: &train_env,
                reward: &reward,
                occupancy: &occupancy,
                std_override: None,
            }
            .collect(1, sub_seed(seed, &[4, it as u64]))?;
            norm.update(&batch.r_f);
            let r = norm.normalize(&batch.r_f);
            ppo_update(&cfg.ppo, &policy, &mut theta, &mut opt, &mut value, &batch, &r, sub_seed(seed, &[5, it as u64]))?;
        }
        let p_new = estimate(&theta)?;
        out.push(LemmaOutcome { seed, p_old, p_new });
    }
    Ok(out)
}

/// Binomial upper tail `P(X >= s)` for `X ~ Binomial(n, 1/2)`.
pub fn fair_binomial_tail(n: usize, s: usize) -> f64 {
    let mut c = 1.0f64;
    let mut total = 0.0;
    for i in 0..=n {
        if i >= s {
            total += c;
        }
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    total / 2f64.powi(n as i32)
}

/// Re-scores every stored elite with the environment's true reward.
pub fn rescore_archive(
    archive: &Archive<PolicySnapshot>,
    policy: &GaussianPolicy,
    env: &EnvSpec,
    seed: u64,
) -> Result<Archive<PolicySnapshot>> {
    let reward = RewardModel::new(
        &RewardConfig {
            kind: RewardKind::TrueReward,
            ..RewardConfig::default()
        },
        env.kind,
        BonusParams::OFF,
        None,
        0,
    )?;
    let occupancy = archive.occupancy();
    let mut out = Archive::new(archive.config().clone())?;
    for (cell, elite) in archive.best_elites() {
        let b = crate::ppo::Rollout {
            policy,
            params: &elite.solution.params,
            obs_stats: &elite.solution.obs_stats,
            env,
            reward: &reward,
            occupancy: &occupancy,
            std_override: None,
        }
        .collect(1, sub_seed(seed, &[cell as u64]))?;
        out.insert(b.mean_true_return(), &b.mean_measure(), elite.solution.clone())?;
    }
    Ok(out)
}
