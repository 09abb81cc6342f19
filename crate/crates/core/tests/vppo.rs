use qdil::archive::{Archive, ArchiveConfig, Occupancy};
use qdil::demos::default_demos;
use qdil::envs::{EnvKind, EnvSpec};
use qdil::mlp::{Adam, GaussianPolicy, ParamVector};
use qdil::ppo::{gae, ppo_update, policy_loss_and_grad, surrogate_objective, sub_seed, PpoConfig, RunningMeanStd, ValueNet, Vppo};
use qdil::reward::{BonusParams, RewardConfig, RewardKind, RewardModel};

fn small_env() -> EnvSpec {
    EnvSpec::new(EnvKind::PointFlyer, 20, 8).unwrap()
}

fn empty_occupancy(env: &EnvSpec) -> Occupancy {
    Archive::<()>::new(ArchiveConfig::uniform(env.measure_dim(), 0.0, 1.0, 10, 0.1))
        .unwrap()
        .occupancy()
}

fn gail(env: &EnvSpec) -> RewardModel {
    let demos = default_demos(env.kind, env.horizon, 4).unwrap();
    RewardModel::new(&RewardConfig::default(), env.kind, BonusParams::default(), Some(&demos), 3).unwrap()
}

fn true_reward(env: &EnvSpec) -> RewardModel {
    let cfg = RewardConfig { kind: RewardKind::TrueReward, ..RewardConfig::default() };
    RewardModel::new(&cfg, env.kind, BonusParams::OFF, None, 0).unwrap()
}

fn standardized(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| (x - m) / (sd + 1e-8)).collect()
}

#[test]
fn empty_request_gives_empty_batch() {
    let env = small_env();
    let vppo = Vppo::new(PpoConfig::default(), env, 0).unwrap();
    let theta = vppo.policy.init(1);
    let stats = RunningMeanStd::new(env.obs_dim());
    let (reward, occ) = (true_reward(&env), empty_occupancy(&env));
    let b = vppo.rollout(&theta, &stats, &reward, &occ).collect(0, 5).unwrap();
    assert!(b.is_empty() && b.measures.is_empty());
}

#[test]
fn collection_is_deterministic() {
    let env = small_env();
    let vppo = Vppo::new(PpoConfig::default(), env, 0).unwrap();
    let theta = vppo.policy.init(1);
    let stats = RunningMeanStd::new(env.obs_dim());
    let (reward, occ) = (gail(&env), empty_occupancy(&env));
    let mut r = vppo.rollout(&theta, &stats, &reward, &occ);
    r.std_override = Some(1e-6);
    let a = r.collect(1, 11).unwrap();
    let b = r.collect(1, 11).unwrap();
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.r_f, b.r_f);
    assert_eq!(a.measures, b.measures);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let env = small_env();
    let cfg = PpoConfig { lr: 0.0, ..PpoConfig::default() };
    let vppo = Vppo::new(cfg.clone(), env, 0).unwrap();
    let mut theta = vppo.policy.init(2);
    let before = theta.clone();
    let stats = RunningMeanStd::new(env.obs_dim());
    let (reward, occ) = (true_reward(&env), empty_occupancy(&env));
    let batch = vppo.rollout(&theta, &stats, &reward, &occ).collect(1, 3).unwrap();
    let mut value = ValueNet::new(env.obs_dim(), &cfg.hidden, 0.0, 4).unwrap();
    let mut opt = Adam::new(theta.len(), 0.0);
    ppo_update(&cfg, &vppo.policy, &mut theta, &mut opt, &mut value, &batch, &batch.true_rewards, 9).unwrap();
    assert_eq!(theta, before);
}

#[test]
fn saturated_ratio_contributes_no_gradient() {
    let policy = GaussianPolicy::new(2, &[4], 1).unwrap();
    let params = policy.init(0);
    let cfg = PpoConfig::default();
    let obs = [0.3, -0.2];
    let act = [0.5];
    let mu = policy.mean(&params, &obs).unwrap().into_output();
    let ls = policy.log_std(&params)[0];
    let logp = -0.5 * ((act[0] - mu[0]) / ls.exp()).powi(2) - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
    // Old log-prob lower by 1 gives ratio e > 1.2.
    let (_, g, frac) = policy_loss_and_grad(&cfg, &policy, &params, &obs, &act, &[logp - 1.0], &[1.0]).unwrap();
    assert_eq!(frac, 1.0);
    assert!(g.0.iter().all(|&x| x == 0.0));
    let (_, g, frac) = policy_loss_and_grad(&cfg, &policy, &params, &obs, &act, &[logp], &[1.0]).unwrap();
    assert_eq!(frac, 0.0);
    assert!(g.norm() > 0.0);
}

#[test]
fn one_update_raises_the_surrogate() {
    let env = small_env();
    let cfg = PpoConfig { epochs: 1, ..PpoConfig::default() };
    let policy = GaussianPolicy::new(env.obs_dim(), &cfg.hidden, env.act_dim()).unwrap();
    let (reward, occ) = (true_reward(&env), empty_occupancy(&env));
    let stats = RunningMeanStd::new(env.obs_dim());
    let mut wins = 0;
    for trial in 0..100u64 {
        let mut theta = policy.init(trial);
        let batch = qdil::ppo::Rollout {
            policy: &policy,
            params: &theta,
            obs_stats: &stats,
            env: &env,
            reward: &reward,
            occupancy: &occ,
            std_override: None,
        }
        .collect(1, sub_seed(trial, &[1]))
        .unwrap();
        let mut value = ValueNet::new(env.obs_dim(), &cfg.hidden, cfg.lr, trial).unwrap();
        let v = value.predict(&batch.obs).unwrap();
        let (adv, _) = gae(&batch.true_rewards, &v, &batch.dones, cfg.gamma, cfg.gae_lambda).unwrap();
        let adv = standardized(&adv);
        let before = surrogate_objective(&cfg, &policy, &theta, &batch.obs, &batch.actions, &batch.log_probs, &adv).unwrap();
        let mut opt = Adam::new(theta.len(), cfg.lr);
        ppo_update(&cfg, &policy, &mut theta, &mut opt, &mut value, &batch, &batch.true_rewards, trial).unwrap();
        let after = surrogate_objective(&cfg, &policy, &theta, &batch.obs, &batch.actions, &batch.log_probs, &adv).unwrap();
        wins += usize::from(after > before);
    }
    assert!(wins >= 95, "surrogate rose in {wins}/100 trials");
}

#[test]
fn no_iterations_give_zero_gradients() {
    let env = small_env();
    let mut vppo = Vppo::new(PpoConfig::default(), env, 0).unwrap();
    let theta = vppo.policy.init(3);
    let mut stats = RunningMeanStd::new(env.obs_dim());
    let (reward, occ) = (gail(&env), empty_occupancy(&env));
    let j = vppo.compute_jacobian(&theta, &mut stats, &reward, &occ, 0, 1).unwrap();
    assert_eq!(j.grads.len(), 3);
    assert!(j.zero.iter().all(|&z| z));
    assert!(j.grads.iter().all(|g| g.0.iter().all(|&x| x == 0.0)));
}

#[test]
fn jacobian_gradients_are_unit_or_zero() {
    let env = small_env();
    let mut vppo = Vppo::new(PpoConfig::default(), env, 0).unwrap();
    let theta = vppo.policy.init(4);
    let mut stats = RunningMeanStd::new(env.obs_dim());
    let (reward, occ) = (gail(&env), empty_occupancy(&env));
    let j = vppo.compute_jacobian(&theta, &mut stats, &reward, &occ, 2, 2).unwrap();
    for (g, &z) in j.grads.iter().zip(&j.zero) {
        if z {
            assert_eq!(g.norm(), 0.0);
        } else {
            assert!((g.norm() - 1.0).abs() < 1e-12);
        }
    }
    assert!(j.zero.iter().any(|&z| !z));
    assert_eq!(j.m_hat.len(), 2);
}

#[test]
fn walk_without_iterations_or_coefficients_is_still() {
    let env = small_env();
    let mut vppo = Vppo::new(PpoConfig::default(), env, 0).unwrap();
    let (reward, occ) = (gail(&env), empty_occupancy(&env));
    let mut theta = vppo.policy.init(5);
    let before = theta.clone();
    let mut stats = RunningMeanStd::new(env.obs_dim());
    assert!(vppo.walk(&mut theta, &[0.3, 1.0, -1.0], &mut stats, &reward, &occ, 0, 1).unwrap().is_none());
    assert_eq!(theta, before);
    vppo.walk(&mut theta, &[0.0, 0.0, 0.0], &mut stats, &reward, &occ, 3, 1).unwrap();
    assert_eq!(theta, before);
    assert!(vppo.walk(&mut theta, &[1.0, 0.0], &mut stats, &reward, &occ, 1, 1).is_err());
}

#[test]
fn fitness_only_walk_matches_plain_ppo() {
    let env = small_env();
    let cfg = PpoConfig::default();
    let (reward, occ) = (gail(&env), empty_occupancy(&env));
    let mut vppo = Vppo::new(cfg.clone(), env, 7).unwrap();
    let start = vppo.policy.init(6);

    // Manual path: same rollouts, the f stream normalized on its own.
    let policy = vppo.policy.clone();
    let mut norm = vppo.stream_norms[0].clone();
    let mut value = vppo.walk_value.clone();
    let mut manual = start.clone();
    let mut manual_stats = RunningMeanStd::new(env.obs_dim());
    let mut opt = Adam::new(manual.len(), cfg.lr);
    let seed = 21;
    for it in 0..3u64 {
        let batch = qdil::ppo::Rollout {
            policy: &policy,
            params: &manual,
            obs_stats: &manual_stats,
            env: &env,
            reward: &reward,
            occupancy: &occ,
            std_override: None,
        }
        .collect(1, sub_seed(seed, &[it, 0]))
        .unwrap();
        manual_stats.update(&batch.raw_obs);
        norm.update(&batch.r_f);
        let r = norm.normalize(&batch.r_f);
        ppo_update(&cfg, &policy, &mut manual, &mut opt, &mut value, &batch, &r, sub_seed(seed, &[it, 1])).unwrap();
    }

    let mut walked: ParamVector = start.clone();
    let mut stats = RunningMeanStd::new(env.obs_dim());
    vppo.walk(&mut walked, &[1.0, 0.0, 0.0], &mut stats, &reward, &occ, 3, seed).unwrap();
    assert_ne!(walked, start);
    assert_eq!(walked, manual);
    // The sign of the fitness coefficient is ignored.
    let mut vppo2 = Vppo::new(cfg, env, 7).unwrap();
    let mut neg = start.clone();
    let mut stats = RunningMeanStd::new(env.obs_dim());
    vppo2.walk(&mut neg, &[-1.0, 0.0, 0.0], &mut stats, &reward, &occ, 3, seed).unwrap();
    assert_eq!(neg, manual);
}
