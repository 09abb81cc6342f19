//! Vectorized toy environments with per-step measure proxies.
//!
//! `PointFlyer` is a 2-D point mass. Its fitness rewards distance travelled in
//! any direction and its two measure proxies are the signs of the velocity
//! components, so every region of the measure square admits fast policies.
//! `ChainHopper` walks a chain of `CHAIN_LEN` cells; its single proxy flags a
//! step to the right.
//!
//! All instances in a batch advance in lockstep and finish together at
//! `t = horizon`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FLYER_ACCEL: f64 = 0.2;
pub const FLYER_MAX_SPEED: f64 = 2.0;
pub const FLYER_BOUND: f64 = 50.0;
pub const FLYER_ACTION_COST: f64 = 0.05;
pub const CHAIN_LEN: usize = 10;

/// Speed cap of the scripted expert when it has to alternate directions.
const EXPERT_DUTY_SPEED: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    PointFlyer,
    ChainHopper,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointFlyer => "PointFlyer",
            EnvKind::ChainHopper => "ChainHopper",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "PointFlyer" => Ok(EnvKind::PointFlyer),
            "ChainHopper" => Ok(EnvKind::ChainHopper),
            other => Err(Error::InvalidArgument(format!("unknown environment `{other}`"))),
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::PointFlyer => 5,
            EnvKind::ChainHopper => 3,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            EnvKind::PointFlyer => 2,
            EnvKind::ChainHopper => 1,
        }
    }

    pub fn measure_dim(self) -> usize {
        match self {
            EnvKind::PointFlyer => 2,
            EnvKind::ChainHopper => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub horizon: usize,
    pub batch: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, horizon: usize, batch: usize) -> Result<Self> {
        let spec = EnvSpec { kind, horizon, batch };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.kind.act_dim()
    }

    pub fn measure_dim(&self) -> usize {
        self.kind.measure_dim()
    }
}

/// Physical state of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InstanceState {
    Flyer { pos: [f64; 2], vel: [f64; 2] },
    Hopper { cell: usize, last_right: bool },
}

impl InstanceState {
    pub fn initial(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PointFlyer => InstanceState::Flyer {
                pos: [0.0; 2],
                vel: [0.0; 2],
            },
            EnvKind::ChainHopper => InstanceState::Hopper {
                cell: 0,
                last_right: false,
            },
        }
    }

    /// Observation at time `t` of an episode of length `horizon`.
    pub fn observe(&self, t: usize, horizon: usize, out: &mut [f64]) {
        let phase = t as f64 / horizon as f64;
        match *self {
            InstanceState::Flyer { pos, vel } => {
                out[0] = pos[0] / FLYER_BOUND;
                out[1] = pos[1] / FLYER_BOUND;
                out[2] = vel[0] / FLYER_MAX_SPEED;
                out[3] = vel[1] / FLYER_MAX_SPEED;
                out[4] = phase;
            }
            InstanceState::Hopper { cell, last_right } => {
                out[0] = cell as f64 / (CHAIN_LEN - 1) as f64;
                out[1] = if last_right { 1.0 } else { 0.0 };
                out[2] = phase;
            }
        }
    }

    /// Measure proxies of this (post-step) state.
    pub fn deltas(&self, out: &mut [f64]) {
        match *self {
            InstanceState::Flyer { vel, .. } => {
                out[0] = indicator(vel[0] > 0.0);
                out[1] = indicator(vel[1] > 0.0);
            }
            InstanceState::Hopper { last_right, .. } => out[0] = indicator(last_right),
        }
    }

    /// Pure transition. Actions are clipped to `[-1, 1]`. Returns the true
    /// reward of the step.
    pub fn advance(&mut self, action: &[f64]) -> f64 {
        match self {
            InstanceState::Flyer { pos, vel } => {
                let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
                let mut moved_sq = 0.0;
                for j in 0..2 {
                    vel[j] = (vel[j] + FLYER_ACCEL * a[j]).clamp(-FLYER_MAX_SPEED, FLYER_MAX_SPEED);
                    let next = (pos[j] + vel[j]).clamp(-FLYER_BOUND, FLYER_BOUND);
                    moved_sq += (next - pos[j]) * (next - pos[j]);
                    pos[j] = next;
                }
                moved_sq.sqrt() - FLYER_ACTION_COST * (a[0] * a[0] + a[1] * a[1])
            }
            InstanceState::Hopper { cell, last_right } => {
                let right = action[0] > 0.0;
                let before = *cell;
                *cell = if right {
                    (before + 1).min(CHAIN_LEN - 1)
                } else {
                    before.saturating_sub(1)
                };
                *last_right = right;
                indicator(*cell > before)
            }
        }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// `batch x obs_dim`
    pub obs: Vec<f64>,
    /// True environment reward; used for metrics only.
    pub true_reward: Vec<f64>,
    /// `batch x k`, each entry 0 or 1.
    pub deltas: Vec<f64>,
    pub done: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecEnv {
    spec: EnvSpec,
    seed: u64,
    t: usize,
    states: Vec<InstanceState>,
}

impl VecEnv {
    /// Fresh batch at the initial state. Initial states are deterministic, the
    /// seed is recorded for reproducibility of callers that derive from it.
    pub fn reset(spec: EnvSpec, seed: u64) -> Result<(Self, Vec<f64>)> {
        spec.validate()?;
        let env = VecEnv {
            spec,
            seed,
            t: 0,
            states: vec![InstanceState::initial(spec.kind); spec.batch],
        };
        let obs = env.observations();
        Ok((env, obs))
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.spec.horizon
    }

    pub fn states(&self) -> &[InstanceState] {
        &self.states
    }

    /// Restarts every instance at the initial state.
    pub fn restart(&mut self) -> Vec<f64> {
        self.t = 0;
        self.states.fill(InstanceState::initial(self.spec.kind));
        self.observations()
    }

    pub fn observations(&self) -> Vec<f64> {
        let d = self.spec.obs_dim();
        let mut obs = vec![0.0; self.spec.batch * d];
        for (s, o) in self.states.iter().zip(obs.chunks_mut(d)) {
            s.observe(self.t, self.spec.horizon, o);
        }
        obs
    }

    /// Advances every instance by one step; `actions` is `batch x act_dim`.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeDone(0));
        }
        let ad = self.spec.act_dim();
        if actions.len() != self.spec.batch * ad {
            return Err(Error::dims("actions", self.spec.batch * ad, actions.len()));
        }
        let k = self.spec.measure_dim();
        let mut true_reward = Vec::with_capacity(self.spec.batch);
        let mut deltas = vec![0.0; self.spec.batch * k];
        for (i, s) in self.states.iter_mut().enumerate() {
            true_reward.push(s.advance(&actions[i * ad..(i + 1) * ad]));
            s.deltas(&mut deltas[i * k..(i + 1) * k]);
        }
        self.t += 1;
        let done = vec![self.is_done(); self.spec.batch];
        Ok(StepResult {
            obs: self.observations(),
            true_reward,
            deltas,
            done,
        })
    }
}

/// One complete episode. `obs[t]` is the observation the action `actions[t]`
/// was taken in and `deltas[t]` the proxies of the state it led to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub obs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<Vec<f64>>>,
    pub deltas: Vec<Vec<f64>>,
    pub measure: Vec<f64>,
    /// True (environment) return.
    pub ret: f64,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Per-dimension mean of the proxies over the episode.
pub fn episode_measure(deltas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = deltas
        .first()
        .ok_or_else(|| Error::InvalidArgument("episode measure of an empty sequence".into()))?;
    let k = first.len();
    let mut m = vec![0.0; k];
    for d in deltas {
        if d.len() != k {
            return Err(Error::dims("delta vector", k, d.len()));
        }
        for (acc, x) in m.iter_mut().zip(d) {
            *acc += x;
        }
    }
    let n = deltas.len() as f64;
    m.iter_mut().for_each(|x| *x /= n);
    Ok(m)
}

/// Duty-cycling controller that tracks a target measure.
///
/// Per dimension it pushes toward positive velocity while the running fraction
/// of positive steps is below the target, and toward negative velocity
/// otherwise. Targets of exactly 0 or 1 push at full thrust the whole episode;
/// intermediate targets cap the speed so one step changes the proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedExpert {
    kind: EnvKind,
    target: Vec<f64>,
    positives: Vec<usize>,
    steps: usize,
}

impl ScriptedExpert {
    pub fn new(kind: EnvKind, target: &[f64]) -> Result<Self> {
        if target.len() != kind.measure_dim() {
            return Err(Error::dims("target measure", kind.measure_dim(), target.len()));
        }
        if target.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidArgument(format!("target measure {target:?} outside [0, 1]")));
        }
        Ok(ScriptedExpert {
            kind,
            target: target.to_vec(),
            positives: vec![0; target.len()],
            steps: 0,
        })
    }

    fn wants_positive(&self, j: usize) -> bool {
        let m = self.target[j];
        if m >= 1.0 {
            true
        } else if m <= 0.0 {
            false
        } else {
            (self.positives[j] as f64) < m * self.steps as f64
        }
    }

    pub fn act(&self, state: &InstanceState) -> Vec<f64> {
        match (self.kind, state) {
            (EnvKind::PointFlyer, InstanceState::Flyer { vel, .. }) => (0..2)
                .map(|j| {
                    let push: f64 = if self.wants_positive(j) { 1.0 } else { -1.0 };
                    let m = self.target[j];
                    if m > 0.0 && m < 1.0 {
                        let lo = (-EXPERT_DUTY_SPEED - vel[j]) / FLYER_ACCEL;
                        let hi = (EXPERT_DUTY_SPEED - vel[j]) / FLYER_ACCEL;
                        push.clamp(lo.min(hi), hi.max(lo))
                    } else {
                        push
                    }
                })
                .collect(),
            (EnvKind::ChainHopper, InstanceState::Hopper { .. }) => {
                vec![if self.wants_positive(0) { 1.0 } else { -1.0 }]
            }
            _ => unreachable!("state kind matches expert kind"),
        }
    }

    /// Records the proxies produced by the last action.
    pub fn observe(&mut self, deltas: &[f64]) {
        for (p, &d) in self.positives.iter_mut().zip(deltas) {
            if d > 0.5 {
                *p += 1;
            }
        }
        self.steps += 1;
    }
}

/// Runs the scripted expert for one episode on a single instance.
pub fn run_expert_episode(kind: EnvKind, horizon: usize, target: &[f64]) -> Result<EpisodeRecord> {
    let spec = EnvSpec::new(kind, horizon, 1)?;
    let (mut env, mut obs) = VecEnv::reset(spec, 0)?;
    let mut expert = ScriptedExpert::new(kind, target)?;
    let mut rec = EpisodeRecord {
        obs: Vec::with_capacity(horizon),
        actions: Some(Vec::with_capacity(horizon)),
        deltas: Vec::with_capacity(horizon),
        measure: Vec::new(),
        ret: 0.0,
    };
    while !env.is_done() {
        let action = expert.act(&env.states()[0]);
        let step = env.step(&action)?;
        expert.observe(&step.deltas);
        rec.obs.push(std::mem::replace(&mut obs, step.obs));
        rec.actions.as_mut().unwrap().push(action);
        rec.deltas.push(step.deltas);
        rec.ret += step.true_reward[0];
    }
    rec.measure = episode_measure(&rec.deltas)?;
    Ok(rec)
}
