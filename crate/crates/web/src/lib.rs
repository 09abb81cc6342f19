//! WebAssembly bindings for the demo page in `www/`.
//!
//! Three things are exposed: a two-dimensional soft archive that can be fed
//! by hand, scripted expert rollouts on PointFlyer, and a small imitation run
//! that advances one iteration per call. Grids are returned row-major with
//! the first measure along rows; empty cells are `NaN`.

use qdil::archive::{Archive, ArchiveConfig};
use qdil::demos::default_demos;
use qdil::driver::{QdConfig, QdRun};
use qdil::envs::{EnvKind, EnvSpec, InstanceState, ScriptedExpert, VecEnv};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(e: qdil::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Evaluates `values` at the cell of every center of an `n x n` grid over the unit square.
fn unit_square_grid<S: Clone>(archive: &Archive<S>, values: impl Fn(usize) -> f64) -> Vec<f64> {
    let n = archive.config().cells_per_dim[0];
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let m = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
            out.push(archive.cell_index(&m).map_or(f64::NAN, &values));
        }
    }
    out
}

#[wasm_bindgen]
pub struct Playground {
    archive: Archive<()>,
}

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(cells: usize, alpha: f64) -> Result<Playground, JsError> {
        let archive = Archive::new(ArchiveConfig::uniform(2, 0.0, 1.0, cells, alpha)).map_err(js)?;
        Ok(Playground { archive })
    }

    pub fn cells(&self) -> usize {
        self.archive.config().cells_per_dim[0]
    }

    /// Inserts a solution and returns the outcome as JSON.
    pub fn insert(&mut self, fitness: f64, x: f64, y: f64) -> Result<String, JsError> {
        let o = self.archive.insert(fitness, &[x, y], ()).map_err(js)?;
        Ok(json!({
            "improvement": o.improvement,
            "newly_occupied": o.newly_occupied,
            "accepted": o.accepted,
            "threshold": self.archive.threshold(o.cell),
        })
        .to_string())
    }

    pub fn thresholds(&self) -> Vec<f64> {
        unit_square_grid(&self.archive, |c| self.archive.threshold(c))
    }

    pub fn best(&self) -> Vec<f64> {
        let a = &self.archive;
        unit_square_grid(a, |c| a.best(c).map_or(f64::NAN, |e| e.fitness))
    }

    pub fn metrics(&self) -> String {
        serde_json::to_string(&self.archive.metrics()).unwrap_or_default()
    }
}

/// Rolls out the scripted PointFlyer expert aimed at measure `(tx, ty)`.
/// Returns `{ path: [[x, y], ...], measure: [..], ret }` as JSON.
#[wasm_bindgen]
pub fn expert_rollout(tx: f64, ty: f64, horizon: usize) -> Result<String, JsError> {
    let kind = EnvKind::PointFlyer;
    let spec = EnvSpec::new(kind, horizon, 1).map_err(js)?;
    let (mut env, _) = VecEnv::reset(spec, 0).map_err(js)?;
    let mut expert = ScriptedExpert::new(kind, &[tx, ty]).map_err(js)?;
    let mut path = vec![[0.0, 0.0]];
    let mut deltas = Vec::with_capacity(horizon);
    let mut ret = 0.0;
    while !env.is_done() {
        let action = expert.act(&env.states()[0]);
        let step = env.step(&action).map_err(js)?;
        expert.observe(&step.deltas);
        if let InstanceState::Flyer { pos, .. } = env.states()[0] {
            path.push(pos);
        }
        ret += step.true_reward[0];
        deltas.push(step.deltas);
    }
    let measure = qdil::envs::episode_measure(&deltas).map_err(js)?;
    Ok(json!({ "path": path, "measure": measure, "ret": ret }).to_string())
}

/// A small imitation run on PointFlyer, advanced one iteration at a time.
#[wasm_bindgen]
pub struct Session {
    run: QdRun,
}

#[wasm_bindgen]
impl Session {
    /// `q` is the empty-cell bonus; 0 turns it off.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, q: f64) -> Result<Session, JsError> {
        let mut cfg = QdConfig::defaults(EnvKind::PointFlyer);
        cfg.env.horizon = 50;
        cfg.env.batch = 4;
        cfg.archive = ArchiveConfig::uniform(2, 0.0, 1.0, 20, 0.1);
        cfg.lambda = 4;
        cfg.n1 = 2;
        cfg.n2 = 2;
        cfg.iterations = 200;
        cfg.bonus.q = q;
        cfg.seed = seed.into();
        let demos = default_demos(EnvKind::PointFlyer, cfg.env.horizon, 4).map_err(js)?;
        let run = QdRun::new(cfg, Some(&demos)).map_err(js)?;
        Ok(Session { run })
    }

    pub fn cells(&self) -> usize {
        self.run.cfg.archive.cells_per_dim[0]
    }

    pub fn finished(&self) -> bool {
        self.run.is_finished()
    }

    /// Runs one iteration and returns its metrics as JSON.
    pub fn step(&mut self) -> Result<String, JsError> {
        let r = self.run.step().map_err(js)?;
        Ok(json!({
            "iter": r.iter,
            "qd_score": r.metrics.qd_score,
            "coverage": r.metrics.coverage,
            "best": r.metrics.best,
            "restart": r.restart,
            "empty_cell_fraction": r.empty_cell_fraction,
        })
        .to_string())
    }

    /// True-reward fitness of the best policy found in each cell.
    pub fn heatmap(&self) -> Vec<f64> {
        let a = &self.run.true_archive;
        unit_square_grid(a, |c| a.best(c).map_or(f64::NAN, |e| e.fitness))
    }
}
