//! Test-side oracles shared by the integration suites.

use std::collections::HashMap;

use qdil::archive::{Archive, ArchiveConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dictionary-backed reference keyed by per-dimension coordinates.
pub struct Reference {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
    alpha: f64,
    t0: f64,
    floor: f64,
    thresholds: HashMap<Vec<usize>, f64>,
    best: HashMap<Vec<usize>, f64>,
}

impl Reference {
    pub fn new(cfg: &ArchiveConfig) -> Self {
        Reference {
            lo: cfg.lo.clone(),
            hi: cfg.hi.clone(),
            cells: cfg.cells_per_dim.clone(),
            alpha: cfg.alpha,
            t0: cfg.threshold_init,
            floor: cfg.qd_floor,
            thresholds: HashMap::new(),
            best: HashMap::new(),
        }
    }

    fn coords(&self, m: &[f64]) -> Vec<usize> {
        (0..m.len())
            .map(|j| {
                let x = ((m[j] - self.lo[j]) / (self.hi[j] - self.lo[j]) * self.cells[j] as f64).floor();
                x.max(0.0).min((self.cells[j] - 1) as f64) as usize
            })
            .collect()
    }

    fn linear(&self, c: &[usize]) -> usize {
        c.iter().zip(&self.cells).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    fn insert(&mut self, f: f64, m: &[f64]) -> (f64, bool) {
        let key = self.coords(m);
        let t = *self.thresholds.get(&key).unwrap_or(&self.t0);
        let delta = if f > t {
            self.thresholds.insert(key.clone(), (1.0 - self.alpha) * t + self.alpha * f);
            f - t
        } else {
            0.0
        };
        let fresh = !self.best.contains_key(&key);
        if fresh || f > self.best[&key] {
            self.best.insert(key, f);
        }
        (delta, fresh)
    }

    fn total(&self) -> usize {
        self.cells.iter().product()
    }

    fn qd_score(&self) -> f64 {
        let mut v: Vec<(usize, f64)> = self.best.iter().map(|(k, &f)| (self.linear(k), f)).collect();
        v.sort_by_key(|p| p.0);
        v.iter().map(|(_, f)| (f - self.floor).max(0.0)).sum()
    }
}

pub fn run_oracle(cfg: ArchiveConfig, inserts: usize, seed: u64) {
    let mut archive = Archive::new(cfg.clone()).unwrap();
    let mut reference = Reference::new(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.dims();
    for _ in 0..inserts {
        let f: f64 = rng.random_range(-5.0..20.0);
        let m: Vec<f64> = (0..k).map(|_| rng.random_range(-0.2..1.2)).collect();
        let cell = reference.linear(&reference.coords(&m));
        assert_eq!(archive.cell_index(&m).unwrap(), cell);
        let before = archive.thresholds()[cell];
        let out = archive.insert(f, &m, ()).unwrap();
        let (delta, fresh) = reference.insert(f, &m);
        assert_eq!(out.improvement, delta);
        assert_eq!(out.newly_occupied, fresh);
        assert_eq!(out.accepted, delta > 0.0);
        assert!(archive.thresholds()[cell] >= before);
    }
    for c in 0..reference.total() {
        let coords: Vec<usize> = {
            let mut rest = c;
            let mut v = vec![0; k];
            for j in (0..k).rev() {
                v[j] = rest % cfg.cells_per_dim[j];
                rest /= cfg.cells_per_dim[j];
            }
            v
        };
        assert_eq!(archive.threshold(c), *reference.thresholds.get(&coords).unwrap_or(&cfg.threshold_init));
        assert_eq!(archive.best(c).map(|e| e.fitness), reference.best.get(&coords).copied());
        assert_eq!(archive.best(c).is_none(), !reference.best.contains_key(&coords));
    }
    let m = archive.metrics();
    let n = reference.best.len();
    assert_eq!(m.occupied_count, n);
    assert_eq!(m.coverage, n as f64 / reference.total() as f64);
    let qd = reference.qd_score();
    assert!((m.qd_score - qd).abs() <= 1e-9 * qd.abs().max(1.0));
    let best = reference.best.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(m.best, Some(best));
    let avg = reference.best.values().sum::<f64>() / n as f64;
    assert!((m.average.unwrap() - avg).abs() < 1e-9);
    assert_eq!(archive.occupancy().occupied_count(), n);
}
