//! Grid archive with soft (annealed) acceptance thresholds.
//!
//! Two layers share the same grid. The optimization layer accepts a solution
//! when its fitness beats the cell threshold and then anneals the threshold
//! toward the accepted fitness. The result layer keeps the best solution ever
//! seen per cell and is the source of every reported metric and of the
//! occupancy queries behind the measure bonus.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells_per_dim: Vec<usize>,
    /// Archive learning rate in `[0, 1]`.
    pub alpha: f64,
    /// Initial threshold of every cell.
    pub threshold_init: f64,
    /// Fitness offset subtracted before summing the QD-score.
    pub qd_floor: f64,
}

impl ArchiveConfig {
    /// Uniform grid over `[lo, hi]^k`.
    pub fn uniform(k: usize, lo: f64, hi: f64, cells: usize, alpha: f64) -> Self {
        ArchiveConfig {
            lo: vec![lo; k],
            hi: vec![hi; k],
            cells_per_dim: vec![cells; k],
            alpha,
            threshold_init: 0.0,
            qd_floor: 0.0,
        }
    }

    pub fn dims(&self) -> usize {
        self.cells_per_dim.len()
    }

    pub fn total_cells(&self) -> usize {
        self.cells_per_dim.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.cells_per_dim.len();
        if k == 0 {
            return Err(Error::InvalidArgument("archive needs at least one measure dimension".into()));
        }
        if self.lo.len() != k || self.hi.len() != k {
            return Err(Error::InvalidArgument(format!(
                "lo/hi must have {k} entries (got {} and {})",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for j in 0..k {
            if !(self.lo[j] < self.hi[j]) {
                return Err(Error::InvalidArgument(format!(
                    "measure bounds must satisfy lo < hi in dimension {j}"
                )));
            }
            if self.cells_per_dim[j] == 0 {
                return Err(Error::InvalidArgument(format!("cells_per_dim[{j}] must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.threshold_init.is_finite() || !self.qd_floor.is_finite() {
            return Err(Error::InvalidArgument("threshold_init and qd_floor must be finite".into()));
        }
        Ok(())
    }

    /// Per-dimension grid coordinates of `m`, clamped into the grid.
    pub fn grid_coords(&self, m: &[f64]) -> Result<Vec<usize>> {
        if m.len() != self.dims() {
            return Err(Error::dims("measure", self.dims(), m.len()));
        }
        Ok(m.iter()
            .enumerate()
            .map(|(j, &x)| {
                let n = self.cells_per_dim[j];
                let t = (x - self.lo[j]) / (self.hi[j] - self.lo[j]) * n as f64;
                // NaN measures land in cell 0 along with everything below `lo`.
                if t.is_nan() || t <= 0.0 {
                    0
                } else {
                    (t.floor() as usize).min(n - 1)
                }
            })
            .collect())
    }

    /// Row-major linear cell index of `m`.
    pub fn cell_index(&self, m: &[f64]) -> Result<usize> {
        let coords = self.grid_coords(m)?;
        Ok(coords
            .iter()
            .zip(&self.cells_per_dim)
            .fold(0, |acc, (&i, &n)| acc * n + i))
    }

    /// Center of the cell with linear index `idx`.
    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        let mut center = vec![0.0; self.dims()];
        for j in (0..self.dims()).rev() {
            let n = self.cells_per_dim[j];
            let i = rem % n;
            rem /= n;
            let w = (self.hi[j] - self.lo[j]) / n as f64;
            center[j] = self.lo[j] + (i as f64 + 0.5) * w;
        }
        center
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite<S> {
    pub fitness: f64,
    pub measure: Vec<f64>,
    pub solution: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertOutcome {
    /// Fitness above the previous threshold, zero when rejected.
    pub improvement: f64,
    /// The result-layer cell was empty before this insert.
    pub newly_occupied: bool,
    /// Accepted by the optimization layer.
    pub accepted: bool,
    pub cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetrics {
    pub qd_score: f64,
    pub coverage: f64,
    /// `None` for an empty archive.
    pub best: Option<f64>,
    pub average: Option<f64>,
    pub occupied_count: usize,
}

/// Immutable snapshot of the result-layer occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    config: ArchiveConfig,
    occupied: Vec<bool>,
}

impl Occupancy {
    pub fn is_unoccupied(&self, m: &[f64]) -> Result<bool> {
        Ok(!self.occupied[self.config.cell_index(m)?])
    }

    pub fn config(&self) -> &ArchiveConfig {
        &self.config
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Archive<S> {
    config: ArchiveConfig,
    thresholds: Vec<f64>,
    elites: Vec<Option<Elite<S>>>,
    best: Vec<Option<Elite<S>>>,
    /// Result-layer cells in order of first occupation.
    occupied: Vec<usize>,
}

impl<S: Clone> Archive<S> {
    pub fn new(config: ArchiveConfig) -> Result<Self> {
        config.validate()?;
        let n = config.total_cells();
        Ok(Archive {
            thresholds: vec![config.threshold_init; n],
            elites: vec![None; n],
            best: vec![None; n],
            occupied: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &ArchiveConfig {
        &self.config
    }

    pub fn cell_index(&self, m: &[f64]) -> Result<usize> {
        self.config.cell_index(m)
    }

    pub fn insert(&mut self, fitness: f64, measure: &[f64], solution: S) -> Result<InsertOutcome> {
        if !fitness.is_finite() {
            return Err(Error::NonFinite(format!("fitness {fitness}")));
        }
        if measure.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measure".into()));
        }
        let cell = self.config.cell_index(measure)?;

        let threshold = self.thresholds[cell];
        let accepted = fitness > threshold;
        let improvement = if accepted { fitness - threshold } else { 0.0 };

        let newly_occupied = self.best[cell].is_none();
        let beats_best = self.best[cell].as_ref().is_none_or(|b| fitness > b.fitness);
        if beats_best {
            self.best[cell] = Some(Elite {
                fitness,
                measure: measure.to_vec(),
                solution: solution.clone(),
            });
            if newly_occupied {
                self.occupied.push(cell);
            }
        }

        if accepted {
            let alpha = self.config.alpha;
            self.thresholds[cell] = (1.0 - alpha) * threshold + alpha * fitness;
            self.elites[cell] = Some(Elite {
                fitness,
                measure: measure.to_vec(),
                solution,
            });
        }

        Ok(InsertOutcome {
            improvement,
            newly_occupied,
            accepted,
            cell,
        })
    }

    pub fn is_unoccupied(&self, m: &[f64]) -> Result<bool> {
        Ok(self.best[self.config.cell_index(m)?].is_none())
    }

    pub fn occupancy(&self) -> Occupancy {
        Occupancy {
            config: self.config.clone(),
            occupied: self.best.iter().map(Option::is_some).collect(),
        }
    }

    pub fn metrics(&self) -> ArchiveMetrics {
        let total = self.config.total_cells();
        let mut qd_score = 0.0;
        let mut sum = 0.0;
        let mut best = f64::NEG_INFINITY;
        for &cell in &self.occupied {
            let f = self.best[cell].as_ref().map(|e| e.fitness).unwrap_or_default();
            qd_score += (f - self.config.qd_floor).max(0.0);
            sum += f;
            best = best.max(f);
        }
        let n = self.occupied.len();
        ArchiveMetrics {
            qd_score,
            coverage: n as f64 / total as f64,
            best: (n > 0).then_some(best),
            average: (n > 0).then(|| sum / n as f64),
            occupied_count: n,
        }
    }

    /// Uniform draw over occupied result-layer cells.
    pub fn random_elite<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&Elite<S>> {
        if self.occupied.is_empty() {
            return Err(Error::EmptyArchive);
        }
        let cell = self.occupied[rng.random_range(0..self.occupied.len())];
        Ok(self.best[cell].as_ref().expect("occupied cell has an elite"))
    }

    pub fn threshold(&self, cell: usize) -> f64 {
        self.thresholds[cell]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Current optimization-layer elite of a cell.
    pub fn elite(&self, cell: usize) -> Option<&Elite<S>> {
        self.elites[cell].as_ref()
    }

    /// Best-ever elite of a cell.
    pub fn best(&self, cell: usize) -> Option<&Elite<S>> {
        self.best[cell].as_ref()
    }

    /// Best-ever elites with their cell indices, in order of first occupation.
    pub fn best_elites(&self) -> impl Iterator<Item = (usize, &Elite<S>)> {
        self.occupied
            .iter()
            .map(move |&c| (c, self.best[c].as_ref().expect("occupied cell has an elite")))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }

    /// Result-layer fitness per cell, `None` for empty cells.
    pub fn fitness_grid(&self) -> Vec<Option<f64>> {
        self.best.iter().map(|e| e.as_ref().map(|e| e.fitness)).collect()
    }

    /// Writes the result layer of a two-dimensional archive as a CSV grid with
    /// `cells_per_dim[0]` rows and `cells_per_dim[1]` columns. Empty cells are
    /// written as `NaN`.
    pub fn write_heatmap<W: Write>(&self, out: W) -> Result<()> {
        write_heatmap(&self.config, &self.fitness_grid(), out)
    }

    pub fn export_heatmap(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_heatmap(std::io::BufWriter::new(file))
    }
}

pub fn write_heatmap<W: Write>(config: &ArchiveConfig, grid: &[Option<f64>], mut out: W) -> Result<()> {
    if config.dims() != 2 {
        return Err(Error::Unsupported(format!(
            "heatmap export needs a 2-D archive, this one has {} dimensions",
            config.dims()
        )));
    }
    let (rows, cols) = (config.cells_per_dim[0], config.cells_per_dim[1]);
    for r in 0..rows {
        let line = (0..cols)
            .map(|c| match grid[r * cols + c] {
                Some(f) => format!("{f}"),
                None => "NaN".to_string(),
            })
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid25() -> ArchiveConfig {
        ArchiveConfig::uniform(2, 0.0, 1.0, 25, 0.1)
    }

    #[test]
    fn cell_index_examples() {
        let c = grid25();
        assert_eq!(c.cell_index(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(c.grid_coords(&[1.0, 1.0]).unwrap(), vec![24, 24]);
        assert_eq!(c.cell_index(&[1.0, 1.0]).unwrap(), 624);
        // floor(0.52 * 25) = 13, floor(0.10 * 25) = 2, 13 * 25 + 2 = 327
        assert_eq!(c.grid_coords(&[0.52, 0.10]).unwrap(), vec![13, 2]);
        assert_eq!(c.cell_index(&[0.52, 0.10]).unwrap(), 327);
        assert_eq!(c.cell_index(&[-3.0, 7.0]).unwrap(), 24);
        assert!(matches!(
            c.cell_index(&[0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn soft_threshold_updates() {
        let mut a: Archive<()> = Archive::new(grid25()).unwrap();
        let m = [0.3, 0.3];
        let o = a.insert(2.0, &m, ()).unwrap();
        assert!(o.accepted && o.newly_occupied);
        assert!((o.improvement - 2.0).abs() < 1e-15);
        assert!((a.threshold(o.cell) - 0.2).abs() < 1e-15);

        let o = a.insert(-1.0, &m, ()).unwrap();
        assert!(!o.accepted && !o.newly_occupied);
        assert_eq!(o.improvement, 0.0);
        assert!((a.threshold(o.cell) - 0.2).abs() < 1e-15);

        let o = a.insert(2.0, &m, ()).unwrap();
        assert!(o.accepted);
        assert!((o.improvement - 1.8).abs() < 1e-12);
        assert!((a.threshold(o.cell) - 0.38).abs() < 1e-12);
        // Result layer only keeps strict improvements.
        assert_eq!(a.best(o.cell).unwrap().fitness, 2.0);
    }

    #[test]
    fn non_finite_fitness_leaves_state_alone() {
        let mut a: Archive<()> = Archive::new(grid25()).unwrap();
        assert!(a.insert(f64::NAN, &[0.1, 0.1], ()).is_err());
        assert!(a.insert(f64::INFINITY, &[0.1, 0.1], ()).is_err());
        assert_eq!(a.occupied_count(), 0);
        assert!(a.thresholds().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn occupancy_queries() {
        let mut a: Archive<()> = Archive::new(grid25()).unwrap();
        assert!(a.is_unoccupied(&[0.52, 0.10]).unwrap());
        a.insert(1.0, &[0.52, 0.10], ()).unwrap();
        assert!(!a.is_unoccupied(&[0.52, 0.10]).unwrap());
        // (0.56, 0.10) maps to row 14, a different cell.
        assert_eq!(a.cell_index(&[0.56, 0.10]).unwrap(), 14 * 25 + 2);
        assert!(a.is_unoccupied(&[0.56, 0.10]).unwrap());
        assert!(a.is_unoccupied(&[0.5]).is_err());
        let snap = a.occupancy();
        assert!(!snap.is_unoccupied(&[0.52, 0.10]).unwrap());
        assert_eq!(snap.occupied_count(), 1);
    }

    #[test]
    fn metrics_examples() {
        let cfg = ArchiveConfig::uniform(2, 0.0, 1.0, 10, 0.1);
        let mut a: Archive<()> = Archive::new(cfg).unwrap();
        let m = a.metrics();
        assert_eq!(m.qd_score, 0.0);
        assert_eq!(m.coverage, 0.0);
        assert!(m.best.is_none() && m.average.is_none());

        a.insert(2.0, &[0.05, 0.05], ()).unwrap();
        a.insert(4.0, &[0.95, 0.95], ()).unwrap();
        let m = a.metrics();
        assert_eq!(m.qd_score, 6.0);
        assert_eq!(m.coverage, 0.02);
        assert_eq!(m.best, Some(4.0));
        assert_eq!(m.average, Some(3.0));
    }

    #[test]
    fn qd_floor_clamps_negative_cells() {
        let mut cfg = ArchiveConfig::uniform(1, 0.0, 1.0, 4, 0.5);
        cfg.qd_floor = 1.0;
        cfg.threshold_init = -10.0;
        let mut a: Archive<()> = Archive::new(cfg).unwrap();
        a.insert(0.5, &[0.1], ()).unwrap();
        a.insert(3.0, &[0.9], ()).unwrap();
        assert_eq!(a.metrics().qd_score, 2.0);
    }

    #[test]
    fn random_elite_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a: Archive<u32> = Archive::new(grid25()).unwrap();
        assert!(matches!(a.random_elite(&mut rng), Err(Error::EmptyArchive)));
        a.insert(1.5, &[0.2, 0.2], 7).unwrap();
        for _ in 0..10 {
            assert_eq!(a.random_elite(&mut rng).unwrap().solution, 7);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = grid25();
        c.alpha = 1.5;
        assert!(c.validate().is_err());
        let mut c = grid25();
        c.hi[1] = 0.0;
        assert!(c.validate().is_err());
        let mut c = grid25();
        c.cells_per_dim[0] = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn heatmap_rejects_non_2d() {
        let a: Archive<()> = Archive::new(ArchiveConfig::uniform(1, 0.0, 1.0, 5, 0.1)).unwrap();
        assert!(matches!(a.write_heatmap(Vec::new()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn cell_center_round_trips() {
        let c = grid25();
        for idx in [0, 1, 24, 25, 327, 624] {
            assert_eq!(c.cell_index(&c.cell_center(idx)).unwrap(), idx);
        }
    }
}
