//! Exponential natural evolution strategy over gradient coefficients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::randn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffDistribution {
    mean: DVector<f64>,
    sigma: f64,
    shape: DMatrix<f64>,
    pub eta_mu: f64,
    pub eta_sigma: f64,
    pub eta_b: f64,
}

/// One population: the coefficients and the standard-normal draws behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSample {
    pub coeffs: Vec<Vec<f64>>,
    pub draws: Vec<Vec<f64>>,
}

/// Default shape and scale learning rate for dimension `n`.
pub fn default_eta(n: usize) -> f64 {
    let n = n as f64;
    (9.0 + 3.0 * n.ln()) / (5.0 * n * n.sqrt())
}

/// Rank-based utilities for improvements `delta`, best first. Ties share the
/// mean utility of the ranks they span.
pub fn utilities(delta: &[f64]) -> Vec<f64> {
    let lambda = delta.len();
    let lf = lambda as f64;
    let raw: Vec<f64> = (1..=lambda)
        .map(|rank| ((lf / 2.0 + 1.0).ln() - (rank as f64).ln()).max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    let shaped: Vec<f64> = raw.iter().map(|r| r / total - 1.0 / lf).collect();

    let mut order: Vec<usize> = (0..lambda).collect();
    order.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
    let mut u = vec![0.0; lambda];
    let mut start = 0;
    while start < lambda {
        let mut end = start + 1;
        while end < lambda && delta[order[end]] == delta[order[start]] {
            end += 1;
        }
        let share = shaped[start..end].iter().sum::<f64>() / (end - start) as f64;
        for &i in &order[start..end] {
            u[i] = share;
        }
        start = end;
    }
    u
}

/// `exp(S)` for a symmetric matrix via its eigendecomposition.
fn sym_expm(s: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

impl CoeffDistribution {
    pub fn new(n: usize, sigma0: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("coefficient dimension must be positive".into()));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial scale must be positive, got {sigma0}")));
        }
        let eta = default_eta(n);
        Ok(CoeffDistribution {
            mean: DVector::zeros(n),
            sigma: sigma0,
            shape: DMatrix::identity(n, n),
            eta_mu: 1.0,
            eta_sigma: eta,
            eta_b: eta,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mean.iter().copied().collect()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// Overrides the scale; used by tests for the degenerate limit.
    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    pub fn set_mean(&mut self, mean: &[f64]) -> Result<()> {
        if mean.len() != self.dim() {
            return Err(Error::dims("coefficient mean", self.dim(), mean.len()));
        }
        self.mean = DVector::from_column_slice(mean);
        Ok(())
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.shape * self.shape.transpose() * (self.sigma * self.sigma)
    }

    pub fn sample<R: Rng + ?Sized>(&self, lambda: usize, rng: &mut R) -> Result<CoeffSample> {
        if lambda < 2 {
            return Err(Error::InvalidArgument(format!("population must be at least 2, got {lambda}")));
        }
        let n = self.dim();
        let mut coeffs = Vec::with_capacity(lambda);
        let mut draws = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z = DVector::from_fn(n, |_, _| randn(rng));
            let c = &self.mean + &self.shape * &z * self.sigma;
            coeffs.push(c.iter().copied().collect());
            draws.push(z.iter().copied().collect());
        }
        Ok(CoeffSample { coeffs, draws })
    }

    /// Natural-gradient step from draws ranked by their improvements.
    pub fn adapt(&mut self, draws: &[Vec<f64>], delta: &[f64]) -> Result<()> {
        if draws.len() != delta.len() {
            return Err(Error::dims("improvements per draw", draws.len(), delta.len()));
        }
        if draws.len() < 2 {
            return Err(Error::InvalidArgument("adapt needs at least two draws".into()));
        }
        let n = self.dim();
        if let Some(bad) = draws.iter().find(|z| z.len() != n) {
            return Err(Error::dims("draw length", n, bad.len()));
        }
        if delta.iter().any(|d| d.is_nan()) {
            return Err(Error::NonFinite("archive improvements".into()));
        }
        let u = utilities(delta);
        let nf = n as f64;
        let mut g_mu = DVector::zeros(n);
        let mut g_m = DMatrix::zeros(n, n);
        let mut g_sigma = 0.0;
        for (z, &ui) in draws.iter().zip(&u) {
            let z = DVector::from_column_slice(z);
            let zz = z.norm_squared();
            g_mu += &z * ui;
            g_m += (&z * z.transpose() - DMatrix::identity(n, n) * (zz / nf)) * ui;
            g_sigma += ui * (zz - nf) / nf;
        }
        self.mean += &self.shape * g_mu * (self.eta_mu * self.sigma);
        self.sigma *= (self.eta_sigma / 2.0 * g_sigma).exp();
        self.shape = &self.shape * sym_expm(g_m * (self.eta_b / 2.0));
        Ok(())
    }

    pub fn restart(&mut self, sigma_g: f64) -> Result<()> {
        if !(sigma_g > 0.0 && sigma_g.is_finite()) {
            return Err(Error::InvalidArgument(format!("restart scale must be positive, got {sigma_g}")));
        }
        let n = self.dim();
        self.mean = DVector::zeros(n);
        self.sigma = sigma_g;
        self.shape = DMatrix::identity(n, n);
        Ok(())
    }
}
