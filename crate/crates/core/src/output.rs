//! Run artifacts: the per-iteration metrics CSV and the saved archive.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveMetrics};
use crate::driver::{IterationReport, PolicySnapshot};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mlp::GaussianPolicy;

pub const METRICS_HEADER: &str = "iter,qd_score,coverage,best,average,empty_cell_fraction,restart,wall_s";

/// Metrics CSV writer; every row is flushed as soon as it is written.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl MetricsLog<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        MetricsLog::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> MetricsLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(MetricsLog { out })
    }

    pub fn row(&mut self, r: &IterationReport) -> Result<()> {
        writeln!(self.out, "{}", metrics_row(r))?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

pub fn metrics_row(r: &IterationReport) -> String {
    let m: &ArchiveMetrics = &r.metrics;
    format!(
        "{},{},{},{},{},{},{},{}",
        r.iter,
        m.qd_score,
        m.coverage,
        opt(m.best),
        opt(m.average),
        r.empty_cell_fraction,
        u8::from(r.restart),
        r.wall_s
    )
}

/// An archive of policies together with what is needed to roll them out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedArchive {
    pub env: EnvSpec,
    pub policy_hidden: Vec<usize>,
    pub archive: Archive<PolicySnapshot>,
}

impl SavedArchive {
    pub fn policy(&self) -> Result<GaussianPolicy> {
        GaussianPolicy::new(self.env.obs_dim(), &self.policy_hidden, self.env.act_dim())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot open archive {}: {e}", path.display())))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}
