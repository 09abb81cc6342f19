//! Demonstration sets: candidate generation with scripted experts, diverse
//! subset selection and the JSON-lines file format.
//!
//! File layout: the first line is a header record
//! `{"env", "obs_dim", "act_dim", "k", "count"}`, followed by `count` episode
//! records `{"obs", "actions"?, "deltas", "measure", "ret"}`. `actions` is
//! omitted for observation-only sets.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{run_expert_episode, EnvKind, EpisodeRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoHeader {
    pub env: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub k: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub header: DemoHeader,
    pub episodes: Vec<EpisodeRecord>,
}

impl DemoSet {
    pub fn new(kind: EnvKind, episodes: Vec<EpisodeRecord>) -> Result<Self> {
        let set = DemoSet {
            header: DemoHeader {
                env: kind.name().to_string(),
                obs_dim: kind.obs_dim(),
                act_dim: kind.act_dim(),
                k: kind.measure_dim(),
                count: episodes.len(),
            },
            episodes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        EnvKind::from_name(&self.header.env)
    }

    /// True when no episode carries actions.
    pub fn is_observation_only(&self) -> bool {
        self.episodes.iter().all(|e| e.actions.is_none())
    }

    /// Drops the actions of every episode.
    pub fn without_actions(&self) -> DemoSet {
        let mut out = self.clone();
        out.episodes.iter_mut().for_each(|e| e.actions = None);
        out
    }

    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(EpisodeRecord::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes.is_empty() {
            return Err(Error::InvalidArgument("demonstration set is empty".into()));
        }
        if self.header.count != self.episodes.len() {
            return Err(Error::InvalidArgument(format!(
                "header announces {} episodes, found {}",
                self.header.count,
                self.episodes.len()
            )));
        }
        for (i, e) in self.episodes.iter().enumerate() {
            check_episode(&self.header, e).map_err(|msg| Error::InvalidArgument(format!("episode {i}: {msg}")))?;
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for e in &self.episodes {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<DemoSet> {
        let f = std::fs::File::open(path)?;
        Self::read(BufReader::new(f), path)
    }

    /// Parses a JSON-lines demonstration file. `origin` only labels errors.
    pub fn read<R: BufRead>(input: R, origin: &Path) -> Result<DemoSet> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (hline, header) = match lines.next() {
            Some((n, l)) => (n, l?),
            None => return Err(parse_err(1, "missing header record".into())),
        };
        let header: DemoHeader =
            serde_json::from_str(&header).map_err(|e| parse_err(hline, format!("malformed header: {e}")))?;
        let kind = EnvKind::from_name(&header.env).map_err(|e| parse_err(hline, e.to_string()))?;
        if (header.obs_dim, header.act_dim, header.k) != (kind.obs_dim(), kind.act_dim(), kind.measure_dim()) {
            return Err(parse_err(
                hline,
                format!("header dimensions do not match environment {}", header.env),
            ));
        }
        let mut episodes = Vec::with_capacity(header.count);
        let mut last_line = hline;
        for (n, l) in lines {
            let l = l?;
            last_line = n;
            if episodes.len() == header.count {
                return Err(parse_err(n, format!("more episodes than the {} announced", header.count)));
            }
            let e: EpisodeRecord = serde_json::from_str(&l).map_err(|e| parse_err(n, format!("malformed episode: {e}")))?;
            check_episode(&header, &e).map_err(|msg| parse_err(n, msg))?;
            episodes.push(e);
        }
        if episodes.len() != header.count {
            return Err(parse_err(
                last_line + 1,
                format!("truncated file: {} of {} episodes", episodes.len(), header.count),
            ));
        }
        if episodes.is_empty() {
            return Err(parse_err(hline, "demonstration set is empty".into()));
        }
        Ok(DemoSet { header, episodes })
    }
}

fn check_episode(h: &DemoHeader, e: &EpisodeRecord) -> std::result::Result<(), String> {
    if e.obs.is_empty() {
        return Err("episode has no steps".into());
    }
    if e.deltas.len() != e.obs.len() {
        return Err(format!("{} deltas for {} steps", e.deltas.len(), e.obs.len()));
    }
    if e.obs.iter().any(|o| o.len() != h.obs_dim) {
        return Err(format!("observation width differs from obs_dim {}", h.obs_dim));
    }
    if e.deltas.iter().any(|d| d.len() != h.k) {
        return Err(format!("delta width differs from k {}", h.k));
    }
    if e.measure.len() != h.k {
        return Err(format!("measure width differs from k {}", h.k));
    }
    if let Some(actions) = &e.actions {
        if actions.len() != e.obs.len() {
            return Err(format!("{} actions for {} steps", actions.len(), e.obs.len()));
        }
        if actions.iter().any(|a| a.len() != h.act_dim) {
            return Err(format!("action width differs from act_dim {}", h.act_dim));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub kind: EnvKind,
    pub episodes: Vec<EpisodeRecord>,
}

/// Evenly spaced targets `{0, 1/(n-1), ..., 1}^k`.
pub fn target_grid(k: usize, per_dim: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if per_dim <= 1 {
        vec![0.5]
    } else {
        (0..per_dim).map(|i| i as f64 / (per_dim - 1) as f64).collect()
    };
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    out
}

/// Runs the scripted expert once per target and repetition. The experts are
/// deterministic, so repeated episodes for the same target are identical.
pub fn generate_candidates(kind: EnvKind, horizon: usize, targets: &[Vec<f64>], episodes_per_target: usize) -> Result<CandidatePool> {
    let mut episodes = Vec::with_capacity(targets.len() * episodes_per_target);
    for target in targets {
        for _ in 0..episodes_per_target {
            episodes.push(run_expert_episode(kind, horizon, target)?);
        }
    }
    Ok(CandidatePool { kind, episodes })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Pool indices picked by [`select_demonstrations`], in selection order.
pub fn select_indices(pool: &CandidatePool, top_k: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > pool.episodes.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {n} demonstrations from a pool of {}",
            pool.episodes.len()
        )));
    }
    // Top-k by return; ties keep pool order.
    let mut order: Vec<usize> = (0..pool.episodes.len()).collect();
    order.sort_by(|&a, &b| pool.episodes[b].ret.total_cmp(&pool.episodes[a].ret).then(a.cmp(&b)));
    order.truncate(top_k.max(n).min(pool.episodes.len()));

    let ep = |i: usize| &pool.episodes[i];
    let mut chosen = vec![order[0]];
    while chosen.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for &c in &order {
            if chosen.contains(&c) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&s| distance(&ep(c).measure, &ep(s).measure))
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((b, bd)) => d > bd || (d == bd && (ep(c).ret > ep(b).ret || (ep(c).ret == ep(b).ret && c < b))),
            };
            if better {
                best = Some((c, d));
            }
        }
        chosen.push(best.expect("pool larger than selection").0);
    }
    Ok(chosen)
}

/// Keeps the `top_k` highest-return candidates, then picks `n` of them by
/// greedy max-min measure distance starting from the best one. Ties go to the
/// higher return, then to the lower pool index.
pub fn select_demonstrations(pool: &CandidatePool, top_k: usize, n: usize) -> Result<DemoSet> {
    let idx = select_indices(pool, top_k, n)?;
    DemoSet::new(pool.kind, idx.into_iter().map(|i| pool.episodes[i].clone()).collect())
}

/// Default demonstration set: a 5^k target grid, top 500, 4 picks.
pub fn default_demos(kind: EnvKind, horizon: usize, n: usize) -> Result<DemoSet> {
    let pool = generate_candidates(kind, horizon, &target_grid(kind.measure_dim(), 5), 1)?;
    select_demonstrations(&pool, 500, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_1d(measures: &[f64], returns: &[f64]) -> CandidatePool {
        CandidatePool {
            kind: EnvKind::ChainHopper,
            episodes: measures
                .iter()
                .zip(returns)
                .map(|(&m, &r)| EpisodeRecord {
                    obs: vec![vec![0.0; 3]],
                    actions: Some(vec![vec![0.0]]),
                    deltas: vec![vec![m]],
                    measure: vec![m],
                    ret: r,
                })
                .collect(),
        }
    }

    #[test]
    fn candidates_on_target_grid() {
        let targets = target_grid(2, 5);
        assert_eq!(targets.len(), 25);
        let pool = generate_candidates(EnvKind::PointFlyer, 100, &targets, 1).unwrap();
        assert_eq!(pool.episodes.len(), 25);
        for (e, t) in pool.episodes.iter().zip(&targets) {
            for (a, b) in e.measure.iter().zip(t) {
                assert!((a - b).abs() <= 0.02);
            }
        }
        assert_eq!(pool, generate_candidates(EnvKind::PointFlyer, 100, &targets, 1).unwrap());
    }

    #[test]
    fn greedy_max_min_examples() {
        let ms: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mut rets = vec![1.0; 11];
        rets[0] = 2.0;
        let pool = pool_1d(&ms, &rets);
        assert_eq!(select_indices(&pool, 500, 1).unwrap(), vec![0]);
        assert_eq!(select_indices(&pool, 500, 3).unwrap(), vec![0, 10, 5]);
        let all = select_indices(&pool, 500, 11).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..11).collect::<Vec<_>>());
        assert!(select_indices(&pool, 500, 12).is_err());
    }

    #[test]
    fn top_k_filters_before_selection() {
        let pool = pool_1d(&[0.0, 1.0, 0.5, 0.9], &[3.0, 0.1, 2.0, 1.0]);
        // Only {0.0, 0.5} survive the top-2 cut.
        assert_eq!(select_indices(&pool, 2, 2).unwrap(), vec![0, 2]);
    }

    /// Swapping the last pick for any unselected candidate cannot raise the
    /// minimum pairwise distance of the set.
    #[test]
    fn last_pick_is_locally_optimal() {
        let ms = [0.0, 0.13, 0.31, 0.47, 0.52, 0.77, 0.8, 0.95];
        let pool = pool_1d(&ms, &[1.0; 8]);
        let min_pair = |set: &[usize]| {
            let mut best = f64::INFINITY;
            for i in 0..set.len() {
                for j in i + 1..set.len() {
                    best = best.min((ms[set[i]] - ms[set[j]]).abs());
                }
            }
            best
        };
        for n in 2..6 {
            let sel = select_indices(&pool, 500, n).unwrap();
            let base = min_pair(&sel);
            for c in 0..ms.len() {
                if sel.contains(&c) {
                    continue;
                }
                let mut alt = sel.clone();
                *alt.last_mut().unwrap() = c;
                assert!(base >= min_pair(&alt));
            }
        }
    }

    #[test]
    fn demo_file_round_trip_and_validation() {
        let demos = default_demos(EnvKind::PointFlyer, 30, 4).unwrap();
        let mut buf = Vec::new();
        demos.write(&mut buf).unwrap();
        let back = DemoSet::read(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, demos);

        // Header count larger than the body.
        let text = String::from_utf8(buf.clone()).unwrap();
        let bad = text.replacen("\"count\":4", "\"count\":5", 1);
        match DemoSet::read(bad.as_bytes(), Path::new("mem")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = text.replacen("\"count\":4", "\"count\":3", 1);
        match DemoSet::read(bad.as_bytes(), Path::new("mem")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = text.replacen("\"obs_dim\":5", "\"obs_dim\":4", 1);
        assert!(matches!(DemoSet::read(bad.as_bytes(), Path::new("mem")), Err(Error::Parse { line: 1, .. })));
        let truncated = &text[..text.len() / 2];
        assert!(matches!(DemoSet::read(truncated.as_bytes(), Path::new("mem")), Err(Error::Parse { .. })));
    }

    #[test]
    fn observation_only_sets_load() {
        let demos = default_demos(EnvKind::PointFlyer, 20, 4).unwrap().without_actions();
        let mut buf = Vec::new();
        demos.write(&mut buf).unwrap();
        assert!(!String::from_utf8_lossy(&buf).contains("actions"));
        let back = DemoSet::read(&buf[..], Path::new("mem")).unwrap();
        assert!(back.is_observation_only());
        assert_eq!(back, demos);
    }
}
