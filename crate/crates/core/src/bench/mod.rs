//! Experiment runner: synthetic posterior tracking, pose registration and the
//! empirical Wasserstein bound check. Every run writes one long-format CSV
//! (one row per run, step and metric) plus a manifest.

pub mod config;
mod pose;
mod summarize;
mod synthetic;
mod theorem;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, ExperimentKind, GridCenter, GridSpec, Method, PoseSettings, RidgeSetting, TheoremSettings};
pub use pose::{initial_pose_ensemble, run_pose};
pub use summarize::{read_records, summarize, write_summary, SummaryRow};
pub use synthetic::{initial_prior_ensemble, run_synthetic};
pub use theorem::run_theorem;

use crate::error::Result;

pub const CSV_HEADER: &str = "experiment,method,d,n,seed,eta,epsilon,gamma,ridge,step,metric,value,status";

/// Row status for successful measurements.
pub const STATUS_OK: &str = "ok";
/// Row status for per-method best-setting summary rows.
pub const STATUS_BEST: &str = "best";

/// One row of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub method: String,
    pub d: usize,
    pub n: usize,
    pub seed: Option<u64>,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub ridge: Option<f64>,
    pub step: usize,
    pub metric: String,
    pub value: Option<f64>,
    pub status: String,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    /// The grid-searched hyperparameter of this row's method, if any.
    pub fn hyperparameter(&self) -> Option<f64> {
        if self.method == "mcl" {
            self.epsilon
        } else {
            self.eta
        }
    }
}

/// Result of one experiment invocation.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    /// Overall pass flag for experiments that have one (theorem check).
    pub passed: Option<bool>,
}

impl ExperimentOutput {
    /// Rows matching a method, hyperparameter value and metric, grouped by
    /// seed and ordered by step.
    pub fn series(&self, method: Method, d: usize, n: usize, param: f64, metric: &str) -> Vec<(u64, Vec<Option<f64>>)> {
        let mut out: Vec<(u64, Vec<(usize, Option<f64>)>)> = Vec::new();
        for r in &self.records {
            if r.method != method.name()
                || r.d != d
                || r.n != n
                || r.metric != metric
                || r.hyperparameter() != Some(param)
                || r.status == STATUS_BEST
            {
                continue;
            }
            let Some(seed) = r.seed else { continue };
            let value = if r.is_ok() { r.value } else { None };
            match out.iter_mut().find(|(s, _)| *s == seed) {
                Some((_, v)) => v.push((r.step, value)),
                None => out.push((seed, vec![(r.step, value)])),
            }
        }
        out.sort_by_key(|(s, _)| *s);
        out.into_iter()
            .map(|(s, mut v)| {
                v.sort_by_key(|(step, _)| *step);
                (s, v.into_iter().map(|(_, x)| x).collect())
            })
            .collect()
    }

    /// Best hyperparameter value recorded for a method.
    pub fn best(&self, method: Method, d: usize, n: usize) -> Option<&RunRecord> {
        self.records
            .iter()
            .find(|r| r.status == STATUS_BEST && r.method == method.name() && r.d == d && r.n == n)
    }
}

pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(records: &[RunRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(records, std::io::BufWriter::new(file))
}

/// Manifest path next to an output CSV: `out.csv` → `out.manifest.txt`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.txt")
}

/// Resolved configuration, crate version, RNG algorithm and wall-clock time.
pub fn write_manifest(cfg: &ExperimentConfig, wall_seconds: f64, passed: Option<bool>, path: &Path) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("# flowpf {}\n", crate::VERSION));
    text.push_str(&format!("# rng {}\n", crate::rng::GENERATOR_NAME));
    text.push_str(&format!("# wall_clock_seconds {wall_seconds:.3}\n"));
    if let Some(p) = passed {
        text.push_str(&format!("# passed {p}\n"));
    }
    text.push_str(&cfg.to_text());
    std::fs::write(path, text)?;
    Ok(())
}

/// Runs the configured experiment on a dedicated thread pool (`threads = 0`
/// uses all cores).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| crate::Error::Config {
            key: "threads".into(),
            line: 0,
            message: e.to_string(),
        })?;
    pool.install(|| match cfg.experiment {
        ExperimentKind::Synthetic => run_synthetic(cfg),
        ExperimentKind::Pose => run_pose(cfg),
        ExperimentKind::Theorem => run_theorem(cfg),
    })
}

pub(crate) fn error_status(e: &crate::Error) -> String {
    let text = e.to_string().replace(['\n', ','], ";");
    format!("error: {text}")
}

/// Picks, per method, the grid value with the lowest mean over seeds of
/// `metric` at `step`; a value with any failed or missing seed scores
/// `+inf`. Ties go to the smaller value. Returns summary rows.
pub(crate) fn best_rows(
    records: &[RunRecord],
    experiment: &str,
    method: Method,
    d: usize,
    n: usize,
    grid: &[f64],
    seeds: usize,
    step: usize,
    metric: &str,
) -> Option<RunRecord> {
    let mut best: Option<(f64, f64, &RunRecord)> = None;
    for &value in grid {
        let rows: Vec<&RunRecord> = records
            .iter()
            .filter(|r| {
                r.method == method.name()
                    && r.d == d
                    && r.n == n
                    && r.step == step
                    && r.metric == metric
                    && r.hyperparameter() == Some(value)
            })
            .collect();
        let score = if rows.len() == seeds && rows.iter().all(|r| r.is_ok() && r.value.is_some_and(f64::is_finite)) {
            rows.iter().map(|r| r.value.unwrap_or(f64::NAN)).sum::<f64>() / seeds as f64
        } else {
            f64::INFINITY
        };
        if let Some(first) = rows.first() {
            if best.is_none_or(|(s, _, _)| score < s) {
                best = Some((score, value, first));
            }
        }
    }
    let (score, _, template) = best?;
    Some(RunRecord {
        experiment: experiment.into(),
        method: method.name().into(),
        d,
        n,
        seed: None,
        eta: template.eta,
        epsilon: template.epsilon,
        gamma: template.gamma,
        ridge: None,
        step,
        metric: format!("best_mean_{metric}"),
        value: score.is_finite().then_some(score),
        status: STATUS_BEST.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_record_fields() {
        let mut buf = Vec::new();
        write_csv(
            &[RunRecord {
                experiment: "synthetic".into(),
                method: "flow".into(),
                d: 3,
                n: 2,
                seed: Some(1),
                eta: Some(0.5),
                epsilon: None,
                gamma: Some(1.0),
                ridge: None,
                step: 0,
                metric: "kl_expected".into(),
                value: None,
                status: "error: x".into(),
            }],
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("synthetic,flow,3,2,1,0.5,,1.0,,0,kl_expected,,error: x"));
    }

    #[test]
    fn manifest_path_sits_next_to_csv() {
        assert_eq!(manifest_path(Path::new("a/out.csv")), PathBuf::from("a/out.manifest.txt"));
    }
}
