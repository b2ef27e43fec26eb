use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Serialize;

use super::{RunRecord, STATUS_BEST};
use crate::error::Result;

/// Mean and standard error of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub method: String,
    pub d: usize,
    pub n: usize,
    pub eta: Option<f64>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub step: usize,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; absent for one seed.
    pub stderr: Option<f64>,
    pub count: usize,
    /// Seeds whose row carried an error status.
    pub failed: usize,
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

type GroupKey = (String, String, usize, usize, Option<u64>, Option<u64>, Option<u64>, usize, String);

/// Aggregates per-seed rows. Groups appear in order of first occurrence.
/// Best-setting rows are skipped; rows with an error status count as
/// failures and do not enter the mean.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut index: HashMap<GroupKey, usize> = HashMap::new();
    let mut groups: Vec<(&RunRecord, Vec<f64>, usize)> = Vec::new();
    for r in records.iter().filter(|r| r.status != STATUS_BEST) {
        let key = (
            r.experiment.clone(),
            r.method.clone(),
            r.d,
            r.n,
            r.eta.map(f64::to_bits),
            r.epsilon.map(f64::to_bits),
            r.gamma.map(f64::to_bits),
            r.step,
            r.metric.clone(),
        );
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push((r, Vec::new(), 0));
            groups.len() - 1
        });
        match r.value {
            Some(v) if r.is_ok() => groups[slot].1.push(v),
            _ => groups[slot].2 += 1,
        }
    }
    groups
        .into_iter()
        .map(|(r, values, failed)| {
            let count = values.len();
            let mean = if count == 0 {
                f64::NAN
            } else {
                values.iter().sum::<f64>() / count as f64
            };
            let stderr = (count > 1).then(|| {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            });
            SummaryRow {
                experiment: r.experiment.clone(),
                method: r.method.clone(),
                d: r.d,
                n: r.n,
                eta: r.eta,
                epsilon: r.epsilon,
                gamma: r.gamma,
                step: r.step,
                metric: r.metric.clone(),
                mean,
                stderr,
                count,
                failed,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::STATUS_OK;

    fn rec(seed: u64, value: Option<f64>, status: &str) -> RunRecord {
        RunRecord {
            experiment: "synthetic".into(),
            method: "flow".into(),
            d: 3,
            n: 4,
            seed: Some(seed),
            eta: Some(0.1),
            epsilon: None,
            gamma: Some(1.0),
            ridge: None,
            step: 2,
            metric: "kl_expected".into(),
            value,
            status: status.into(),
        }
    }

    #[test]
    fn mean_and_standard_error() {
        let rows = summarize(&[
            rec(0, Some(1.0), STATUS_OK),
            rec(1, Some(3.0), STATUS_OK),
            rec(2, None, "error: x"),
        ]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean, 2.0);
        assert!((rows[0].stderr.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!((rows[0].count, rows[0].failed), (2, 1));
    }
}
