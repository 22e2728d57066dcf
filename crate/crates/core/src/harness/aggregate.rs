//! Cross-seed summaries of run directories.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use super::records::{read_records, EpisodeRecord};
use super::run::{Manifest, MANIFEST_FILE};
use crate::error::{FetsError, Result};

/// Mean and standard error of one metric at one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run_id: String,
    pub episode: u64,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// `None` for a single seed.
    pub stderr: Option<f64>,
}

/// The CSV files of a run directory: those listed in its manifest, or every
/// `.csv` file when there is none.
pub fn run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(MANIFEST_FILE).is_file() {
        let m = Manifest::load(dir)?;
        return Ok(m.runs.iter().map(|r| dir.join(&r.file)).collect());
    }
    let entries = std::fs::read_dir(dir).map_err(|e| FetsError::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| FetsError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every record under `dirs`.
pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<(Vec<String>, Vec<EpisodeRecord>)>> {
    let mut out = Vec::new();
    for d in dirs {
        for f in run_files(d)? {
            out.push(read_records(&f)?);
        }
    }
    Ok(out)
}

fn metric_values(spaces: &[String], r: &EpisodeRecord) -> Vec<(String, f64)> {
    let mut v = vec![("acc_reward".to_string(), r.acc_reward), ("steps".to_string(), r.steps as f64)];
    for (i, s) in spaces.iter().enumerate() {
        if let Some(f) = r.free_energy[i] {
            v.push((format!("F_{s}"), f));
        }
        v.push((format!("sel_{s}"), r.selection[i]));
    }
    v
}

/// Groups records by run id and episode and summarises every metric.
/// The result does not depend on the order of seeds or files.
pub fn aggregate(runs: &[(Vec<String>, Vec<EpisodeRecord>)]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    for (spaces, records) in runs {
        for r in records {
            for (metric, value) in metric_values(spaces, r) {
                groups.entry((r.run_id.clone(), metric, r.episode)).or_default().push(value);
            }
        }
    }
    groups
        .into_iter()
        .map(|((run_id, metric, episode), mut values)| {
            // summing in sorted order makes the result permutation-invariant
            values.sort_by(f64::total_cmp);
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let stderr = (n > 1).then(|| {
                let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
                (ss / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt()
            });
            SummaryRow {
                run_id,
                episode,
                metric,
                n,
                mean,
                stderr,
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 6] = ["run_id", "episode", "metric", "n", "mean", "stderr"];

pub fn write_summary<W: std::io::Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.episode.to_string(),
            r.metric.clone(),
            r.n.to_string(),
            r.mean.to_string(),
            r.stderr.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| FetsError::io("<summary>", e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let file = File::open(path).map_err(|e| FetsError::io(path, e))?;
    let source = path.display().to_string();
    let mut rdr = csv::Reader::from_reader(file);
    if rdr.headers()?.iter().ne(SUMMARY_HEADER) {
        return Err(FetsError::Parse {
            source_name: source,
            line: 1,
            message: "unexpected summary header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| FetsError::Parse {
            source_name: source.clone(),
            line: i + 2,
            message: format!("bad {what}"),
        };
        rows.push(SummaryRow {
            run_id: rec[0].to_string(),
            episode: rec[1].parse().map_err(|_| bad("episode"))?,
            metric: rec[2].to_string(),
            n: rec[3].parse().map_err(|_| bad("n"))?,
            mean: rec[4].parse().map_err(|_| bad("mean"))?,
            stderr: if rec[5].is_empty() {
                None
            } else {
                Some(rec[5].parse().map_err(|_| bad("stderr"))?)
            },
        });
    }
    Ok(rows)
}

/// Run ids present in a summary, sorted.
pub fn run_ids(rows: &[SummaryRow]) -> BTreeSet<String> {
    rows.iter().map(|r| r.run_id.clone()).collect()
}
