//! Per-episode metric rows and their CSV form.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::agent::Decision;
use crate::error::{FetsError, Result};

/// Metrics of one finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub run_id: String,
    pub seed: u64,
    pub episode: u64,
    pub steps: u64,
    pub acc_reward: f64,
    /// Mean free energy per space over the episode's steps; `None` when the
    /// method never scored that space.
    pub free_energy: Vec<Option<f64>>,
    /// Fraction of steps in which each space acted.
    pub selection: Vec<f64>,
    /// Whether the step cap ended the episode.
    pub truncated: bool,
}

pub fn header(spaces: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "seed", "episode", "steps", "acc_reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for s in spaces {
        h.push(format!("F_{s}"));
        h.push(format!("sel_{s}"));
    }
    h.push("truncated".into());
    h
}

impl EpisodeRecord {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.run_id.clone(),
            self.seed.to_string(),
            self.episode.to_string(),
            self.steps.to_string(),
            self.acc_reward.to_string(),
        ];
        for (fe, sel) in self.free_energy.iter().zip(&self.selection) {
            f.push(fe.map(|v| v.to_string()).unwrap_or_default());
            f.push(sel.to_string());
        }
        f.push(self.truncated.to_string());
        f
    }
}

/// Running totals for the episode in progress.
#[derive(Debug, Clone)]
pub struct EpisodeStats {
    steps: u64,
    reward: f64,
    f_sum: Vec<f64>,
    f_count: Vec<u64>,
    selected: Vec<u64>,
}

impl EpisodeStats {
    pub fn new(spaces: usize) -> Self {
        Self {
            steps: 0,
            reward: 0.0,
            f_sum: vec![0.0; spaces],
            f_count: vec![0; spaces],
            selected: vec![0; spaces],
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn record(&mut self, decision: &Decision, reward: f64) {
        self.steps += 1;
        self.reward += reward;
        self.selected[decision.selected] += 1;
        if let Some(fs) = &decision.free_energies {
            for (i, f) in fs.iter().enumerate() {
                if f.is_finite() {
                    self.f_sum[i] += f;
                    self.f_count[i] += 1;
                }
            }
        }
    }

    pub fn finish(&self, run_id: &str, seed: u64, episode: u64, truncated: bool) -> EpisodeRecord {
        let steps = self.steps.max(1) as f64;
        EpisodeRecord {
            run_id: run_id.to_string(),
            seed,
            episode,
            steps: self.steps,
            acc_reward: self.reward,
            free_energy: self
                .f_sum
                .iter()
                .zip(&self.f_count)
                .map(|(s, n)| (*n > 0).then(|| s / *n as f64))
                .collect(),
            selection: self.selected.iter().map(|c| *c as f64 / steps).collect(),
            truncated,
        }
    }
}

/// Streams records of one run to a CSV file.
pub struct RecordWriter {
    inner: csv::Writer<File>,
    spaces: usize,
}

impl RecordWriter {
    pub fn create(path: &Path, spaces: &[String]) -> Result<Self> {
        let file = File::create(path).map_err(|e| FetsError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(header(spaces))?;
        Ok(Self {
            inner,
            spaces: spaces.len(),
        })
    }

    pub fn write(&mut self, record: &EpisodeRecord) -> Result<()> {
        if record.selection.len() != self.spaces || record.free_energy.len() != self.spaces {
            return Err(FetsError::invalid("record does not match the header's spaces"));
        }
        self.inner.write_record(record.fields())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| FetsError::io("<csv>", e))
    }
}

/// Space names and rows of a run CSV.
pub fn read_records(path: &Path) -> Result<(Vec<String>, Vec<EpisodeRecord>)> {
    let file = File::open(path).map_err(|e| FetsError::io(path, e))?;
    read_from(file, &path.display().to_string())
}

pub fn read_from<R: std::io::Read>(reader: R, source: &str) -> Result<(Vec<String>, Vec<EpisodeRecord>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let parse_err = |line: usize, message: String| FetsError::Parse {
        source_name: source.to_string(),
        line,
        message,
    };
    let n = head.len();
    if n < 6 || !(n - 6).is_multiple_of(2) || head[..5] != ["run_id", "seed", "episode", "steps", "acc_reward"] || head[n - 1] != "truncated" {
        return Err(parse_err(1, "unexpected header".into()));
    }
    let mut spaces = Vec::new();
    for pair in head[5..n - 1].chunks(2) {
        let name = pair[0]
            .strip_prefix("F_")
            .filter(|name| pair[1].strip_prefix("sel_") == Some(*name))
            .ok_or_else(|| parse_err(1, format!("mismatched columns {} / {}", pair[0], pair[1])))?;
        spaces.push(name.to_string());
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            row[k]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("column {} is not a number: '{}'", head[k], &row[k])))
        };
        let int = |k: usize| -> Result<u64> {
            row[k]
                .parse::<u64>()
                .map_err(|_| parse_err(line, format!("column {} is not an integer: '{}'", head[k], &row[k])))
        };
        let mut free_energy = Vec::with_capacity(spaces.len());
        let mut selection = Vec::with_capacity(spaces.len());
        for j in 0..spaces.len() {
            let k = 5 + 2 * j;
            free_energy.push(if row[k].is_empty() { None } else { Some(num(k)?) });
            selection.push(num(k + 1)?);
        }
        let truncated = match &row[n - 1] {
            "true" => true,
            "false" => false,
            other => return Err(parse_err(line, format!("truncated flag '{other}'"))),
        };
        out.push(EpisodeRecord {
            run_id: row[0].to_string(),
            seed: int(1)?,
            episode: int(2)?,
            steps: int(3)?,
            acc_reward: num(4)?,
            free_energy,
            selection,
            truncated,
        });
    }
    Ok((spaces, out))
}

/// Writes a whole run to an in-memory CSV; used by tests and tools.
pub fn to_csv_string(spaces: &[String], records: &[EpisodeRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(spaces))?;
    for r in records {
        w.write_record(r.fields())?;
    }
    let mut bytes = w.into_inner().map_err(|e| FetsError::invalid(e.to_string()))?;
    bytes.flush().ok();
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
