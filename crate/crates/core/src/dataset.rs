//! Offline trajectory datasets in a flat, D4RL-like layout.
//!
//! A dataset directory holds `meta.json` and `data.csv`. Each CSV row is one
//! transition: the observation the action was taken from, the action, the
//! reward, and whether the step ended the episode by termination or by the
//! step limit. Numbers are written with 17 significant digits, so reading a
//! file back recovers every `f64` bit for bit.
//!
//! Reward statistics are taken over per-step rewards, not episode returns.
//! A failed episode ends in one terminal row carrying the environment's error
//! reward in place of the failing step's reward.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const DATA_FILE: &str = "data.csv";
pub const REWARD_BASIS: &str = "per_step";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("expected {what} of length {expected}, got {got}")]
    DimMismatch { what: &'static str, expected: usize, got: usize },
    #[error("transition out of order: {0}")]
    EpisodeOrder(String),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("dataset format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("data.csv line {line}: {reason}")]
    CorruptRow { line: usize, reason: String },
    #[error("metadata disagrees with the data: {0}")]
    MetaMismatch(String),
    #[error("dataset has no transitions")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub env: String,
    pub baseline: String,
    pub trajectory_count: usize,
    pub a_dim: usize,
    pub o_dim: usize,
    pub max_steps: usize,
    pub error_reward: f64,
    /// `None` for an empty dataset.
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
    pub seed: u64,
    pub format_version: u32,
    /// Whether `error_reward <= r_min * max_steps` was verified for the
    /// generating environment.
    pub error_reward_checked: bool,
    /// Always `"per_step"`: the reward statistics are over transitions.
    pub reward_basis: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub episode_id: usize,
    pub step: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub timeout: bool,
}

impl Transition {
    pub fn closes_episode(&self) -> bool {
        self.terminal || self.timeout
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub rows: Vec<Transition>,
}

/// Summary statistics over a dataset's transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub reward_mean: f64,
    /// Population standard deviation.
    pub reward_std: f64,
    /// Fraction of episodes that did not end in a failure row.
    pub success_rate: f64,
    pub episodes: usize,
    pub transitions: usize,
}

/// A failure row is a terminal row carrying exactly the error reward.
fn is_failure(row: &Transition, error_reward: f64) -> bool {
    row.terminal && row.reward == error_reward
}

pub fn stats(data: &Dataset) -> Result<Stats, DatasetError> {
    if data.rows.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = data.rows.len() as f64;
    let mean = data.rows.iter().map(|r| r.reward).sum::<f64>() / n;
    let var = data.rows.iter().map(|r| (r.reward - mean).powi(2)).sum::<f64>() / n;
    let episodes = data.rows.iter().filter(|r| r.closes_episode()).count();
    let failures = data.rows.iter().filter(|r| is_failure(r, data.meta.error_reward)).count();
    Ok(Stats {
        reward_mean: mean,
        reward_std: var.sqrt(),
        success_rate: if episodes == 0 { 0.0 } else { (episodes - failures) as f64 / episodes as f64 },
        episodes,
        transitions: data.rows.len(),
    })
}

/// Header and one row in the style of a benchmark summary table. Numbers
/// use the shortest text that parses back to the same value.
pub fn table_row(meta: &DatasetMeta, s: &Stats) -> (String, String) {
    let header = "env\tbaseline\ttraj\ta_dim\to_dim\tmax_s\te_r\tmu_r\tsigma_r\tsuccess".to_string();
    let row = format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        meta.env,
        meta.baseline,
        meta.trajectory_count,
        meta.a_dim,
        meta.o_dim,
        meta.max_steps,
        meta.error_reward,
        s.reward_mean,
        s.reward_std,
        s.success_rate
    );
    (header, row)
}

/// Static facts about the dataset being recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct RecorderSpec {
    pub env: String,
    pub baseline: String,
    pub a_dim: usize,
    pub o_dim: usize,
    pub max_steps: usize,
    pub error_reward: f64,
    pub seed: u64,
    pub error_reward_checked: bool,
}

/// Appends transitions in order, enforcing dimensions and episode structure.
///
/// Episodes are numbered from 0 and steps from 0 within each episode. A row
/// with `terminal` or `timeout` set closes its episode; the next row must
/// start the following episode.
#[derive(Debug, Clone)]
pub struct Recorder {
    spec: RecorderSpec,
    rows: Vec<Transition>,
    open: bool,
}

impl Recorder {
    pub fn new(spec: RecorderSpec) -> Self {
        Self { spec, rows: Vec::new(), open: false }
    }

    /// Episode id and step the next row must carry.
    pub fn next_position(&self) -> (usize, usize) {
        match self.rows.last() {
            None => (0, 0),
            Some(r) if self.open => (r.episode_id, r.step + 1),
            Some(r) => (r.episode_id + 1, 0),
        }
    }

    pub fn record(&mut self, t: Transition) -> Result<(), DatasetError> {
        if t.observation.len() != self.spec.o_dim {
            return Err(DatasetError::DimMismatch { what: "observation", expected: self.spec.o_dim, got: t.observation.len() });
        }
        if t.action.len() != self.spec.a_dim {
            return Err(DatasetError::DimMismatch { what: "action", expected: self.spec.a_dim, got: t.action.len() });
        }
        let (episode, step) = self.next_position();
        if (t.episode_id, t.step) != (episode, step) {
            return Err(DatasetError::EpisodeOrder(format!(
                "expected episode {episode} step {step}, got episode {} step {}",
                t.episode_id, t.step
            )));
        }
        if t.reward < self.spec.error_reward || !t.reward.is_finite() {
            return Err(DatasetError::InvalidTransition(format!("reward {} is below the error reward", t.reward)));
        }
        if t.observation.iter().chain(&t.action).any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidTransition("observation and action must be finite".into()));
        }
        self.open = !t.closes_episode();
        self.rows.push(t);
        Ok(())
    }

    /// Appends another recorder's closed episodes, renumbered to follow this
    /// one's.
    pub fn append(&mut self, other: Recorder) -> Result<(), DatasetError> {
        let mut data = other.finish()?;
        let (offset, _) = self.next_position();
        for mut r in data.rows.drain(..) {
            r.episode_id += offset;
            self.record(r)?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[Transition] {
        &self.rows
    }

    /// Closes the dataset. Every episode must have ended.
    pub fn finish(self) -> Result<Dataset, DatasetError> {
        if self.open {
            return Err(DatasetError::EpisodeOrder("last episode has no terminal or timeout row".into()));
        }
        let s = &self.spec;
        let mut meta = DatasetMeta {
            env: s.env.clone(),
            baseline: s.baseline.clone(),
            trajectory_count: self.rows.iter().filter(|r| r.closes_episode()).count(),
            a_dim: s.a_dim,
            o_dim: s.o_dim,
            max_steps: s.max_steps,
            error_reward: s.error_reward,
            reward_mean: None,
            reward_std: None,
            seed: s.seed,
            format_version: FORMAT_VERSION,
            error_reward_checked: s.error_reward_checked,
            reward_basis: REWARD_BASIS.into(),
        };
        let mut data = Dataset { meta: meta.clone(), rows: self.rows };
        if let Ok(st) = stats(&data) {
            meta.reward_mean = Some(st.reward_mean);
            meta.reward_std = Some(st.reward_std);
        }
        data.meta = meta;
        Ok(data)
    }
}

fn header(o_dim: usize, a_dim: usize) -> Vec<String> {
    let mut h = vec!["episode_id".to_string(), "step".to_string()];
    h.extend((0..o_dim).map(|i| format!("obs_{i}")));
    h.extend((0..a_dim).map(|i| format!("act_{i}")));
    h.extend(["reward", "terminal", "timeout"].map(String::from));
    h
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `data.csv` rows to any sink.
pub fn write_csv<W: Write>(data: &Dataset, out: W) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header(data.meta.o_dim, data.meta.a_dim))?;
    let mut rec = Vec::with_capacity(5 + data.meta.o_dim + data.meta.a_dim);
    for r in &data.rows {
        rec.clear();
        rec.push(r.episode_id.to_string());
        rec.push(r.step.to_string());
        rec.extend(r.observation.iter().map(|v| num(*v)));
        rec.extend(r.action.iter().map(|v| num(*v)));
        rec.push(num(r.reward));
        rec.push(u8::from(r.terminal).to_string());
        rec.push(u8::from(r.timeout).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `meta.json` and `data.csv` into `dir`, creating it if needed.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut meta = serde_json::to_string_pretty(&data.meta)?;
    meta.push('\n');
    fs::write(dir.join(META_FILE), meta)?;
    let file = io::BufWriter::new(fs::File::create(dir.join(DATA_FILE))?);
    write_csv(data, file)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta, DatasetError> {
    let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let found = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
    if found != u64::from(FORMAT_VERSION) {
        return Err(DatasetError::FormatVersionMismatch { found: found as u32, expected: FORMAT_VERSION });
    }
    Ok(serde_json::from_value(raw)?)
}

/// Reads a dataset and checks it against its metadata.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let meta = read_meta(dir)?;
    let file = io::BufReader::new(fs::File::open(dir.join(DATA_FILE))?);
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let expected = header(meta.o_dim, meta.a_dim);
    if rd.headers()?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DatasetError::CorruptRow { line: 1, reason: "header does not match the metadata dimensions".into() });
    }
    let spec = RecorderSpec {
        env: meta.env.clone(),
        baseline: meta.baseline.clone(),
        a_dim: meta.a_dim,
        o_dim: meta.o_dim,
        max_steps: meta.max_steps,
        error_reward: meta.error_reward,
        seed: meta.seed,
        error_reward_checked: meta.error_reward_checked,
    };
    let mut rec = Recorder::new(spec);
    for (k, row) in rd.records().enumerate() {
        let line = k + 2;
        let row = row?;
        let t = parse_row(&row, meta.o_dim, meta.a_dim).map_err(|reason| DatasetError::CorruptRow { line, reason })?;
        rec.record(t).map_err(|e| DatasetError::CorruptRow { line, reason: e.to_string() })?;
    }
    let data = rec.finish().map_err(|e| DatasetError::MetaMismatch(e.to_string()))?;
    if data.meta.trajectory_count != meta.trajectory_count {
        return Err(DatasetError::MetaMismatch(format!(
            "meta lists {} trajectories, data holds {}",
            meta.trajectory_count, data.meta.trajectory_count
        )));
    }
    Ok(Dataset { meta, rows: data.rows })
}

fn parse_row(row: &csv::StringRecord, o_dim: usize, a_dim: usize) -> Result<Transition, String> {
    if row.len() != 5 + o_dim + a_dim {
        return Err(format!("expected {} fields, got {}", 5 + o_dim + a_dim, row.len()));
    }
    let int = |i: usize| row[i].parse::<usize>().map_err(|e| format!("field {i}: {e}"));
    let real = |i: usize| -> Result<f64, String> {
        let v = row[i].parse::<f64>().map_err(|e| format!("field {i}: {e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("field {i} is not finite"))
        }
    };
    let flag = |i: usize| match &row[i] {
        "0" => Ok(false),
        "1" => Ok(true),
        s => Err(format!("field {i}: expected 0 or 1, got {s:?}")),
    };
    let obs_end = 2 + o_dim;
    let act_end = obs_end + a_dim;
    Ok(Transition {
        episode_id: int(0)?,
        step: int(1)?,
        observation: (2..obs_end).map(real).collect::<Result<_, _>>()?,
        action: (obs_end..act_end).map(real).collect::<Result<_, _>>()?,
        reward: real(act_end)?,
        terminal: flag(act_end + 1)?,
        timeout: flag(act_end + 2)?,
    })
}
