//! Retrieval metrics at K, corpus aggregation, confusion matrix and
//! navigation summaries.
//!
//! With `G` the ground-truth set and `P_K` the first `K` predictions:
//! `Precision@K = |P_K ∩ G| / K`, `Recall@K = |P_K ∩ G| / |G|`, and
//! `Hit@K = 1` iff `|P_K ∩ G| ≥ 1`. Values are exact rationals; corpus
//! scores are unweighted means over records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::LANDMARK_COUNT;
use crate::datasetgen::{DatasetRecord, RankedLandmarks};
use crate::navloop::{EpisodeTrace, Outcome};

pub type Exact = Ratio<u64>;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{}", alignment_message(.missing, .extra, .duplicated))]
    Alignment { missing: Vec<String>, extra: Vec<String>, duplicated: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("heatmap encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

fn alignment_message(missing: &[String], extra: &[String], duplicated: &[String]) -> String {
    let list = |ids: &[String]| {
        let shown: Vec<&str> = ids.iter().take(20).map(String::as_str).collect();
        let more = ids.len().saturating_sub(shown.len());
        if more > 0 {
            format!("{} (+{more} more)", shown.join(", "))
        } else {
            shown.join(", ")
        }
    };
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("no prediction for {}", list(missing)));
    }
    if !extra.is_empty() {
        parts.push(format!("predictions for unknown records {}", list(extra)));
    }
    if !duplicated.is_empty() {
        parts.push(format!("several predictions for {}", list(duplicated)));
    }
    format!("predictions do not align with the manifest: {}", parts.join("; "))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io { path: path.to_path_buf(), source }
}

/// Precision, recall and hit rate per K.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalScore {
    pub precision_at: BTreeMap<usize, Exact>,
    pub recall_at: BTreeMap<usize, Exact>,
    pub hit_at: BTreeMap<usize, Exact>,
}

impl RetrievalScore {
    fn empty() -> Self {
        Self { precision_at: BTreeMap::new(), recall_at: BTreeMap::new(), hit_at: BTreeMap::new() }
    }

    /// `P@K`, `R@K`, `Hit@K` rounded to `f64` for display.
    pub fn to_f64_map(&self) -> BTreeMap<String, f64> {
        let f = |r: &Exact| *r.numer() as f64 / *r.denom() as f64;
        let mut out = BTreeMap::new();
        for (k, v) in &self.precision_at {
            out.insert(format!("P@{k}"), f(v));
        }
        for (k, v) in &self.recall_at {
            out.insert(format!("R@{k}"), f(v));
        }
        for (k, v) in &self.hit_at {
            out.insert(format!("Hit@{k}"), f(v));
        }
        out
    }
}

fn check_ks(ks: &[usize]) -> Result<(), MetricsError> {
    if ks.is_empty() {
        return Err(MetricsError::Input("at least one K is required".into()));
    }
    if ks.contains(&0) {
        return Err(MetricsError::Input("K must be at least 1".into()));
    }
    Ok(())
}

fn duplicate(ids: &[u8]) -> Option<u8> {
    let mut seen = HashSet::new();
    ids.iter().copied().find(|i| !seen.insert(*i))
}

/// Score a ranked prediction list against the ground-truth set `truth`.
pub fn score_sets(predictions: &[u8], truth: &[u8], ks: &[usize]) -> Result<RetrievalScore, MetricsError> {
    check_ks(ks)?;
    if let Some(d) = duplicate(predictions) {
        return Err(MetricsError::Input(format!("landmark {d} predicted more than once")));
    }
    if let Some(d) = duplicate(truth) {
        return Err(MetricsError::Input(format!("landmark {d} appears twice in the ground truth")));
    }
    if truth.is_empty() {
        return Err(MetricsError::Input("ground truth is empty".into()));
    }
    let g: HashSet<u8> = truth.iter().copied().collect();
    let mut score = RetrievalScore::empty();
    for &k in ks {
        let hits = predictions.iter().take(k).filter(|p| g.contains(p)).count() as u64;
        score.precision_at.insert(k, Exact::new(hits, k as u64));
        score.recall_at.insert(k, Exact::new(hits, g.len() as u64));
        score.hit_at.insert(k, Exact::from_integer(u64::from(hits >= 1)));
    }
    Ok(score)
}

/// Score against the landmark set of a label.
pub fn score_retrieval(
    predictions: &[u8],
    truth: &RankedLandmarks,
    ks: &[usize],
) -> Result<RetrievalScore, MetricsError> {
    score_sets(predictions, &truth.indices(), ks)
}

/// Counts of (true nearest, predicted top-1); rows and columns in index order 1..=14.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; LANDMARK_COUNT]; LANDMARK_COUNT],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self { counts: [[0; LANDMARK_COUNT]; LANDMARK_COUNT] }
    }
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: u8, predicted: u8) {
        self.counts[usize::from(truth) - 1][usize::from(predicted) - 1] += 1;
    }

    pub fn get(&self, truth: u8, predicted: u8) -> u64 {
        self.counts[usize::from(truth) - 1][usize::from(predicted) - 1]
    }

    pub fn row_sum(&self, truth: u8) -> u64 {
        self.counts[usize::from(truth) - 1].iter().sum()
    }

    pub fn column_sum(&self, predicted: u8) -> u64 {
        self.counts.iter().map(|r| r[usize::from(predicted) - 1]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Tab-separated count table with a header row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 1..=LANDMARK_COUNT {
            out.push_str(&format!("\t{c}"));
        }
        out.push('\n');
        for (r, row) in self.counts.iter().enumerate() {
            out.push_str(&(r + 1).to_string());
            for v in row {
                out.push_str(&format!("\t{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Row-normalised heatmap, `cell` pixels per entry, white = whole row.
    pub fn to_heatmap(&self, cell: u32) -> GrayImage {
        let n = LANDMARK_COUNT as u32;
        GrayImage::from_fn(n * cell, n * cell, |x, y| {
            let (r, c) = ((y / cell) as usize, (x / cell) as usize);
            let total: u64 = self.counts[r].iter().sum();
            let v = if total == 0 { 0.0 } else { self.counts[r][c] as f64 / total as f64 };
            Luma([(v * 255.0).round() as u8])
        })
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub ranked: Vec<u8>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, MetricsError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for p in predictions {
        writeln!(w, "{}", serde_json::to_string(p).expect("prediction serializes")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusScore {
    pub records: usize,
    pub mean: RetrievalScore,
    pub confusion: ConfusionMatrix,
}

impl CorpusScore {
    /// Structured report: display values plus the exact fractions.
    pub fn report(&self) -> serde_json::Value {
        let mut exact = serde_json::Map::new();
        for (name, m) in [("P", &self.mean.precision_at), ("R", &self.mean.recall_at), ("Hit", &self.mean.hit_at)] {
            for (k, v) in m {
                exact.insert(format!("{name}@{k}"), serde_json::Value::String(v.to_string()));
            }
        }
        serde_json::json!({
            "records": self.records,
            "metrics": self.mean.to_f64_map(),
            "exact": exact,
            "confusion": self.confusion.counts,
        })
    }
}

/// Macro-averaged scores over `manifest`, matching predictions by record id.
pub fn score_corpus(
    manifest: &[DatasetRecord],
    predictions: &[Prediction],
    ks: &[usize],
) -> Result<CorpusScore, MetricsError> {
    check_ks(ks)?;
    if manifest.is_empty() {
        return Err(MetricsError::Input("manifest has no records".into()));
    }
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    let mut duplicated = Vec::new();
    for p in predictions {
        if by_id.insert(p.record_id.as_str(), p).is_some() {
            duplicated.push(p.record_id.clone());
        }
    }
    let ids: Vec<String> = manifest.iter().map(DatasetRecord::record_id).collect();
    let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let missing: Vec<String> = ids.iter().filter(|id| !by_id.contains_key(id.as_str())).cloned().collect();
    let extra: Vec<String> =
        predictions.iter().filter(|p| !known.contains(p.record_id.as_str())).map(|p| p.record_id.clone()).collect();
    if !(missing.is_empty() && extra.is_empty() && duplicated.is_empty()) {
        return Err(MetricsError::Alignment { missing, extra, duplicated });
    }

    let mut sum = RetrievalScore::empty();
    let mut confusion = ConfusionMatrix::default();
    for (record, id) in manifest.iter().zip(&ids) {
        let pred = by_id[id.as_str()];
        if let Some(bad) = pred.ranked.iter().find(|&&i| i == 0 || usize::from(i) > LANDMARK_COUNT) {
            return Err(MetricsError::Input(format!("{id}: landmark index {bad} is out of range")));
        }
        let Some(&top) = pred.ranked.first() else {
            return Err(MetricsError::Input(format!("{id}: empty prediction")));
        };
        let s = score_retrieval(&pred.ranked, &record.ranked, ks).map_err(|e| match e {
            MetricsError::Input(m) => MetricsError::Input(format!("{id}: {m}")),
            other => other,
        })?;
        for (dst, src) in
            [(&mut sum.precision_at, &s.precision_at), (&mut sum.recall_at, &s.recall_at), (&mut sum.hit_at, &s.hit_at)]
        {
            for (k, v) in src {
                *dst.entry(*k).or_insert_with(|| Exact::from_integer(0)) += v;
            }
        }
        confusion.add(record.ranked.entries[0].index, top);
    }
    let n = Exact::from_integer(manifest.len() as u64);
    for m in [&mut sum.precision_at, &mut sum.recall_at, &mut sum.hit_at] {
        for v in m.values_mut() {
            *v /= n;
        }
    }
    Ok(CorpusScore { records: manifest.len(), mean: sum, confusion })
}

/// Write `report.json`, `confusion.tsv` and `confusion.png` into `dir`.
pub fn write_report(score: &CorpusScore, dir: &Path) -> Result<(), MetricsError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&score.report()).expect("report serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    let path = dir.join("confusion.tsv");
    std::fs::write(&path, score.confusion.to_table()).map_err(io_err(&path))?;
    score.confusion.to_heatmap(16).save(dir.join("confusion.png"))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationSummary {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean moves over successful episodes; `None` when none succeeded.
    pub mean_steps_to_success: Option<f64>,
    pub mean_final_distance_mm: f64,
    pub outcomes: BTreeMap<String, usize>,
}

pub fn summarize_navigation(traces: &[EpisodeTrace]) -> Result<NavigationSummary, MetricsError> {
    if traces.is_empty() {
        return Err(MetricsError::Input("no traces to summarize".into()));
    }
    let n = traces.len();
    let ok: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.outcome == Outcome::Success).collect();
    let mut outcomes = BTreeMap::new();
    for t in traces {
        let key = serde_json::to_value(t.outcome).expect("outcome serializes");
        *outcomes.entry(key.as_str().unwrap_or_default().to_string()).or_insert(0) += 1;
    }
    Ok(NavigationSummary {
        episodes: n,
        successes: ok.len(),
        success_rate: ok.len() as f64 / n as f64,
        mean_steps_to_success: (!ok.is_empty())
            .then(|| ok.iter().map(|t| t.moves() as f64).sum::<f64>() / ok.len() as f64),
        mean_final_distance_mm: traces.iter().map(|t| t.final_distance_mm).sum::<f64>() / n as f64,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: u64, d: u64) -> Exact {
        Exact::new(n, d)
    }

    #[test]
    fn perfect_prediction_optima() {
        let s = score_sets(&[1, 10, 2], &[1, 10, 2], &[1, 2, 3]).unwrap();
        assert!(s.precision_at.values().all(|v| *v == r(1, 1)));
        assert_eq!(s.recall_at.values().copied().collect::<Vec<_>>(), [r(1, 3), r(2, 3), r(1, 1)]);
    }

    #[test]
    fn partial_overlap() {
        // G = {A, B, C}, P = [A, D].
        let s = score_sets(&[1, 4], &[1, 2, 3], &[2]).unwrap();
        assert_eq!(s.precision_at[&2], r(1, 2));
        assert_eq!(s.recall_at[&2], r(1, 3));
        assert_eq!(s.hit_at[&2], r(1, 1));
    }

    #[test]
    fn disjoint_is_zero() {
        let s = score_sets(&[4, 5, 6], &[1, 2, 3], &[1, 2, 3]).unwrap();
        for m in [&s.precision_at, &s.recall_at, &s.hit_at] {
            assert!(m.values().all(|v| *v == r(0, 1)));
        }
    }

    #[test]
    fn input_errors() {
        assert!(matches!(score_sets(&[1, 1], &[1, 2, 3], &[1]), Err(MetricsError::Input(_))));
        assert!(matches!(score_sets(&[1], &[1, 2, 3], &[0]), Err(MetricsError::Input(_))));
        assert!(matches!(score_sets(&[1], &[], &[1]), Err(MetricsError::Input(_))));
        assert!(matches!(summarize_navigation(&[]), Err(MetricsError::Input(_))));
    }

    #[test]
    fn confusion_table_shape() {
        let mut m = ConfusionMatrix::default();
        m.add(1, 10);
        m.add(1, 10);
        m.add(14, 14);
        assert_eq!(m.row_sum(1), 2);
        assert_eq!(m.column_sum(10), 2);
        let table = m.to_table();
        assert_eq!(table.lines().count(), 15);
        assert_eq!(m.to_heatmap(4).dimensions(), (56, 56));
    }
}
