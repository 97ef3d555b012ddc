//! Nearest-landmark labels and the image–answer dataset builder.
//!
//! A label lists the three landmarks closest (3D Euclidean, mm) to the
//! isocenter, nearest first, as `[i1: name1, i2: name2, i3: name3]`. Each
//! name is drawn uniformly from that landmark's variant list with a seeded
//! generator, so the text is reproducible per record.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::LandmarkSchema;
use crate::geometry::{sample_isocenters, CArmGeometry, CArmPose, GeometryError, SamplerConfig};
use crate::phantom::{generate_phantom, LandmarkSet, PhantomConfig, PhantomError, Volume};
use crate::projector::{Projector, ProjectorConfig, ProjectorError};
use crate::rng::{derive_seed, Stream};

/// Landmarks per label.
pub const LABEL_ARITY: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub index: u8,
    /// Canonical name.
    pub name: String,
    /// Distance to the isocenter; absent when parsed back from label text.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distance_mm: Option<f64>,
}

/// Landmarks ordered by non-decreasing distance to the isocenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedLandmarks {
    pub entries: Vec<RankedEntry>,
}

impl RankedLandmarks {
    pub fn indices(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn without_distances(&self) -> Self {
        Self { entries: self.entries.iter().map(|e| RankedEntry { distance_mm: None, ..e.clone() }).collect() }
    }
}

/// The `k` landmarks nearest to the isocenter, ties broken by lower index.
pub fn nearest_k(pose: &CArmPose, set: &LandmarkSet, k: usize) -> RankedLandmarks {
    let mut all: Vec<(f64, u8, &str)> =
        set.iter().map(|l| ((l.position - pose.isocenter).norm(), l.index, l.canonical_name.as_str())).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    RankedLandmarks {
        entries: all
            .into_iter()
            .take(k)
            .map(|(d, index, name)| RankedEntry { index, name: name.to_string(), distance_mm: Some(d) })
            .collect(),
    }
}

/// Render a label with explicitly chosen display names.
pub fn format_label_with_names<'a>(pairs: impl IntoIterator<Item = (u8, &'a str)>) -> String {
    let body = pairs.into_iter().map(|(i, n)| format!("{i}: {n}")).collect::<Vec<_>>().join(", ");
    format!("[{body}]")
}

/// Render a label, drawing each slot's name from its variants under `variant_seed`.
pub fn format_label(ranked: &RankedLandmarks, variant_seed: u64, schema: &LandmarkSchema) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(variant_seed);
    format_label_with_names(ranked.entries.iter().map(|e| {
        let variants = &schema.get(e.index).expect("ranked index comes from the schema").variants;
        (e.index, variants[rng.random_range(0..variants.len())].as_str())
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelErrorKind {
    #[error("label must be enclosed in [ ]")]
    Brackets,
    #[error("entry must look like `index: name`")]
    Entry,
    #[error("index {0:?} is not in 1..=14")]
    Index(String),
    #[error("unknown landmark name {0:?}")]
    UnknownName(String),
    #[error("index {index} does not match {name:?} (landmark {resolved})")]
    Mismatch { index: u8, name: String, resolved: u8 },
    #[error("landmark {0} listed twice")]
    Duplicate(u8),
    #[error("expected {expected} entries, found {found}")]
    Arity { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("label byte {offset}: {kind}")]
pub struct LabelError {
    pub offset: usize,
    pub kind: LabelErrorKind,
}

/// Parse a three-entry label.
pub fn parse_label(text: &str, schema: &LandmarkSchema) -> Result<RankedLandmarks, LabelError> {
    parse_label_k(text, LABEL_ARITY, schema)
}

/// Parse a label with exactly `k` entries. Any registered variant is accepted,
/// case-insensitively, and mapped to its canonical name.
pub fn parse_label_k(text: &str, k: usize, schema: &LandmarkSchema) -> Result<RankedLandmarks, LabelError> {
    let fail = |offset, kind| Err(LabelError { offset, kind });
    let lead = text.len() - text.trim_start().len();
    let trimmed = text.trim();
    if !(trimmed.len() >= 2 && trimmed.starts_with('[') && trimmed.ends_with(']')) {
        return fail(lead, LabelErrorKind::Brackets);
    }
    let inner = &trimmed[1..trimmed.len() - 1];
    if inner.contains(['[', ']']) {
        return fail(lead + 1 + inner.find(['[', ']']).unwrap(), LabelErrorKind::Brackets);
    }
    let mut entries = Vec::new();
    let mut offset = lead + 1;
    for part in inner.split(',') {
        let Some((idx, name)) = part.split_once(':') else {
            return fail(offset, LabelErrorKind::Entry);
        };
        let idx = idx.trim();
        let index = match idx.parse::<u8>().ok().filter(|i| schema.get(*i).is_some()) {
            Some(i) => i,
            None => return fail(offset, LabelErrorKind::Index(idx.to_string())),
        };
        let name = name.trim();
        let name_offset = offset + part.find(':').unwrap() + 1;
        let Some(resolved) = schema.resolve(name) else {
            return fail(name_offset, LabelErrorKind::UnknownName(name.to_string()));
        };
        if resolved != index {
            return fail(name_offset, LabelErrorKind::Mismatch { index, name: name.to_string(), resolved });
        }
        if entries.iter().any(|e: &RankedEntry| e.index == index) {
            return fail(offset, LabelErrorKind::Duplicate(index));
        }
        entries.push(RankedEntry { index, name: schema.canonical(index).unwrap().to_string(), distance_mm: None });
        offset += part.len() + 1;
    }
    if entries.len() != k {
        return fail(lead, LabelErrorKind::Arity { expected: k, found: entries.len() });
    }
    Ok(RankedLandmarks { entries })
}

// ---------------------------------------------------------------------------
// Dataset building
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Projector(#[from] ProjectorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Manifest { path: PathBuf, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Which volumes go to which split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    /// `phantom-000 ..` for training followed by the test volumes.
    pub fn phantoms(train: usize, test: usize) -> Self {
        let id = |i: usize| format!("phantom-{i:03}");
        Self { train: (0..train).map(id).collect(), test: (train..train + test).map(id).collect() }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for id in self.train.iter().chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(DatasetError::Config(if self.train.contains(id) && self.test.contains(id) {
                    format!("volume {id:?} is assigned to both train and test")
                } else {
                    format!("volume {id:?} is listed twice")
                }));
            }
        }
        Ok(())
    }

    /// Ordered `(ordinal, split, volume_id)` triples.
    fn volumes(&self) -> impl Iterator<Item = (usize, Split, &str)> {
        self.train
            .iter()
            .map(|v| (Split::Train, v.as_str()))
            .chain(self.test.iter().map(|v| (Split::Test, v.as_str())))
            .enumerate()
            .map(|(i, (s, v))| (i, s, v))
    }

    /// `(train, test)` record counts for `per_volume` images per volume.
    pub fn record_counts(&self, per_volume: usize) -> (usize, usize) {
        (self.train.len() * per_volume, self.test.len() * per_volume)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub per_volume: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub geometry: CArmGeometry,
    pub projector: ProjectorConfig,
    /// Opaque hook naming the prompt that wraps the label downstream.
    pub prompt_template_id: String,
    pub write_images: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_volume: 1024,
            seed: 0,
            sampler: SamplerConfig::default(),
            geometry: CArmGeometry::default(),
            projector: ProjectorConfig::default(),
            prompt_template_id: "nearest3-v1".into(),
            write_images: true,
        }
    }
}

/// One line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub split: Split,
    pub volume_id: String,
    pub sample_id: usize,
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub isocenter_mm: [f64; 3],
    pub ranked: RankedLandmarks,
    pub label_text: String,
    pub variant_seed: u64,
    pub prompt_template_id: String,
}

impl DatasetRecord {
    pub fn record_id(&self) -> String {
        record_id(&self.volume_id, self.sample_id)
    }
}

pub fn record_id(volume_id: &str, sample_id: usize) -> String {
    format!("{volume_id}/{sample_id:05}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub train_records: usize,
    pub test_records: usize,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

/// Render `per_volume` samples from every volume in `split` and write
/// `train.jsonl`, `test.jsonl` and `images/<volume>/<sample>.png` under
/// `out_dir`. `load` supplies each volume by id.
pub fn build_dataset<F>(
    split: &SplitAssignment,
    config: &DatasetConfig,
    out_dir: &Path,
    schema: &LandmarkSchema,
    mut load: F,
) -> Result<DatasetSummary, DatasetError>
where
    F: FnMut(usize, &str) -> Result<(Volume, LandmarkSet), DatasetError>,
{
    if config.per_volume == 0 {
        return Err(DatasetError::Config("per_volume must be at least 1".into()));
    }
    split.validate()?;
    let projector = Projector::new(config.projector)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let train_manifest = out_dir.join("train.jsonl");
    let test_manifest = out_dir.join("test.jsonl");
    let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(io_err(p));
    let mut writers = [open(&train_manifest)?, open(&test_manifest)?];
    let mut counts = [0usize; 2];

    for (ordinal, which, volume_id) in split.volumes() {
        let (volume, landmarks) = load(ordinal, volume_id)?;
        let sampler =
            SamplerConfig { seed: derive_seed(config.seed, Stream::Sampler, ordinal as u64), ..config.sampler };
        let poses = sample_isocenters(&volume, config.per_volume, &sampler, &config.geometry)?;
        let image_dir = out_dir.join("images").join(volume_id);
        if config.write_images {
            fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
        }
        let slot = which as usize;
        for (sample_id, pose) in poses.iter().enumerate() {
            let image_path = format!("images/{volume_id}/{sample_id:05}.png");
            if config.write_images {
                let img = projector.render(&volume, pose)?;
                img.save_png(&out_dir.join(&image_path))?;
            }
            let ranked = nearest_k(pose, &landmarks, LABEL_ARITY);
            let variant_seed = derive_seed(config.seed, Stream::Variants, ((ordinal as u64) << 32) | sample_id as u64);
            let label_text = format_label(&ranked, variant_seed, schema);
            let p = pose.isocenter;
            let record = DatasetRecord {
                split: which,
                volume_id: volume_id.to_string(),
                sample_id,
                image_path,
                isocenter_mm: [p.x, p.y, p.z],
                ranked,
                label_text,
                variant_seed,
                prompt_template_id: config.prompt_template_id.clone(),
            };
            let path = if slot == 0 { &train_manifest } else { &test_manifest };
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(writers[slot], "{line}").map_err(io_err(path))?;
            counts[slot] += 1;
        }
    }
    for (w, p) in writers.iter_mut().zip([&train_manifest, &test_manifest]) {
        w.flush().map_err(io_err(p))?;
    }
    Ok(DatasetSummary { train_records: counts[0], test_records: counts[1], train_manifest, test_manifest })
}

/// Build from procedural phantoms, volume `i` generated with a seed derived
/// from `(config.seed, i)`.
pub fn build_phantom_dataset(
    split: &SplitAssignment,
    config: &DatasetConfig,
    phantom: &PhantomConfig,
    out_dir: &Path,
) -> Result<DatasetSummary, DatasetError> {
    let schema = LandmarkSchema::standard();
    build_dataset(split, config, out_dir, &schema, |ordinal, _| {
        Ok(generate_phantom(phantom_seed(config.seed, ordinal), phantom)?)
    })
}

/// Phantom seed for volume `ordinal` of a dataset built with `seed`.
pub fn phantom_seed(seed: u64, ordinal: usize) -> u64 {
    derive_seed(seed, Stream::VolumeSeeds, ordinal as u64)
}

pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
