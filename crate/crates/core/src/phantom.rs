//! Attenuation volumes, annotated landmarks and the procedural upper-body
//! phantom used in place of restricted CT data.
//!
//! Axes follow the supine AP convention used throughout the crate:
//! `x` runs from patient right to patient left (LR), `y` from anterior to
//! posterior (AP) and `z` from inferior to superior (SI). The volume occupies
//! `[0, dims * spacing]` on each axis and voxel `(i, j, k)` is centred at
//! `((i + 0.5) sx, (j + 0.5) sy, (k + 0.5) sz)`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::{LandmarkSchema, Side, LANDMARK_COUNT};
use crate::geometry::Aabb;
use crate::rng::{stream_rng, Stream};

/// Attenuation of water at roughly 60 keV effective energy, in mm⁻¹.
pub const MU_WATER: f64 = 0.02;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom configuration: {0}")]
    Config(String),
    #[error("invalid volume: {0}")]
    Volume(String),
    #[error("invalid volume header {path}: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("volume payload {path}: expected {expected} bytes, found {actual}")]
    PayloadLength { path: PathBuf, expected: usize, actual: usize },
    #[error("volume payload {path}: non-finite value at element {element}")]
    PayloadValue { path: PathBuf, element: usize },
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PhantomError + '_ {
    move |source| PhantomError::Io { path: path.to_path_buf(), source }
}

/// Voxel grid of linear attenuation coefficients (mm⁻¹).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self, PhantomError> {
        if dims.iter().any(|&n| n < 2) {
            return Err(PhantomError::Volume(format!("dims {dims:?} must all be >= 2")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(PhantomError::Volume(format!("spacing {spacing:?} must be finite and positive")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(PhantomError::Volume(format!(
                "{} voxels given for dims {dims:?} ({expected} expected)",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PhantomError::Volume(format!("voxel {i} has invalid attenuation {}", data[i])));
        }
        Ok(Self { dims, spacing, data })
    }

    /// Volume with every voxel set to `mu`.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], mu: f32) -> Result<Self, PhantomError> {
        Self::new(dims, spacing, vec![mu; dims[0] * dims[1] * dims[2]])
    }

    /// Volume whose voxels are set from a function of the voxel-centre position.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        mut mu: impl FnMut(Point3<f64>) -> f32,
    ) -> Result<Self, PhantomError> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(mu(Point3::new(
                        (i as f64 + 0.5) * spacing[0],
                        (j as f64 + 0.5) * spacing[1],
                        (k as f64 + 0.5) * spacing[2],
                    )));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Physical size in mm along LR, AP, SI.
    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        )
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new(Point3::origin(), Point3::from(self.extent()))
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.extent() * 0.5)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.offset(i, j, k)]
    }

    /// Trilinear interpolation between voxel centres; positions between the
    /// outermost centres and the boundary take the edge value.
    #[inline]
    pub fn sample(&self, p: &Point3<f64>) -> f64 {
        self.sample_grid([p.x / self.spacing[0] - 0.5, p.y / self.spacing[1] - 0.5, p.z / self.spacing[2] - 0.5])
    }

    /// [`Volume::sample`] at continuous voxel-index coordinates, where voxel
    /// `(i, j, k)` has its centre at `(i, j, k)`.
    #[inline]
    pub fn sample_grid(&self, u: [f64; 3]) -> f64 {
        let [nx, ny, nz] = self.dims;
        let axis = |u: f64, n: usize| {
            let u = u.clamp(0.0, (n - 1) as f64);
            let i = (u as usize).min(n - 2);
            (i, u - i as f64)
        };
        let (i, fx) = axis(u[0], nx);
        let (j, fy) = axis(u[1], ny);
        let (k, fz) = axis(u[2], nz);
        let sy = nx;
        let sz = nx * ny;
        let o = self.offset(i, j, k);
        let d = &self.data[o..=o + sz + sy + 1];
        let c = |off: usize| f64::from(d[off]);
        let c00 = c(0) + (c(1) - c(0)) * fx;
        let c10 = c(sy) + (c(sy + 1) - c(sy)) * fx;
        let c01 = c(sz) + (c(sz + 1) - c(sz)) * fx;
        let c11 = c(sz + sy) + (c(sz + sy + 1) - c(sz + sy)) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        c0 + (c1 - c0) * fz
    }

    /// Multiply every coefficient by `factor` (must be non-negative).
    pub fn scaled(&self, factor: f32) -> Result<Self, PhantomError> {
        Self::new(self.dims, self.spacing, self.data.iter().map(|v| v * factor).collect())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LandmarkError {
    #[error("expected {LANDMARK_COUNT} landmarks, found {0}")]
    Cardinality(usize),
    #[error("landmark index {0} appears more than once")]
    DuplicateIndex(u8),
    #[error("landmark index {0} is outside 1..=14")]
    IndexOutOfRange(u8),
    #[error("landmark {index} at {position:?} lies outside the volume extent {extent:?}")]
    OutsideExtent { index: u8, position: [f64; 3], extent: [f64; 3] },
    #[error("landmark {0} has no name variants or omits its canonical name")]
    Variants(u8),
    #[error("landmark {index} is on the wrong side of the LR midline")]
    Laterality { index: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub index: u8,
    pub canonical_name: String,
    pub variants: Vec<String>,
    /// Position in mm, volume coordinates.
    pub position: Point3<f64>,
    pub side: Side,
}

/// Exactly fourteen landmarks with indices 1..=14, stored in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    landmarks: Vec<Landmark>,
    extent: Vector3<f64>,
}

impl LandmarkSet {
    /// Validate and wrap. `extent` is the physical size of the volume the
    /// landmarks belong to.
    pub fn new(mut landmarks: Vec<Landmark>, extent: Vector3<f64>) -> Result<Self, LandmarkError> {
        let mut seen = [false; LANDMARK_COUNT];
        for lm in &landmarks {
            if !(1..=LANDMARK_COUNT as u8).contains(&lm.index) {
                return Err(LandmarkError::IndexOutOfRange(lm.index));
            }
            let slot = &mut seen[usize::from(lm.index - 1)];
            if *slot {
                return Err(LandmarkError::DuplicateIndex(lm.index));
            }
            *slot = true;
        }
        if landmarks.len() != LANDMARK_COUNT {
            return Err(LandmarkError::Cardinality(landmarks.len()));
        }
        landmarks.sort_by_key(|l| l.index);
        let midline = extent.x * 0.5;
        for lm in &landmarks {
            let p = lm.position;
            if (0..3).any(|a| !(p[a].is_finite() && p[a] >= 0.0 && p[a] <= extent[a])) {
                return Err(LandmarkError::OutsideExtent {
                    index: lm.index,
                    position: [p.x, p.y, p.z],
                    extent: [extent.x, extent.y, extent.z],
                });
            }
            if lm.variants.is_empty() || !lm.variants.contains(&lm.canonical_name) {
                return Err(LandmarkError::Variants(lm.index));
            }
            let wrong_side = match lm.side {
                Side::Right => p.x >= midline,
                Side::Left => p.x <= midline,
                Side::Midline => false,
            };
            if wrong_side {
                return Err(LandmarkError::Laterality { index: lm.index });
            }
        }
        Ok(Self { landmarks, extent })
    }

    /// Build a set from the schema and one position per index (1..=14 order).
    pub fn from_positions(
        schema: &LandmarkSchema,
        positions: &[Point3<f64>],
        extent: Vector3<f64>,
    ) -> Result<Self, LandmarkError> {
        let landmarks = schema
            .names()
            .iter()
            .zip(positions)
            .map(|(name, &position)| Landmark {
                index: name.index,
                canonical_name: name.canonical.clone(),
                variants: name.variants.clone(),
                position,
                side: name.side,
            })
            .collect();
        Self::new(landmarks, extent)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Landmark> {
        self.landmarks.iter()
    }

    pub fn as_slice(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn get(&self, index: u8) -> Option<&Landmark> {
        index.checked_sub(1).and_then(|i| self.landmarks.get(usize::from(i)))
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.extent
    }

    pub fn save(&self, path: &Path) -> Result<(), PhantomError> {
        let doc = LandmarkFile {
            volume_extent_mm: [self.extent.x, self.extent.y, self.extent.z],
            landmarks: self
                .landmarks
                .iter()
                .map(|l| LandmarkRecord {
                    index: l.index,
                    canonical_name: l.canonical_name.clone(),
                    variants: l.variants.clone(),
                    position_mm: [l.position.x, l.position.y, l.position.z],
                    side: l.side,
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&doc).expect("landmarks serialize");
        fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, PhantomError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| match e {
            PhantomError::Format { reason, .. } => PhantomError::Format { path: path.to_path_buf(), reason },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PhantomError> {
        let doc: LandmarkFile = serde_json::from_str(text)
            .map_err(|e| PhantomError::Format { path: PathBuf::from("<landmarks>"), reason: e.to_string() })?;
        let [ex, ey, ez] = doc.volume_extent_mm;
        let landmarks = doc
            .landmarks
            .into_iter()
            .map(|r| Landmark {
                index: r.index,
                canonical_name: r.canonical_name,
                variants: r.variants,
                position: Point3::from(r.position_mm),
                side: r.side,
            })
            .collect();
        Ok(Self::new(landmarks, Vector3::new(ex, ey, ez))?)
    }
}

#[derive(Serialize, Deserialize)]
struct LandmarkFile {
    volume_extent_mm: [f64; 3],
    landmarks: Vec<LandmarkRecord>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkRecord {
    index: u8,
    canonical_name: String,
    variants: Vec<String>,
    position_mm: [f64; 3],
    side: Side,
}

// ---------------------------------------------------------------------------
// Raw volume files
// ---------------------------------------------------------------------------

/// Scalar type of the raw payload (always little-endian).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    U8,
    I16le,
    U16le,
    F32le,
    F64le,
}

impl Encoding {
    pub fn size(self) -> usize {
        match self {
            Encoding::U8 => 1,
            Encoding::I16le | Encoding::U16le => 2,
            Encoding::F32le => 4,
            Encoding::F64le => 8,
        }
    }

    fn decode(self, bytes: &[u8]) -> f64 {
        match self {
            Encoding::U8 => f64::from(bytes[0]),
            Encoding::I16le => f64::from(i16::from_le_bytes([bytes[0], bytes[1]])),
            Encoding::U16le => f64::from(u16::from_le_bytes([bytes[0], bytes[1]])),
            Encoding::F32le => f64::from(f32::from_le_bytes(bytes.try_into().unwrap())),
            Encoding::F64le => f64::from_le_bytes(bytes.try_into().unwrap()),
        }
    }
}

/// Interpretation of the stored scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Linear attenuation in mm⁻¹.
    Attenuation,
    /// Hounsfield units, mapped through `mu_water * (1 + HU / 1000)`.
    Hounsfield,
}

/// Structured-text (JSON) header describing a raw volume payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub encoding: Encoding,
    pub units: Units,
    #[serde(default = "default_axes")]
    pub axes: [String; 3],
    #[serde(default = "default_mu_water")]
    pub mu_water: f64,
}

fn default_axes() -> [String; 3] {
    ["LR".into(), "AP".into(), "SI".into()]
}

fn default_mu_water() -> f64 {
    MU_WATER
}

/// Hounsfield value to attenuation, clamped at zero.
pub fn hu_to_mu(hu: f64, mu_water: f64) -> f64 {
    (mu_water * (1.0 + hu / 1000.0)).max(0.0)
}

/// Load a volume from a JSON header and a raw little-endian payload.
pub fn load_volume(header_path: &Path, raw_path: &Path) -> Result<Volume, PhantomError> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header: VolumeHeader = serde_json::from_str(&text)
        .map_err(|e| PhantomError::Header { path: header_path.to_path_buf(), reason: e.to_string() })?;
    let bytes = fs::read(raw_path).map_err(io_err(raw_path))?;
    decode_volume(&header, &bytes, header_path, raw_path)
}

fn decode_volume(
    header: &VolumeHeader,
    bytes: &[u8],
    header_path: &Path,
    raw_path: &Path,
) -> Result<Volume, PhantomError> {
    let header_err = |reason: String| PhantomError::Header { path: header_path.to_path_buf(), reason };
    if header.spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(header_err(format!("spacing {:?} must be positive", header.spacing_mm)));
    }
    if header.dims.iter().any(|&n| n < 2) {
        return Err(header_err(format!("dims {:?} must all be >= 2", header.dims)));
    }
    if !(header.mu_water.is_finite() && header.mu_water > 0.0) {
        return Err(header_err(format!("mu_water {} must be positive", header.mu_water)));
    }
    let count = header.dims.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let expected =
        count.and_then(|c| c.checked_mul(header.encoding.size())).ok_or_else(|| header_err("dims overflow".into()))?;
    if bytes.len() != expected {
        return Err(PhantomError::PayloadLength { path: raw_path.to_path_buf(), expected, actual: bytes.len() });
    }
    let mut data = Vec::with_capacity(expected / header.encoding.size());
    for (element, chunk) in bytes.chunks_exact(header.encoding.size()).enumerate() {
        let raw = header.encoding.decode(chunk);
        if !raw.is_finite() {
            return Err(PhantomError::PayloadValue { path: raw_path.to_path_buf(), element });
        }
        let mu = match header.units {
            Units::Attenuation => raw.max(0.0),
            Units::Hounsfield => hu_to_mu(raw, header.mu_water),
        };
        data.push(mu as f32);
    }
    Volume::new(header.dims, header.spacing_mm, data)
}

/// Write `volume` as an `f32le` attenuation payload plus JSON header.
pub fn save_volume(volume: &Volume, header_path: &Path, raw_path: &Path) -> Result<(), PhantomError> {
    let header = VolumeHeader {
        dims: volume.dims,
        spacing_mm: volume.spacing,
        encoding: Encoding::F32le,
        units: Units::Attenuation,
        axes: default_axes(),
        mu_water: MU_WATER,
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(header_path, text + "\n").map_err(io_err(header_path))?;
    let bytes: Vec<u8> = volume.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(raw_path, bytes).map_err(io_err(raw_path))
}

// ---------------------------------------------------------------------------
// Procedural phantom
// ---------------------------------------------------------------------------

/// Parameters of the procedural upper-body phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// Physical size along LR, AP, SI in mm.
    pub extent_mm: [f64; 3],
    /// Isotropic voxel size in mm.
    pub spacing_mm: f64,
    pub mu_soft: f64,
    pub mu_bone: f64,
    pub mu_lung: f64,
    pub mu_muscle: f64,
    /// Mean LR distance between the humeral heads.
    pub humeral_separation_mm: f64,
    /// Half-width of the uniform draw around the mean separation.
    pub humeral_separation_jitter_mm: f64,
    /// Half-width of the uniform per-structure position jitter.
    pub structure_jitter_mm: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            extent_mm: [500.0, 300.0, 900.0],
            spacing_mm: 4.0,
            mu_soft: MU_WATER,
            mu_bone: 0.048,
            mu_lung: 0.004,
            mu_muscle: 0.03,
            humeral_separation_mm: 285.0,
            humeral_separation_jitter_mm: 25.0,
            structure_jitter_mm: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipsoid {
        center: Point3<f64>,
        radii: Vector3<f64>,
    },
    Shell {
        center: Point3<f64>,
        radii: Vector3<f64>,
        thickness: f64,
    },
    Capsule {
        a: Point3<f64>,
        b: Point3<f64>,
        radius: f64,
    },
    Slab {
        min: Point3<f64>,
        max: Point3<f64>,
    },
    /// Elliptic cylinder along SI.
    Trunk {
        center: Point3<f64>,
        semi: [f64; 2],
        z: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy)]
struct Primitive {
    shape: Shape,
    mu: f64,
    /// Keep only `z` inside this interval.
    z_clip: Option<[f64; 2]>,
    /// Keep only `z mod period < width` (rib banding).
    bands: Option<[f64; 2]>,
}

impl Primitive {
    fn new(shape: Shape, mu: f64) -> Self {
        Self { shape, mu, z_clip: None, bands: None }
    }

    fn clip_z(mut self, lo: f64, hi: f64) -> Self {
        self.z_clip = Some([lo, hi]);
        self
    }

    fn banded(mut self, period: f64, width: f64) -> Self {
        self.bands = Some([period, width]);
        self
    }

    fn bounds(&self) -> Aabb {
        let (lo, hi) = match self.shape {
            Shape::Ellipsoid { center, radii } | Shape::Shell { center, radii, .. } => (center - radii, center + radii),
            Shape::Capsule { a, b, radius } => {
                let r = Vector3::repeat(radius);
                (a.inf(&b) - r, a.sup(&b) + r)
            }
            Shape::Slab { min, max } => (min, max),
            Shape::Trunk { center, semi, z } => (
                Point3::new(center.x - semi[0], center.y - semi[1], z[0]),
                Point3::new(center.x + semi[0], center.y + semi[1], z[1]),
            ),
        };
        Aabb::new(lo, hi)
    }

    fn contains(&self, p: &Point3<f64>) -> bool {
        if let Some([lo, hi]) = self.z_clip {
            if p.z < lo || p.z > hi {
                return false;
            }
        }
        if let Some([period, width]) = self.bands {
            if p.z.rem_euclid(period) >= width {
                return false;
            }
        }
        match self.shape {
            Shape::Ellipsoid { center, radii } => (p - center).component_div(&radii).norm_squared() <= 1.0,
            Shape::Shell { center, radii, thickness } => {
                let d = p - center;
                let inner = radii - Vector3::repeat(thickness);
                d.component_div(&radii).norm_squared() <= 1.0 && d.component_div(&inner).norm_squared() > 1.0
            }
            Shape::Capsule { a, b, radius } => {
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                (p - (a + ab * t)).norm_squared() <= radius * radius
            }
            Shape::Slab { min, max } => (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i]),
            Shape::Trunk { center, semi, z } => {
                let dx = (p.x - center.x) / semi[0];
                let dy = (p.y - center.y) / semi[1];
                p.z >= z[0] && p.z <= z[1] && dx * dx + dy * dy <= 1.0
            }
        }
    }
}

fn paint(data: &mut [f32], dims: [usize; 3], spacing: f64, prim: &Primitive) {
    let b = prim.bounds();
    let range = |axis: usize| {
        let lo = ((b.min[axis] / spacing - 0.5).floor().max(0.0)) as usize;
        let hi = ((b.max[axis] / spacing - 0.5).ceil().max(0.0) as usize).min(dims[axis] - 1);
        lo..=hi
    };
    let (rx, ry, rz) = (range(0), range(1), range(2));
    for k in rz {
        for j in ry.clone() {
            for i in rx.clone() {
                let p = Point3::new((i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing, (k as f64 + 0.5) * spacing);
                if prim.contains(&p) {
                    data[i + dims[0] * (j + dims[1] * k)] = prim.mu as f32;
                }
            }
        }
    }
}

/// Generate the procedural upper-body phantom for `seed`.
///
/// The anatomy is laid out for a 500 × 300 × 900 mm box and centred in the
/// configured extent. Landmark positions follow the same per-seed jitter as
/// the structures they annotate, and the humeral heads are placed
/// `humeral_separation_mm ± humeral_separation_jitter_mm` apart in LR.
pub fn generate_phantom(seed: u64, config: &PhantomConfig) -> Result<(Volume, LandmarkSet), PhantomError> {
    generate_phantom_with_schema(seed, config, &LandmarkSchema::standard())
}

pub fn generate_phantom_with_schema(
    seed: u64,
    config: &PhantomConfig,
    schema: &LandmarkSchema,
) -> Result<(Volume, LandmarkSet), PhantomError> {
    if config.extent_mm.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(PhantomError::Config(format!("extent {:?} must be positive", config.extent_mm)));
    }
    if !(config.spacing_mm.is_finite() && config.spacing_mm > 0.0) {
        return Err(PhantomError::Config(format!("spacing {} must be positive", config.spacing_mm)));
    }
    let mus = [config.mu_soft, config.mu_bone, config.mu_lung, config.mu_muscle];
    if mus.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(PhantomError::Config("attenuation values must be non-negative".into()));
    }
    if !(config.humeral_separation_jitter_mm >= 0.0 && config.structure_jitter_mm >= 0.0) {
        return Err(PhantomError::Config("jitter must be non-negative".into()));
    }
    let dims = config.extent_mm.map(|e| ((e / config.spacing_mm).round() as usize).max(2));
    let s = config.spacing_mm;
    let extent = Vector3::new(dims[0] as f64 * s, dims[1] as f64 * s, dims[2] as f64 * s);

    let mut rng = stream_rng(seed, Stream::Phantom, 0);
    let sep = config.humeral_separation_mm + config.humeral_separation_jitter_mm * rng.random_range(-1.0..=1.0);
    let j = config.structure_jitter_mm;
    let mut jitter = || {
        Vector3::new(
            rng.random_range(-1.0..=1.0) * j,
            rng.random_range(-1.0..=1.0) * j,
            rng.random_range(-1.0..=1.0) * j,
        )
    };

    // Design box 500 x 300 x 900 centred in the volume.
    let shift = extent * 0.5 - Vector3::new(250.0, 150.0, 450.0);
    let at = |x: f64, y: f64, z: f64| Point3::new(x, y, z) + shift;
    let mid = 250.0;
    let hs = sep * 0.5;

    let skull_c = at(mid, 150.0, 790.0) + jitter();
    let t1 = at(mid, 200.0, 660.0) + jitter();
    let t12 = at(mid, 200.0, 430.0) + jitter();
    let sternum = at(mid, 51.0, 560.0) + jitter();
    // Both heads move together so their LR separation stays exactly `sep`.
    let shoulders = jitter();
    let mut side = |sign: f64| {
        let humeral = at(mid + sign * hs, 150.0, 630.0) + shoulders;
        let scapula = at(mid + sign * 98.0, 227.0, 590.0) + jitter();
        let elbow = at(mid + sign * (hs + 8.0), 160.0, 430.0) + jitter();
        let wrist = at(mid + sign * (hs + 4.0), 140.0, 235.0) + jitter();
        let dome_apex_z = if sign < 0.0 { 425.0 } else { 410.0 };
        let dome = at(mid + sign * 70.0, 140.0, dome_apex_z) + jitter();
        [humeral, scapula, elbow, wrist, dome]
    };
    // Patient right is -x.
    let [r_hum, r_scap, r_elb, r_wri, r_dome] = side(-1.0);
    let [l_hum, l_scap, l_elb, l_wri, l_dome] = side(1.0);

    let soft = config.mu_soft;
    let bone = config.mu_bone;
    let v = Vector3::new;
    let mut prims = vec![
        Primitive::new(
            Shape::Trunk { center: at(mid, 150.0, 0.0), semi: [135.0, 105.0], z: [60.0 + shift.z, 680.0 + shift.z] },
            soft,
        ),
        Primitive::new(Shape::Capsule { a: at(mid, 160.0, 640.0), b: at(mid, 160.0, 720.0), radius: 50.0 }, soft),
        Primitive::new(Shape::Ellipsoid { center: skull_c, radii: v(75.0, 95.0, 95.0) }, soft),
    ];
    for (hum, elb, wri, scap, dome, sign) in
        [(r_hum, r_elb, r_wri, r_scap, r_dome, -1.0), (l_hum, l_elb, l_wri, l_scap, l_dome, 1.0)]
    {
        // Limb soft tissue.
        prims.push(Primitive::new(Shape::Capsule { a: hum, b: elb, radius: 36.0 }, soft));
        prims.push(Primitive::new(Shape::Capsule { a: elb, b: wri, radius: 30.0 }, soft));
        // Lung above the dome, dome shell below it.
        let lung_c = Point3::new(dome.x, dome.y, dome.z + 120.0);
        prims.push(Primitive::new(Shape::Ellipsoid { center: lung_c, radii: v(55.0, 75.0, 120.0) }, config.mu_lung));
        let dome_c = Point3::new(dome.x, dome.y, dome.z - 45.0);
        prims.push(
            Primitive::new(
                Shape::Shell { center: dome_c, radii: v(65.0, 80.0, 45.0), thickness: 6.0 },
                config.mu_muscle,
            )
            .clip_z(dome_c.z, dome.z + 1.0),
        );
        // Scapular blade.
        prims.push(Primitive::new(
            Shape::Slab {
                min: Point3::new(scap.x - 37.0, scap.y - 5.0, scap.z - 50.0),
                max: Point3::new(scap.x + 37.0, scap.y + 5.0, scap.z + 50.0),
            },
            bone,
        ));
        // Clavicle from the sternal notch to the shoulder.
        prims.push(Primitive::new(
            Shape::Capsule { a: at(mid + sign * 20.0, 70.0, 665.0), b: hum + v(-sign * 5.0, -30.0, 20.0), radius: 8.0 },
            bone,
        ));
        // Humerus, forearm and joints.
        prims.push(Primitive::new(Shape::Capsule { a: hum, b: elb, radius: 10.0 }, bone));
        prims.push(Primitive::new(Shape::Capsule { a: elb, b: wri, radius: 9.0 }, bone));
        prims.push(Primitive::new(Shape::Ellipsoid { center: hum, radii: Vector3::repeat(24.0) }, bone));
        prims.push(Primitive::new(Shape::Ellipsoid { center: elb, radii: Vector3::repeat(18.0) }, bone));
        prims.push(Primitive::new(Shape::Ellipsoid { center: wri, radii: Vector3::repeat(14.0) }, bone));
    }
    // Rib cage as a banded ellipsoidal shell.
    prims.push(
        Primitive::new(
            Shape::Shell { center: at(mid, 150.0, 545.0), radii: v(130.0, 100.0, 140.0), thickness: 6.0 },
            bone,
        )
        .clip_z(420.0 + shift.z, 670.0 + shift.z)
        .banded(28.0, 9.0),
    );
    prims.push(Primitive::new(
        Shape::Slab {
            min: Point3::new(sternum.x - 15.0, sternum.y - 6.0, sternum.z - 90.0),
            max: Point3::new(sternum.x + 15.0, sternum.y + 6.0, sternum.z + 60.0),
        },
        bone,
    ));
    prims.push(Primitive::new(
        Shape::Capsule {
            a: Point3::new(t1.x, t1.y, t12.z - 30.0),
            b: Point3::new(t1.x, t1.y, t1.z + 40.0),
            radius: 16.0,
        },
        bone,
    ));
    prims.push(Primitive::new(Shape::Shell { center: skull_c, radii: v(75.0, 95.0, 95.0), thickness: 7.0 }, bone));

    let mut data = vec![0f32; dims[0] * dims[1] * dims[2]];
    for prim in &prims {
        paint(&mut data, dims, s, prim);
    }
    let volume = Volume::new(dims, [s; 3], data)?;

    let positions =
        [skull_c, r_hum, l_hum, r_scap, l_scap, r_elb, l_elb, r_wri, l_wri, t1, sternum, r_dome, l_dome, t12];
    let landmarks = LandmarkSet::from_positions(schema, &positions, extent).map_err(|e| match e {
        LandmarkError::OutsideExtent { index, .. } => {
            PhantomError::Config(format!("extent {:?} is too small to contain landmark {index}", config.extent_mm))
        }
        other => other.into(),
    })?;
    Ok((volume, landmarks))
}
