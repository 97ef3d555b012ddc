//! C-arm pose representation, isocenter sampling and discrete motion.
//!
//! The view is fixed anterior–posterior: the source sits `sod` mm anterior
//! of the isocenter (towards `-y`) and the detector plane is perpendicular
//! to `y` at `sdd - sod` mm posterior of it. Detector columns increase along
//! `+x` (image right, patient left) and rows increase along `-z` (image
//! down, inferior).

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phantom::Volume;
use crate::protocol::{HorizontalDirection, Magnitude, MotionCommand, VerticalDirection};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid C-arm geometry: {0}")]
    Geometry(String),
    #[error("invalid sampler configuration: {0}")]
    Sampler(String),
    #[error("isocenter {isocenter:?} lies outside the volume extent {extent:?}")]
    OutsideVolume { isocenter: [f64; 3], extent: [f64; 3] },
}

/// Axis-aligned box in volume coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn clamp(&self, p: &Point3<f64>) -> Point3<f64> {
        p.sup(&self.min).inf(&self.max)
    }

    /// Parametric interval `[t0, t1]` of `origin + t * dir` inside the box.
    pub fn intersect_ray(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut ta = (self.min[a] - origin[a]) * inv;
            let mut tb = (self.max[a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }
}

/// Fixed cone-beam imaging geometry of the C-arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CArmGeometry {
    /// Source-to-isocenter distance (mm).
    pub sod: f64,
    /// Source-to-detector distance (mm).
    pub sdd: f64,
    /// Detector width × height (mm).
    pub detector_extent_mm: [f64; 2],
    /// Detector columns × rows.
    pub detector_res: [usize; 2],
}

impl Default for CArmGeometry {
    fn default() -> Self {
        Self { sod: 750.0, sdd: 1200.0, detector_extent_mm: [300.0, 300.0], detector_res: [256, 256] }
    }
}

impl CArmGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.sod.is_finite() && self.sdd.is_finite() && 0.0 < self.sod && self.sod < self.sdd) {
            return Err(GeometryError::Geometry(format!("need 0 < sod < sdd, got sod={} sdd={}", self.sod, self.sdd)));
        }
        if self.detector_extent_mm.iter().any(|e| !(e.is_finite() && *e > 0.0)) || self.detector_res.contains(&0) {
            return Err(GeometryError::Geometry(format!(
                "detector extent {:?} and resolution {:?} must be positive",
                self.detector_extent_mm, self.detector_res
            )));
        }
        Ok(())
    }

    pub fn magnification(&self) -> f64 {
        self.sdd / self.sod
    }

    /// Detector pixel pitch (mm) along columns and rows.
    pub fn pixel_pitch(&self) -> [f64; 2] {
        [
            self.detector_extent_mm[0] / self.detector_res[0] as f64,
            self.detector_extent_mm[1] / self.detector_res[1] as f64,
        ]
    }
}

/// Isocenter plus imaging geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CArmPose {
    pub isocenter: Point3<f64>,
    pub geometry: CArmGeometry,
}

impl CArmPose {
    pub fn new(isocenter: Point3<f64>, geometry: CArmGeometry) -> Result<Self, GeometryError> {
        geometry.validate()?;
        if !isocenter.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::Geometry("isocenter must be finite".into()));
        }
        Ok(Self { isocenter, geometry })
    }

    pub fn source(&self) -> Point3<f64> {
        self.isocenter - Vector3::y() * self.geometry.sod
    }

    /// Centre of detector pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> Point3<f64> {
        let g = &self.geometry;
        let [pw, ph] = g.pixel_pitch();
        let u = (col as f64 + 0.5 - g.detector_res[0] as f64 * 0.5) * pw;
        let v = (row as f64 + 0.5 - g.detector_res[1] as f64 * 0.5) * ph;
        Point3::new(self.isocenter.x + u, self.isocenter.y + (g.sdd - g.sod), self.isocenter.z - v)
    }

    /// LR–SI distance to `target`, ignoring AP.
    pub fn in_plane_distance(&self, target: &Point3<f64>) -> f64 {
        (target.x - self.isocenter.x).hypot(target.z - self.isocenter.z)
    }

    pub fn require_inside(&self, volume: &Volume) -> Result<(), GeometryError> {
        let bounds = volume.bounds();
        if bounds.contains(&self.isocenter) {
            Ok(())
        } else {
            let e = volume.extent();
            Err(GeometryError::OutsideVolume {
                isocenter: [self.isocenter.x, self.isocenter.y, self.isocenter.z],
                extent: [e.x, e.y, e.z],
            })
        }
    }
}

/// Isocenter sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Fraction of anatomical height covered by the centred uniform SI band.
    pub si_band_fraction: f64,
    pub lr_sigma_mm: f64,
    pub ap_sigma_mm: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { si_band_fraction: 0.70, lr_sigma_mm: 285.0, ap_sigma_mm: 100.0, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.si_band_fraction > 0.0 && self.si_band_fraction <= 1.0) {
            return Err(GeometryError::Sampler(format!(
                "si_band_fraction {} must lie in (0, 1]",
                self.si_band_fraction
            )));
        }
        if !(self.lr_sigma_mm > 0.0 && self.ap_sigma_mm > 0.0)
            || !(self.lr_sigma_mm.is_finite() && self.ap_sigma_mm.is_finite())
        {
            return Err(GeometryError::Sampler("sigmas must be positive".into()));
        }
        Ok(())
    }
}

/// Running moments of every draw made before rejection.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AxisMoments {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl AxisMoments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Sample standard deviation (n - 1 denominator).
    pub fn std_dev(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

/// Bookkeeping from one sampling run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerDiagnostics {
    pub si_band: [f64; 2],
    pub lr_raw: AxisMoments,
    pub ap_raw: AxisMoments,
    pub lr_rejected: usize,
    pub ap_rejected: usize,
}

/// Draw `n` isocenters: SI uniform over the centred band, LR and AP Gaussian
/// about the volume centre, out-of-volume draws redrawn per axis.
pub fn sample_isocenters(
    volume: &Volume,
    n: usize,
    config: &SamplerConfig,
    geometry: &CArmGeometry,
) -> Result<Vec<CArmPose>, GeometryError> {
    sample_isocenters_with_diagnostics(volume, n, config, geometry).map(|(p, _)| p)
}

pub fn sample_isocenters_with_diagnostics(
    volume: &Volume,
    n: usize,
    config: &SamplerConfig,
    geometry: &CArmGeometry,
) -> Result<(Vec<CArmPose>, SamplerDiagnostics), GeometryError> {
    if n == 0 {
        return Err(GeometryError::Sampler("n must be at least 1".into()));
    }
    config.validate()?;
    geometry.validate()?;
    let extent = volume.extent();
    // Anatomical height is the SI extent of the volume.
    let height = extent.z;
    if height.is_nan() || height <= 0.0 {
        return Err(GeometryError::Sampler(format!("degenerate anatomical height {height}")));
    }
    let margin = 0.5 * (1.0 - config.si_band_fraction) * height;
    let si_band = [margin, height - margin];
    let center = volume.center();
    let lr = Normal::new(center.x, config.lr_sigma_mm).map_err(|e| GeometryError::Sampler(e.to_string()))?;
    let ap = Normal::new(center.y, config.ap_sigma_mm).map_err(|e| GeometryError::Sampler(e.to_string()))?;

    let mut rng = stream_rng(config.seed, Stream::Sampler, 0);
    let mut diag = SamplerDiagnostics {
        si_band,
        lr_raw: AxisMoments::default(),
        ap_raw: AxisMoments::default(),
        lr_rejected: 0,
        ap_rejected: 0,
    };
    let mut poses = Vec::with_capacity(n);
    for _ in 0..n {
        let z = rng.random_range(si_band[0]..=si_band[1]);
        let x = loop {
            let x = lr.sample(&mut rng);
            diag.lr_raw.push(x);
            if (0.0..=extent.x).contains(&x) {
                break x;
            }
            diag.lr_rejected += 1;
        };
        let y = loop {
            let y = ap.sample(&mut rng);
            diag.ap_raw.push(y);
            if (0.0..=extent.y).contains(&y) {
                break y;
            }
            diag.ap_rejected += 1;
        };
        poses.push(CArmPose { isocenter: Point3::new(x, y, z), geometry: *geometry });
    }
    Ok((poses, diag))
}

/// Step length in mm for a magnitude token.
pub fn magnitude_mm(m: Magnitude) -> f64 {
    match m {
        Magnitude::None => 0.0,
        Magnitude::Small => 30.0,
        Magnitude::Moderate => 60.0,
        Magnitude::Large => 90.0,
    }
}

/// Signed (LR, SI) displacement of a command in mm.
pub fn displacement(cmd: &MotionCommand) -> (f64, f64) {
    let sx = match cmd.x_dir {
        HorizontalDirection::Left => -1.0,
        HorizontalDirection::Center => 0.0,
        HorizontalDirection::Right => 1.0,
    };
    let sy = match cmd.y_dir {
        VerticalDirection::Down => -1.0,
        VerticalDirection::Center => 0.0,
        VerticalDirection::Up => 1.0,
    };
    (sx * magnitude_mm(cmd.x_mag), sy * magnitude_mm(cmd.y_mag))
}

/// Move the isocenter by `cmd` (RIGHT = +LR, UP = +SI) and clamp it to `region`.
pub fn apply_action(pose: &CArmPose, cmd: &MotionCommand, region: &Aabb) -> CArmPose {
    let (dx, dz) = displacement(cmd);
    let moved = pose.isocenter + Vector3::new(dx, 0.0, dz);
    CArmPose { isocenter: region.clamp(&moved), geometry: pose.geometry }
}
