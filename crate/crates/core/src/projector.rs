//! Cone-beam DRR renderer.
//!
//! Each detector pixel gets one ray from the point source through the pixel
//! centre. The attenuation line integral is accumulated with trilinear
//! samples on a fixed grid of step `h` anchored at the source: the segment
//! `[k h, (k + 1) h]` clipped to the volume contributes its length times the
//! coefficient at its midpoint. Anchoring at the source makes the image
//! invariant to shifting the volume content and isocenter together, and the
//! clipped end segments make a homogeneous slab integrate exactly.
//!
//! Display value is `min(∫μ dl / W, 1)`; transmitted fraction is `exp(-∫μ dl)`.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CArmPose, GeometryError};
use crate::phantom::Volume;

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid projector configuration: {0}")]
    Config(String),
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectorConfig {
    /// Ray step as a fraction of the smallest voxel spacing.
    pub step_fraction: f64,
    /// Line-integral value mapped to full white.
    pub window: f64,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self { step_fraction: 0.5, window: 5.0 }
    }
}

impl ProjectorConfig {
    pub fn validate(&self) -> Result<(), ProjectorError> {
        if !(self.step_fraction.is_finite() && self.step_fraction > 0.0) {
            return Err(ProjectorError::Config(format!("step_fraction {} must be positive", self.step_fraction)));
        }
        if !(self.window.is_finite() && self.window > 0.0) {
            return Err(ProjectorError::Config(format!("window {} must be positive", self.window)));
        }
        Ok(())
    }
}

/// Normalised radiograph, row-major, row 0 at the top (superior).
#[derive(Debug, Clone, PartialEq)]
pub struct RadiographImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    pose: CArmPose,
}

impl RadiographImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pose(&self) -> &CArmPose {
        &self.pose
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// 8-bit quantisation, rounding half up.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize);
            Luma([quantize(v)])
        })
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ProjectorError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_gray().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ProjectorError> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|source| ProjectorError::Io { path: path.to_path_buf(), source })
    }

    /// Raw `f32` little-endian grid, row-major.
    pub fn to_raw_le(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// `round_half_up(v * 255)` clamped to `0..=255`.
pub fn quantize(v: f32) -> u8 {
    (f64::from(v) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Projector {
    config: ProjectorConfig,
}

impl Projector {
    pub fn new(config: ProjectorConfig) -> Result<Self, ProjectorError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ProjectorConfig {
        &self.config
    }

    pub fn step(&self, volume: &Volume) -> f64 {
        self.config.step_fraction * volume.min_spacing()
    }

    /// `∫μ dl` along the segment `from → to`, sampled on a grid anchored at `from`.
    pub fn line_integral(&self, volume: &Volume, from: &Point3<f64>, to: &Point3<f64>) -> f64 {
        integrate(volume, from, to, self.step(volume))
    }

    /// Line integral for every detector pixel, row-major.
    pub fn line_integrals(&self, volume: &Volume, pose: &CArmPose) -> Result<Vec<f64>, ProjectorError> {
        pose.geometry.validate()?;
        pose.require_inside(volume)?;
        let [cols, rows] = pose.geometry.detector_res;
        let source = pose.source();
        let h = self.step(volume);
        Ok((0..rows * cols)
            .into_par_iter()
            .map(|i| integrate(volume, &source, &pose.pixel_center(i % cols, i / cols), h))
            .collect())
    }

    pub fn render(&self, volume: &Volume, pose: &CArmPose) -> Result<RadiographImage, ProjectorError> {
        let integrals = self.line_integrals(volume, pose)?;
        let w = self.config.window;
        Ok(RadiographImage {
            width: pose.geometry.detector_res[0],
            height: pose.geometry.detector_res[1],
            pixels: integrals.iter().map(|l| (l / w).min(1.0) as f32).collect(),
            pose: *pose,
        })
    }
}

/// Render with the default step and window.
pub fn render(volume: &Volume, pose: &CArmPose) -> Result<RadiographImage, ProjectorError> {
    Projector::default().render(volume, pose)
}

/// Fraction of intensity transmitted along a ray with integral `line_integral`.
pub fn transmitted_fraction(line_integral: f64) -> f64 {
    (-line_integral).exp()
}

fn integrate(volume: &Volume, from: &Point3<f64>, to: &Point3<f64>, h: f64) -> f64 {
    let delta = to - from;
    let length = delta.norm();
    if length == 0.0 {
        return 0.0;
    }
    let dir = delta / length;
    let Some((t0, t1)) = volume.bounds().intersect_ray(from, &dir) else {
        return 0.0;
    };
    let t0 = t0.max(0.0);
    let t1 = t1.min(length);
    if t1 <= t0 {
        return 0.0;
    }
    // Work in voxel-index coordinates so each sample is a multiply-add.
    let sp = volume.spacing();
    let u0 = [from.x / sp[0] - 0.5, from.y / sp[1] - 0.5, from.z / sp[2] - 0.5];
    let du = [dir.x / sp[0], dir.y / sp[1], dir.z / sp[2]];
    let mut k = (t0 / h).floor();
    let mut sum = 0.0;
    loop {
        let a = (k * h).max(t0);
        let b = ((k + 1.0) * h).min(t1);
        if b > a {
            let t = 0.5 * (a + b);
            sum += volume.sample_grid([u0[0] + t * du[0], u0[1] + t * du[1], u0[2] + t * du[2]]) * (b - a);
        }
        if (k + 1.0) * h >= t1 {
            break;
        }
        k += 1.0;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CArmGeometry;
    use nalgebra::Vector3;

    #[test]
    fn empty_volume_renders_black() {
        let vol = Volume::filled([10, 10, 10], [5.0; 3], 0.0).unwrap();
        let g = CArmGeometry { detector_res: [16, 16], ..Default::default() };
        let pose = CArmPose::new(vol.center(), g).unwrap();
        let img = render(&vol, &pose).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_isocenter_outside_volume() {
        let vol = Volume::filled([10, 10, 10], [5.0; 3], 0.01).unwrap();
        let pose = CArmPose::new(Point3::new(-1.0, 25.0, 25.0), CArmGeometry::default()).unwrap();
        assert!(matches!(render(&vol, &pose), Err(ProjectorError::Geometry(GeometryError::OutsideVolume { .. }))));
    }

    #[test]
    fn oblique_ray_through_homogeneous_box() {
        let vol = Volume::filled([20, 20, 20], [2.0; 3], 0.02).unwrap();
        let p = Projector::default();
        let from = Point3::new(-10.0, -10.0, -10.0);
        let to = Point3::new(50.0, 50.0, 50.0);
        let chord = Vector3::<f64>::repeat(40.0).norm();
        assert!((p.line_integral(&vol, &from, &to) - f64::from(0.02f32) * chord).abs() < 1e-12);
    }

    #[test]
    fn segment_ending_inside_volume() {
        let vol = Volume::filled([20, 20, 20], [2.0; 3], 0.02).unwrap();
        let p = Projector::default();
        let v = p.line_integral(&vol, &Point3::new(20.0, -5.0, 20.0), &Point3::new(20.0, 13.3, 20.0));
        assert!((v - f64::from(0.02f32) * 13.3).abs() < 1e-12);
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(2.0), 255);
    }

    #[test]
    fn png_has_detector_shape() {
        let vol = Volume::filled([10, 10, 10], [5.0; 3], 0.05).unwrap();
        let g = CArmGeometry { detector_res: [12, 7], ..Default::default() };
        let pose = CArmPose::new(vol.center(), g).unwrap();
        let img = render(&vol, &pose).unwrap();
        let decoded = image::load_from_memory(&img.to_png().unwrap()).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (12, 7));
        assert_eq!(img.to_raw_le().len(), 12 * 7 * 4);
    }
}
