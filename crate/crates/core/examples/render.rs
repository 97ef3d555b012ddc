//! Render a view centred on a landmark and write it as PNG.
//!
//!     cargo run --release --example render -- skull /tmp/skull.png

use carmsim::anatomy::LandmarkSchema;
use carmsim::geometry::{CArmGeometry, CArmPose};
use carmsim::phantom::{generate_phantom, PhantomConfig};
use carmsim::projector::{transmitted_fraction, Projector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let key = args.next().unwrap_or_else(|| "right scapula".into());
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("carmsim-view.png").display().to_string());

    let (volume, landmarks) = generate_phantom(42, &PhantomConfig::default())?;
    let index = LandmarkSchema::standard().resolve_key(&key).ok_or(format!("unknown landmark {key:?}"))?;
    let geometry = CArmGeometry::default();
    let pose = CArmPose::new(landmarks.get(index).unwrap().position, geometry)?;
    println!("source at {:?}, magnification {:.2}", pose.source(), geometry.magnification());

    let projector = Projector::default();
    let integrals = projector.line_integrals(&volume, &pose)?;
    let max = integrals.iter().copied().fold(0.0, f64::max);
    println!("densest ray: line integral {max:.2}, transmission {:.2e}", transmitted_fraction(max));

    let image = projector.render(&volume, &pose)?;
    let saturated = image.pixels().iter().filter(|&&v| v >= 1.0).count();
    println!("{saturated} of {} pixels at full brightness", image.pixels().len());
    image.save_png(std::path::Path::new(&out))?;
    println!("wrote {out}");
    Ok(())
}
