//! Draw training isocenters and check the spread against the target widths.

use std::collections::BTreeMap;

use carmsim::datasetgen::nearest_k;
use carmsim::geometry::{sample_isocenters_with_diagnostics, CArmGeometry, SamplerConfig};
use carmsim::phantom::{generate_phantom, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (volume, landmarks) = generate_phantom(42, &PhantomConfig::default())?;
    let config = SamplerConfig { seed: 7, ..SamplerConfig::default() };
    let (poses, diag) = sample_isocenters_with_diagnostics(&volume, 4096, &config, &CArmGeometry::default())?;

    println!("SI band {:.0}..{:.0} mm", diag.si_band[0], diag.si_band[1]);
    println!("LR raw sd {:.1} mm (target 285), {} redrawn", diag.lr_raw.std_dev(), diag.lr_rejected);
    println!("AP raw sd {:.1} mm (target 100), {} redrawn", diag.ap_raw.std_dev(), diag.ap_rejected);

    // How often each landmark is the nearest one.
    let mut first: BTreeMap<String, usize> = BTreeMap::new();
    for p in &poses {
        let top = nearest_k(p, &landmarks, 1);
        *first.entry(top.entries[0].name.clone()).or_default() += 1;
    }
    for (name, n) in first {
        println!("{name:<22} {:>5.1}%", 100.0 * n as f64 / poses.len() as f64);
    }
    Ok(())
}
