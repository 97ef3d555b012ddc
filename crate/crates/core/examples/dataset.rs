//! Build a small train/test set and show the first labels.

use carmsim::datasetgen::{build_phantom_dataset, read_manifest, DatasetConfig, SplitAssignment};
use carmsim::geometry::CArmGeometry;
use carmsim::phantom::PhantomConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("carmsim-dataset");
    let split = SplitAssignment::phantoms(2, 1);
    let config = DatasetConfig {
        per_volume: 16,
        seed: 2024,
        geometry: CArmGeometry { detector_res: [64, 64], ..CArmGeometry::default() },
        ..DatasetConfig::default()
    };
    let summary =
        build_phantom_dataset(&split, &config, &PhantomConfig { spacing_mm: 6.0, ..PhantomConfig::default() }, &out)?;
    println!("{} train / {} test records under {}", summary.train_records, summary.test_records, out.display());

    for r in read_manifest(&summary.test_manifest)?.iter().take(5) {
        println!("{}  {}", r.record_id(), r.label_text);
    }
    let (train, test) = SplitAssignment::phantoms(50, 10).record_counts(1024);
    println!("full scale: {train} train / {test} test");
    Ok(())
}
