//! Score a deliberately imperfect predictor and print the confusion table.

use carmsim::datasetgen::{build_phantom_dataset, read_manifest, DatasetConfig, SplitAssignment};
use carmsim::metrics::{score_corpus, Prediction};
use carmsim::phantom::PhantomConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("carmsim-evaluate");
    let config = DatasetConfig { per_volume: 200, seed: 9, write_images: false, ..DatasetConfig::default() };
    let summary = build_phantom_dataset(&SplitAssignment::phantoms(1, 1), &config, &PhantomConfig::default(), &out)?;
    let manifest = read_manifest(&summary.test_manifest)?;

    // Right answer in the wrong order a third of the time, one wrong landmark a sixth of the time.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let predictions: Vec<Prediction> = manifest
        .iter()
        .map(|r| {
            let mut ranked = r.ranked.indices();
            match rng.random_range(0..6) {
                0 | 1 => ranked.rotate_left(1),
                2 => ranked[0] = (1..=14).find(|i| !ranked.contains(i)).unwrap(),
                _ => {}
            }
            Prediction { record_id: r.record_id(), ranked }
        })
        .collect();

    let score = score_corpus(&manifest, &predictions, &[1, 2, 3])?;
    println!("{}", serde_json::to_string_pretty(&score.report()["metrics"])?);
    print!("{}", score.confusion.to_table());
    Ok(())
}
