//! Drive an episode by hand and correct the agent between steps.

use carmsim::anatomy::LandmarkSchema;
use carmsim::geometry::CArmGeometry;
use carmsim::navloop::{oracle_response, Environment, Episode, EpisodeConfig, ReconsiderAgent, Start};
use carmsim::phantom::{generate_phantom, PhantomConfig};
use carmsim::protocol::{HorizontalDirection, Magnitude, MotionCommand, VerticalDirection};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (volume, landmarks) = generate_phantom(42, &PhantomConfig::default())?;
    let schema = LandmarkSchema::standard();
    let env = Environment { volume: &volume, landmarks: &landmarks, schema: &schema };
    let (start, target) = (landmarks.get(4).unwrap().position, landmarks.get(1).unwrap().position);

    // Confidently wrong until told otherwise.
    let revised = oracle_response(&start, &target, &landmarks);
    let mut first = revised.clone();
    first.command = MotionCommand {
        x_dir: HorizontalDirection::Left,
        x_mag: Magnitude::Large,
        y_dir: VerticalDirection::Down,
        y_mag: Magnitude::Large,
    };
    let mut agent = ReconsiderAgent { first, revised };

    let config = EpisodeConfig {
        geometry: CArmGeometry { detector_res: [128, 128], ..CArmGeometry::default() },
        ..EpisodeConfig::new("feedback", Start::Landmark(4), 1)
    };
    let mut episode = Episode::new(env, config)?;
    episode.step(&mut agent)?;
    println!("after step 1: {:.1} mm from target", episode.distance());
    episode.inject_feedback("The skull is superior to the shoulder. Re-evaluate the direction.");
    episode.step(&mut agent)?;
    println!("after step 2: {:.1} mm from target", episode.distance());

    let trace = episode.finish();
    for s in &trace.steps {
        let c = s.applied_command();
        println!(
            "step {} feedback={:?} move {} {} / {} {}",
            s.step,
            s.feedback,
            c.x_dir.as_str(),
            c.x_mag.as_str(),
            c.y_dir.as_str(),
            c.y_mag.as_str()
        );
    }
    Ok(())
}
