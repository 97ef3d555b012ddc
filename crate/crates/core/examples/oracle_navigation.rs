//! Steer from the right scapula to the skull with the ground-truth oracle.

use carmsim::anatomy::LandmarkSchema;
use carmsim::navloop::{run_episode, Environment, EpisodeConfig, OracleAgent, Start};
use carmsim::phantom::{generate_phantom, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (volume, landmarks) = generate_phantom(42, &PhantomConfig::default())?;
    let schema = LandmarkSchema::standard();
    let env = Environment { volume: &volume, landmarks: &landmarks, schema: &schema };
    let trace = run_episode(env, &mut OracleAgent, EpisodeConfig::new("scapula-to-skull", Start::Landmark(4), 1))?;

    println!("start {:.0} mm from the skull", trace.initial_distance_mm);
    for s in &trace.steps {
        let r = s.response.as_ref().unwrap();
        let c = r.command;
        println!(
            "step {}: at {:<14} move {:>6} {:<8} {:>6} {:<8} -> {:6.1} mm",
            s.step,
            r.landmark_name,
            c.x_dir.as_str(),
            c.x_mag.as_str(),
            c.y_dir.as_str(),
            c.y_mag.as_str(),
            s.distance_to_target_mm
        );
    }
    println!("{:?} after {} steps, {:.1} mm off", trace.outcome, trace.steps.len(), trace.final_distance_mm);
    trace.replay()?;
    Ok(())
}
