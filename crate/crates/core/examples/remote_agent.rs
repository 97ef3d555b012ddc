//! Serve the oracle over TCP and navigate through the wire protocol.

use std::io::BufReader;
use std::net::TcpListener;
use std::thread;

use carmsim::anatomy::LandmarkSchema;
use carmsim::gateway::{serve, RemoteAgent, WireOracle, DEFAULT_TIMEOUT};
use carmsim::geometry::{CArmGeometry, CArmPose};
use carmsim::navloop::{random_episodes, run_episode, Environment, OracleTracker};
use carmsim::phantom::{generate_phantom, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (volume, landmarks) = generate_phantom(42, &PhantomConfig { spacing_mm: 6.0, ..PhantomConfig::default() })?;
    let geometry = CArmGeometry { detector_res: [96, 96], ..CArmGeometry::default() };
    let configs = random_episodes(5, 4, &volume, &landmarks, geometry)?;

    // The server sees only start and target; the pose is tracked from the replies it gave.
    let mut oracle = WireOracle::new(landmarks.clone());
    for c in &configs {
        let start = match c.start {
            carmsim::navloop::Start::Isocenter(p) => CArmPose::new(p.into(), geometry)?.isocenter,
            carmsim::navloop::Start::Landmark(i) => landmarks.get(i).unwrap().position,
        };
        let target = landmarks.get(c.target).unwrap().position;
        oracle.register(c.episode_id.clone(), OracleTracker::new(start, target, volume.bounds(), geometry));
    }
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server = thread::spawn(move || -> std::io::Result<()> {
        let (stream, peer) = listener.accept()?;
        eprintln!("agent server: connection from {peer}");
        serve(BufReader::new(stream.try_clone()?), stream, |req| oracle.handle(req))
    });

    let schema = LandmarkSchema::standard();
    let env = Environment { volume: &volume, landmarks: &landmarks, schema: &schema };
    let mut agent = RemoteAgent::connect_tcp(addr, DEFAULT_TIMEOUT)?;
    for c in configs {
        let id = c.episode_id.clone();
        let t = run_episode(env, &mut agent, c)?;
        println!("{id}: {:?} in {} steps, {:.1} mm", t.outcome, t.steps.len(), t.final_distance_mm);
    }
    drop(agent);
    server.join().expect("server thread")?;
    Ok(())
}
