//! Generate a phantom and list where its landmarks ended up.
//!
//!     cargo run --example phantom -- 42

use carmsim::phantom::{generate_phantom, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(42);
    let (volume, landmarks) = generate_phantom(seed, &PhantomConfig::default())?;
    let e = volume.extent();
    println!("seed {seed}: {:?} voxels, {:.0} x {:.0} x {:.0} mm", volume.dims(), e.x, e.y, e.z);

    let max = volume.data().iter().copied().fold(0.0f32, f32::max);
    println!("max attenuation {max:.4} /mm");
    println!("{:>3}  {:<22} {:>7} {:>7} {:>7}", "#", "landmark", "LR", "AP", "SI");
    for l in landmarks.iter() {
        let p = l.position;
        println!("{:>3}  {:<22} {:>7.1} {:>7.1} {:>7.1}", l.index, l.canonical_name, p.x, p.y, p.z);
    }
    Ok(())
}
