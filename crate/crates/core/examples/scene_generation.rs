//! Generates a random city block, prints its buildings and writes it as TOML.
//!
//! cargo run --example scene_generation -- [seed] [out.toml]

use gcd::scene::{generate_scene, perturb_scene, random_vehicles, ScenePerturbation};

fn main() -> gcd::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let scene = generate_scene(seed, 12, 120.0, 20.0)?;
    println!("base station at {:?}", scene.bs_position);
    for b in &scene.buildings {
        let c = b.centroid();
        println!(
            "building {:>2}: {} corners, centroid ({:6.1}, {:6.1}), height {:5.1} m",
            b.id,
            b.footprint.len(),
            c.x,
            c.y,
            b.height
        );
    }

    let shifted = perturb_scene(&scene, &ScenePerturbation::BuildingShift { shift_scale: 2.0 }, 1)?;
    let moved = scene
        .buildings
        .iter()
        .zip(&shifted.buildings)
        .map(|(a, b)| (a.centroid() - b.centroid()).norm())
        .fold(0.0, f64::max);
    println!("largest building displacement at shift scale 2 m: {moved:.2} m");

    let cars = random_vehicles(&scene, 10, 3)?;
    let busy = perturb_scene(&scene, &ScenePerturbation::AddVehicles { vehicles: cars }, 0)?;
    println!("with vehicles: {} prisms", busy.buildings.len());

    if let Some(out) = args.next() {
        scene.save(&out)?;
        println!("wrote {out}");
    }
    Ok(())
}
