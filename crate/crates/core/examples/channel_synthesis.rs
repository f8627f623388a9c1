//! Builds the MIMO-OFDM channel of one user, extracts the pilot grid and
//! shows how a multiplicative pilot disturbance shows up in NMSE.

use gcd::channel::{
    disturb_partial, extract_partial, nmse, synthesize_channel, to_db, AntennaModel, MaterialModel,
    SystemConfig,
};
use gcd::geom::Vec3;
use gcd::raytracer::trace_paths;
use gcd::scene::generate_scene;

fn main() -> gcd::Result<()> {
    let cfg = SystemConfig::desk();
    let scene = generate_scene(2, 10, 120.0, 20.0)?;
    let mut rx = Vec3::new(-35.0, 20.0, 1.5);
    while scene.point_in_building(rx) {
        rx.y += 2.0;
    }
    let paths = trace_paths(&scene, scene.bs(), rx, 2)?;
    let bs_ant = AntennaModel::dipole(Vec3::z());
    let user_ant = AntennaModel::dipole(Vec3::new(1.0, 1.0, 1.0).normalize());
    let h = synthesize_channel(&paths, &cfg, &bs_ant, &user_ant, &MaterialModel::default());
    let (nt, nc) = h.shape();
    println!(
        "{} paths, {}x{} channel, mean entry power {:.3e}",
        paths.paths.len(),
        nt,
        nc,
        h.power() / (nt * nc) as f64
    );
    println!("|H[0, m]| for the first 8 subcarriers:");
    for m in 0..8 {
        print!(" {:.2e}", h.0[[0, m]].norm());
    }
    println!();

    let hp = extract_partial(&h, &cfg)?;
    println!("pilot grid {:?} x {:?}", hp.omega_t, hp.omega_c);
    for sigma in [0.05, 0.1, 0.2] {
        let d = disturb_partial(&hp, sigma, 11)?;
        let e = nmse(
            &gcd::channel::ChannelMatrix(hp.entries.clone()),
            &gcd::channel::ChannelMatrix(d.entries),
        )?;
        println!("sigma_D = {sigma:.2}: pilot NMSE {:6.2} dB", to_db(e));
    }
    Ok(())
}
