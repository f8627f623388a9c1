//! Builds pseudo channels for a user from its nearest grid points and
//! compares them with the true channel. With the true complex path
//! amplitudes in place of random placeholders the pseudo channel of a grid
//! point on the user's own position reproduces the channel exactly.

use num_complex::Complex64;

use gcd::alignment::{build_pseudo_channel, normalize_bundle, pseudo_entries, DEFAULT_SIGMA_Z};
use gcd::channel::{
    extract_partial, nmse, path_amplitude, synthesize_channel, to_db, AntennaModel, ChannelMatrix,
    MaterialModel, SystemConfig, SPEED_OF_LIGHT,
};
use gcd::feature_store::{build_feature_set, FeaturePath, NeighborQuery};
use gcd::geom::{v3, Vec3};
use gcd::raytracer::trace_paths;
use gcd::scene::generate_scene;

fn main() -> gcd::Result<()> {
    let cfg = SystemConfig::desk();
    let scene = generate_scene(8, 10, 120.0, 20.0)?;
    let fs = build_feature_set(&scene, 4.0, 1.5, 2)?;
    let idx = (0..fs.len())
        .find(|&i| fs.entries[i].len() >= 3 && fs.position(i)[0] > 20.0)
        .expect("a grid point with paths");
    let p = fs.position(idx);
    let rx = Vec3::new(p[0], p[1], fs.grid_height);

    let bs_ant = AntennaModel::dipole(Vec3::z());
    let user_ant = AntennaModel::dipole(Vec3::new(0.3, -0.2, 1.0).normalize());
    let mat = MaterialModel::default();
    let paths = trace_paths(&scene, scene.bs(), rx, 2)?;
    let h = synthesize_channel(&paths, &cfg, &bs_ant, &user_ant, &mat);

    // oracle placeholders: amplitude over spreading gain, times the carrier phase
    let (tx, rxv) = (v3(paths.tx), v3(paths.rx));
    let oracle: Vec<Complex64> = paths
        .paths
        .iter()
        .map(|pr| {
            let a = path_amplitude(pr, tx, rxv, &cfg, &bs_ant, &user_ant, &mat);
            let ph = -2.0 * std::f64::consts::PI * cfg.f_center * pr.length_m / SPEED_OF_LIGHT;
            a * Complex64::from_polar(1.0, ph) / cfg.spreading_gain(pr.length_m)
        })
        .collect();
    let feats: Vec<FeaturePath> = paths
        .paths
        .iter()
        .map(|pr| FeaturePath {
            length_m: pr.length_m,
            depart_dir: pr.depart_dir,
        })
        .collect();
    let exact = ChannelMatrix(pseudo_entries(&feats, &cfg, |i| oracle[i]));
    println!("oracle placeholders at the user position: NMSE {:.1} dB", to_db(nmse(&h, &exact)?));

    let nb = fs.query_neighbors(&NeighborQuery { position: p, n: 6 });
    let pseudos: Vec<_> = nb
        .hits
        .iter()
        .enumerate()
        .map(|(j, &(i, _))| build_pseudo_channel(&fs.entries[i], &cfg, DEFAULT_SIGMA_Z, j as u64).with_source(i))
        .collect();
    for (ps, &(_, d)) in pseudos.iter().zip(&nb.hits) {
        let e = nmse(&h, &ChannelMatrix(ps.entries.clone()))?;
        println!("neighbor {:>4} at {d:4.1} m: raw pseudo-channel NMSE {:6.1} dB", ps.source_grid_index.unwrap(), to_db(e));
    }

    let hp = extract_partial(&h, &cfg)?;
    let (bundle, state) = normalize_bundle(Some(&h), &hp, &pseudos)?;
    let pp = bundle.partial.power() / bundle.partial.entries.len() as f64;
    println!("normalization scale {:.3e}, normalized pilot power {pp:.6}", state.scale());
    Ok(())
}
