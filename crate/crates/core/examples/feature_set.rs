//! Ray-traces the virtual user grid once, then answers nearest-neighbor
//! queries against it and round-trips the binary file.

use gcd::feature_store::{apply_position_error, build_feature_set, FeatureSet, NeighborQuery};
use gcd::scene::generate_scene;

fn main() -> gcd::Result<()> {
    let scene = generate_scene(5, 10, 100.0, 20.0)?;
    let t = std::time::Instant::now();
    let fs = build_feature_set(&scene, 5.0, 1.5, 2)?;
    println!(
        "{:?} grid, {} points with paths, traced in {:.2?}",
        fs.grid_dims,
        fs.non_empty_count(),
        t.elapsed()
    );

    let user = [12.3, -7.9];
    for l in [0.0, 2.0, 4.0] {
        let q = NeighborQuery {
            position: apply_position_error(user, l, 9),
            n: 4,
        };
        let nb = fs.query_neighbors(&q);
        let desc: Vec<String> = nb
            .hits
            .iter()
            .map(|&(i, d)| format!("#{i} ({} paths, {d:.1} m)", fs.entries[i].len()))
            .collect();
        println!("position error {l} m: {}", desc.join(", "));
    }

    let mut buf = Vec::new();
    fs.write_to(&mut buf)?;
    let back = FeatureSet::read_from(&mut buf.as_slice())?;
    println!("{} bytes, round trip equal: {}", buf.len(), back == fs);
    Ok(())
}
