//! Traces BS-to-user paths with the image method and cross-checks them
//! against the shooting-and-bouncing reference tracer.

use gcd::geom::Vec3;
use gcd::raytracer::bruteforce::trace_paths_bruteforce;
use gcd::raytracer::{specular_residuals, TraceOptions, Tracer};
use gcd::scene::generate_scene;

fn main() -> gcd::Result<()> {
    let scene = generate_scene(4, 4, 100.0, 15.0)?;
    let tracer = Tracer::new(&scene);
    let opts = TraceOptions::with_order(2);
    let bs = scene.bs();
    let mut rx = Vec3::new(30.0, -25.0, 1.5);
    while scene.point_in_building(rx) {
        rx.x += 3.0;
    }

    let set = tracer.trace(bs, rx, &opts)?;
    println!("{} paths from {:?} to {:?}", set.paths.len(), bs.as_slice(), rx.as_slice());
    for p in &set.paths {
        let worst = specular_residuals(&tracer, &set, p).into_iter().fold(0.0, f64::max);
        println!(
            "  order {}  faces {:?}  length {:8.3} m  specular residual {:.1e} rad",
            p.order(),
            p.face_ids(),
            p.length_m,
            worst
        );
    }

    let reference = trace_paths_bruteforce(&scene, bs, rx, &opts, 720)?;
    let max_dl = set
        .paths
        .iter()
        .zip(&reference.paths)
        .map(|(a, b)| (a.length_m - b.length_m).abs())
        .fold(0.0, f64::max);
    println!(
        "reference tracer: {} paths, max length difference {:.2e} m",
        reference.paths.len(),
        max_dl
    );
    Ok(())
}
