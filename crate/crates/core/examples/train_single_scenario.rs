//! Trains the fusion network and the pilot-only baseline on one scene and
//! prints their NMSE distributions. Defaults to a short run; pass `desk` for
//! the full desk profile.
//!
//! cargo run --release --example train_single_scenario -- [desk]

use gcd::harness::{run_single_scenario, ExperimentSpec, GCD, PILOT_ONLY};

fn main() -> gcd::Result<()> {
    let mut spec = ExperimentSpec::desk();
    if std::env::args().nth(1).as_deref() != Some("desk") {
        spec.sizes.train = 400;
        spec.sizes.val = 100;
        spec.sizes.test = 200;
        spec.train.epochs = 20;
        spec.train.lr_decay_every = 5;
    }
    let t = std::time::Instant::now();
    let out = run_single_scenario(&spec, None)?;
    for (name, o) in [(GCD, &out.trained.gcd), (PILOT_ONLY, &out.trained.baseline)] {
        let r = &o.records[o.best_epoch];
        println!("{name:<10} best epoch {:>3}, val loss {:.4}", o.best_epoch, r.val_loss);
    }
    for s in &out.report.sections {
        println!(
            "{:<10} median {:6.2} dB  q1 {:6.2}  q3 {:6.2}  ({} users)",
            s.scheme, s.summary.median, s.summary.q1, s.summary.q3, s.summary.count
        );
    }
    println!("took {:.1?}", t.elapsed());
    Ok(())
}
