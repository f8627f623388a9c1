//! Trains jointly on two scenes and evaluates zero-shot on a third one.

use gcd::harness::{run_cross_scenario, ExperimentSpec, ScenarioSpec};

fn main() -> gcd::Result<()> {
    let mut spec = ExperimentSpec::desk();
    spec.name = "cross-demo".into();
    spec.scenarios = vec![ScenarioSpec::desk(1), ScenarioSpec::desk(2)];
    spec.held_out = vec![ScenarioSpec::desk(3)];
    spec.sizes.train = 300;
    spec.sizes.val = 100;
    spec.sizes.test = 150;
    spec.train.epochs = 15;
    spec.train.lr_decay_every = 5;

    let out = run_cross_scenario(&spec, None)?;
    for s in &out.report.sections {
        println!("{:<20} {:<10} median {:6.2} dB", s.condition, s.scheme, s.summary.median);
    }
    Ok(())
}
