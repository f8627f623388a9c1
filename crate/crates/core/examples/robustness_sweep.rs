//! Trains a small fusion network, then evaluates it with fewer retrieved
//! neighbors, noisy user positions and disturbed pilots.

use gcd::harness::{build_scenario, run_sweep_on, scenario_data, ExperimentSpec, SweepAxis, GCD};
use gcd::net::{train, Model};

fn main() -> gcd::Result<()> {
    let mut spec = ExperimentSpec::desk();
    spec.sizes.train = 400;
    spec.sizes.val = 100;
    spec.sizes.test = 200;
    spec.train.epochs = 15;
    spec.train.lr_decay_every = 5;

    let sc = build_scenario(&spec.scenarios[0], &spec.features)?;
    let data = scenario_data(&spec, sc, true)?;
    let out = train(Model::new(spec.model.clone())?, &data.train, &data.val, &spec.system, &spec.train, None)?;
    let model = out.best.to_model()?;

    for axis in [SweepAxis::Neighbors, SweepAxis::PositionError, SweepAxis::Disturbance] {
        let r = run_sweep_on(&spec, axis, &[(GCD, &model)], &data.scenario, &data.test_set)?;
        println!("{}:", axis.name());
        for s in &r.sections {
            println!("  {:<22} median {:6.2} dB  iqr {:5.2} dB", s.condition, s.summary.median, s.summary.iqr());
        }
    }
    Ok(())
}
