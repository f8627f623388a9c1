//! Adapts a network trained on one scene to another with a few optimizer
//! steps, tracking accuracy on both scenes.

use gcd::harness::{build_scenario, run_finetune, scenario_data, ExperimentSpec, ScenarioSpec, GCD};
use gcd::net::{train, Model};

fn main() -> gcd::Result<()> {
    let mut spec = ExperimentSpec::desk();
    spec.sizes.train = 300;
    spec.sizes.val = 100;
    spec.sizes.test = 150;
    spec.train.epochs = 10;
    spec.train.lr_decay_every = 5;
    spec.finetune.steps = 40;
    spec.finetune.eval_every = 10;

    let old = scenario_data(&spec, build_scenario(&spec.scenarios[0], &spec.features)?, true)?;
    let new = scenario_data(&spec, build_scenario(&ScenarioSpec::desk(9), &spec.features)?, true)?;
    let base = train(Model::new(spec.model.clone())?, &old.train, &old.val, &spec.system, &spec.train, None)?;
    let model = base.best.to_model()?;

    let out = run_finetune(&spec, &[(GCD, &model)], &new, &new.train, &old)?;
    for t in &out.traces {
        println!("{}: step / new scene / previous scene (median dB)", t.scheme);
        for i in 0..t.steps.len() {
            println!("  {:>4}  {:7.2}  {:7.2}", t.steps[i], t.new_scenario[i], t.previous_scenario[i]);
        }
    }
    Ok(())
}
