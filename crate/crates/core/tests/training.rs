use gcd::dataset::{generate_dataset, DropConfig};
use gcd::feature_store::build_feature_set;
use gcd::harness::{prepare_examples, Condition, ExperimentSpec};
use gcd::net::{train, Checkpoint, Example, Model, ModelConfig, TrainConfig, Trainer};
use gcd::scene::generate_scene;
use gcd::Error;

fn small_model(spec: &ExperimentSpec) -> ModelConfig {
    ModelConfig {
        k: 2,
        l: 1,
        ..spec.model.clone()
    }
}

fn examples(buildings: usize, count: usize, seed: u64) -> (ExperimentSpec, Vec<Example>) {
    examples_with(buildings, 2, count, seed)
}

fn examples_with(buildings: usize, order: usize, count: usize, seed: u64) -> (ExperimentSpec, Vec<Example>) {
    let mut spec = ExperimentSpec::desk();
    if order == 0 {
        // pilots on every antenna, so a single path's angle is not aliased
        spec.system.omega_t = (0..spec.system.n_bs_antennas).collect();
        spec.model.n_t0 = spec.system.n_bs_antennas;
    }
    let scene = generate_scene(21, buildings, 80.0, 20.0).unwrap();
    let fs = build_feature_set(&scene, 4.0, 1.5, order).unwrap();
    let drop = DropConfig {
        max_order: order,
        ..DropConfig::default()
    };
    let ds = generate_dataset(&scene, &fs, &spec.system, &drop, count, seed).unwrap();
    let ex = prepare_examples(&ds, &fs, &Condition::nominal(8)).unwrap();
    (spec, ex)
}

fn quick(tc: &TrainConfig, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr_decay_every: 10,
        ..tc.clone()
    }
}

#[test]
fn line_of_sight_training_cuts_loss_tenfold() {
    let (spec, tr) = examples_with(0, 0, 320, 1);
    let (_, va) = examples_with(0, 0, 64, 2);
    let tc = quick(&spec.train, 40);
    let out = train(Model::new(small_model(&spec)).unwrap(), &tr, &va, &spec.system, &tc, None).unwrap();
    let first = out.records[0].train_loss;
    let best = out.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert!(best < first / 10.0, "first epoch {first}, best val {best}");
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let (spec, tr) = examples(6, 40, 3);
    let tc = TrainConfig {
        lr_initial: 0.0,
        ..quick(&spec.train, 1)
    };
    let model = Model::new(small_model(&spec)).unwrap();
    let before = model.params.clone();
    let mut t = Trainer::new(model, &tc);
    t.epoch(&tr, &spec.system, &tc).unwrap();
    assert_eq!(t.model.params, before);
    assert_eq!(t.epoch, 1);
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let (spec, tr) = examples(6, 48, 4);
    let (_, va) = examples(6, 16, 5);
    let tc = quick(&spec.train, 2);
    let run = |seed: u64| {
        let tc = TrainConfig { seed, ..tc.clone() };
        let out = train(Model::new(small_model(&spec)).unwrap(), &tr, &va, &spec.system, &tc, None).unwrap();
        let mut buf = Vec::new();
        out.best.write_to(&mut buf).unwrap();
        buf
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn resumed_training_matches_a_continuous_run() {
    let (spec, tr) = examples(6, 48, 6);
    let tc = quick(&spec.train, 2);
    let model = Model::new(small_model(&spec)).unwrap();

    let mut a = Trainer::new(model.clone(), &tc);
    a.epoch(&tr, &spec.system, &tc).unwrap();
    a.epoch(&tr, &spec.system, &tc).unwrap();

    let mut b = Trainer::new(model, &tc);
    b.epoch(&tr, &spec.system, &tc).unwrap();
    let mut buf = Vec::new();
    b.checkpoint().write_to(&mut buf).unwrap();
    let ck = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
    let mut c = Trainer::from_checkpoint(&ck).unwrap();
    c.epoch(&tr, &spec.system, &tc).unwrap();

    assert_eq!(a.checkpoint(), c.checkpoint());
}

#[test]
fn divergence_is_a_numeric_error() {
    let (spec, tr) = examples(6, 32, 7);
    let tc = TrainConfig {
        lr_initial: 1e200,
        ..quick(&spec.train, 3)
    };
    let err = train(Model::new(small_model(&spec)).unwrap(), &tr, &tr, &spec.system, &tc, None).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    assert!(err.is_numeric());
}

#[test]
fn empty_training_set_is_rejected() {
    let (spec, va) = examples(6, 8, 8);
    let err = train(Model::new(small_model(&spec)).unwrap(), &[], &va, &spec.system, &spec.train, None).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)));
}
