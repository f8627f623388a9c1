//! Experiment protocol: scenario construction, dataset generation, training
//! of the fusion network and the pilot-only baseline, robustness sweeps,
//! cross-scenario evaluation, finetuning and report emission.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::alignment::NormalizationState;
use crate::channel::{disturb_partial, to_db, SystemConfig};
use crate::dataset::{derive_seed, generate_dataset, Dataset, DropConfig};
use crate::error::{Error, Result};
use crate::feature_store::{apply_position_error, build_feature_set, FeatureSet, NeighborQuery};
use crate::net::{
    evaluate_loss, train, CMat, Checkpoint, Example, Model, ModelConfig, ModelKind, TrainConfig,
    TrainOutcome, Trainer,
};
use crate::scene::{generate_scene, perturb_scene, random_vehicles, Scene, ScenePerturbation};

// Seed streams derived from a sample seed.
const STREAM_DISTURB: u64 = 1 << 32;
const STREAM_POSITION: u64 = (1 << 32) + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_buildings: usize,
    pub area_side: f64,
    pub bs_height: f64,
}

impl ScenarioSpec {
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            n_buildings: 15,
            area_side: 120.0,
            bs_height: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub grid_step: f64,
    pub grid_height: f64,
    pub max_order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweeps {
    pub neighbors: Vec<usize>,
    pub position_error: Vec<f64>,
    pub disturbance: Vec<f64>,
    pub building_shift: Vec<f64>,
    pub vehicles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSpec {
    pub steps: usize,
    pub eval_every: usize,
    pub lr: f64,
    pub batch_size: usize,
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub seed: u64,
    pub system: SystemConfig,
    /// Training scenarios; single-scenario runs use the first.
    pub scenarios: Vec<ScenarioSpec>,
    /// Scenarios never seen in training.
    #[serde(default)]
    pub held_out: Vec<ScenarioSpec>,
    pub features: FeatureSpec,
    pub drop: DropConfig,
    /// Per-scenario sample counts.
    pub sizes: Sizes,
    pub model: ModelConfig,
    pub baseline: ModelConfig,
    pub train: TrainConfig,
    pub sweeps: Sweeps,
    pub finetune: FinetuneSpec,
}

impl ExperimentSpec {
    /// Desk profile: 8x32 channels with a 2x8 pilot grid, 4 m feature grid
    /// over a 120 m area, 2000/500/500 samples, 150 epochs.
    pub fn desk() -> Self {
        let system = SystemConfig::desk();
        let (nt, nc) = system.shape();
        let (nt0, nc0) = system.pilot_shape();
        Self {
            name: "desk".into(),
            seed: 1,
            system,
            scenarios: vec![ScenarioSpec::desk(1)],
            held_out: vec![],
            features: FeatureSpec {
                grid_step: 4.0,
                grid_height: 1.5,
                max_order: 2,
            },
            drop: DropConfig::default(),
            sizes: Sizes {
                train: 2000,
                val: 500,
                test: 500,
            },
            model: ModelConfig::desk(nt, nc, nt0, nc0).with_seed(1),
            baseline: ModelConfig::pilot_only(nt, nc, nt0, nc0).with_seed(1),
            train: TrainConfig::desk(),
            sweeps: Sweeps {
                neighbors: vec![0, 1, 2, 4, 8],
                position_error: vec![0.0, 1.0, 2.0, 4.0],
                disturbance: vec![0.0, 0.05, 0.1],
                building_shift: vec![0.0, 1.0, 2.0],
                vehicles: vec![0, 10, 20],
            },
            finetune: FinetuneSpec {
                steps: 100,
                eval_every: 20,
                lr: 2e-4,
                batch_size: 32,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.system.validate()?;
        self.model.validate()?;
        self.baseline.validate()?;
        self.train.validate()?;
        self.drop.material.validate()?;
        if self.scenarios.is_empty() {
            return bad("at least one scenario is required".into());
        }
        let s = self.sizes;
        if s.train == 0 || s.val == 0 || s.test == 0 {
            return bad("dataset sizes must be at least 1".into());
        }
        let (nt, nc) = self.system.shape();
        let (nt0, nc0) = self.system.pilot_shape();
        for m in [&self.model, &self.baseline] {
            if (m.n_t, m.n_c, m.n_t0, m.n_c0) != (nt, nc, nt0, nc0) {
                return bad(format!("model shapes {m:?} disagree with the system config"));
            }
        }
        if self.drop.n_neighbors < self.train.n_max {
            return bad("drop.n_neighbors must cover train.n_max".into());
        }
        let sw = &self.sweeps;
        if sw.position_error.iter().chain(&sw.disturbance).chain(&sw.building_shift).any(|v| !(*v >= 0.0)) {
            return bad("sweep values must be non-negative".into());
        }
        if !(self.features.grid_step > 0.0) {
            return bad("grid_step must be positive".into());
        }
        if self.finetune.eval_every == 0 || self.finetune.batch_size == 0 {
            return bad("finetune eval_every and batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// A generated scene with its feature set.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub scene: Scene,
    pub features: FeatureSet,
}

pub fn build_scenario(spec: &ScenarioSpec, fs: &FeatureSpec) -> Result<Scenario> {
    let scene = generate_scene(spec.seed, spec.n_buildings, spec.area_side, spec.bs_height)?;
    let features = build_feature_set(&scene, fs.grid_step, fs.grid_height, fs.max_order)?;
    Ok(Scenario {
        spec: spec.clone(),
        scene,
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Dataset for one split of one scenario; seeds depend only on the
/// experiment seed, the scenario seed and the split.
pub fn scenario_dataset(spec: &ExperimentSpec, sc: &Scenario, split: Split) -> Result<Dataset> {
    let (k, n) = match split {
        Split::Train => (0, spec.sizes.train),
        Split::Val => (1, spec.sizes.val),
        Split::Test => (2, spec.sizes.test),
    };
    let seed = derive_seed(derive_seed(spec.seed, sc.spec.seed), k);
    generate_dataset(&sc.scene, &sc.features, &spec.system, &spec.drop, n, seed)
}

/// Evaluation conditions applied when turning samples into network inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    /// Neighbors retrieved per sample.
    pub retrieve: usize,
    /// Positioning error bound in meters.
    pub position_error: f64,
    /// Multiplicative pilot disturbance standard deviation.
    pub disturbance: f64,
    /// Query the feature set even when stored neighbors could be reused.
    pub requery: bool,
}

impl Condition {
    pub fn nominal(retrieve: usize) -> Self {
        Self {
            retrieve,
            position_error: 0.0,
            disturbance: 0.0,
            requery: false,
        }
    }
}

/// Normalized examples for `ds`, with neighbors from `features`.
pub fn prepare_examples(ds: &Dataset, features: &FeatureSet, cond: &Condition) -> Result<Vec<Example>> {
    ds.samples
        .par_iter()
        .map(|s| {
            let hp = disturb_partial(&s.partial, cond.disturbance, derive_seed(s.seed, STREAM_DISTURB))?;
            let norm = NormalizationState::from_partial(&hp)?;
            let scale = norm.scale();
            let reuse = cond.position_error == 0.0 && !cond.requery && s.neighbors.len() >= cond.retrieve;
            let idx: Vec<usize> = if reuse {
                s.neighbors[..cond.retrieve].iter().map(|&i| i as usize).collect()
            } else {
                let p = [s.position[0], s.position[1]];
                let p = apply_position_error(p, cond.position_error, derive_seed(s.seed, STREAM_POSITION));
                features
                    .query_neighbors(&NeighborQuery {
                        position: p,
                        n: cond.retrieve,
                    })
                    .indices()
            };
            let neighbors = idx
                .iter()
                .map(|&i| {
                    features.entries.get(i).cloned().ok_or(Error::IndexOutOfRange {
                        index: i,
                        size: features.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Example {
                partial: CMat::from_complex(&hp.entries).scaled(1.0 / scale),
                full: CMat::from_complex(&s.full.0).scaled(1.0 / scale),
                neighbors,
                scale,
                seed: s.seed,
            })
        })
        .collect()
}

fn nmse_cmat(truth: &CMat, est: &CMat) -> Result<f64> {
    let p = truth.sum_sq();
    if p == 0.0 {
        return Err(Error::ZeroPowerReference);
    }
    let dr = &truth.re - &est.re;
    let di = &truth.im - &est.im;
    Ok((dr.iter().map(|x| x * x).sum::<f64>() + di.iter().map(|x| x * x).sum::<f64>()) / p)
}

/// Per-sample NMSE of an arbitrary estimator.
pub fn evaluate_with<F>(examples: &[Example], estimate: F) -> Result<Vec<f64>>
where
    F: Fn(&Example) -> Result<CMat> + Sync,
{
    examples
        .par_iter()
        .map(|e| nmse_cmat(&e.full, &estimate(e)?))
        .collect()
}

/// Per-sample NMSE of a trained network given `n` pseudo channels.
pub fn evaluate_model(
    model: &Model,
    examples: &[Example],
    sys: &SystemConfig,
    n: usize,
    sigma_z: f64,
) -> Result<Vec<f64>> {
    let n = if model.cfg.kind == ModelKind::Gcd { n } else { 0 };
    // fixed chunking keeps results independent of the thread count
    let chunks: Vec<Vec<f64>> = examples
        .par_chunks(64)
        .map(|chunk| {
            let inputs: Vec<_> = chunk.iter().map(|e| e.eval_input(sys, n, sigma_z)).collect();
            let outs = model.forward_batch(&inputs)?;
            chunk.iter().zip(&outs).map(|(e, o)| nmse_cmat(&e.full, o)).collect()
        })
        .collect::<Result<_>>()?;
    let out: Vec<f64> = chunks.into_iter().flatten().collect();
    if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            detail: format!("evaluation produced NMSE {bad}"),
        });
    }
    Ok(out)
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary statistics in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub p10: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p90: f64,
    pub mean: f64,
}

impl Summary {
    pub fn of(nmse: &[f64]) -> Self {
        let mut s = nmse.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        let mean = s.iter().sum::<f64>() / s.len().max(1) as f64;
        Self {
            count: s.len(),
            p10: to_db(percentile(&s, 0.1)),
            q1: to_db(percentile(&s, 0.25)),
            median: to_db(percentile(&s, 0.5)),
            q3: to_db(percentile(&s, 0.75)),
            p90: to_db(percentile(&s, 0.9)),
            mean: to_db(mean),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// One scheme under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub condition: String,
    pub scheme: String,
    /// Linear per-sample NMSE in test-sample order.
    pub nmse: Vec<f64>,
    pub summary: Summary,
}

impl Section {
    pub fn new(condition: impl Into<String>, scheme: impl Into<String>, nmse: Vec<f64>) -> Self {
        let summary = Summary::of(&nmse);
        Self {
            condition: condition.into(),
            scheme: scheme.into(),
            nmse,
            summary,
        }
    }

    /// Empirical CDF over linear NMSE: `(value, fraction <= value)`.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let mut s = self.nmse.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        let n = s.len() as f64;
        s.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / n)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub sections: Vec<Section>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    condition: &'a str,
    scheme: &'a str,
    #[serde(flatten)]
    summary: Summary,
}

impl Report {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            sections: vec![],
        }
    }

    pub fn section(&self, condition: &str, scheme: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.condition == condition && s.scheme == scheme)
    }

    pub fn write_samples_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "condition,scheme,sample,nmse,nmse_db")?;
        for s in &self.sections {
            for (i, v) in s.nmse.iter().enumerate() {
                writeln!(w, "{},{},{},{:e},{:.6}", s.condition, s.scheme, i, v, to_db(*v))?;
            }
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "condition,scheme,count,p10_db,q1_db,median_db,q3_db,p90_db,mean_db")?;
        for s in &self.sections {
            let m = &s.summary;
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.condition, s.scheme, m.count, m.p10, m.q1, m.median, m.q3, m.p90, m.mean
            )?;
        }
        Ok(())
    }

    pub fn write_cdf_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "condition,scheme,nmse_db,cdf")?;
        for s in &self.sections {
            for (v, f) in s.cdf() {
                writeln!(w, "{},{},{:.6},{:.6}", s.condition, s.scheme, to_db(v), f)?;
            }
        }
        Ok(())
    }

    /// `<stem>_samples.csv`, `<stem>_summary.csv`, `<stem>_cdf.csv` and
    /// `<stem>_summary.json` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}_samples.csv")))?);
        self.write_samples_csv(&mut f)?;
        f.flush()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}_summary.csv")))?);
        self.write_summary_csv(&mut f)?;
        f.flush()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}_cdf.csv")))?);
        self.write_cdf_csv(&mut f)?;
        f.flush()?;
        let rows: Vec<_> = self
            .sections
            .iter()
            .map(|s| SummaryRow {
                condition: &s.condition,
                scheme: &s.scheme,
                summary: s.summary,
            })
            .collect();
        let json = serde_json::json!({ "name": self.name, "sections": rows });
        std::fs::write(dir.join(format!("{stem}_summary.json")), serde_json::to_string_pretty(&json)?)?;
        Ok(())
    }
}

/// Train/val/test examples for one scenario under nominal conditions.
pub struct ScenarioData {
    pub scenario: Scenario,
    pub test_set: Dataset,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn scenario_data(spec: &ExperimentSpec, sc: Scenario, with_train: bool) -> Result<ScenarioData> {
    let cond = Condition::nominal(spec.drop.n_neighbors);
    let (train, val) = if with_train {
        let tr = scenario_dataset(spec, &sc, Split::Train)?;
        let va = scenario_dataset(spec, &sc, Split::Val)?;
        (
            prepare_examples(&tr, &sc.features, &cond)?,
            prepare_examples(&va, &sc.features, &cond)?,
        )
    } else {
        (vec![], vec![])
    };
    let test_set = scenario_dataset(spec, &sc, Split::Test)?;
    let test = prepare_examples(&test_set, &sc.features, &cond)?;
    Ok(ScenarioData {
        scenario: sc,
        test_set,
        train,
        val,
        test,
    })
}

pub const GCD: &str = "gcd";
pub const PILOT_ONLY: &str = "pilot_only";

/// Both trained schemes of an experiment.
pub struct Trained {
    pub gcd: TrainOutcome,
    pub baseline: TrainOutcome,
}

impl Trained {
    pub fn models(&self) -> Result<(Model, Model)> {
        Ok((self.gcd.best.to_model()?, self.baseline.best.to_model()?))
    }
}

fn train_pair(
    spec: &ExperimentSpec,
    train_set: &[Example],
    val_set: &[Example],
    logs: Option<&Path>,
) -> Result<Trained> {
    let run = |cfg: &ModelConfig, name: &str| -> Result<TrainOutcome> {
        let model = Model::new(cfg.clone())?;
        match logs {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}_train.csv")))?);
                let out = train(model, train_set, val_set, &spec.system, &spec.train, Some(&mut f))?;
                f.flush()?;
                Ok(out)
            }
            None => train(model, train_set, val_set, &spec.system, &spec.train, None),
        }
    };
    Ok(Trained {
        gcd: run(&spec.model, GCD)?,
        baseline: run(&spec.baseline, PILOT_ONLY)?,
    })
}

pub struct SingleOutcome {
    pub report: Report,
    pub trained: Trained,
    pub data: ScenarioData,
}

/// Trains both schemes on the first scenario and evaluates them on its test
/// split. Training logs go to `logs` when given.
pub fn run_single_scenario(spec: &ExperimentSpec, logs: Option<&Path>) -> Result<SingleOutcome> {
    spec.validate()?;
    let sc = build_scenario(&spec.scenarios[0], &spec.features)?;
    let data = scenario_data(spec, sc, true)?;
    let trained = train_pair(spec, &data.train, &data.val, logs)?;
    let (g, b) = trained.models()?;
    let n = spec.train.n_max;
    let mut report = Report::new(format!("{}-single", spec.name));
    report.sections.push(Section::new(
        "nominal",
        GCD,
        evaluate_model(&g, &data.test, &spec.system, n, spec.train.sigma_z)?,
    ));
    report.sections.push(Section::new(
        "nominal",
        PILOT_ONLY,
        evaluate_model(&b, &data.test, &spec.system, 0, spec.train.sigma_z)?,
    ));
    Ok(SingleOutcome { report, trained, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    Neighbors,
    PositionError,
    Disturbance,
    BuildingShift,
    Vehicles,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Neighbors => "neighbors",
            SweepAxis::PositionError => "position_error",
            SweepAxis::Disturbance => "disturbance",
            SweepAxis::BuildingShift => "building_shift",
            SweepAxis::Vehicles => "vehicles",
        }
    }
}

/// Evaluates fixed models across one sweep axis of the first scenario.
/// `models` pairs a scheme name with its network.
pub fn run_sweep(spec: &ExperimentSpec, axis: SweepAxis, models: &[(&str, &Model)]) -> Result<Report> {
    spec.validate()?;
    let sc = build_scenario(&spec.scenarios[0], &spec.features)?;
    let test_set = scenario_dataset(spec, &sc, Split::Test)?;
    run_sweep_on(spec, axis, models, &sc, &test_set)
}

/// As [`run_sweep`], with the scenario and test dataset supplied.
pub fn run_sweep_on(
    spec: &ExperimentSpec,
    axis: SweepAxis,
    models: &[(&str, &Model)],
    sc: &Scenario,
    test_set: &Dataset,
) -> Result<Report> {
    let sys = &spec.system;
    let n_max = spec.train.n_max;
    let sz = spec.train.sigma_z;
    let sw = &spec.sweeps;
    let base = Condition::nominal(spec.drop.n_neighbors);
    let mut report = Report::new(format!("{}-sweep-{}", spec.name, axis.name()));
    let mut push = |label: String, examples: &[Example], n: usize| -> Result<()> {
        for (name, m) in models {
            report
                .sections
                .push(Section::new(label.clone(), *name, evaluate_model(m, examples, sys, n, sz)?));
        }
        Ok(())
    };
    match axis {
        SweepAxis::Neighbors => {
            let retrieve = sw.neighbors.iter().copied().max().unwrap_or(0).max(base.retrieve);
            let ex = prepare_examples(test_set, &sc.features, &Condition::nominal(retrieve))?;
            for &n in &sw.neighbors {
                push(format!("n={n}"), &ex, n)?;
            }
        }
        SweepAxis::PositionError => {
            for &l in &sw.position_error {
                let cond = Condition {
                    position_error: l,
                    ..base
                };
                push(format!("l={l}"), &prepare_examples(test_set, &sc.features, &cond)?, n_max)?;
            }
        }
        SweepAxis::Disturbance => {
            for &d in &sw.disturbance {
                let cond = Condition {
                    disturbance: d,
                    ..base
                };
                push(format!("sigma_d={d}"), &prepare_examples(test_set, &sc.features, &cond)?, n_max)?;
            }
        }
        SweepAxis::BuildingShift => {
            // ground truth from the original scene, features from the shifted map
            for &s in &sw.building_shift {
                let p = ScenePerturbation::BuildingShift { shift_scale: s };
                let shifted = perturb_scene(&sc.scene, &p, derive_seed(spec.seed, 0x5_1f7))?;
                let f = &spec.features;
                let fs = build_feature_set(&shifted, f.grid_step, f.grid_height, f.max_order)?;
                let cond = Condition { requery: true, ..base };
                push(format!("shift={s}"), &prepare_examples(test_set, &fs, &cond)?, n_max)?;
            }
        }
        SweepAxis::Vehicles => {
            // ground truth regenerated with vehicles, features from the static map
            for &v in &sw.vehicles {
                let vs = random_vehicles(&sc.scene, v, derive_seed(spec.seed, 0x7e1))?;
                let scene = perturb_scene(&sc.scene, &ScenePerturbation::AddVehicles { vehicles: vs }, 0)?;
                let seed = derive_seed(derive_seed(spec.seed, sc.spec.seed), 2);
                let ds = generate_dataset(&scene, &sc.features, sys, &spec.drop, spec.sizes.test, seed)?;
                push(format!("vehicles={v}"), &prepare_examples(&ds, &sc.features, &base)?, n_max)?;
            }
        }
    }
    Ok(report)
}

pub struct CrossOutcome {
    pub report: Report,
    pub trained: Trained,
    pub train_data: Vec<ScenarioData>,
    pub held_out_data: Vec<ScenarioData>,
}

/// Joint training on `spec.scenarios`, zero-shot evaluation on every
/// scenario including `spec.held_out`.
pub fn run_cross_scenario(spec: &ExperimentSpec, logs: Option<&Path>) -> Result<CrossOutcome> {
    spec.validate()?;
    if spec.scenarios.len() < 2 || spec.held_out.is_empty() {
        return Err(Error::InvalidConfig(
            "cross-scenario runs need at least two training and one held-out scenario".into(),
        ));
    }
    let train_data = spec
        .scenarios
        .iter()
        .map(|s| scenario_data(spec, build_scenario(s, &spec.features)?, true))
        .collect::<Result<Vec<_>>>()?;
    let held_out_data = spec
        .held_out
        .iter()
        .map(|s| scenario_data(spec, build_scenario(s, &spec.features)?, false))
        .collect::<Result<Vec<_>>>()?;
    let train_set: Vec<Example> = train_data.iter().flat_map(|d| d.train.iter().cloned()).collect();
    let val_set: Vec<Example> = train_data.iter().flat_map(|d| d.val.iter().cloned()).collect();
    let trained = train_pair(spec, &train_set, &val_set, logs)?;
    let (g, b) = trained.models()?;
    let mut report = Report::new(format!("{}-cross", spec.name));
    let groups = [("train", &train_data), ("held_out", &held_out_data)];
    for (tag, set) in groups {
        for d in set.iter() {
            let label = format!("{tag}:scene{}", d.scenario.spec.seed);
            let n = spec.train.n_max;
            let sz = spec.train.sigma_z;
            report.sections.push(Section::new(label.clone(), GCD, evaluate_model(&g, &d.test, &spec.system, n, sz)?));
            report
                .sections
                .push(Section::new(label, PILOT_ONLY, evaluate_model(&b, &d.test, &spec.system, 0, sz)?));
        }
    }
    Ok(CrossOutcome {
        report,
        trained,
        train_data,
        held_out_data,
    })
}

/// Median NMSE (dB) trajectories during finetuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneTrace {
    pub scheme: String,
    pub steps: Vec<usize>,
    pub new_scenario: Vec<f64>,
    pub previous_scenario: Vec<f64>,
}

pub struct FinetuneOutcome {
    pub report: Report,
    pub traces: Vec<FinetuneTrace>,
    pub checkpoints: Vec<(String, Checkpoint)>,
}

/// Applies `spec.finetune.steps` optimizer updates on the training split of
/// `new` to each model, evaluating on the test splits of `new` and
/// `previous` every `eval_every` steps.
pub fn run_finetune(
    spec: &ExperimentSpec,
    models: &[(&str, &Model)],
    new: &ScenarioData,
    new_train: &[Example],
    previous: &ScenarioData,
) -> Result<FinetuneOutcome> {
    let ft = &spec.finetune;
    if new_train.is_empty() {
        return Err(Error::EmptyDataset("finetune data".into()));
    }
    let tc = TrainConfig {
        lr_initial: ft.lr,
        batch_size: ft.batch_size,
        epochs: 1,
        lr_decay_every: usize::MAX,
        ..spec.train.clone()
    };
    tc.validate()?;
    let (sys, n, sz) = (&spec.system, spec.train.n_max, spec.train.sigma_z);
    let mut report = Report::new(format!("{}-finetune", spec.name));
    let mut traces = Vec::new();
    let mut checkpoints = Vec::new();
    for (name, model) in models {
        let mut tr = Trainer::new((*model).clone(), &tc);
        let mut trace = FinetuneTrace {
            scheme: name.to_string(),
            steps: vec![],
            new_scenario: vec![],
            previous_scenario: vec![],
        };
        let mut order: Vec<usize> = Vec::new();
        let record = |tr: &Trainer, step: usize, report: &mut Report, trace: &mut FinetuneTrace| -> Result<()> {
            let a = Section::new(format!("new:step{step}"), *name, evaluate_model(&tr.model, &new.test, sys, n, sz)?);
            let b = Section::new(
                format!("previous:step{step}"),
                *name,
                evaluate_model(&tr.model, &previous.test, sys, n, sz)?,
            );
            trace.steps.push(step);
            trace.new_scenario.push(a.summary.median);
            trace.previous_scenario.push(b.summary.median);
            report.sections.push(a);
            report.sections.push(b);
            Ok(())
        };
        record(&tr, 0, &mut report, &mut trace)?;
        for step in 1..=ft.steps {
            if order.len() < ft.batch_size {
                use rand::seq::SliceRandom;
                let mut fresh: Vec<usize> = (0..new_train.len()).collect();
                fresh.shuffle(&mut tr.rng);
                order.extend(fresh);
            }
            let idx: Vec<usize> = order.drain(..ft.batch_size.min(order.len())).collect();
            let batch: Vec<&Example> = idx.iter().map(|&i| &new_train[i]).collect();
            tr.step(&batch, sys, &tc, ft.lr)?;
            if step % ft.eval_every == 0 || step == ft.steps {
                record(&tr, step, &mut report, &mut trace)?;
            }
        }
        checkpoints.push((name.to_string(), tr.checkpoint()));
        traces.push(trace);
    }
    Ok(FinetuneOutcome {
        report,
        traces,
        checkpoints,
    })
}

/// Validation loss of a checkpoint on prepared examples.
pub fn checkpoint_loss(ck: &Checkpoint, examples: &[Example], spec: &ExperimentSpec) -> Result<f64> {
    let m = ck.to_model()?;
    let n = if m.cfg.kind == ModelKind::Gcd { spec.train.n_max } else { 0 };
    evaluate_loss(&m, examples, &spec.system, n, spec.train.sigma_z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        let mut s = ExperimentSpec::desk();
        s.scenarios = vec![ScenarioSpec {
            seed: 3,
            n_buildings: 4,
            area_side: 60.0,
            bs_height: 15.0,
        }];
        s.features.max_order = 1;
        s.sizes = Sizes {
            train: 12,
            val: 6,
            test: 10,
        };
        s.model.hidden = 16;
        s.model.l = 1;
        s.model.k = 1;
        s.baseline.k = 2;
        s.train.epochs = 2;
        s.train.batch_size = 4;
        s
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert!((percentile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn truth_estimator_gives_step_cdf_at_zero() {
        let spec = tiny_spec();
        let sc = build_scenario(&spec.scenarios[0], &spec.features).unwrap();
        let data = scenario_data(&spec, sc, false).unwrap();
        assert_eq!(data.test.len(), 10);
        let nmse = evaluate_with(&data.test, |e| Ok(e.full.clone())).unwrap();
        let s = Section::new("dummy", "truth", nmse);
        assert!(s.cdf().iter().all(|&(v, _)| v == 0.0));
        assert_eq!(s.cdf().last().unwrap().1, 1.0);
    }

    #[test]
    fn summary_is_ordered() {
        let s = Summary::of(&[0.5, 0.1, 0.01, 0.2, 0.3, 1.0, 0.05]);
        assert!(s.p10 <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.p90);
        assert_eq!(s.count, 7);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = ExperimentSpec::desk();
        let text = spec.to_toml().unwrap();
        assert_eq!(ExperimentSpec::from_toml(&text).unwrap(), spec);
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let mut s = ExperimentSpec::desk();
        s.sizes.test = 0;
        assert!(matches!(s.validate(), Err(Error::InvalidConfig(_))));
        let mut s = ExperimentSpec::desk();
        s.sweeps.position_error.push(-1.0);
        assert!(matches!(s.validate(), Err(Error::InvalidConfig(_))));
        let mut s = ExperimentSpec::desk();
        s.model.n_t = 4;
        assert!(s.validate().is_err());
    }

    #[test]
    fn null_sweep_points_match_nominal() {
        let spec = tiny_spec();
        let out = run_single_scenario(&spec, None).unwrap();
        let (g, b) = out.trained.models().unwrap();
        let models = [(GCD, &g), (PILOT_ONLY, &b)];
        let sc = &out.data.scenario;
        let nominal = out.report.section("nominal", GCD).unwrap();
        for axis in [SweepAxis::PositionError, SweepAxis::Disturbance] {
            let r = run_sweep_on(&spec, axis, &models, sc, &out.data.test_set).unwrap();
            assert_eq!(r.sections[0].nmse, nominal.nmse, "{axis:?}");
        }
        let again = run_single_scenario(&spec, None).unwrap();
        assert_eq!(again.report, out.report);
    }

    #[test]
    fn finetune_traces_follow_eval_schedule() {
        let mut spec = tiny_spec();
        spec.finetune.steps = 5;
        spec.finetune.eval_every = 2;
        spec.finetune.batch_size = 4;
        let sc = build_scenario(&spec.scenarios[0], &spec.features).unwrap();
        let data = scenario_data(&spec, sc, true).unwrap();
        let model = Model::new(spec.model.clone()).unwrap();
        let models = [(GCD, &model)];
        let o = run_finetune(&spec, &models, &data, &data.train, &data).unwrap();
        let t = &o.traces[0];
        assert_eq!(t.steps, vec![0, 2, 4, 5]);
        assert_eq!(t.new_scenario, t.previous_scenario);
        assert_eq!(o.report.sections.len(), 8);
        assert_eq!(o.checkpoints.len(), 1);
        assert!(run_finetune(&spec, &models, &data, &[], &data).is_err());
    }

    #[test]
    fn neighbors_retrieved_match_stored() {
        let spec = tiny_spec();
        let sc = build_scenario(&spec.scenarios[0], &spec.features).unwrap();
        let ds = scenario_dataset(&spec, &sc, Split::Test).unwrap();
        let n = spec.drop.n_neighbors;
        let a = prepare_examples(&ds, &sc.features, &Condition::nominal(n)).unwrap();
        let cond = Condition {
            requery: true,
            ..Condition::nominal(n)
        };
        let b = prepare_examples(&ds, &sc.features, &cond).unwrap();
        assert_eq!(a, b);
    }
}
