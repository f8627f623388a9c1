//! Command-line front end. Exit codes: 0 success, 1 I/O or other failure,
//! 2 invalid configuration or input file, 3 numeric failure.

use clap::{Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use gcd::dataset::{generate_dataset, Dataset};
use gcd::feature_store::{build_feature_set, FeatureSet};
use gcd::harness::{self, Condition, ExperimentSpec, Report, Section, SweepAxis, GCD, PILOT_ONLY};
use gcd::net::{train, Checkpoint, Model, ModelKind};
use gcd::scene::{generate_scene, Scene};
use gcd::{Error, Result};

#[derive(Parser)]
#[command(name = "gcd", version, about = "Geometry-aided channel deduction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Gcd,
    PilotOnly,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random building scene.
    SceneGen {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 15)]
        buildings: usize,
        #[arg(long, default_value_t = 120.0)]
        side: f64,
        #[arg(long, default_value_t = 20.0)]
        bs_height: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ray-trace the virtual user grid of a scene.
    BuildFeatureset {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        step: f64,
        #[arg(long, default_value_t = 1.5)]
        height: f64,
        #[arg(long, default_value_t = 2)]
        max_order: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw users and compute their channels.
    GenDataset {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Experiment spec supplying system and drop settings (desk profile if absent).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "gcd")]
        kind: Kind,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the report files.
        #[arg(long)]
        report: PathBuf,
    },
    /// Train both schemes on the first scenario of a spec and evaluate them.
    SingleScenario {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate fixed checkpoints along one robustness axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        gcd: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint training on several scenarios, zero-shot evaluation on held-out ones.
    CrossScenario {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune cross-scenario checkpoints on the first held-out scenario.
    Finetune {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        gcd: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_spec(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentSpec> {
    let mut spec = match path {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::desk(),
    };
    if let Some(s) = seed {
        spec.seed = s;
        spec.model.seed = s;
        spec.baseline.seed = s;
        spec.train.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn save_report(report: &Report, dir: &Path, stem: &str) -> Result<()> {
    report.save(dir, stem)?;
    for s in &report.sections {
        println!(
            "{:<24} {:<12} median {:>8.2} dB  [q1 {:>7.2}, q3 {:>7.2}]",
            s.condition, s.scheme, s.summary.median, s.summary.q1, s.summary.q3
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::SceneGen {
            seed,
            buildings,
            side,
            bs_height,
            out,
        } => {
            let scene = generate_scene(seed, buildings, side, bs_height)?;
            scene.save(&out)?;
            println!("wrote {} buildings to {}", scene.buildings.len(), out.display());
        }
        Cmd::BuildFeatureset {
            scene,
            step,
            height,
            max_order,
            out,
        } => {
            let scene = Scene::load(scene)?;
            let fs = build_feature_set(&scene, step, height, max_order)?;
            fs.save(&out)?;
            println!(
                "{} grid points ({} with paths) -> {}",
                fs.len(),
                fs.non_empty_count(),
                out.display()
            );
        }
        Cmd::GenDataset {
            scene,
            features,
            count,
            seed,
            config,
            out,
        } => {
            let spec = load_spec(config.as_deref(), None)?;
            let scene = Scene::load(scene)?;
            let fs = FeatureSet::load(features, Some(&scene))?;
            let ds = generate_dataset(&scene, &fs, &spec.system, &spec.drop, count, seed)?;
            ds.save(&out)?;
            println!("{} samples -> {}", ds.len(), out.display());
        }
        Cmd::Train {
            dataset,
            val,
            features,
            config,
            kind,
            seed,
            log,
            out,
        } => {
            let spec = load_spec(config.as_deref(), seed)?;
            let fs = FeatureSet::load(features, None)?;
            let cond = Condition::nominal(spec.drop.n_neighbors);
            let tr = harness::prepare_examples(&Dataset::load(dataset)?, &fs, &cond)?;
            let va = harness::prepare_examples(&Dataset::load(val)?, &fs, &cond)?;
            let cfg = match kind {
                Kind::Gcd => spec.model.clone(),
                Kind::PilotOnly => spec.baseline.clone(),
            };
            let model = Model::new(cfg)?;
            let outcome = match log {
                Some(p) => {
                    let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
                    let o = train(model, &tr, &va, &spec.system, &spec.train, Some(&mut f))?;
                    f.flush()?;
                    o
                }
                None => train(model, &tr, &va, &spec.system, &spec.train, None)?,
            };
            outcome.best.save(&out)?;
            let rec = &outcome.records[outcome.best_epoch];
            println!(
                "best epoch {} val loss {:.6e} -> {}",
                outcome.best_epoch,
                rec.val_loss,
                out.display()
            );
        }
        Cmd::Eval {
            checkpoint,
            dataset,
            features,
            config,
            report,
        } => {
            let spec = load_spec(config.as_deref(), None)?;
            let ck = Checkpoint::load(checkpoint)?;
            let model = ck.to_model()?;
            let fs = FeatureSet::load(features, None)?;
            let ex = harness::prepare_examples(
                &Dataset::load(dataset)?,
                &fs,
                &Condition::nominal(spec.drop.n_neighbors),
            )?;
            let scheme = match model.cfg.kind {
                ModelKind::Gcd => GCD,
                ModelKind::PilotOnly => PILOT_ONLY,
            };
            let nmse = harness::evaluate_model(&model, &ex, &spec.system, spec.train.n_max, spec.train.sigma_z)?;
            let mut r = Report::new("eval");
            r.sections.push(Section::new("nominal", scheme, nmse));
            save_report(&r, &report, "eval")?;
        }
        Cmd::SingleScenario { spec, seed, out } => {
            let spec = load_spec(Some(&spec), seed)?;
            let o = harness::run_single_scenario(&spec, Some(&out))?;
            o.trained.gcd.best.save(out.join("gcd.ckpt"))?;
            o.trained.baseline.best.save(out.join("pilot_only.ckpt"))?;
            save_report(&o.report, &out, "single")?;
        }
        Cmd::Sweep {
            axis,
            spec,
            gcd,
            baseline,
            seed,
            out,
        } => {
            let spec = load_spec(Some(&spec), seed)?;
            let g = Checkpoint::load(gcd)?.to_model()?;
            let b = baseline.map(|p| Checkpoint::load(p)?.to_model()).transpose()?;
            let mut models = vec![(GCD, &g)];
            if let Some(b) = &b {
                models.push((PILOT_ONLY, b));
            }
            let r = harness::run_sweep(&spec, axis, &models)?;
            save_report(&r, &out, &format!("sweep_{}", axis.name()))?;
        }
        Cmd::CrossScenario { spec, seed, out } => {
            let spec = load_spec(Some(&spec), seed)?;
            let o = harness::run_cross_scenario(&spec, Some(&out))?;
            o.trained.gcd.best.save(out.join("gcd.ckpt"))?;
            o.trained.baseline.best.save(out.join("pilot_only.ckpt"))?;
            save_report(&o.report, &out, "cross")?;
        }
        Cmd::Finetune {
            spec,
            gcd,
            baseline,
            steps,
            seed,
            out,
        } => {
            let mut spec = load_spec(Some(&spec), seed)?;
            if let Some(s) = steps {
                spec.finetune.steps = s;
            }
            let new_spec = spec
                .held_out
                .first()
                .ok_or_else(|| Error::InvalidConfig("finetune needs a held-out scenario".into()))?;
            let new = harness::scenario_data(&spec, harness::build_scenario(new_spec, &spec.features)?, true)?;
            let prev = harness::scenario_data(
                &spec,
                harness::build_scenario(&spec.scenarios[0], &spec.features)?,
                false,
            )?;
            let g = Checkpoint::load(gcd)?.to_model()?;
            let b = baseline.map(|p| Checkpoint::load(p)?.to_model()).transpose()?;
            let mut models = vec![(GCD, &g)];
            if let Some(b) = &b {
                models.push((PILOT_ONLY, b));
            }
            let o = harness::run_finetune(&spec, &models, &new, &new.train, &prev)?;
            std::fs::create_dir_all(&out)?;
            for (name, ck) in &o.checkpoints {
                ck.save(out.join(format!("{name}_finetuned.ckpt")))?;
            }
            std::fs::write(out.join("finetune_traces.json"), serde_json::to_string_pretty(&o.traces)?)?;
            save_report(&o.report, &out, "finetune")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_numeric() {
                3
            } else if matches!(e, Error::Io(_)) {
                1
            } else {
                2
            };
            ExitCode::from(code)
        }
    }
}
