//! File-to-file pipeline stages.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use nalgebra::Vector3;
use stiffness_core::inference::InferenceConfig;
use stiffness_core::labels::{write_label_file, HMapConfig, LabelSet};
use stiffness_core::pipeline::{fit_task, from_records, infer_records, label_sets, to_records};
use stiffness_core::policy::{PolicyModel, Variant};
use stiffness_core::records::{read_jsonl, write_jsonl_file, DemoRecord, InferredRecord};
use stiffness_core::runtime::{
    rollout as run_rollout, ImpedanceConfig, Mode, PoseSource, ScriptedPoses, StiffnessPolicy,
    Trajectory, WallPressOperator, WallPressPlan,
};
use stiffness_core::sim::{scripted_demo, EnvKind, Environment, DEMO_PERIOD};

/// Writes `episodes` scripted demonstrations; returns the record count.
pub fn simulate(env: EnvKind, episodes: usize, seed: u64, out: &Path) -> Result<usize> {
    let demos = scripted_demo(&Environment::preset(env), episodes, seed)?;
    write_jsonl_file(out, &demos).with_context(|| format!("writing {}", out.display()))?;
    Ok(demos.len())
}

pub fn read_demos(path: &Path) -> Result<Vec<DemoRecord>> {
    let demos: Vec<DemoRecord> = read_jsonl(path)?;
    ensure!(
        !demos.is_empty(),
        "{}: no demonstration records",
        path.display()
    );
    Ok(demos)
}

/// Infers environment stiffness for every record of a demonstration file.
pub fn infer(demos: &Path, cfg: &InferenceConfig, out: &Path) -> Result<usize> {
    cfg.validate()?;
    let records = read_demos(demos)?;
    let inferred = infer_records(&records, cfg)?;
    write_jsonl_file(out, to_records(&inferred))
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(inferred.len())
}

/// Labels demonstration files paired with their inferred stiffness, pooling
/// the normalization bounds across all pairs.
pub fn label(pairs: &[(PathBuf, PathBuf)], cfg: &HMapConfig, out: &Path) -> Result<LabelSet> {
    ensure!(!pairs.is_empty(), "no demonstration/inferred file pairs");
    let mut loaded = Vec::with_capacity(pairs.len());
    for (demo_path, inferred_path) in pairs {
        let demos = read_demos(demo_path)?;
        let records: Vec<InferredRecord> = read_jsonl(inferred_path)?;
        let inferred = from_records(demos.len(), &records).with_context(|| {
            format!(
                "pairing {} with {}",
                inferred_path.display(),
                demo_path.display()
            )
        })?;
        loaded.push((demos, inferred));
    }
    let sets: Vec<_> = loaded
        .iter()
        .map(|(d, i)| (d.as_slice(), i.as_slice()))
        .collect();
    let set = label_sets(&sets, cfg)?;
    write_label_file(out, &set).with_context(|| format!("writing {}", out.display()))?;
    Ok(set)
}

/// Fits a policy on one task of a label file. The task may be omitted when
/// the file holds a single task.
pub fn fit(
    labels: &Path,
    task: Option<EnvKind>,
    variant: Variant,
    out: &Path,
) -> Result<PolicyModel> {
    let set = stiffness_core::labels::read_label_file(labels)?;
    let task = match task {
        Some(t) => t,
        None => {
            let mut tasks: Vec<EnvKind> = set.labels.iter().map(|l| l.task).collect();
            tasks.sort();
            tasks.dedup();
            match tasks.as_slice() {
                [only] => *only,
                [] => bail!("{}: no labels", labels.display()),
                _ => bail!(
                    "{}: labels cover several tasks, choose one with --task",
                    labels.display()
                ),
            }
        }
    };
    let model = fit_task(&set, task, variant)?;
    model
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(model)
}

/// Loads a model and checks that it was fitted for `env`.
pub fn load_model(path: &Path, env: EnvKind) -> Result<PolicyModel> {
    let model = PolicyModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(task) = model.task {
        ensure!(task == env, "model was fitted for {task}, not {env}");
    }
    ensure!(
        model.state_dim() == env.state_dim(),
        "model expects {} state features, {env} provides {}",
        model.state_dim(),
        env.state_dim()
    );
    Ok(model)
}

/// Default operator: a noisy press for the wall, otherwise the first scripted
/// demonstration replayed at the control rate.
pub fn operator(
    env: &Environment,
    cfg: &ImpedanceConfig,
    seed: u64,
) -> Result<Box<dyn PoseSource>> {
    if env.kind() == EnvKind::Wall {
        return Ok(Box::new(WallPressOperator::new(
            env,
            WallPressPlan::default(),
            seed,
        )?));
    }
    let demo = scripted_demo(env, 1, seed)?;
    let hold = (DEMO_PERIOD * cfg.rate_hz).round().max(1.0) as usize;
    let poses = demo
        .iter()
        .flat_map(|r| std::iter::repeat_n(Vector3::from(r.cmd_pos), hold))
        .collect();
    Ok(Box::new(ScriptedPoses(poses)))
}

/// Runs the control loop in sim time and writes the trajectory log.
pub fn rollout(
    mode: Mode,
    env: EnvKind,
    model: Option<&Path>,
    cfg: &ImpedanceConfig,
    ticks: u64,
    seed: u64,
    out: &Path,
) -> Result<Trajectory> {
    let policy: Option<Arc<dyn StiffnessPolicy>> = match (mode, model) {
        (_, Some(path)) => Some(Arc::new(load_model(path, env)?)),
        (Mode::Copilot, None) => bail!("copilot mode needs --model"),
        _ => None,
    };
    let environment = Environment::preset(env);
    let mut source = operator(&environment, cfg, seed)?;
    let trajectory = run_rollout(cfg, &environment, mode, policy, source.as_mut(), ticks)?;
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    trajectory.write(&mut w)?;
    w.flush()?;
    Ok(trajectory)
}
