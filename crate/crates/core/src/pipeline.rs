//! Stage compositions shared by the command line and the end-to-end tests.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::inference::{infer_all, InferenceConfig, InferredStiffness, NormalizedDataset};
use crate::labels::{build_labels, HMapConfig, LabelSet, TaskData};
use crate::policy::{fit, PolicyModel, Variant};
use crate::records::{DemoRecord, InferredRecord};
use crate::sim::{scripted_demo, EnvKind, Environment};
use crate::spd::{SpdMatrix3, SymMatrix3};

/// Environment stiffness for every record, inferred separately per task and
/// returned in input order.
pub fn infer_records(
    demos: &[DemoRecord],
    cfg: &InferenceConfig,
) -> Result<Vec<InferredStiffness>> {
    if demos.is_empty() {
        return Err(Error::Empty("no demonstration records"));
    }
    let mut groups: BTreeMap<EnvKind, Vec<usize>> = BTreeMap::new();
    for (i, d) in demos.iter().enumerate() {
        groups.entry(d.task).or_default().push(i);
    }
    let mut out: Vec<Option<InferredStiffness>> = vec![None; demos.len()];
    for idx in groups.values() {
        let subset: Vec<DemoRecord> = idx.iter().map(|&i| demos[i].clone()).collect();
        let data = NormalizedDataset::from_records(&subset)?;
        for (&i, k) in idx.iter().zip(infer_all(&data, cfg)?) {
            out[i] = Some(k);
        }
    }
    Ok(out
        .into_iter()
        .map(|k| k.expect("every record belongs to a group"))
        .collect())
}

pub fn to_records(inferred: &[InferredStiffness]) -> Vec<InferredRecord> {
    inferred
        .iter()
        .enumerate()
        .map(|(i, k)| k.to_record(i))
        .collect()
}

/// Pairs inferred-stiffness records with the demonstrations they index.
pub fn from_records(demos: usize, records: &[InferredRecord]) -> Result<Vec<InferredStiffness>> {
    let mut out: Vec<Option<InferredStiffness>> = vec![None; demos];
    for r in records {
        let slot = out.get_mut(r.index).ok_or_else(|| {
            Error::param(format!(
                "inferred record index {} exceeds the {demos} demonstrations",
                r.index
            ))
        })?;
        *slot = Some(InferredStiffness {
            k_e: SpdMatrix3::new(SymMatrix3::from(r.k_e))?,
            m_valid: r.m_valid,
        });
    }
    out.into_iter()
        .enumerate()
        .map(|(i, k)| {
            k.ok_or_else(|| Error::param(format!("no inferred stiffness for record {i}")))
        })
        .collect()
}

/// Labels for several demonstration sets with bounds pooled across all.
pub fn label_sets(
    sets: &[(&[DemoRecord], &[InferredStiffness])],
    cfg: &HMapConfig,
) -> Result<LabelSet> {
    let k_e: Vec<Vec<SpdMatrix3>> = sets
        .iter()
        .map(|(_, inf)| inf.iter().map(|k| k.k_e).collect())
        .collect();
    let m_valid: Vec<Vec<usize>> = sets
        .iter()
        .map(|(_, inf)| inf.iter().map(|k| k.m_valid).collect())
        .collect();
    let tasks: Vec<TaskData<'_>> = sets
        .iter()
        .zip(k_e.iter().zip(&m_valid))
        .map(|((demos, _), (k, m))| TaskData {
            demos,
            k_e: k,
            m_valid: m,
        })
        .collect();
    build_labels(&tasks, cfg)
}

/// Fits a model on the labels of one task and records the label bounds.
pub fn fit_task(set: &LabelSet, task: EnvKind, variant: Variant) -> Result<PolicyModel> {
    let labels: Vec<_> = set
        .labels
        .iter()
        .filter(|l| l.task == task)
        .cloned()
        .collect();
    if labels.is_empty() {
        return Err(Error::param(format!("no labels for task {task}")));
    }
    Ok(fit(&labels, variant)?.with_kappa(set.bounds))
}

/// Everything produced by running the offline stages on preset environments.
pub struct PipelineRun {
    pub demos: Vec<Vec<DemoRecord>>,
    pub inferred: Vec<Vec<InferredStiffness>>,
    pub labels: LabelSet,
}

/// Simulates, infers and labels each task with the given seed.
pub fn run_offline(
    tasks: &[EnvKind],
    episodes: usize,
    seed: u64,
    inference: &InferenceConfig,
    hmap: &HMapConfig,
) -> Result<PipelineRun> {
    let mut demos = Vec::new();
    let mut inferred = Vec::new();
    for &task in tasks {
        let d = scripted_demo(&Environment::preset(task), episodes, seed)?;
        inferred.push(infer_records(&d, inference)?);
        demos.push(d);
    }
    let sets: Vec<(&[DemoRecord], &[InferredStiffness])> = demos
        .iter()
        .zip(&inferred)
        .map(|(d, i)| (d.as_slice(), i.as_slice()))
        .collect();
    let labels = label_sets(&sets, hmap)?;
    Ok(PipelineRun {
        demos,
        inferred,
        labels,
    })
}
