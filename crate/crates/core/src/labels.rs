//! Robot stiffness labels complementary to the environment.
//!
//! Environment eigenvalues pass through the decreasing map
//! `h(λ) = 1/(λ + ε_h)`, are normalized to `[0, 1]` with dataset-wide
//! percentile bounds, and are reassembled with the environment eigenvectors
//! expressed in the wrist camera frame.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::cholesky::{cholesky_decode, cholesky_encode, CholeskyParams};
use crate::error::{Error, Result};
use crate::records::{parse_line, read_lines, DemoRecord};
use crate::sim::{from_row_major, EnvKind};
use crate::spd::{is_rotation, SpdMatrix3};
use crate::stats::{percentile, PercentileMethod};

/// Normalized eigenvalues below this are raised to it before encoding.
pub const EIGEN_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HMapConfig {
    pub eps_h: f64,
    pub p_low: f64,
    pub p_high: f64,
}

impl Default for HMapConfig {
    fn default() -> Self {
        Self {
            eps_h: 1e-6,
            p_low: 5.0,
            p_high: 95.0,
        }
    }
}

impl HMapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_h > 0.0) {
            return Err(Error::param("eps_h must be positive"));
        }
        if !(0.0 <= self.p_low && self.p_low < self.p_high && self.p_high <= 100.0) {
            return Err(Error::param(
                "percentiles must satisfy 0 ≤ p_low < p_high ≤ 100",
            ));
        }
        Ok(())
    }

    pub fn h(&self, lambda: f64) -> f64 {
        1.0 / (lambda + self.eps_h)
    }
}

/// Dataset-wide normalization range for `κ = h(λ_e)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaBounds {
    pub kappa_min: f64,
    pub kappa_max: f64,
}

impl KappaBounds {
    pub fn new(kappa_min: f64, kappa_max: f64) -> Result<Self> {
        if !(kappa_min < kappa_max) {
            return Err(Error::param(format!(
                "kappa_min ({kappa_min}) must be below kappa_max ({kappa_max})"
            )));
        }
        Ok(Self {
            kappa_min,
            kappa_max,
        })
    }

    /// Pools `h` of every eigenvalue of every matrix and takes the configured
    /// percentiles (linear interpolation).
    pub fn from_pool<'a>(
        k_e: impl IntoIterator<Item = &'a SpdMatrix3>,
        cfg: &HMapConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let kappas: Vec<f64> = k_e
            .into_iter()
            .flat_map(|k| k.eigenvalues().map(|l| cfg.h(l)))
            .collect();
        if kappas.is_empty() {
            return Err(Error::Empty("no environment stiffness to pool"));
        }
        Self::new(
            percentile(&kappas, cfg.p_low, PercentileMethod::Linear)?,
            percentile(&kappas, cfg.p_high, PercentileMethod::Linear)?,
        )
    }
}

/// Normalized robot eigenvalues for environment eigenvalues `lambda_e`.
pub fn robot_eigs(lambda_e: [f64; 3], cfg: &HMapConfig, bounds: &KappaBounds) -> Result<[f64; 3]> {
    KappaBounds::new(bounds.kappa_min, bounds.kappa_max)?;
    let span = bounds.kappa_max - bounds.kappa_min;
    Ok(lambda_e.map(|l| ((cfg.h(l) - bounds.kappa_min) / span).clamp(0.0, 1.0)))
}

/// `K̃_r = (Rᵀ Q_e) diag(λ̃) (Rᵀ Q_e)ᵀ` with zero eigenvalues lifted to
/// [`EIGEN_FLOOR`].
pub fn camera_frame_label(
    q_e: &Matrix3<f64>,
    lambdas_r: [f64; 3],
    r_cam: &Matrix3<f64>,
) -> Result<SpdMatrix3> {
    if !is_rotation(q_e, 1e-9) || !is_rotation(r_cam, 1e-9) {
        return Err(Error::NotRotation);
    }
    if let Some(&bad) = lambdas_r
        .iter()
        .find(|l| !(-1e-12..=1.0 + 1e-12).contains(*l))
    {
        return Err(Error::OutOfRange(bad));
    }
    let q_r = r_cam.transpose() * q_e;
    SpdMatrix3::from_eigen(&q_r, lambdas_r.map(|l| l.max(EIGEN_FLOOR)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[default]
    Camera,
}

/// Training pair: task state and the camera-frame robot stiffness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessLabel {
    pub task: EnvKind,
    pub demo: usize,
    pub t: f64,
    pub state: Vec<f64>,
    pub frame: Frame,
    /// Camera orientation the label is expressed in, row-major.
    pub cam_rot: [f64; 9],
    pub params: CholeskyParams,
    /// Number of occupied force sectors behind this label; 0 means free space.
    pub m_valid: usize,
}

impl StiffnessLabel {
    pub fn camera_matrix(&self) -> Result<SpdMatrix3> {
        cholesky_decode(&self.params)
    }

    /// The label rotated back into the world frame, `R·K̃_r·Rᵀ`.
    pub fn world_matrix(&self) -> Result<SpdMatrix3> {
        self.camera_matrix()?
            .conjugate(&from_row_major(&self.cam_rot))
    }
}

/// First line of a label file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelHeader {
    pub format: String,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub config: HMapConfig,
}

pub const LABEL_FORMAT: &str = "stiffness-labels/1";

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    pub bounds: KappaBounds,
    pub config: HMapConfig,
    pub labels: Vec<StiffnessLabel>,
}

impl LabelSet {
    pub fn header(&self) -> LabelHeader {
        LabelHeader {
            format: LABEL_FORMAT.to_string(),
            kappa_min: self.bounds.kappa_min,
            kappa_max: self.bounds.kappa_max,
            config: self.config,
        }
    }
}

/// Writes the header line followed by one label per line.
pub fn write_labels(w: impl Write, set: &LabelSet) -> Result<()> {
    let mut w = w;
    serde_json::to_writer(&mut w, &set.header()).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    crate::records::write_jsonl(w, &set.labels)
}

pub fn write_label_file(path: &Path, set: &LabelSet) -> Result<()> {
    write_labels(BufWriter::new(File::create(path)?), set)
}

pub fn read_label_file(path: &Path) -> Result<LabelSet> {
    let lines = read_lines(path)?;
    let ((first, head), rest) = lines
        .split_first()
        .ok_or(Error::Empty("label file has no header"))?;
    let header: LabelHeader = parse_line(path, *first, head)?;
    if header.format != LABEL_FORMAT {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: *first,
            message: format!("unsupported label format {:?}", header.format),
        });
    }
    let labels = rest
        .iter()
        .map(|(n, text)| parse_line(path, *n, text))
        .collect::<Result<Vec<StiffnessLabel>>>()?;
    Ok(LabelSet {
        bounds: KappaBounds::new(header.kappa_min, header.kappa_max)?,
        config: header.config,
        labels,
    })
}

/// One task's demonstrations paired with their inferred stiffness and sector
/// counts.
pub struct TaskData<'a> {
    pub demos: &'a [DemoRecord],
    pub k_e: &'a [SpdMatrix3],
    pub m_valid: &'a [usize],
}

/// Labels for every record of every task, normalized with bounds pooled over
/// all tasks.
pub fn build_labels(tasks: &[TaskData<'_>], cfg: &HMapConfig) -> Result<LabelSet> {
    cfg.validate()?;
    if tasks.iter().all(|t| t.demos.is_empty()) {
        return Err(Error::Empty("no demonstration records to label"));
    }
    for t in tasks {
        if t.demos.len() != t.k_e.len() || t.demos.len() != t.m_valid.len() {
            return Err(Error::DimensionMismatch {
                expected: t.demos.len(),
                got: t.k_e.len().min(t.m_valid.len()),
            });
        }
    }
    let bounds = KappaBounds::from_pool(tasks.iter().flat_map(|t| t.k_e.iter()), cfg)?;

    let mut labels = Vec::new();
    for task in tasks {
        for ((rec, k_e), &m_valid) in task.demos.iter().zip(task.k_e).zip(task.m_valid) {
            let eig = k_e.eig();
            let lambdas = robot_eigs(eig.lambda, cfg, &bounds)?;
            let cam = from_row_major(&rec.cam_rot);
            let label = camera_frame_label(&eig.q, lambdas, &cam)?;
            labels.push(StiffnessLabel {
                task: rec.task,
                demo: rec.episode,
                t: rec.t,
                state: rec.state.clone(),
                frame: Frame::Camera,
                cam_rot: rec.cam_rot,
                params: cholesky_encode(&label)?,
                m_valid,
            });
        }
    }
    Ok(LabelSet {
        bounds,
        config: *cfg,
        labels,
    })
}
