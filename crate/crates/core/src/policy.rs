//! State-conditioned stiffness regressors over Cholesky parameters.
//!
//! Models are fitted on world-frame parameters: each camera-frame label is
//! rotated back with the camera orientation it was recorded under. Use
//! [`PolicyModel::predict_camera`] to express a prediction in a camera frame.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::cholesky::{cholesky_encode, CholeskyParams};
use crate::error::{Error, Result};
use crate::inference::{knn, normalize_states, NormStats};
use crate::labels::{KappaBounds, StiffnessLabel, EIGEN_FLOOR};
use crate::sim::EnvKind;
use crate::spd::{clamp_eigenvalues, is_rotation, SpdMatrix3};

pub const MODEL_FORMAT: &str = "stiffness-copilot-model/1";
pub const MIN_TRAINING_LABELS: usize = 10;
pub const DEFAULT_KNN_K: usize = 5;

/// Log-diagonal parameters beyond this are saturated before decoding.
const MAX_LOG_DIAG: f64 = 50.0;
const MAX_OFF_DIAG: f64 = 1e50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Variant {
    Knn { k: usize },
    LinearRidge { lambda: f64 },
}

impl Default for Variant {
    fn default() -> Self {
        Variant::Knn { k: DEFAULT_KNN_K }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Regressor {
    /// Inverse-distance weighted average of the nearest training labels.
    Knn {
        k: usize,
        states: Vec<Vec<f64>>,
        params: Vec<CholeskyParams>,
    },
    /// `params = intercept + Wᵀ·z` with one weight row per state dimension.
    LinearRidge {
        lambda: f64,
        weights: Vec<[f64; 6]>,
        intercept: [f64; 6],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub format: String,
    pub task: Option<EnvKind>,
    pub stats: NormStats,
    pub kappa: Option<KappaBounds>,
    pub regressor: Regressor,
}

/// Fits a model on labels that share one state dimension.
pub fn fit(labels: &[StiffnessLabel], variant: Variant) -> Result<PolicyModel> {
    if labels.len() < MIN_TRAINING_LABELS {
        return Err(Error::param(format!(
            "fitting needs at least {MIN_TRAINING_LABELS} labels, got {}",
            labels.len()
        )));
    }
    let first = labels[0].task;
    let task = labels.iter().all(|l| l.task == first).then_some(first);
    let raw: Vec<Vec<f64>> = labels.iter().map(|l| l.state.clone()).collect();
    let (states, stats) = normalize_states(&raw)?;
    let params = labels
        .iter()
        .map(|l| cholesky_encode(&l.world_matrix()?))
        .collect::<Result<Vec<_>>>()?;

    let regressor = match variant {
        Variant::Knn { k } => {
            if k == 0 {
                return Err(Error::param("knn needs k ≥ 1"));
            }
            Regressor::Knn { k, states, params }
        }
        Variant::LinearRidge { lambda } => {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::param(format!(
                    "ridge lambda {lambda} must be finite and ≥ 0"
                )));
            }
            let (weights, intercept) = ridge(&states, &params, lambda)?;
            Regressor::LinearRidge {
                lambda,
                weights,
                intercept,
            }
        }
    };
    Ok(PolicyModel {
        format: MODEL_FORMAT.to_string(),
        task,
        stats,
        kappa: None,
        regressor,
    })
}

/// Minimizes `Σ‖y_i − b − Wᵀz_i‖² + λ‖W‖²` with the intercept unpenalized.
fn ridge(
    states: &[Vec<f64>],
    params: &[CholeskyParams],
    lambda: f64,
) -> Result<(Vec<[f64; 6]>, [f64; 6])> {
    let n = states.len();
    let d = states[0].len();
    let x_mean: Vec<f64> = (0..d)
        .map(|j| states.iter().map(|s| s[j]).sum::<f64>() / n as f64)
        .collect();
    let mut y_mean = [0.0; 6];
    for p in params {
        for (m, v) in y_mean.iter_mut().zip(p.to_array()) {
            *m += v / n as f64;
        }
    }

    let rows = if lambda > 0.0 { n + d } else { n };
    let mut a = DMatrix::<f64>::zeros(rows, d);
    let mut b = DMatrix::<f64>::zeros(rows, 6);
    for (i, (s, p)) in states.iter().zip(params).enumerate() {
        for j in 0..d {
            a[(i, j)] = s[j] - x_mean[j];
        }
        for (c, v) in p.to_array().iter().enumerate() {
            b[(i, c)] = v - y_mean[c];
        }
    }
    if lambda > 0.0 {
        for j in 0..d {
            a[(n + j, j)] = lambda.sqrt();
        }
    }
    let w = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::param(format!("least squares failed: {e}")))?;

    let weights: Vec<[f64; 6]> = (0..d).map(|j| std::array::from_fn(|c| w[(j, c)])).collect();
    let intercept =
        std::array::from_fn(|c| y_mean[c] - (0..d).map(|j| x_mean[j] * w[(j, c)]).sum::<f64>());
    Ok((weights, intercept))
}

impl PolicyModel {
    pub fn with_kappa(mut self, bounds: KappaBounds) -> Self {
        self.kappa = Some(bounds);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.stats.dim()
    }

    /// Raw regressor output for a task state, world frame.
    pub fn predict_params(&self, state: &[f64]) -> Result<CholeskyParams> {
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let z = self.stats.apply(state)?;
        Ok(match &self.regressor {
            Regressor::Knn { k, states, params } => {
                let idx = knn(&z, states, (*k).min(states.len()))?;
                let dist: Vec<f64> = idx
                    .iter()
                    .map(|&i| {
                        states[i]
                            .iter()
                            .zip(&z)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                let exact: Vec<usize> = idx
                    .iter()
                    .zip(&dist)
                    .filter(|(_, d)| **d == 0.0)
                    .map(|(i, _)| *i)
                    .collect();
                if !exact.is_empty() {
                    average(exact.iter().map(|&i| (1.0, &params[i])))
                } else {
                    average(idx.iter().zip(&dist).map(|(&i, d)| (1.0 / d, &params[i])))
                }
            }
            Regressor::LinearRidge {
                weights, intercept, ..
            } => {
                let mut out = *intercept;
                for (zj, row) in z.iter().zip(weights) {
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += zj * w;
                    }
                }
                CholeskyParams::from(out)
            }
        })
    }

    /// Normalized world-frame stiffness with eigenvalues in `[1e-9, 1]`.
    pub fn predict(&self, state: &[f64]) -> Result<SpdMatrix3> {
        let p = saturate(self.predict_params(state)?);
        clamp_eigenvalues(&p.decode_sym(), EIGEN_FLOOR, 1.0)
    }

    /// [`Self::predict`] expressed in a camera frame with orientation `r_cam`.
    pub fn predict_camera(&self, state: &[f64], r_cam: &Matrix3<f64>) -> Result<SpdMatrix3> {
        if !is_rotation(r_cam, 1e-9) {
            return Err(Error::NotRotation);
        }
        let k = self.predict(state)?;
        clamp_eigenvalues(&k.sym().conjugate(&r_cam.transpose()), EIGEN_FLOOR, 1.0)
    }

    /// Mean squared error over the six world-frame parameters.
    pub fn mse(&self, labels: &[StiffnessLabel]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::Empty("no labels to evaluate"));
        }
        let mut total = 0.0;
        for l in labels {
            let target = cholesky_encode(&l.world_matrix()?)?.to_array();
            let got = self.predict_params(&l.state)?.to_array();
            total += target
                .iter()
                .zip(got)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / (6 * labels.len()) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::from)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let model: PolicyModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if model.format != MODEL_FORMAT {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("unsupported model format {:?}", model.format),
            });
        }
        Ok(model)
    }
}

fn average<'a>(items: impl Iterator<Item = (f64, &'a CholeskyParams)>) -> CholeskyParams {
    let mut acc = [0.0; 6];
    let mut wsum = 0.0;
    for (w, p) in items {
        wsum += w;
        for (a, v) in acc.iter_mut().zip(p.to_array()) {
            *a += w * v;
        }
    }
    CholeskyParams::from(acc.map(|a| a / wsum))
}

fn saturate(p: CholeskyParams) -> CholeskyParams {
    let [a1, a2, a3, l21, l31, l32] = p.to_array();
    let d = |a: f64| a.clamp(-MAX_LOG_DIAG, MAX_LOG_DIAG);
    let o = |l: f64| l.clamp(-MAX_OFF_DIAG, MAX_OFF_DIAG);
    CholeskyParams::from([d(a1), d(a2), d(a3), o(l21), o(l31), o(l32)])
}
