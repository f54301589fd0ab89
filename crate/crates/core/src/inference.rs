//! Environment stiffness from neighborhood contact forces.
//!
//! For each recorded state the forces of its `k` nearest neighbors (in
//! z-scored state space) are binned into fixed spherical sectors. Every
//! non-empty sector contributes one representative force `f̃` (mean direction,
//! high-percentile magnitude), and the representatives are combined with a
//! log-Euclidean mean:
//!
//! ```text
//! S_e = (1/m_valid) Σ log(f̃ f̃ᵀ + εI)
//! K_e = exp(S_e / 2)
//! ```
//!
//! Only the set of occupied directions and their magnitude distributions
//! matter, not how often a direction was sampled.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::DemoRecord;
use crate::sim::from_row_major;
use crate::spd::{spd_exp, spd_log, sym_eig, SpdMatrix3, SymMatrix3};
use crate::stats::{percentile_sorted, PercentileMethod};

/// Per-dimension z-score statistics (population standard deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions with zero variance; they normalize to 0.
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: state.len(),
            });
        }
        Ok(state
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.constant[j] {
                    0.0
                } else {
                    (x - self.mean[j]) / self.std[j]
                }
            })
            .collect())
    }
}

/// Z-scores every dimension of `raw` and returns the normalized rows with
/// their statistics.
pub fn normalize_states(raw: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, NormStats)> {
    if raw.len() < 2 {
        return Err(Error::param(
            "state normalization needs at least two records",
        ));
    }
    let d = raw[0].len();
    if let Some(bad) = raw.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let n = raw.len() as f64;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    let mut constant = vec![false; d];
    for j in 0..d {
        mean[j] = raw.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
        std[j] = var.sqrt();
        constant[j] = !(std[j] > 1e-12 * (1.0 + mean[j].abs()));
    }
    let stats = NormStats {
        mean,
        std,
        constant,
    };
    let rows = raw
        .iter()
        .map(|r| stats.apply(r))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, stats))
}

/// Demonstration data prepared for neighborhood queries.
#[derive(Clone, Debug)]
pub struct NormalizedDataset {
    pub states: Vec<Vec<f64>>,
    pub forces: Vec<Vector3<f64>>,
    pub cam_rots: Vec<Matrix3<f64>>,
    pub stats: NormStats,
}

impl NormalizedDataset {
    pub fn from_records(records: &[DemoRecord]) -> Result<Self> {
        let raw: Vec<Vec<f64>> = records.iter().map(|r| r.state.clone()).collect();
        let (states, stats) = normalize_states(&raw)?;
        Ok(Self {
            states,
            forces: records.iter().map(|r| Vector3::from(r.force)).collect(),
            cam_rots: records.iter().map(|r| from_row_major(&r.cam_rot)).collect(),
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Indices of the `k` rows nearest to `query` (Euclidean), nearest first.
/// Equal distances are ordered by lower index.
pub fn knn(query: &[f64], rows: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if k > rows.len() {
        return Err(Error::param(format!(
            "k = {k} exceeds the {} available records",
            rows.len()
        )));
    }
    let mut dist: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d2: f64 = r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by_distance);
        dist.truncate(k);
    }
    dist.sort_unstable_by(by_distance);
    Ok(dist.into_iter().map(|(_, i)| i).collect())
}

/// Regular grid on the unit sphere in spherical coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorGrid {
    pub azimuth_bins: usize,
    pub inclination_bins: usize,
    /// Forces weaker than this (N) are ignored.
    pub f_min: f64,
    /// Percentile of member magnitudes used for the representative.
    pub percentile: f64,
    pub method: PercentileMethod,
}

impl Default for SectorGrid {
    fn default() -> Self {
        Self {
            azimuth_bins: 8,
            inclination_bins: 4,
            f_min: 0.5,
            percentile: 95.0,
            method: PercentileMethod::Observed,
        }
    }
}

impl SectorGrid {
    pub fn validate(&self) -> Result<()> {
        if self.azimuth_bins < 2 || self.inclination_bins < 2 {
            return Err(Error::param("sector grid needs at least 2×2 bins"));
        }
        if !(self.f_min >= 0.0) {
            return Err(Error::param("f_min must be non-negative"));
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(Error::param("sector percentile must lie in [0, 100]"));
        }
        Ok(())
    }

    pub fn sectors(&self) -> usize {
        self.azimuth_bins * self.inclination_bins
    }

    /// Sector index of a unit direction.
    pub fn sector_of(&self, dir: &Vector3<f64>) -> usize {
        use std::f64::consts::{PI, TAU};
        let azimuth = dir.y.atan2(dir.x) + PI;
        let inclination = dir.z.clamp(-1.0, 1.0).acos();
        let a = ((azimuth / TAU * self.azimuth_bins as f64) as usize).min(self.azimuth_bins - 1);
        let i = ((inclination / PI * self.inclination_bins as f64) as usize)
            .min(self.inclination_bins - 1);
        i * self.azimuth_bins + a
    }
}

/// Surrogate force for one occupied sector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorRepresentative {
    pub sector: usize,
    pub direction: Vector3<f64>,
    pub magnitude: f64,
    pub count: usize,
}

impl SectorRepresentative {
    pub fn force(&self) -> Vector3<f64> {
        self.direction * self.magnitude
    }
}

/// Bins forces by direction and summarizes each occupied sector, in sector
/// order.
pub fn sectorize<'a>(
    forces: impl IntoIterator<Item = &'a Vector3<f64>>,
    grid: &SectorGrid,
) -> Result<Vec<SectorRepresentative>> {
    grid.validate()?;
    let mut members: Vec<Vec<(Vector3<f64>, f64)>> = vec![Vec::new(); grid.sectors()];
    for f in forces {
        let mag = f.norm();
        if !mag.is_finite() {
            return Err(Error::param("non-finite contact force"));
        }
        if mag < grid.f_min || mag == 0.0 {
            continue;
        }
        let dir = f / mag;
        members[grid.sector_of(&dir)].push((dir, mag));
    }
    let mut reps = Vec::new();
    for (sector, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        let sum: Vector3<f64> = m.iter().map(|(d, _)| d).sum();
        let mut mags: Vec<f64> = m.iter().map(|(_, s)| *s).collect();
        mags.sort_by(f64::total_cmp);
        reps.push(SectorRepresentative {
            sector,
            direction: sum.normalize(),
            magnitude: percentile_sorted(&mags, grid.percentile, grid.method)?,
            count: m.len(),
        });
    }
    Ok(reps)
}

/// Log-Euclidean aggregation of sector representatives, returned in force
/// units. With no representatives the result is `eps_free·I`.
pub fn env_stiffness(
    reps: &[SectorRepresentative],
    eps_reg: f64,
    eps_free: f64,
) -> Result<SpdMatrix3> {
    if reps.is_empty() {
        return SpdMatrix3::scaled_identity(eps_free);
    }
    if !(eps_reg > 0.0) {
        return Err(Error::param("eps_reg must be positive"));
    }
    let mut s_e = SymMatrix3::zeros();
    for r in reps {
        let outer = SpdMatrix3::new(SymMatrix3::outer(&r.force()).add_identity(eps_reg))?;
        s_e = s_e + spd_log(&outer);
    }
    spd_exp(&(s_e * (0.5 / reps.len() as f64)))
}

/// Covariance-based estimate `K² ∝ E[f fᵀ]`, kept for comparison. Returns
/// the PSD square root of the force second-moment matrix.
pub fn covariance_stiffness(forces: &[Vector3<f64>]) -> Result<SymMatrix3> {
    if forces.is_empty() {
        return Err(Error::Empty("covariance of zero forces"));
    }
    let second = forces
        .iter()
        .fold(SymMatrix3::zeros(), |acc, f| acc + SymMatrix3::outer(f))
        * (1.0 / forces.len() as f64);
    Ok(sym_eig(&second)?.map(|l| l.max(0.0).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Neighborhood size; must exceed the task-space dimension (3).
    pub k: usize,
    pub grid: SectorGrid,
    /// Isotropic regularizer added to each sector outer product (N²).
    pub eps_reg: f64,
    /// Isotropic stiffness assigned to neighborhoods without contact.
    pub eps_free: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        let eps_reg = 1e-4;
        Self {
            k: 32,
            grid: SectorGrid::default(),
            eps_reg,
            eps_free: eps_reg.sqrt(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::param(
                "k must exceed the task-space dimension (k ≥ 4)",
            ));
        }
        if !(self.eps_reg > 0.0) || !(self.eps_free > 0.0) {
            return Err(Error::param("regularizers must be positive"));
        }
        self.grid.validate()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InferredStiffness {
    pub k_e: SpdMatrix3,
    pub m_valid: usize,
}

impl InferredStiffness {
    pub fn to_record(&self, index: usize) -> crate::records::InferredRecord {
        crate::records::InferredRecord {
            index,
            k_e: self.k_e.entries(),
            m_valid: self.m_valid,
        }
    }
}

/// Environment stiffness around one normalized query state.
pub fn infer_at(
    query: &[f64],
    data: &NormalizedDataset,
    cfg: &InferenceConfig,
) -> Result<InferredStiffness> {
    let neighbors = knn(query, &data.states, cfg.k)?;
    let reps = sectorize(neighbors.iter().map(|&i| &data.forces[i]), &cfg.grid)?;
    Ok(InferredStiffness {
        k_e: env_stiffness(&reps, cfg.eps_reg, cfg.eps_free)?,
        m_valid: reps.len(),
    })
}

/// Environment stiffness for every record of the dataset, in record order.
pub fn infer_all(
    data: &NormalizedDataset,
    cfg: &InferenceConfig,
) -> Result<Vec<InferredStiffness>> {
    cfg.validate()?;
    if cfg.k > data.len() {
        return Err(Error::param(format!(
            "k = {} exceeds the {} available records",
            cfg.k,
            data.len()
        )));
    }
    data.states
        .par_iter()
        .map(|q| infer_at(q, data, cfg))
        .collect()
}
