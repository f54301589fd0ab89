//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stiffness_core::cholesky::{cholesky_decode, cholesky_encode};
use stiffness_core::inference::{
    covariance_stiffness, env_stiffness, sectorize, InferenceConfig, SectorGrid,
};
use stiffness_core::labels::HMapConfig;
use stiffness_core::pipeline::{fit_task, run_offline, PipelineRun};
use stiffness_core::policy::Variant;
use stiffness_core::runtime::{
    baseline_command, damping_from_stiffness, rollout, tick, ImpedanceConfig, Mode,
    StiffnessPolicy, WallPressOperator, WallPressPlan,
};
use stiffness_core::sim::{radial, random_rotation, EnvKind, Environment};
use stiffness_core::spd::{log_euclidean_mean, spd_exp, spd_log, SpdMatrix3, SymMatrix3};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let checks: [(&str, Option<Duration>, Check); 8] = [
        (
            "spd geometry suite",
            Some(Duration::from_secs(5)),
            spd_suite,
        ),
        (
            "single-sector closed form",
            Some(Duration::from_secs(1)),
            closed_form,
        ),
        (
            "sampling-bias resistance",
            Some(Duration::from_secs(1)),
            sampling_bias,
        ),
        (
            "oracle stiffness recovery",
            Some(Duration::from_secs(30)),
            oracle_recovery,
        ),
        (
            "complementarity",
            Some(Duration::from_secs(10)),
            complementarity,
        ),
        ("runtime constants", None, runtime_constants),
        (
            "end-to-end shared control",
            Some(Duration::from_secs(60)),
            end_to_end,
        ),
        ("ema convergence", None, ema_convergence),
    ];
    let mut failed = 0;
    for (name, limit, check) in checks {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&result, limit) {
            if elapsed > limit {
                result = Err(format!("{detail}; took {elapsed:.2?}, limit {limit:.0?}"));
            }
        }
        match result {
            Ok(detail) => println!("PASS {name} [{elapsed:.2?}]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} [{elapsed:.2?}]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn rel(a: &SymMatrix3, b: &SymMatrix3) -> f64 {
    (*a - *b).frobenius_norm() / b.frobenius_norm()
}

fn random_spd(rng: &mut ChaCha8Rng) -> SpdMatrix3 {
    let q = random_rotation(rng, std::f64::consts::PI);
    let mut lam: [f64; 3] = std::array::from_fn(|_| rng.random_range(-4.0f64..4.0).exp());
    lam.sort_by(|a, b| b.total_cmp(a));
    SpdMatrix3::from_eigen(&q, lam).expect("random SPD")
}

fn spd_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mats: Vec<SpdMatrix3> = (0..1000).map(|_| random_spd(&mut rng)).collect();
    let (mut log_exp, mut det, mut chol) = (0.0f64, 0.0f64, 0.0f64);
    for (i, k) in mats.iter().enumerate() {
        let back = spd_exp(&spd_log(k)).map_err(|e| e.to_string())?;
        log_exp = log_exp.max(rel(back.sym(), k.sym()));

        let group: Vec<SpdMatrix3> = (0..5).map(|j| mats[(i + j) % mats.len()]).collect();
        let mean = log_euclidean_mean(&group).map_err(|e| e.to_string())?;
        let geo = (group.iter().map(|m| m.determinant().ln()).sum::<f64>() / 5.0).exp();
        det = det.max((mean.determinant() - geo).abs() / geo);

        let decoded = cholesky_decode(&cholesky_encode(k).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        chol = chol.max(rel(decoded.sym(), k.sym()));
    }
    ensure!(log_exp < 1e-8, "log/exp round trip error {log_exp:e}");
    ensure!(det < 1e-9, "mean determinant error {det:e}");
    ensure!(chol < 1e-10, "cholesky round trip error {chol:e}");
    Ok(format!(
        "max errors: log/exp {log_exp:.1e}, mean det {det:.1e}, cholesky {chol:.1e}"
    ))
}

fn closed_form() -> Result<String, String> {
    let eps = 1e-4;
    let reps = sectorize(&[Vector3::new(10.0, 0.0, 0.0)], &SectorGrid::default())
        .map_err(|e| e.to_string())?;
    ensure!(reps.len() == 1, "expected one sector, got {}", reps.len());
    let k = env_stiffness(&reps, eps, eps.sqrt()).map_err(|e| e.to_string())?;
    let expect = SymMatrix3::diag((100.0f64 + eps).sqrt(), eps.sqrt(), eps.sqrt());
    let err = (*k.sym() - expect)
        .entries()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(err < 1e-9, "max entry error {err:e}");
    Ok(format!("max entry error {err:.1e}"))
}

fn sampling_bias() -> Result<String, String> {
    let grid = SectorGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut forces = Vec::new();
    for (center, count, lo, hi) in [
        (Vector3::new(1.0, 0.2, 0.1), 40, 5.0, 15.0),
        (Vector3::new(-0.1, 1.0, 0.3), 12, 2.0, 4.0),
        (Vector3::new(0.2, -0.1, -1.0), 25, 8.0, 9.0),
    ] {
        for _ in 0..count {
            let jitter = Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            forces.push((center.normalize() + jitter).normalize() * rng.random_range(lo..hi));
        }
    }
    let estimate = |f: &[Vector3<f64>]| -> Result<(SymMatrix3, SymMatrix3), String> {
        let reps = sectorize(f, &grid).map_err(|e| e.to_string())?;
        let k = env_stiffness(&reps, 1e-4, 1e-2).map_err(|e| e.to_string())?;
        Ok((
            *k.sym(),
            covariance_stiffness(f).map_err(|e| e.to_string())?,
        ))
    };
    let (k0, c0) = estimate(&forces)?;
    let mut sectors: Vec<usize> = forces
        .iter()
        .map(|f| grid.sector_of(&f.normalize()))
        .collect();
    sectors.sort_unstable();
    sectors.dedup();
    ensure!(
        sectors.len() >= 3,
        "clusters collapsed into {} sectors",
        sectors.len()
    );

    let replicate = |which: &dyn Fn(usize) -> bool| -> Vec<Vector3<f64>> {
        forces
            .iter()
            .flat_map(|f| {
                let r = if which(grid.sector_of(&f.normalize())) {
                    10
                } else {
                    1
                };
                std::iter::repeat_n(*f, r)
            })
            .collect()
    };
    let (mut k_change, mut cov_change) = (0.0f64, f64::INFINITY);
    for &s in &sectors {
        let (k, c) = estimate(&replicate(&|t| t == s))?;
        k_change = k_change.max((k - k0).frobenius_norm());
        cov_change = cov_change.min(rel(&c, &c0));
    }
    let (k_all, _) = estimate(&replicate(&|_| true))?;
    k_change = k_change.max((k_all - k0).frobenius_norm());
    ensure!(k_change < 1e-9, "sector estimator changed by {k_change:e}");
    ensure!(
        cov_change > 0.10,
        "covariance estimator changed by only {:.1}%",
        cov_change * 100.0
    );
    Ok(format!(
        "sector estimator change {k_change:.1e}; covariance change ≥ {:.0}%",
        cov_change * 100.0
    ))
}

fn offline() -> Result<PipelineRun, String> {
    run_offline(
        &[EnvKind::Wall, EnvKind::Door, EnvKind::Slot, EnvKind::Free],
        16,
        7,
        &InferenceConfig::default(),
        &HMapConfig::default(),
    )
    .map_err(|e| e.to_string())
}

fn oracle_recovery() -> Result<String, String> {
    let f_min = SectorGrid::default().f_min;
    let run = run_offline(
        &[EnvKind::Wall, EnvKind::Door],
        16,
        7,
        &InferenceConfig::default(),
        &HMapConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for (demos, inferred) in run.demos.iter().zip(&run.inferred) {
        let task = demos[0].task;
        let (mut hits, mut total) = (0usize, 0usize);
        for (rec, k) in demos.iter().zip(inferred) {
            if Vector3::from(rec.force).norm() < f_min {
                continue;
            }
            let truth = match task {
                EnvKind::Wall => Vector3::x(),
                _ => radial(rec.state[0]),
            };
            total += 1;
            if k.k_e.eig().vector(0).dot(&truth).abs() >= 10f64.to_radians().cos() {
                hits += 1;
            }
        }
        let share = hits as f64 / total.max(1) as f64;
        ensure!(total > 0, "{task}: no contact records");
        ensure!(share >= 0.95, "{task}: {hits}/{total} within 10°");
        report.push(format!("{task} {hits}/{total}"));
    }
    Ok(format!("within 10°: {}", report.join(", ")))
}

fn complementarity() -> Result<String, String> {
    let run = offline()?;
    let inferred: Vec<_> = run.inferred.iter().flatten().collect();
    ensure!(
        inferred.len() == run.labels.labels.len(),
        "label count mismatch"
    );
    let (mut free, mut free_min, mut worst) = (0usize, f64::INFINITY, f64::NEG_INFINITY);
    for (label, k) in run.labels.labels.iter().zip(&inferred) {
        let world = label.world_matrix().map_err(|e| e.to_string())?;
        let eig = k.k_e.eig();
        let r: Vec<f64> = (0..3)
            .map(|i| world.sym().rayleigh(&eig.vector(i)))
            .collect();
        worst = worst.max((r[0] - r[1]).max(r[1] - r[2]));
        if k.m_valid == 0 {
            free += 1;
            free_min = free_min.min(world.eigenvalues()[2]);
        }
    }
    ensure!(worst <= 1e-9, "ordering violated by {worst:e}");
    ensure!(free > 0, "no free-space labels");
    ensure!(free_min >= 0.99, "free-space label eigenvalue {free_min}");
    Ok(format!(
        "{} labels reverse the environment ordering; {free} free-space labels, min eigenvalue {free_min:.6}",
        inferred.len()
    ))
}

fn runtime_constants() -> Result<String, String> {
    let cfg = ImpedanceConfig::default();
    ensure!(
        cfg.k_min == 300.0 && cfg.k_max == 3000.0,
        "bounds [{}, {}]",
        cfg.k_min,
        cfg.k_max
    );
    ensure!(cfg.alpha == 0.2, "alpha {}", cfg.alpha);
    let d =
        damping_from_stiffness(&SpdMatrix3::scaled_identity(2500.0).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(
        d.entries() == [70.0, 0.0, 0.0, 70.0, 0.0, 70.0],
        "damping at 2500 N/m: {:?}",
        d.entries()
    );
    let low = baseline_command(&cfg, Mode::Low, 0).map_err(|e| e.to_string())?;
    let high = baseline_command(&cfg, Mode::High, 0).map_err(|e| e.to_string())?;
    ensure!(
        low.k.entries() == [300.0, 0.0, 0.0, 300.0, 0.0, 300.0],
        "low stiffness"
    );
    ensure!(
        low.d.entries() == [20.0, 0.0, 0.0, 20.0, 0.0, 20.0],
        "low damping"
    );
    ensure!(
        high.k.entries() == [3000.0, 0.0, 0.0, 3000.0, 0.0, 3000.0],
        "high stiffness"
    );
    ensure!(
        high.d.entries() == [70.0, 0.0, 0.0, 70.0, 0.0, 70.0],
        "high damping"
    );
    Ok("bounds [300, 3000], alpha 0.2, d(2500) = 70, low (300, 20), high (3000, 70)".into())
}

fn end_to_end() -> Result<String, String> {
    let run = offline()?;
    let model =
        fit_task(&run.labels, EnvKind::Wall, Variant::default()).map_err(|e| e.to_string())?;
    let policy: Arc<dyn StiffnessPolicy> = Arc::new(model);
    let env = Environment::preset(EnvKind::Wall);
    let cfg = ImpedanceConfig::default();
    let plan = WallPressPlan::default();
    let settle = plan.hover_ticks + plan.approach_ticks + 90;
    let ticks = settle + 180;

    let mut press_force = Vec::new();
    let mut hover_min = f64::INFINITY;
    for mode in [Mode::Low, Mode::High, Mode::Copilot] {
        let mut op = WallPressOperator::new(&env, plan, 3).map_err(|e| e.to_string())?;
        let traj = rollout(&cfg, &env, mode, Some(policy.clone()), &mut op, ticks)
            .map_err(|e| e.to_string())?;
        let steady: Vec<f64> = traj
            .ticks
            .iter()
            .filter(|t| t.tick >= settle)
            .map(|t| t.force_norm())
            .collect();
        press_force.push(steady.iter().sum::<f64>() / steady.len() as f64);
        if mode == Mode::Copilot {
            hover_min = traj
                .ticks
                .iter()
                .filter(|t| op.is_hovering(t.tick))
                .map(|t| t.eig_lambda[2])
                .fold(f64::INFINITY, f64::min);
        }
    }
    let (low, high, copilot) = (press_force[0], press_force[1], press_force[2]);
    ensure!(
        copilot <= 1.5 * low,
        "copilot {copilot:.2} N vs low {low:.2} N"
    );
    ensure!(
        copilot <= 0.35 * high,
        "copilot {copilot:.2} N vs high {high:.2} N"
    );
    ensure!(
        hover_min >= 0.8 * cfg.k_max,
        "free-space stiffness {hover_min:.1} N/m"
    );
    Ok(format!(
        "steady force low {low:.2} N, high {high:.2} N, copilot {copilot:.2} N; free-space min stiffness {hover_min:.0} N/m"
    ))
}

fn ema_convergence() -> Result<String, String> {
    let cfg = ImpedanceConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random_rotation(&mut rng, std::f64::consts::PI);
    let output = SpdMatrix3::from_eigen(&q, [0.9, 0.4, 0.02]).map_err(|e| e.to_string())?;
    let start = SpdMatrix3::scaled_identity(1e-9).map_err(|e| e.to_string())?;
    let target = tick(&cfg, None, &output, 0).map_err(|e| e.to_string())?.k;

    let lifted = |k: &SpdMatrix3| -> Result<SymMatrix3, String> {
        Ok(spd_log(
            &SpdMatrix3::new(k.sym().add_identity(cfg.eps_ema)).map_err(|e| e.to_string())?,
        ))
    };
    let goal = lifted(&target)?;
    let mut cmd = tick(&cfg, None, &start, 0).map_err(|e| e.to_string())?;
    let mut dist = (lifted(&cmd.k)? - goal).frobenius_norm();
    let (initial, mut worst, mut converged_at) = (dist, 0.0f64, None);
    for i in 1..=200u64 {
        cmd = tick(&cfg, Some(&cmd), &output, i).map_err(|e| e.to_string())?;
        let next = (lifted(&cmd.k)? - goal).frobenius_norm();
        worst = worst.max((next - (1.0 - cfg.alpha) * dist).abs());
        dist = next;
        if converged_at.is_none() && dist < 1e-6 {
            converged_at = Some(i);
        }
    }
    ensure!(worst < 1e-9, "decay deviates from (1 - alpha) by {worst:e}");
    let at = converged_at.ok_or("no convergence within 200 ticks")?;
    ensure!(at <= 80, "converged after {at} ticks");
    Ok(format!(
        "decay error {worst:.1e}; log-distance {initial:.2} → < 1e-6 after {at} ticks"
    ))
}
