use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

use stiffness_core::cholesky::{cholesky_decode, cholesky_encode, CholeskyParams};
use stiffness_core::inference::{env_stiffness, sectorize, SectorGrid};
use stiffness_core::labels::{
    camera_frame_label, robot_eigs, HMapConfig, KappaBounds, StiffnessLabel,
};
use stiffness_core::policy::{fit, Variant};
use stiffness_core::runtime::{damping_from_stiffness, scale_stiffness};
use stiffness_core::sim::{row_major, EnvKind};
use stiffness_core::spd::{
    log_euclidean_mean, spd_ema, spd_exp, spd_log, sym_eig, SpdMatrix3, SymMatrix3,
};

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (-3.2f64..3.2, -1.6f64..1.6, -3.2f64..3.2)
        .prop_map(|(r, p, y)| *Rotation3::from_euler_angles(r, p, y).matrix())
}

fn spd() -> impl Strategy<Value = SpdMatrix3> {
    (rotation(), prop::array::uniform3(-4.0f64..4.0)).prop_map(|(q, logs)| {
        let mut lam = logs.map(f64::exp);
        lam.sort_by(|a, b| b.total_cmp(a));
        SpdMatrix3::from_eigen(&q, lam).unwrap()
    })
}

fn force() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-20.0f64..20.0).prop_map(Vector3::from)
}

fn rel(a: &SymMatrix3, b: &SymMatrix3) -> f64 {
    (*a - *b).frobenius_norm() / b.frobenius_norm().max(1e-300)
}

fn estimate(forces: &[Vector3<f64>]) -> SymMatrix3 {
    let reps = sectorize(forces, &SectorGrid::default()).unwrap();
    *env_stiffness(&reps, 1e-4, 1e-2).unwrap().sym()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn eigendecomposition_reconstructs(e in prop::array::uniform6(-100.0f64..100.0), repeat in 0usize..3) {
        // exercise repeated eigenvalues too
        let m = match repeat {
            0 => SymMatrix3::from(e),
            1 => SymMatrix3::scaled_identity(e[0]),
            _ => SymMatrix3::from_eigen(&Matrix3::identity(), &[e[0], e[0], e[1]]),
        };
        let eig = sym_eig(&m).unwrap();
        let q = eig.q;
        prop_assert!((q.transpose() * q - Matrix3::identity()).norm() < 1e-12);
        prop_assert!((q.determinant() - 1.0).abs() < 1e-12);
        prop_assert!(eig.lambda[0] >= eig.lambda[1] && eig.lambda[1] >= eig.lambda[2]);
        let scale = m.frobenius_norm().max(1.0);
        // the sweep stops once the off-diagonal norm falls below 1e-12 relative
        prop_assert!((eig.reconstruct() - m).frobenius_norm() < 2e-12 * scale);
    }

    #[test]
    fn log_exp_round_trip(k in spd()) {
        let back = spd_exp(&spd_log(&k)).unwrap();
        prop_assert!(rel(back.sym(), k.sym()) < 1e-8);
    }

    #[test]
    fn mean_determinant_is_geometric_mean(mats in prop::collection::vec(spd(), 1..8)) {
        let mean = log_euclidean_mean(&mats).unwrap();
        let geo = (mats.iter().map(|m| m.determinant().ln()).sum::<f64>() / mats.len() as f64).exp();
        prop_assert!((mean.determinant() - geo).abs() <= 1e-9 * geo);
    }

    #[test]
    fn cholesky_decode_is_total(p in prop::array::uniform6(-3.0f64..3.0)) {
        let k = cholesky_decode(&CholeskyParams::from(p)).unwrap();
        prop_assert!(k.eigenvalues()[2] > 0.0);
        let back = cholesky_encode(&k).unwrap().to_array();
        for (a, b) in back.iter().zip(p) {
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn cholesky_round_trip(k in spd()) {
        let back = cholesky_decode(&cholesky_encode(&k).unwrap()).unwrap();
        prop_assert!(rel(back.sym(), k.sym()) < 1e-10);
    }

    #[test]
    fn commuting_ema_interpolates_geometrically(
        q in rotation(),
        a in prop::array::uniform3(0.1f64..100.0),
        b in prop::array::uniform3(0.1f64..100.0),
        alpha in 0.01f64..1.0,
    ) {
        let prev = SpdMatrix3::new(SymMatrix3::from_eigen(&q, &a)).unwrap();
        let raw = SpdMatrix3::new(SymMatrix3::from_eigen(&q, &b)).unwrap();
        let out = spd_ema(&prev, &raw, alpha, 0.0).unwrap();
        for i in 0..3 {
            let expect = a[i].powf(1.0 - alpha) * b[i].powf(alpha);
            let got = out.sym().rayleigh(&q.column(i).into_owned());
            prop_assert!((got - expect).abs() < 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn ema_stays_within_input_eigenvalue_range(prev in spd(), raw in spd(), alpha in 0.01f64..1.0) {
        let out = spd_ema(&prev, &raw, alpha, 1e-6).unwrap();
        let lo = prev.eigenvalues()[2].min(raw.eigenvalues()[2]);
        let hi = prev.eigenvalues()[0].max(raw.eigenvalues()[0]);
        let l = out.eigenvalues();
        prop_assert!(l[2] >= lo * (1.0 - 1e-9) && l[0] <= hi * (1.0 + 1e-9));
    }

    #[test]
    fn inference_is_equivariant_under_quarter_turns(forces in prop::collection::vec(force(), 1..40), turns in 1u32..4) {
        // quarter turns about z map the sector grid onto itself
        let r = *Rotation3::from_axis_angle(&Vector3::z_axis(), turns as f64 * std::f64::consts::FRAC_PI_2).matrix();
        let grid = SectorGrid::default();
        let rotated: Vec<_> = forces.iter().map(|f| r * f).collect();
        let sector = |f: &Vector3<f64>| (f.norm() > 0.0).then(|| grid.sector_of(&f.normalize()));
        let same_partition = (0..forces.len()).all(|i| {
            (0..forces.len()).all(|j| {
                (sector(&forces[i]) == sector(&forces[j])) == (sector(&rotated[i]) == sector(&rotated[j]))
            })
        });
        prop_assume!(same_partition);
        let expect = estimate(&forces).conjugate(&r);
        prop_assert!(rel(&estimate(&rotated), &expect) < 1e-9);
    }

    #[test]
    fn inference_ignores_record_order(forces in prop::collection::vec(force(), 1..40), seed in any::<u64>()) {
        let mut shuffled = forces.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let err = rel(&estimate(&shuffled), &estimate(&forces));
        prop_assert!(err < 1e-9, "{err:e}");
    }

    #[test]
    fn inference_ignores_uniform_replication(forces in prop::collection::vec(force(), 1..30), r in 2usize..12) {
        let rep: Vec<_> = forces.iter().flat_map(|f| std::iter::repeat_n(*f, r)).collect();
        prop_assert!((estimate(&rep) - estimate(&forces)).frobenius_norm() < 1e-9);
    }

    #[test]
    fn labels_reverse_environment_ordering(k_e in spd(), cam in rotation(), lo in 0.01f64..1.0, span in 0.5f64..100.0) {
        let cfg = HMapConfig::default();
        let bounds = KappaBounds::new(lo, lo + span).unwrap();
        let eig = k_e.eig();
        let lam = robot_eigs(eig.lambda, &cfg, &bounds).unwrap();
        prop_assert!(lam[0] <= lam[1] && lam[1] <= lam[2]);
        let label = camera_frame_label(&eig.q, lam, &cam).unwrap();
        let world = label.sym().conjugate(&cam);
        let r: Vec<f64> = (0..3).map(|i| world.rayleigh(&eig.vector(i))).collect();
        prop_assert!(r[0] <= r[1] + 1e-9 && r[1] <= r[2] + 1e-9);
        for l in label.eigenvalues() {
            prop_assert!((0.0..=1.0 + 1e-9).contains(&l));
        }
    }

    #[test]
    fn camera_label_has_requested_spectrum(q in rotation(), cam in rotation(), lam in prop::array::uniform3(0.0f64..1.0)) {
        let mut lam = lam;
        lam.sort_by(|a, b| b.total_cmp(a));
        let label = camera_frame_label(&q, lam, &cam).unwrap();
        let q_r = cam.transpose() * q;
        for (i, l) in lam.iter().enumerate() {
            let v = q_r.column(i).into_owned();
            prop_assert!((label.sym().mul_vec(&v) - v * l.max(1e-9)).norm() < 1e-9);
        }
    }

    #[test]
    fn labels_conjugate_with_the_camera(q in rotation(), a in rotation(), b in rotation(), lam in prop::array::uniform3(0.0f64..1.0)) {
        let ka = camera_frame_label(&q, lam, &a).unwrap();
        let kb = camera_frame_label(&q, lam, &b).unwrap();
        let expect = ka.sym().conjugate(&(b.transpose() * a));
        prop_assert!((*kb.sym() - expect).frobenius_norm() < 1e-9);
    }

    #[test]
    fn scaled_stiffness_and_damping_respect_bounds(q in rotation(), lam in prop::array::uniform3(1e-9f64..1.0)) {
        let mut lam = lam;
        lam.sort_by(|a, b| b.total_cmp(a));
        let k = scale_stiffness(&SpdMatrix3::from_eigen(&q, lam).unwrap(), 300.0, 3000.0).unwrap();
        for l in k.eigenvalues() {
            prop_assert!((300.0 - 1e-6..=3000.0 + 1e-6).contains(&l));
        }
        let d = damping_from_stiffness(&k).unwrap();
        for i in 0..3 {
            let v = k.eig().vector(i);
            let expect = 1.4 * k.eigenvalues()[i].sqrt();
            prop_assert!((d.sym().mul_vec(&v) - v * expect).norm() < 1e-9);
        }
    }
}

fn training_labels(n: usize, seed: u64) -> Vec<StiffnessLabel> {
    (0..n)
        .map(|i| {
            let x = (i as f64 * 0.37 + seed as f64).sin();
            let y = (i as f64 * 1.3).cos();
            let k = cholesky_decode(&CholeskyParams::from([
                -0.5 + 0.3 * x,
                -1.0 + y,
                -2.0,
                0.2 * x * y,
                0.1,
                -0.3 * y,
            ]))
            .unwrap();
            StiffnessLabel {
                task: EnvKind::Wall,
                demo: 0,
                t: i as f64,
                state: vec![x, y, x * y],
                frame: Default::default(),
                cam_rot: row_major(&Matrix3::identity()),
                params: cholesky_encode(&k).unwrap(),
                m_valid: 1,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn policy_output_is_always_bounded(state in prop::array::uniform3(-1e6f64..1e6), k in 1usize..8, lambda in 0.0f64..10.0) {
        let labels = training_labels(20, 1);
        for variant in [Variant::Knn { k }, Variant::LinearRidge { lambda }] {
            let model = fit(&labels, variant).unwrap();
            let out = model.predict(&state).unwrap();
            for l in out.eigenvalues() {
                prop_assert!((1e-9..=1.0).contains(&l));
            }
        }
    }

    #[test]
    fn ridge_penalty_never_lowers_training_error(a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let labels = training_labels(25, 2);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let e_lo = fit(&labels, Variant::LinearRidge { lambda: lo }).unwrap().mse(&labels).unwrap();
        let e_hi = fit(&labels, Variant::LinearRidge { lambda: hi }).unwrap().mse(&labels).unwrap();
        prop_assert!(e_hi >= e_lo - 1e-12);
    }
}
