//! Randomized invariants of the public API: vectorization round trips,
//! commutation identities, semigroup algebra, cone preservation, solver
//! inverses, driver increment laws, and exactness of the moment fit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use psou::calibration;
use psou::driftop::{extract_generator, recover_from_basis_action, DriftOperator};
use psou::oup::{propagate_with_jumps, simulate_path, stationary_moments, OuProcessSpec, SimOptions};
use psou::rng;
use psou::subordinators::{
    cp_factorize, discrete_qv, mixture_qv_moments, qv_moment_kernel, CpFactorization, DiagonalCp,
    GaussMixtureCp, JumpRecord, MixingLaw, MixingMoments, QvDriverKind, SubordinatorModel,
    TypeGbar,
};
use psou::symcore::{
    matrix_exponential, matrix_logarithm, psd_check, scaled_tol, CommutationMatrix, HalfVec,
    SymMat, PSD_TOL,
};

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn mat_from(d: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(d, d, entries)
}

fn sym_from(entries: Vec<f64>) -> SymMat {
    HalfVec::new(entries).unwrap().to_sym()
}

/// Shifts a random matrix left until its stability margin is -0.3.
fn stable_drift(d: usize, entries: &[f64]) -> DriftOperator {
    let a = mat_from(d, entries);
    let margin = DriftOperator::new(a.clone()).unwrap().stability().margin;
    DriftOperator::new(a - DMatrix::identity(d, d) * (margin + 0.3)).unwrap()
}

fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn square(max_d: usize, lo: f64, hi: f64) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=max_d).prop_flat_map(move |d| (Just(d), prop::collection::vec(lo..hi, d * d)))
}

fn sym(max_d: usize) -> impl Strategy<Value = SymMat> {
    (1usize..=max_d).prop_flat_map(|d| {
        prop::collection::vec(-1.0..1.0f64, tri_len(d)).prop_map(sym_from)
    })
}

fn gram_d(d: usize) -> BoxedStrategy<SymMat> {
    (1usize..=d + 1)
        .prop_flat_map(move |k| {
            prop::collection::vec(-1.0..1.0f64, d * k).prop_map(move |e| {
                let b = DMatrix::from_column_slice(d, k, &e);
                SymMat::symmetrize(&b * b.transpose())
            })
        })
        .boxed()
}

/// Gram plus a small ridge: strictly positive definite targets.
fn gram_pd_d(d: usize) -> BoxedStrategy<SymMat> {
    gram_d(d)
        .prop_map(move |g| {
            SymMat::symmetrize(g.as_matrix() + DMatrix::identity(d, d) * 0.05)
        })
        .boxed()
}

fn drift_and_sym(max_d: usize) -> impl Strategy<Value = (DriftOperator, SymMat)> {
    (1usize..=max_d).prop_flat_map(|d| {
        (
            prop::collection::vec(-1.0..1.0f64, d * d),
            prop::collection::vec(-1.0..1.0f64, tri_len(d)),
        )
            .prop_map(move |(ea, tri)| {
                (DriftOperator::new(mat_from(d, &ea)).unwrap(), sym_from(tri))
            })
    })
}

fn arb_diagonal_cp_d(d: usize) -> BoxedStrategy<SubordinatorModel> {
    (1usize..=d + 1)
        .prop_flat_map(move |k| {
            (
                prop::collection::vec(0.0..1.0f64, d * k),
                0.5..3.0f64,
                prop::collection::vec(0.0..0.5f64, d),
            )
                .prop_map(move |(be, lambda, ge)| {
                    SubordinatorModel::DiagonalCp(
                        DiagonalCp::new(
                            DMatrix::from_column_slice(d, k, &be),
                            lambda,
                            DVector::from_vec(ge),
                        )
                        .unwrap(),
                    )
                })
        })
        .boxed()
}

fn arb_gauss_cp_d(d: usize) -> BoxedStrategy<SubordinatorModel> {
    (gram_pd_d(d), 0.5..3.0f64, 0.2..2.0f64)
        .prop_map(|(c, rate, eps)| {
            let c = psd_check(&c, scaled_tol(PSD_TOL, &c)).unwrap();
            SubordinatorModel::GaussMixtureCp(
                GaussMixtureCp::new(rate, c, MixingLaw::Constant { value: eps }).unwrap(),
            )
        })
        .boxed()
}

fn arb_type_gbar_d(d: usize) -> BoxedStrategy<SubordinatorModel> {
    (gram_pd_d(d), 0.5..2.0f64, 0.5..2.0f64)
        .prop_map(|(c, delta, alpha)| {
            let c = psd_check(&c, scaled_tol(PSD_TOL, &c)).unwrap();
            SubordinatorModel::TypeGbar(
                TypeGbar::new(
                    c,
                    MixingLaw::Gig {
                        nu: -0.5,
                        delta,
                        alpha,
                    },
                )
                .unwrap(),
            )
        })
        .boxed()
}

fn arb_sampling_model(max_d: usize) -> impl Strategy<Value = SubordinatorModel> {
    (1usize..=max_d).prop_flat_map(|d| {
        prop_oneof![arb_diagonal_cp_d(d), arb_gauss_cp_d(d), arb_type_gbar_d(d)]
    })
}

proptest! {
    #[test]
    fn vech_round_trips(s in sym(6)) {
        let back = s.vech().to_sym();
        prop_assert_eq!(back.as_matrix(), s.as_matrix());
    }

    #[test]
    fn commutation_transposes_vec((d, e) in square(6, -1.0, 1.0)) {
        let m = mat_from(d, &e);
        let k = CommutationMatrix::new(d);
        let lhs = k.matrix() * vec_of(&m);
        let rhs = vec_of(&m.transpose());
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn commutation_swaps_kronecker_factors(
        (d, ea) in square(3, -1.0, 1.0),
        raw_b in prop::collection::vec(-1.0..1.0f64, 9),
    ) {
        let a = mat_from(d, &ea);
        let b = mat_from(d, &raw_b[..d * d]);
        let k = CommutationMatrix::new(d).matrix().clone();
        let lhs = &k * a.kronecker(&b) * &k;
        let rhs = b.kronecker(&a);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn trace_pairing_matches_vec_dot(
        (d, ex) in square(5, -1.0, 1.0),
        raw_y in prop::collection::vec(-1.0..1.0f64, 25),
    ) {
        let x = mat_from(d, &ex);
        let y = mat_from(d, &raw_y[..d * d]);
        let t = (x.transpose() * &y).trace();
        let dot = vec_of(&x).dot(&vec_of(&y));
        prop_assert!((t - dot).abs() <= 1e-12 * (1.0 + t.abs()));
    }

    #[test]
    fn log_of_exp_recovers_the_matrix((d, e) in square(3, -0.8, 0.8)) {
        let m = mat_from(d, &e);
        let em = matrix_exponential(&m, 1.0).unwrap();
        let back = matrix_logarithm(&em).unwrap();
        prop_assert!((back - &m).norm() <= 1e-8 * (1.0 + m.norm()));
    }

    #[test]
    fn gram_matrices_pass_psd_check(g in (1usize..=4).prop_flat_map(gram_d)) {
        prop_assert!(psd_check(&g, scaled_tol(PSD_TOL, &g)).is_ok());
    }

    #[test]
    fn semigroup_law(
        (op, x) in drift_and_sym(3),
        s in -1.5..1.5f64,
        t in -1.5..1.5f64,
    ) {
        let joint = op.evolve(s + t, &x).unwrap();
        let staged = op.evolve(s, &op.evolve(t, &x).unwrap()).unwrap();
        prop_assert!(
            (&joint - &staged).frobenius_norm() <= 1e-10 * (1.0 + joint.frobenius_norm())
        );
    }

    #[test]
    fn semigroup_preserves_the_cone(
        (op, g) in (1usize..=3).prop_flat_map(|d| {
            (prop::collection::vec(-1.0..1.0f64, d * d).prop_map(move |e| {
                DriftOperator::new(mat_from(d, &e)).unwrap()
            }), gram_d(d))
        }),
        t in -2.0..2.0f64,
    ) {
        let image = op.evolve(t, &g).unwrap();
        let low = image.eigenvalues().unwrap()[0];
        prop_assert!(low >= -1e-10, "eigmin {low} fell out of the cone");
    }

    #[test]
    fn generator_matches_the_semigroup((op, x) in drift_and_sym(3), t in 0.0..2.0f64) {
        let image = op.evolve(t, &x).unwrap();
        let big = matrix_exponential(op.generator_matrix(), t).unwrap();
        let lifted = big * x.to_vec();
        prop_assert!(
            (&lifted - image.to_vec()).norm() <= 1e-10 * (1.0 + lifted.norm())
        );
    }

    #[test]
    fn solve_small_inverts_apply(
        (op, x) in (1usize..=3).prop_flat_map(|d| {
            (
                prop::collection::vec(-1.0..1.0f64, d * d)
                    .prop_map(move |e| stable_drift(d, &e)),
                prop::collection::vec(-1.0..1.0f64, tri_len(d)).prop_map(sym_from),
            )
        }),
    ) {
        let y = op.apply(&x);
        let back = op.solve_small(&y).unwrap();
        prop_assert!((&back - &x).frobenius_norm() <= 1e-8 * (1.0 + x.frobenius_norm()));
        let forward = op.apply(&op.solve_small(&x).unwrap());
        prop_assert!((&forward - &x).frobenius_norm() <= 1e-8 * (1.0 + x.frobenius_norm()));
    }

    #[test]
    fn solve_big_inverts_the_lifted_operator(
        (op, v) in (1usize..=3).prop_flat_map(|d| {
            (
                prop::collection::vec(-1.0..1.0f64, d * d)
                    .prop_map(move |e| stable_drift(d, &e)),
                prop::collection::vec(-1.0..1.0f64, tri_len(d * d))
                    .prop_map(|tri| sym_from(tri).into_matrix()),
            )
        }),
    ) {
        let g = op.generator_matrix();
        let w = g * &v + &v * g.transpose();
        let back = op.solve_big(&w).unwrap();
        prop_assert!((back - &v).norm() <= 1e-8 * (1.0 + v.norm()));
    }

    #[test]
    fn basis_action_recovery_is_exact((d, e) in square(4, -2.0, 2.0)) {
        let op = DriftOperator::new(mat_from(d, &e)).unwrap();
        let images: Vec<SymMat> = (0..d).map(|i| op.apply(&SymMat::basis_diag(d, i))).collect();
        let recovered = recover_from_basis_action(&images).unwrap();
        prop_assert_eq!(recovered.a(), op.a());
    }

    #[test]
    fn semigroup_extraction_recovers_the_drift((d, e) in square(4, -2.0, 2.0)) {
        let op = DriftOperator::new(mat_from(d, &e)).unwrap();
        let semigroup = |t: f64, x: &SymMat| op.evolve(t, x).unwrap();
        let recovered = extract_generator(&semigroup, d).unwrap();
        prop_assert!(
            (recovered.a() - op.a()).norm() <= 1e-5 * (1.0 + op.a().norm())
        );
    }

    #[test]
    fn sampled_increments_stay_in_the_cone(
        model in arb_sampling_model(3),
        seed in any::<u64>(),
        dt in 0.05..1.0f64,
    ) {
        let mut r = rng::stream(seed, 0);
        let inc = model.sample_increment(dt, &mut r).unwrap();
        prop_assert!(psd_check(&inc.increment, PSD_TOL).is_ok());
        for rec in &inc.jumps {
            prop_assert!(psd_check(&rec.jump, PSD_TOL).is_ok());
            prop_assert!(rec.time >= 0.0 && rec.time <= dt);
        }
    }

    #[test]
    fn discrete_qv_rank_and_trace(
        (d, k, flat) in (1usize..=4, 1usize..=5).prop_flat_map(|(d, k)| {
            (Just(d), Just(k), prop::collection::vec(-1.0..1.0f64, d * k))
        }),
    ) {
        let jumps: Vec<DVector<f64>> = flat.chunks(d).map(DVector::from_column_slice).collect();
        let qv = discrete_qv(&jumps);
        let scale = 1.0 + qv.max_abs();
        let ev = qv.eigenvalues().unwrap();
        let rank = ev.iter().filter(|l| **l > 1e-10 * scale).count();
        prop_assert!(rank <= k);
        let trace: f64 = (0..d).map(|i| qv.entry(i, i)).sum();
        let want: f64 = jumps.iter().map(|x| x.norm_squared()).sum();
        prop_assert!((trace - want).abs() <= 1e-12 * (1.0 + want));
    }

    #[test]
    fn qv_moment_kernel_is_symmetric_psd(c in (1usize..=3).prop_flat_map(gram_pd_d)) {
        let kernel = qv_moment_kernel(&c);
        prop_assert_eq!(&kernel, &kernel.transpose());
        let scale = 1.0 + kernel.amax();
        let ev = kernel.clone().symmetric_eigenvalues();
        prop_assert!(ev.iter().all(|l| *l >= -1e-10 * scale));
    }

    #[test]
    fn mixture_qv_variances_are_symmetric_psd(
        c in (1usize..=3).prop_flat_map(gram_pd_d),
        mean_eps in 0.1..2.0f64,
        var_eps in 0.0..1.5f64,
        rate in 0.5..3.0f64,
        compound in any::<bool>(),
    ) {
        let target = psd_check(&c, scaled_tol(PSD_TOL, &c)).unwrap();
        let mix = MixingMoments::new(mean_eps, var_eps).unwrap();
        let kind = if compound {
            QvDriverKind::CompoundPoisson { rate }
        } else {
            QvDriverKind::TypeGbar
        };
        let qm = mixture_qv_moments(kind, &mix, &target).unwrap();
        prop_assert_eq!(&qm.var_vec, &qm.var_vec.transpose());
        let scale = 1.0 + qm.var_vec.amax();
        let ev = qm.var_vec.clone().symmetric_eigenvalues();
        prop_assert!(ev.iter().all(|l| *l >= -1e-10 * scale));
        let mean_low = qm.mean.eigenvalues().unwrap()[0];
        prop_assert!(mean_low >= -1e-10 * (1.0 + qm.mean.max_abs()));
    }

    #[test]
    fn char_exponent_vanishes_at_zero_and_conjugates(
        (model, z) in (1usize..=3).prop_flat_map(|d| {
            (
                prop_oneof![arb_diagonal_cp_d(d), arb_gauss_cp_d(d)],
                prop::collection::vec(-1.0..1.0f64, tri_len(d)).prop_map(sym_from),
            )
        }),
    ) {
        let zero = model.char_exponent(&SymMat::zeros(model.dim())).unwrap();
        prop_assert_eq!(zero, Complex64::new(0.0, 0.0));
        let plus = model.char_exponent(&z).unwrap();
        let minus = model.char_exponent(&z.scale(-1.0)).unwrap();
        prop_assert!((minus - plus.conj()).norm() <= 1e-12 * (1.0 + plus.norm()));
    }

    #[test]
    fn closed_form_moment_reports_satisfy_their_invariants(
        (op, model) in (1usize..=3).prop_flat_map(|d| {
            (
                prop::collection::vec(-1.0..1.0f64, d * d)
                    .prop_map(move |e| stable_drift(d, &e)),
                prop_oneof![arb_diagonal_cp_d(d), arb_gauss_cp_d(d)],
            )
        }),
        h in 0.01..2.0f64,
    ) {
        let report = stationary_moments(&op, &model, &[0.0, h]).unwrap();
        let v = &report.var_vec;
        prop_assert!((v - v.transpose()).norm() <= 1e-9 * (1.0 + v.norm()));
        let scale = 1.0 + v.amax();
        let ev = v.clone().symmetric_eigenvalues();
        prop_assert!(ev.iter().all(|l| *l >= -1e-8 * scale));
        prop_assert!((&report.autocov[0].1 - v).norm() <= 1e-12 * scale);
        let mean_low = report.mean.eigenvalues().unwrap()[0];
        prop_assert!(mean_low >= -1e-10 * (1.0 + report.mean.max_abs()));
    }

    #[test]
    fn jump_propagation_has_the_flow_property(
        (op, gamma, start, jumps) in (1usize..=3).prop_flat_map(|d| {
            (
                prop::collection::vec(-1.0..1.0f64, d * d)
                    .prop_map(move |e| DriftOperator::new(mat_from(d, &e)).unwrap()),
                gram_d(d),
                gram_d(d),
                prop::collection::vec((0.001..0.999f64, gram_d(d)), 0..5),
            )
        }),
    ) {
        let mut jumps: Vec<JumpRecord> = jumps
            .into_iter()
            .map(|(time, jump)| JumpRecord { time, jump })
            .collect();
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
        let full = propagate_with_jumps(&op, &gamma, &start, &jumps, 1.0).unwrap();
        let first: Vec<JumpRecord> = jumps.iter().filter(|r| r.time < 0.5).cloned().collect();
        let second: Vec<JumpRecord> = jumps
            .iter()
            .filter(|r| r.time >= 0.5)
            .map(|r| JumpRecord {
                time: r.time - 0.5,
                jump: r.jump.clone(),
            })
            .collect();
        let mid = propagate_with_jumps(&op, &gamma, &start, &first, 0.5).unwrap();
        let staged = propagate_with_jumps(&op, &gamma, &mid, &second, 0.5).unwrap();
        prop_assert!(
            (&staged - &full).frobenius_norm() <= 1e-10 * (1.0 + full.frobenius_norm())
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulated_paths_stay_in_the_cone(
        (op, model, start) in (1usize..=3).prop_flat_map(|d| {
            (
                prop::collection::vec(-1.0..1.0f64, d * d)
                    .prop_map(move |e| DriftOperator::new(mat_from(d, &e)).unwrap()),
                prop_oneof![arb_diagonal_cp_d(d), arb_gauss_cp_d(d), arb_type_gbar_d(d)],
                gram_d(d),
            )
        }),
        seed in any::<u64>(),
    ) {
        let sigma0 = psd_check(&start, scaled_tol(PSD_TOL, &start)).unwrap();
        let spec = OuProcessSpec::with_options(
            op,
            model,
            sigma0,
            SimOptions {
                grid_step: 0.1,
                ..SimOptions::default()
            },
        )
        .unwrap();
        let mut r = rng::stream(seed, 0);
        let path = simulate_path(&spec, 0.5, &mut r).unwrap();
        for s in &path.states {
            let low = s.eigenvalues().unwrap()[0];
            prop_assert!(low >= -1e-10 * (1.0 + s.frobenius_norm()));
        }
    }

    #[test]
    fn mom_fit_inverts_clean_moments(
        (op, model) in (1usize..=3).prop_flat_map(|d| {
            (
                prop::collection::vec(-1.0..1.0f64, d * d)
                    .prop_map(move |e| stable_drift(d, &e)),
                arb_gauss_cp_d(d),
            )
        }),
        h in 0.05..0.3f64,
    ) {
        let report = stationary_moments(&op, &model, &[h]).unwrap();
        let fit = calibration::mom_fit(&report).unwrap();
        let scale = 1.0 + op.a().norm();
        prop_assert!((fit.a_hat.a() - op.a()).norm() <= 1e-8 * scale);
        let truth = model.moments().unwrap();
        prop_assert!(
            (&fit.mean_l - &truth.mean).frobenius_norm()
                <= 1e-8 * (1.0 + truth.mean.frobenius_norm())
        );
        prop_assert!(
            (&fit.var_vec_l - &truth.var_vec).norm() <= 1e-8 * (1.0 + truth.var_vec.norm())
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cp_factorize_recovers_gram_targets(
        (d, k, be) in (1usize..=3, 1usize..=3).prop_flat_map(|(d, k)| {
            (Just(d), Just(k), prop::collection::vec(0.0..1.0f64, d * k))
        }),
    ) {
        let b = DMatrix::from_column_slice(d, k, &be);
        let c = SymMat::symmetrize(&b * b.transpose());
        let rank = d * (d + 1) / 2;
        match cp_factorize(&c, rank.max(k), 1e-7).unwrap() {
            CpFactorization::Found { b: factor, residual } => {
                prop_assert!(factor.iter().all(|v| *v >= 0.0));
                let rec = SymMat::symmetrize(&factor * factor.transpose());
                prop_assert!(
                    (&rec - &c).frobenius_norm() <= 1e-6 * (1.0 + c.frobenius_norm())
                );
                prop_assert!(residual.is_finite());
            }
            CpFactorization::NotFound { best_residual } => {
                prop_assert!(false, "factorization missed a Gram target, best {best_residual}");
            }
        }
    }
}
