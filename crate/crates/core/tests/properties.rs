//! Randomized structural invariants.

use lindblad_diffusion::fiber_dynamics::{
    build_fiber_generator, characteristic_function, evolve_fiber, fiber_trace, RankOneFibers,
};
use lindblad_diffusion::model::{builtin_model, ModelSpec};
use lindblad_diffusion::perturbation::{reduced_resolvent_solve, transport_coefficients};
use lindblad_diffusion::torus::{fiber_of_rank_one, integrate, make_grid, pairing, RankOneTerm, Site};
use lindblad_diffusion::zero_fiber::{build_generator, stationary};
use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C;
use proptest::prelude::*;
use serde_json::json;

fn kraus_model(c1: (f64, f64), c2: (f64, f64), h2: f64, scale: f64) -> ModelSpec {
    builtin_model(
        "mult-kraus",
        &json!({
            "u": [
                {"c": [1.0, 0.0], "n": [0]},
                {"c": [c1.0, c1.1], "n": [1]},
                {"c": [c2.0, c2.1], "n": [-2], "m": [1]}
            ],
            "dispersion": {"terms": [{"coef": -1.0, "n": [1]}, {"coef": h2, "n": [2], "kind": "sin"}]},
            "rate_scale": scale
        }),
    )
    .unwrap()
}

fn coef() -> impl Strategy<Value = (f64, f64)> {
    (-0.4f64..0.4, -0.4f64..0.4)
}

fn grid_n() -> impl Strategy<Value = usize> {
    prop_oneof![Just(8usize), Just(10), Just(12), Just(16)]
}

fn site1(x: i64) -> Site {
    let mut s = [0; 2];
    s[0] = x;
    s
}

fn wavefunction() -> impl Strategy<Value = Vec<(Site, C)>> {
    prop::collection::vec((-3i64..=3, -1.0f64..1.0, -1.0f64..1.0), 1..4)
        .prop_map(|v| v.into_iter().map(|(x, a, b)| (site1(x), C::new(a, b))).collect())
}

fn rank3() -> impl Strategy<Value = Vec<RankOneTerm>> {
    prop::collection::vec((wavefunction(), wavefunction(), -1.0f64..1.0, -1.0f64..1.0), 3).prop_map(|v| {
        v.into_iter()
            .map(|(f, g, a, b)| RankOneTerm { weight: C::new(a, b), f, g })
            .collect()
    })
}

fn min_eig(m: &Array2<f64>) -> f64 {
    let (vals, _) = m.eigh(UPLO::Upper).unwrap();
    vals.iter().cloned().fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_columns_sum_to_zero(c1 in coef(), c2 in coef(), h2 in -0.5f64..0.5, n in grid_n()) {
        let spec = kraus_model(c1, c2, h2, 1.0);
        let grid = make_grid(1, n).unwrap();
        let a = build_generator(&spec, &grid).unwrap();
        let worst = a.column_sums().iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-13, "column sum {worst:e}");
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                if i != j {
                    prop_assert!(a.matrix[[i, j]].re >= 0.0 && a.matrix[[i, j]].im.abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn stationary_is_a_density(c1 in coef(), c2 in coef(), n in grid_n()) {
        let spec = kraus_model(c1, c2, 0.0, 1.0);
        let grid = make_grid(1, n).unwrap();
        let st = stationary(&build_generator(&spec, &grid).unwrap()).unwrap();
        prop_assert!((integrate(&grid, &st.p).unwrap() - C::new(1.0, 0.0)).norm() < 1e-12);
        prop_assert!(st.p.values.iter().all(|z| z.re > 0.0 && z.im.abs() < 1e-14));
        prop_assert!(st.gap > 0.0);
    }

    #[test]
    fn zero_fiber_evolution_conserves_trace(c1 in coef(), c2 in coef(), t in 0.0f64..100.0, re in prop::collection::vec(-1.0f64..1.0, 12)) {
        let spec = kraus_model(c1, c2, 0.2, 1.0);
        let grid = make_grid(1, 12).unwrap();
        let a = build_generator(&spec, &grid).unwrap();
        let f0 = lindblad_diffusion::torus::GridFunction::from_real(grid, &re).unwrap();
        let ft = evolve_fiber(&a, &f0, t).unwrap();
        let drift = (integrate(&grid, &ft).unwrap() - integrate(&grid, &f0).unwrap()).norm();
        prop_assert!(drift <= 1e-10, "trace drift {drift:e}");
    }

    #[test]
    fn reduced_resolvent_inverts_off_the_kernel(c1 in coef(), c2 in coef(), re in prop::collection::vec(-1.0f64..1.0, 10)) {
        let spec = kraus_model(c1, c2, 0.0, 1.0);
        let grid = make_grid(1, 10).unwrap();
        let a = build_generator(&spec, &grid).unwrap();
        let st = stationary(&a).unwrap();
        let y = lindblad_diffusion::torus::GridFunction::from_real(grid, &re).unwrap();
        let x = reduced_resolvent_solve(&a, &st.p, &y).unwrap();
        let one = grid.constant(C::new(1.0, 0.0));
        prop_assert!(pairing(&one, &x).unwrap().norm() < 1e-12);
        let mass = pairing(&one, &y).unwrap();
        let lhs = a.apply(&x).unwrap().scale(C::new(-1.0, 0.0));
        let rhs = lindblad_diffusion::torus::GridFunction::new(grid, &y.values - &st.p.values.mapv(|p| p * mass)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-11);
    }

    #[test]
    fn characteristic_function_is_hermitian_and_bounded(c1 in coef(), g in 0.05f64..2.0, t in 1.0f64..50.0) {
        let spec = kraus_model(c1, (0.0, 0.0), 0.0, 1.0);
        let grid = make_grid(1, 16).unwrap();
        let init = RankOneFibers::new(vec![RankOneTerm::pure(vec![(site1(0), C::new(0.8, 0.0)), (site1(1), C::new(0.0, 0.6))])]).unwrap();
        let plus = characteristic_function(&spec, &grid, &init, t, &[g], &[0.0]).unwrap();
        let minus = characteristic_function(&spec, &grid, &init, t, &[-g], &[0.0]).unwrap();
        prop_assert!((plus - minus.conj()).norm() < 1e-10);
        prop_assert!(plus.norm() <= 1.0 + 1e-10);
    }

    #[test]
    fn fiber_shift_relation(terms in rank3(), gamma in -1.5f64..1.5, p in -1.5f64..1.5) {
        // [e^{iγX/2} ρ e^{iγX/2}]_p = [ρ]_{p+γ}
        let grid = make_grid(1, 16).unwrap();
        let shifted: Vec<RankOneTerm> = terms.iter().map(|t| t.phase_shifted(&[gamma, 0.0], 1)).collect();
        let lhs = fiber_of_rank_one(&shifted, &[p, 0.0], &grid).unwrap();
        let rhs = fiber_of_rank_one(&terms, &[p + gamma, 0.0], &grid).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn fiber_trace_at_zero_is_the_trace(terms in rank3(), t in 0.0f64..10.0) {
        let spec = builtin_model("identity-noise", &json!({})).unwrap();
        let grid = make_grid(1, 16).unwrap();
        let init = RankOneFibers::new(terms.clone()).unwrap();
        let got = fiber_trace(&spec, &grid, &init, t, &[0.0]).unwrap();
        let trace: C = terms
            .iter()
            .map(|term| {
                let inner: C = term
                    .g
                    .iter()
                    .flat_map(|(x, b)| term.f.iter().filter(move |(y, _)| y == x).map(move |(_, a)| b.conj() * a))
                    .sum();
                term.weight * inner
            })
            .sum();
        prop_assert!((got - trace).norm() < 1e-12, "{got} vs {trace}");
    }

    #[test]
    fn transport_matrices_are_positive(c1 in coef(), c2 in coef(), h2 in -0.5f64..0.5) {
        let spec = kraus_model(c1, c2, h2, 1.0);
        let grid = make_grid(1, 16).unwrap();
        let rep = transport_coefficients(&spec, &grid).unwrap();
        prop_assert!(min_eig(&rep.sigma) >= -1e-8);
        prop_assert!(min_eig(&rep.alpha) >= -1e-8);
        prop_assert!(rep.imag_residual <= 1e-8);
    }

    #[test]
    fn rate_scaling_divides_alpha(c1 in coef(), s in 0.3f64..3.0) {
        let spec = kraus_model(c1, (0.1, 0.0), 0.0, 1.0);
        let grid = make_grid(1, 12).unwrap();
        let a1 = transport_coefficients(&spec, &grid).unwrap();
        let a2 = transport_coefficients(&spec.with_rate_scale(s), &grid).unwrap();
        prop_assert!((a2.alpha[[0, 0]] * s - a1.alpha[[0, 0]]).abs() <= 1e-10 * a1.alpha[[0, 0]].abs().max(1.0));
        prop_assert!((a2.gap - s * a1.gap).abs() <= 1e-10 * s);
    }

    #[test]
    fn fiber_generator_at_zero_is_the_generator(c1 in coef(), c2 in coef(), n in grid_n()) {
        let spec = kraus_model(c1, c2, 0.3, 1.0);
        let grid = make_grid(1, n).unwrap();
        let a = build_generator(&spec, &grid).unwrap();
        let l0 = build_fiber_generator(&spec, &grid, &[0.0], spec.kinetic_mode()).unwrap();
        let diff = (&a.matrix - &l0.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-14);
    }

    #[test]
    fn fiber_generator_adjoint_symmetry(c1 in coef(), c2 in coef(), p in -1.0f64..1.0) {
        // ρ ↦ ρ† maps fiber p to fiber -p with complex conjugation.
        let spec = kraus_model(c1, c2, 0.3, 1.0);
        let grid = make_grid(1, 12).unwrap();
        let lp = build_fiber_generator(&spec, &grid, &[p], spec.kinetic_mode()).unwrap();
        let lm = build_fiber_generator(&spec, &grid, &[-p], spec.kinetic_mode()).unwrap();
        let diff = (&lp.matrix.mapv(|z| z.conj()) - &lm.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-13);
    }
}
