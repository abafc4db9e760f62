//! Theoretical oracles: Lambert-W against a bisection oracle, the margin
//! closed form against its defining equation, the gamma system against the
//! projected full gradient, and the spike bound against one-step simulation.

use amdyn_core::analysis::{self, GammaBasis, GammaCoords};
use amdyn_core::closed_form::{self, BinaryOrthogonalInstance, TwoTokenInstance};
use amdyn_core::model::{self, Weights};
use amdyn_core::ode::OdeOptions;
use amdyn_core::{EmbeddingSet, TaskSpec};
use proptest::prelude::*;

/// Bisection oracle for y e^y = x on the principal branch.
fn lambert_bisect(x: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0f64, x.max(1.0) + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid.exp() < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn lambert_fixed_points() {
    assert_eq!(closed_form::lambert_w0(0.0).unwrap(), 0.0);
    assert!((closed_form::lambert_w0(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-14);
    let w1 = closed_form::lambert_w0(1.0).unwrap();
    assert!((w1 - 0.5671432904097838).abs() < 1e-14);
    assert!((w1 - lambert_bisect(1.0)).abs() < 1e-12);
}

#[test]
fn lambert_matches_bisection_oracle() {
    for i in 0..50 {
        let x = -0.35 + i as f64 * 0.5;
        let w = closed_form::lambert_w0(x).unwrap();
        assert!((w - lambert_bisect(x)).abs() <= 1e-11 * (1.0 + w.abs()), "x = {x}");
    }
}

#[test]
fn lambert_rejects_below_branch_point() {
    assert!(closed_form::lambert_w0(-1.0).is_err());
    assert!(closed_form::lambert_w0(f64::NAN).is_err());
    // At the branch point itself: W0(-1/e) = -1.
    let w = closed_form::lambert_w0(-1.0 / std::f64::consts::E).unwrap();
    assert!((w + 1.0).abs() < 1e-6);
}

#[test]
fn lambert_w0_exp_continuous_across_switch() {
    // The two evaluation strategies must agree around y = 30.
    for y in [29.0, 29.9, 30.0, 30.1, 31.0, 100.0, 1e6] {
        let w = closed_form::lambert_w0_exp(y).unwrap();
        // Defining identity w + log w = y.
        assert!((w + w.ln() - y).abs() <= 1e-10 * y.abs().max(1.0), "y = {y}");
    }
}

#[test]
fn binary_margin_satisfies_defining_equation() {
    let inst = BinaryOrthogonalInstance::new(1.0, 0.0).unwrap();
    // m0 = 0, t = 0 -> m = 0 (exactly, thanks to the Newton polish).
    assert_eq!(closed_form::binary_margin_closed(&inst, 0.0).unwrap(), 0.0);
    // c = 1, m0 = 0, t = e: 1 + e = c t + 1 so m = 1.
    let m = closed_form::binary_margin_closed(&inst, std::f64::consts::E).unwrap();
    assert!((m - 1.0).abs() < 1e-14);
    // Defining identity at assorted points.
    for t in [0.5, 3.0, 100.0, 1e4] {
        let m = closed_form::binary_margin_closed(&inst, t).unwrap();
        let y = inst.c * (t - inst.t0());
        assert!((m + m.exp() - y).abs() <= 1e-12 * y.max(1.0), "t = {t}");
    }
}

#[test]
fn loss_sandwich_bounds_over_six_decades() {
    // 0 <= log(x) - m <= 2 log(x)/x for x = c(t - t0) in [1, 1e6].
    let inst = BinaryOrthogonalInstance::new(1.0, 0.0).unwrap();
    let t0 = inst.t0();
    for k in 0..=1000 {
        let x = 10f64.powf(6.0 * k as f64 / 1000.0);
        let t = x / inst.c + t0;
        let m = closed_form::binary_margin_closed(&inst, t).unwrap();
        let h = x.ln() - m;
        let (lo, hi) = closed_form::h_bound(x).unwrap();
        assert!(h >= lo, "x = {x}: h = {h}");
        assert!(h <= hi, "x = {x}: h = {h} > {hi}");
    }
}

#[test]
fn h_bound_examples() {
    assert_eq!(closed_form::h_bound(1.0).unwrap(), (0.0, 0.0));
    let (lo, hi) = closed_form::h_bound(std::f64::consts::E).unwrap();
    assert_eq!(lo, 0.0);
    assert!((hi - 2.0 / std::f64::consts::E).abs() < 1e-15);
    assert!(closed_form::h_bound(0.99).is_err());
}

#[test]
fn invariants_trivial_cases() {
    // Symmetric scores: all pair values zero.
    let inv = closed_form::multiclass_invariants(&[0.3, 0.5, 0.5, 0.5], 0);
    assert!(inv.iter().all(|&v| v == 0.0));
    assert_eq!(inv.len(), 3);
    // Target column excluded from pairs.
    let inv = closed_form::multiclass_invariants(&[1.0, 2.0, 3.0], 1);
    assert_eq!(inv.len(), 1);
    assert!((inv[0] - ((-1.0f64).exp() - (-3.0f64).exp())).abs() < 1e-15);
}

#[test]
fn asymptotic_direction_binary_case() {
    let emb = EmbeddingSet::orthonormal(2, 2, 4).unwrap();
    let task = TaskSpec::new(vec![0, 1], vec![0.5, 0.5], 2).unwrap();
    let (dir, constant) = closed_form::asymptotic_direction(&emb, &task).unwrap();
    // M = 2: Pi(u_1) = (u_1 - u_2)/2, norm 1/sqrt(2).
    let expected_col = (emb.u_row(0) - emb.u_row(1)) / 2.0;
    assert!((expected_col.norm() - 0.5f64.sqrt() * 1.0).abs() < 1e-15);
    let col0 = &dir.0 * emb.e_row(0);
    assert!((col0 - expected_col).norm() < 1e-14);
    assert!((constant - 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-15);
}

#[test]
fn asymptotic_direction_equalizes_nontarget_scores() {
    let emb = EmbeddingSet::orthonormal(3, 4, 6).unwrap();
    let task = TaskSpec::new(vec![2, 0, 1], vec![0.5, 0.25, 0.25], 4).unwrap();
    let (dir, _) = closed_form::asymptotic_direction(&emb, &task).unwrap();
    for x in 0..3 {
        let scores = emb.u() * (&dir.0 * emb.e_row(x));
        let y = task.f_star(x);
        let off: Vec<f64> = (0..4).filter(|&j| j != y).map(|j| scores[j]).collect();
        for v in &off {
            assert!((v - off[0]).abs() < 1e-14);
        }
        assert!(scores[y] > off[0]);
    }
    // Requires orthonormal embeddings.
    let skew = EmbeddingSet::correlated_pair(0.5, 2).unwrap();
    assert!(closed_form::asymptotic_direction(&skew, &TaskSpec::pair(0.5).unwrap()).is_err());
}

#[test]
fn gamma_rhs_trivial_symmetries() {
    let sym = TwoTokenInstance::new(0.5, 0.3, 2.0).unwrap();
    let (d1, _) = closed_form::gamma_ode_rhs(&sym, 0.0, 0.0);
    assert_eq!(d1, 0.0);
    let aligned = TwoTokenInstance::new(0.7, 1.0, 2.0).unwrap();
    let (_, d2) = closed_form::gamma_ode_rhs(&aligned, 0.3, -0.2);
    assert_eq!(d2, 0.0);
}

#[test]
fn gamma_rhs_matches_projected_gradient_flow() {
    // Projected -grad of the full model equals (c/2) * rhs within 1e-12.
    let alpha = 0.35;
    let p1 = 0.65;
    let emb = EmbeddingSet::correlated_pair(alpha, 2).unwrap();
    let task = TaskSpec::pair(p1).unwrap();
    let inst = TwoTokenInstance::new(p1, alpha, 2.0).unwrap();
    for (g1, g2) in [(0.0, 0.0), (0.7, 0.2), (-1.1, 1.5), (2.0, -0.4)] {
        let w = analysis::w_from_gamma(
            &GammaCoords {
                gamma1: g1,
                gamma2: g2,
                basis: GammaBasis::Theory,
            },
            &emb,
        )
        .unwrap();
        let g = model::grad(&w, &emb, &task).unwrap();
        let du = emb.u_row(0) - emb.u_row(1);
        let f1 = emb.e_row(0) + emb.e_row(1);
        let f2 = emb.e_row(0) - emb.e_row(1);
        let dgamma1 = -0.5 * du.dot(&(&g.0 * f1));
        let dgamma2 = -0.5 * du.dot(&(&g.0 * f2));
        let (r1, r2) = closed_form::gamma_ode_rhs(&inst, g1, g2);
        assert!((dgamma1 - 0.5 * inst.c * r1).abs() <= 1e-12, "({g1}, {g2})");
        assert!((dgamma2 - 0.5 * inst.c * r2).abs() <= 1e-12, "({g1}, {g2})");
    }
}

#[test]
fn gamma2_strictly_increases_along_flow() {
    let inst = TwoTokenInstance::new(0.75, 0.5, 2.0).unwrap();
    let times: Vec<f64> = (0..=50).map(|i| i as f64 * 2.0).collect();
    let sol = closed_form::gamma_flow(&inst, &times, &OdeOptions::default()).unwrap();
    for w in sol.windows(2) {
        assert!(w[1].1 .1 > w[0].1 .1);
    }
}

#[test]
fn gamma1_limit_values_and_flow_convergence() {
    let sym = TwoTokenInstance::new(0.5, 0.2, 2.0).unwrap();
    assert_eq!(closed_form::gamma1_limit(&sym), 0.0);
    let skew = TwoTokenInstance::new(0.75, 0.5, 2.0).unwrap();
    assert!((closed_form::gamma1_limit(&skew) - 0.5 * 3f64.ln()).abs() < 1e-12);
    assert!((closed_form::gamma1_limit(&skew) - 0.549306).abs() < 1e-6);

    let sol = closed_form::gamma_flow(&skew, &[1e4], &OdeOptions::default()).unwrap();
    let gamma1 = sol[0].1 .0;
    assert!(
        (gamma1 - closed_form::gamma1_limit(&skew)).abs() <= 1e-2,
        "gamma1(1e4) = {gamma1}"
    );
}

#[test]
fn gd_gamma_bounds_trivial_shapes() {
    let inst = TwoTokenInstance::new(0.75, 0.5, 2.0).unwrap();
    let b0 = closed_form::gd_gamma_bounds(&inst, 0.0).unwrap();
    assert_eq!(b0.gamma1_min, 0.0);
    assert!((b0.gamma1_max - (inst.gamma_bar() + inst.p1 / (2.0 * inst.p2))).abs() < 1e-15);
    assert_eq!(b0.gamma2_lower(123.0), 0.0);

    let sym = TwoTokenInstance::new(0.5, 0.5, 2.0).unwrap();
    let bs = closed_form::gd_gamma_bounds(&sym, 1e-3).unwrap();
    assert!(bs.gamma1_min.abs() < 2e-3 && bs.gamma1_min <= 0.0);
    assert!(bs.gamma1_max > 0.0);
}

#[test]
fn gd_trajectory_stays_in_envelope() {
    // p1 = 0.75, alpha = 0.5, eta = 1, 1e4 steps.
    let inst = TwoTokenInstance::new(0.75, 0.5, 2.0).unwrap();
    let eta = 1.0;
    let bounds = closed_form::gd_gamma_bounds(&inst, eta).unwrap();
    let (mut g1, mut g2) = (0.0f64, 0.0f64);
    for step in 0..10_000 {
        let next = closed_form::gamma_gd_step(&inst, eta, g1, g2);
        g1 = next.0;
        g2 = next.1;
        let t = (step + 1) as f64;
        assert!(
            g1 >= bounds.gamma1_min && g1 <= bounds.gamma1_max,
            "step {step}: gamma1 = {g1} outside [{}, {}]",
            bounds.gamma1_min,
            bounds.gamma1_max
        );
        assert!(
            g2 >= bounds.gamma2_lower(t),
            "step {step}: gamma2 = {g2} < {}",
            bounds.gamma2_lower(t)
        );
    }
}

#[test]
fn dgamma1_sign_rule_on_grid() {
    let inst = TwoTokenInstance::new(0.7, 0.4, 2.0).unwrap();
    let gbar = inst.gamma_bar();
    for i in -20..=20 {
        for j in 0..=20 {
            let g1 = i as f64 * 0.25;
            let g2 = j as f64 * 0.25;
            let (d1, _) = closed_form::gamma_ode_rhs(&inst, g1, g2);
            let threshold = closed_form::dgamma1_sign_threshold(&inst, g2);
            let lhs = (g1 - gbar).sinh();
            if d1 <= 0.0 {
                assert!(lhs >= threshold - 1e-12, "({g1}, {g2})");
            } else {
                assert!(lhs <= threshold + 1e-12, "({g1}, {g2})");
            }
        }
    }
}

#[test]
fn spike_bound_arithmetic_and_boundary() {
    // Boundary alpha = p2/p1: bound degenerates to zero.
    let boundary = TwoTokenInstance::new(0.75, 1.0 / 3.0, 2.0).unwrap();
    let b = closed_form::spike_lower_bound(&boundary, 5.0).unwrap();
    assert_eq!(b.value, 0.0);
    assert!(!b.applicable);

    let fig2 = TwoTokenInstance::new(0.75, 0.95, 2.0).unwrap();
    let b = closed_form::spike_lower_bound(&fig2, 10.0).unwrap();
    assert!(b.applicable);
    assert!((b.value - 1.15625).abs() < 1e-12);
}

#[test]
fn spike_bound_holds_for_one_step_simulation_sweep() {
    // Unit-constant normalization: correlated pair has |u1-u2|^2 |e_x|^2 = 2,
    // which is exactly the normalization making the one-step margin
    // m2 = eta (p2 - alpha p1).
    for eta in [1.0, 5.0, 10.0, 50.0] {
        for alpha in [0.5, 0.8, 0.95] {
            for p1 in [0.6, 0.75, 0.9] {
                let emb = EmbeddingSet::correlated_pair(alpha, 2).unwrap();
                let task = TaskSpec::pair(p1).unwrap();
                let inst = TwoTokenInstance::new(p1, alpha, 2.0).unwrap();
                let w0 = Weights::zeros(2);
                let g = model::grad(&w0, &emb, &task).unwrap();
                let w1 = Weights(&w0.0 - eta * &g.0);
                let loss1 = model::loss(&w1, &emb, &task).unwrap();
                let margins = model::gap_margins(&w1, &emb, &task).unwrap();
                let m2 = margins[1];
                // One-step margin identity under this normalization.
                assert!(
                    (m2 - eta * (inst.p2 - inst.alpha * inst.p1)).abs() < 1e-12,
                    "eta {eta}, alpha {alpha}, p1 {p1}"
                );
                // Robust normalization-free chain.
                assert!(loss1 >= -inst.p2 * m2, "eta {eta}, alpha {alpha}, p1 {p1}");
                // Eq. (spike) whenever applicable.
                let b = closed_form::spike_lower_bound(&inst, eta).unwrap();
                if b.applicable {
                    assert!(
                        loss1 >= b.value,
                        "eta {eta}, alpha {alpha}, p1 {p1}: {loss1} < {}",
                        b.value
                    );
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lambert_round_trip(y in -1.0f64..20.0) {
        let x = y * y.exp();
        let w = closed_form::lambert_w0(x).unwrap();
        prop_assert!((w - y).abs() <= 1e-11 * (1.0 + y.abs()));
    }

    #[test]
    fn margin_closed_form_monotone_in_t(c in 0.1f64..5.0, m0 in -2.0f64..2.0, t in 0.0f64..100.0) {
        let inst = BinaryOrthogonalInstance::new(c, m0).unwrap();
        let m_a = closed_form::binary_margin_closed(&inst, t).unwrap();
        let m_b = closed_form::binary_margin_closed(&inst, t + 1.0).unwrap();
        prop_assert!(m_b > m_a);
        // t = 0 recovers m0.
        let m_zero = closed_form::binary_margin_closed(&inst, 0.0).unwrap();
        prop_assert!((m_zero - m0).abs() <= 1e-10 * (1.0 + m0.abs()));
    }
}
