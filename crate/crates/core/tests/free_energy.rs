use approx::assert_abs_diff_eq;
use polymerlab::disorder::{Environment, WeightModel};
use polymerlab::engine::{FieldOptions, PolymerField};
use polymerlab::free_energy::{
    annealed_bound, estimate_gpl, legendre, legendre_finite_n, monotonicity_sweep, p2p_surface, FreeEnergyError,
};
use polymerlab::kernels::StepKernel;
use polymerlab::stats::mean_se;

const U: WeightModel = WeightModel::Uniform01;

fn opts() -> FieldOptions {
    FieldOptions::default()
}

#[test]
fn point_mass_free_energy_is_exact() {
    let p = StepKernel::simple(3);
    for (beta, h) in [(0.7, [0.0, 0.0, 0.0]), (2.0, [0.4, -1.0, 0.1])] {
        let e = estimate_gpl(&WeightModel::PointMass(-0.3), &p, beta, &h, 10, 2, 5, opts()).unwrap();
        let lp = p.log_mgf(&h.map(|v| beta * v));
        assert_abs_diff_eq!(e.g_mean, -0.3 + lp / beta, epsilon = 1e-12);
        assert_abs_diff_eq!(e.gap, 0.0, epsilon = 1e-12);
        assert_eq!(e.g_se, 0.0);
    }
}

#[test]
fn high_temperature_gap_vanishes() {
    let p = StepKernel::simple(3);
    for h in [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]] {
        let e = estimate_gpl(&U, &p, 0.05, &h, 64, 8, 11, opts()).unwrap();
        assert!(e.gap.abs() <= 3.0 * e.gap_se + 1e-9, "{e:?}");
    }
}

#[test]
fn jensen_holds_at_finite_n() {
    let p = StepKernel::simple(2);
    for (beta, h) in [(0.5, [0.0, 0.0]), (2.0, [0.5, 0.0]), (4.0, [1.0, 1.0])] {
        let e = estimate_gpl(&U, &p, beta, &h, 40, 16, 2, opts()).unwrap();
        assert!(e.g_mean <= e.annealed + 3.0 * e.g_se, "{e:?}");
        assert_abs_diff_eq!(e.annealed, annealed_bound(&U, &p, beta, &h), epsilon = 0.0);
        assert!(e.gap > 0.0);
    }
}

#[test]
fn free_energy_is_convex_along_a_field_slice() {
    let p = StepKernel::simple(2);
    let g: Vec<_> = [0.0, 0.5, 1.0, 1.5, 2.0]
        .iter()
        .map(|&t| estimate_gpl(&U, &p, 1.0, &[t, 0.0], 40, 16, 4, opts()).unwrap())
        .collect();
    for w in g.windows(3) {
        let second = w[0].g_mean - 2.0 * w[1].g_mean + w[2].g_mean;
        let se = (w[0].g_se.powi(2) + 4.0 * w[1].g_se.powi(2) + w[2].g_se.powi(2)).sqrt();
        assert!(second >= -3.0 * se, "{second} vs {se}");
    }
}

#[test]
fn estimates_settle_between_n_and_2n() {
    let p = StepKernel::simple(1);
    for beta in [0.1, 3.0] {
        let a = estimate_gpl(&U, &p, beta, &[0.0], 500, 16, 9, opts()).unwrap();
        let b = estimate_gpl(&U, &p, beta, &[0.0], 1000, 16, 9, opts()).unwrap();
        let se = (a.g_se.powi(2) + b.g_se.powi(2)).sqrt();
        assert!((a.g_mean - b.g_mean).abs() < 5.0 * se + 2.0 / 500.0, "beta {beta}");
    }
}

#[test]
fn one_step_surface_is_the_weight_plus_log_step() {
    let p = StepKernel::simple(2);
    let s = p2p_surface(&U, &p, 1.5, 1, 1, 3, opts()).unwrap();
    let env = Environment::new(3, 0, U);
    assert_eq!(s.sites.len(), 4);
    for x in s.sites.iter() {
        let w = env.sample_weight(1, x).unwrap();
        assert_abs_diff_eq!(s.value_at(x), (1.5 * w + 0.25f64.ln()) / 1.5, epsilon = 1e-14);
    }
    assert_eq!(s.value_at(&[0, 0]), f64::NEG_INFINITY);
    assert!(matches!(
        p2p_surface(&U, &p, 0.0, 4, 1, 0, opts()),
        Err(FreeEnergyError::InvalidArgument(_))
    ));
}

#[test]
fn surface_is_reflection_symmetric_in_law() {
    let p = StepKernel::simple(2);
    let n = 32;
    let pairs = [([4i64, 2i64], [-4i64, 2i64]), ([10, 0], [-10, 0]), ([3, -7], [-3, -7])];
    let mut diffs = vec![Vec::new(); pairs.len()];
    for s in 0..200 {
        let mut f = PolymerField::new(&p, 1.0, Some(Environment::new(21, s, U)), opts()).unwrap();
        f.advance_to(n).unwrap();
        for (d, (a, b)) in diffs.iter_mut().zip(&pairs) {
            d.push((f.log_z_at(a).unwrap() - f.log_z_at(b).unwrap()) / n as f64);
        }
    }
    for d in diffs {
        let (m, se) = mean_se(&d);
        assert!(m.abs() < 3.0 * se, "{m} vs {se}");
    }
}

#[test]
fn legendre_edge_cases() {
    let p = StepKernel::simple(1);
    let s = p2p_surface(&U, &p, 1.0, 6, 4, 1, opts()).unwrap();
    let best = s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(legendre(&s, &[0.0]).unwrap(), best);
    assert!(legendre_finite_n(&s, &[0.0]).unwrap() >= best);
}

#[test]
fn legendre_transform_agrees_with_direct_estimates() {
    let p = StepKernel::simple(2);
    let (beta, n, samples) = (1.0, 32, 40);
    let s = p2p_surface(&U, &p, beta, n, samples, 17, opts()).unwrap();
    for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let h = [t, 0.0];
        let direct = estimate_gpl(&U, &p, beta, &h, n, samples, 17, opts()).unwrap();
        let lt = legendre_finite_n(&s, &h).unwrap();
        assert!(
            (lt - direct.g_mean).abs() < 3.0 * direct.g_se + 0.05,
            "t = {t}: {lt} vs {direct:?}"
        );
    }
}

#[test]
fn point_mass_sweep_is_constant_zero() {
    let t = monotonicity_sweep(
        &WeightModel::PointMass(0.3),
        &StepKernel::simple(1),
        &[0.7],
        &[0.5, 1.0, 2.0, 4.0],
        50,
        3,
        1,
        opts(),
    )
    .unwrap();
    t.mean
        .iter()
        .for_each(|m| assert_abs_diff_eq!(*m, 0.0, epsilon = 1e-12));
    t.diffs
        .iter()
        .for_each(|m| assert_abs_diff_eq!(*m, 0.0, epsilon = 1e-12));
}

#[test]
fn sweep_is_nonincreasing_within_noise() {
    let betas = [0.5, 1.0, 2.0, 4.0];
    let t = monotonicity_sweep(&U, &StepKernel::simple(1), &[0.0], &betas, 300, 40, 5, opts()).unwrap();
    for (d, se) in t.diffs.iter().zip(&t.diff_se) {
        assert!(*d <= 3.0 * se, "{t:?}");
    }
    assert!(t.mean[3] < t.mean[0]);
    assert!(t.violation_rate.iter().all(|&r| (0.0..=1.0).contains(&r)));
    assert!(monotonicity_sweep(&U, &StepKernel::simple(1), &[0.0], &[1.0, 0.5], 10, 2, 5, opts()).is_err());
}
