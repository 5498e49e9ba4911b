//! Oracles for the backward gauge PDE and the gauge coefficients, plus
//! structural properties of the grid engines.

mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use common::Sine;
use torus_pomle::model::{make_model, DiffusionModel, ModelFamily, ParameterPoint};
use torus_pomle::numerics::fokker_planck::{fokker_planck_step, Scheme};
use torus_pomle::numerics::{density_from_samples, gauge_coefficients, solve_gauge_pde, GridDensity, GridField, TorusGrid};
use torus_pomle::stats;

fn sine(c: [f64; 4]) -> DiffusionModel {
    make_model(&ModelFamily::GradientSine, &ParameterPoint::new(c.to_vec()).unwrap()).unwrap()
}

#[test]
fn gauge_pde_matches_feynman_kac() {
    let c = [0.5, 0.0, 0.0, 0.6];
    let model = sine(c);
    let s = Sine::from(&c);
    let (n, dt, t) = (128, 1e-3, 0.5);
    let grid = TorusGrid::new(1, n).unwrap();
    let f_fn = |x: f64| 0.4 * (2.0 * PI * x).cos();
    let g_fn = |x: f64| 0.3 * (2.0 * PI * x).sin();
    let phi_fn = |x: f64| 1.0 + 0.5 * (2.0 * PI * x).sin();
    let f = GridField::from_fn(grid, 1, |x, o| o[0] = f_fn(x[0])).unwrap();
    let g = GridField::from_fn(grid, 1, |x, o| o[0] = g_fn(x[0])).unwrap();
    let phi = GridField::from_fn(grid, 1, |x, o| o[0] = phi_fn(x[0])).unwrap();
    let u = solve_gauge_pde(&model, &[f], &[g], &phi, t, dt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let steps = (t / dt).round() as usize;
    for idx in [13, 57, 102] {
        let x0 = grid.node(idx)[0];
        let samples: Vec<f64> = (0..20_000)
            .map(|_| {
                let mut x = x0;
                let mut integral = 0.0;
                for _ in 0..steps {
                    integral += f_fn(x) * dt;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x += (s.b(x) + g_fn(x)) * dt + s.s0 * dt.sqrt() * z;
                }
                integral.exp() * phi_fn(x)
            })
            .collect();
        let z = (u[0].values()[idx] - stats::mean(&samples)) / stats::std_err(&samples);
        assert!(z.abs() <= 3.0, "x0 = {x0}: z = {z}");
    }
}

#[test]
fn gauge_coefficients_match_closed_form() {
    let c = [0.7, 1.3, 0.4, 0.8];
    let model = sine(c);
    let grid = TorusGrid::new(1, 64).unwrap();
    let dy = [0.03, -0.05, 0.02, 0.04, -0.01];
    let dt = 0.01;
    let s = 0.05;
    let y: f64 = dy.iter().sum();
    let (e, f, g) = gauge_coefficients(&model, &grid, &dy, dt, s).unwrap();
    let (tb, th, tc, s0) = (c[0], c[1], c[2], c[3]);
    let a = s0 * s0;
    for idx in 0..grid.len() {
        let x = grid.node(idx)[0];
        let (sn, cs) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
        let h = th * cs + tc;
        let dh = -2.0 * PI * th * sn;
        let d2h = -4.0 * PI * PI * th * cs;
        // log E = h^2 s / 2 - h y
        let le = 0.5 * h * h * s - h * y;
        let dle = (h * s - y) * dh;
        let d2le = s * dh * dh + (h * s - y) * d2h;
        let b = tb * sn;
        let f_ref = 0.5 * a * d2le + b * dle + 0.5 * a * dle * dle;
        assert!((e.values()[idx].ln() - le).abs() < 1e-12);
        // Derivatives of h come from fourth-order finite differences.
        assert!((g.values()[idx] - a * dle).abs() < 1e-7, "g at {x}");
        assert!((f.values()[idx] - f_ref).abs() < 1e-7, "f at {x}");
    }
}

#[test]
fn gauge_pde_comparison_principle() {
    let model = sine([0.5, 1.0, 0.2, 0.5]);
    let grid = TorusGrid::new(1, 64).unwrap();
    let (_, f, g) = gauge_coefficients(&model, &grid, &[0.3, -0.2, 0.5], 0.1, 0.2).unwrap();
    let phi = GridField::from_fn(grid, 1, |x, o| o[0] = (2.0 * PI * x[0]).sin().max(0.0)).unwrap();
    let u = solve_gauge_pde(&model, &[f], &[g], &phi, 0.5, 0.01).unwrap();
    for ut in &u {
        assert!(ut.values().iter().all(|v| *v >= 0.0));
    }
    assert!(u[0].values().iter().all(|v| *v > 0.0));
}

#[test]
fn gauge_pde_refinement_is_first_order_or_better() {
    let model = sine([0.5, 0.0, 0.0, 0.6]);
    let solve = |n: usize, dt: f64| {
        let grid = TorusGrid::new(1, n).unwrap();
        let f = GridField::from_fn(grid, 1, |x, o| o[0] = 0.4 * (2.0 * PI * x[0]).cos()).unwrap();
        let g = GridField::from_fn(grid, 1, |x, o| o[0] = 0.3 * (2.0 * PI * x[0]).sin()).unwrap();
        let phi = GridField::from_fn(grid, 1, |x, o| o[0] = 1.0 + 0.5 * (2.0 * PI * x[0]).sin()).unwrap();
        solve_gauge_pde(&model, &[f], &[g], &phi, 0.5, dt).unwrap()[0].values().to_vec()
    };
    // Compare on the common nodes of nested cell-centred grids by averaging
    // the two fine cells inside each coarse cell.
    let sup = |c: &[f64], fine: &[f64]| {
        c.iter()
            .enumerate()
            .map(|(i, v)| (v - 0.5 * (fine[2 * i] + fine[2 * i + 1])).abs())
            .fold(0.0, f64::max)
    };
    let u1 = solve(32, 4e-3);
    let u2 = solve(64, 2e-3);
    let u3 = solve(128, 1e-3);
    let e1 = sup(&u1, &u2);
    let e2 = sup(&u2, &u3);
    assert!((e1 / e2).log2() >= 1.0 - 0.1, "e1 = {e1}, e2 = {e2}");
}

#[test]
fn uniform_samples_fill_the_grid() {
    let grid = TorusGrid::new(1, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<f64> = (0..1_000_000).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
    let d = density_from_samples(&grid, &samples).unwrap();
    let worst = d.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    // Binomial fluctuation per cell: sd = sqrt(n p (1-p)) / (n dx) ~ 0.0044.
    assert!(worst <= 0.05, "sup error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fokker_planck_conserves_mass(
        tb in -2.0f64..2.0,
        s0 in 0.2f64..1.5,
        vals in prop::collection::vec(0.0f64..5.0, 32),
        dt in 1e-4f64..1e-1,
    ) {
        prop_assume!(vals.iter().any(|v| *v > 0.0));
        let model = sine([tb, 1.0, 0.0, s0]);
        let grid = TorusGrid::new(1, 32).unwrap();
        let p = GridDensity::from_unnormalized(grid, vals).unwrap();
        let (out, _) = fokker_planck_step(&model, &p, dt, Scheme::Implicit).unwrap();
        prop_assert!((out.mass() - 1.0).abs() < 1e-12);
        prop_assert!(out.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn gauge_pde_translation_equivariant(
        shift in 1usize..31,
        amp in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        // Zero-drift constant-diffusion model so the operator itself is
        // translation invariant.
        let model = sine([0.0, 1.0, 0.0, 0.7]);
        let grid = TorusGrid::new(1, 32).unwrap();
        let n = grid.n();
        let field = |a: f64, k: f64, s: usize| {
            let v: Vec<f64> = (0..n)
                .map(|i| a * (2.0 * PI * k * grid.node((i + n - s) % n)[0]).sin())
                .collect();
            GridField::new(grid, 1, v).unwrap()
        };
        let phi = |s: usize| {
            let v: Vec<f64> = (0..n)
                .map(|i| 1.5 + (2.0 * PI * grid.node((i + n - s) % n)[0]).cos())
                .collect();
            GridField::new(grid, 1, v).unwrap()
        };
        let u0 = solve_gauge_pde(&model, &[field(amp[0], 1.0, 0)], &[field(amp[1], 2.0, 0)], &phi(0), 0.1, 0.01).unwrap();
        let u1 = solve_gauge_pde(&model, &[field(amp[0], 1.0, shift)], &[field(amp[1], 2.0, shift)], &phi(shift), 0.1, 0.01).unwrap();
        for i in 0..n {
            let a = u0[0].values()[i];
            let b = u1[0].values()[(i + shift) % n];
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
