use proptest::prelude::*;
use rigidhom::cellsolve::{boundary_field, frozen_band, CellProblem, Method, SolverConfig};
use rigidhom::energy::surface_energy;
use rigidhom::env::{EnvSeed, SurfaceDensity};
use rigidhom::fields::{Grid, LabelField, RigidLabel};
use rigidhom::homog::{
    check_fhom_axioms, dirichlet_infimum, estimate_fhom, fhom_table, mu_sample, rational_scale, FHomRequest, RMap,
};
use rigidhom::Vec2;

fn e1() -> Vec2 {
    Vec2::new(1.0, 0.0)
}

fn e2() -> Vec2 {
    Vec2::new(0.0, 1.0)
}

#[test]
fn rational_scales() {
    assert_eq!(rational_scale(e2()).unwrap(), 1);
    assert_eq!(rational_scale(-e1()).unwrap(), 1);
    assert_eq!(rational_scale(Vec2::new(0.6, 0.8)).unwrap(), 5);
    assert_eq!(rational_scale(Vec2::new(-5.0 / 13.0, 12.0 / 13.0)).unwrap(), 13);
    assert!(rational_scale(Vec2::new(1.0, 1.0) / 2f64.sqrt()).is_err());
    assert!(rational_scale(Vec2::new(1.0, 1.0)).is_err());
}

#[test]
fn mu_examples() {
    let cfg = SolverConfig::mincut(0.25);
    let one = SurfaceDensity::constant(1.0).unwrap();
    let s = mu_sample(&one, EnvSeed::new(0, 0), e1(), e2(), (0.0, 6.0), &cfg).unwrap();
    assert!((s.value - 6.0).abs() < 1e-12);
    assert_eq!(s.m_nu, 1);

    let f = SurfaceDensity::checkerboard(vec![1.0, 2.0], EnvSeed::new(3, 0)).unwrap();
    let w = EnvSeed::new(3, 0);
    let whole = mu_sample(&f, w, e1(), e2(), (0.0, 8.0), &cfg).unwrap().value;
    assert!((8.0..=16.0).contains(&whole));
    let left = mu_sample(&f, w, e1(), e2(), (0.0, 4.0), &cfg).unwrap().value;
    let right = mu_sample(&f, w, e1(), e2(), (4.0, 8.0), &cfg).unwrap().value;
    assert!(whole <= left + right);
}

#[test]
fn oblique_normal_uses_the_scaled_cube() {
    let cfg = SolverConfig::mincut(0.25);
    let one = SurfaceDensity::constant(1.0).unwrap();
    let s = mu_sample(&one, EnvSeed::new(0, 0), e1(), Vec2::new(0.6, 0.8), (0.0, 1.0), &cfg).unwrap();
    assert_eq!(s.m_nu, 5);
    // Staircase cut on the raster: between the flat value 1 and its l1 length 1.4.
    assert!(s.value >= 1.0 - 1e-9 && s.value <= 1.4 + 0.2, "{}", s.value);
}

#[test]
fn constant_and_laminate_estimates() {
    for c in [1.0, 2.5] {
        let f = SurfaceDensity::constant(c).unwrap();
        let est = estimate_fhom(&f, &FHomRequest::new(e1(), e2(), vec![4.0, 8.0], 2, SolverConfig::mincut(0.5))).unwrap();
        assert!(est.values.iter().flatten().all(|v| (v - c).abs() < 1e-12));
        assert!(est.converged && !est.ergodic && est.ci == 0.0);
    }
    let lam = SurfaceDensity::laminate();
    for r_map in [RMap::Identity, RMap::Linear { factor: 2.0 }] {
        let mut req = FHomRequest::new(e1(), e2(), vec![4.0, 8.0, 16.0], 2, SolverConfig::mincut(0.125));
        req.r_map = r_map;
        let est = estimate_fhom(&lam, &req).unwrap();
        assert!((est.estimate - 0.5).abs() < 0.01, "{r_map:?}: {}", est.estimate);
    }
}

#[test]
fn estimator_rejects_bad_requests() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let cfg = SolverConfig::mincut(0.5);
    assert!(estimate_fhom(&f, &FHomRequest::new(e1(), e2(), vec![4.0], 2, cfg.clone())).is_err());
    assert!(estimate_fhom(&f, &FHomRequest::new(e1(), e2(), vec![8.0, 4.0], 2, cfg.clone())).is_err());
    assert!(estimate_fhom(&f, &FHomRequest::new(e1(), e2(), vec![4.0, 8.0], 1, cfg.clone())).is_err());
    let mut req = FHomRequest::new(e1(), e2(), vec![4.0, 8.0], 2, cfg);
    req.r_map = RMap::Linear { factor: 0.5 };
    assert!(estimate_fhom(&f, &req).is_err());
}

#[test]
fn axiom_table_examples() {
    let template = FHomRequest::new(e1(), e2(), vec![4.0, 8.0], 2, SolverConfig::mincut(0.5));
    let f = SurfaceDensity::constant(1.0).unwrap();
    let table = fhom_table(&f, &[e1(), 2.0 * e1(), e2()], &[e2(), e1()], true, &template).unwrap();
    let rep = check_fhom_axioms(&table, &f.params);
    assert!(rep.all_pass(), "{rep:?}");
    assert!(table.iter().all(|e| e.estimate == 1.0));

    let lam = SurfaceDensity::laminate();
    let template = FHomRequest::new(e1(), e2(), vec![4.0, 8.0], 2, SolverConfig::mincut(0.25));
    let table = fhom_table(&lam, &[e1(), 2.0 * e1()], &[e2()], false, &template).unwrap();
    assert!((table[0].estimate - table[1].estimate).abs() <= table[0].ci + table[1].ci + 1e-12);
}

#[test]
fn base_point_independence_on_a_checkerboard() {
    let f = SurfaceDensity::checkerboard(vec![1.0, 2.0], EnvSeed::new(0, 0)).unwrap();
    let mut a = FHomRequest::new(e1(), e2(), vec![8.0, 16.0], 32, SolverConfig::mincut(0.25));
    a.base_seed = 11;
    let mut b = a.clone();
    b.base_point = Vec2::new(0.37, 0.11);
    let table = vec![estimate_fhom(&f, &a).unwrap(), estimate_fhom(&f, &b).unwrap()];
    let rep = check_fhom_axioms(&table, &f.params);
    assert!(rep.passed("x_independence"), "{rep:?}");
    assert!(rep.passed("bounds"));
}

#[test]
fn dirichlet_examples() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let grid = Grid::rect(-0.5, -0.5, 0.125, 8, 8).unwrap();
    let frozen = frozen_band(&grid, 1);
    let flat = LabelField::constant(grid.clone(), RigidLabel::constant(e1()));
    assert_eq!(dirichlet_infimum(&flat, &frozen, 0.5, &f, &Method::MinCut, EnvSeed::new(0, 0)).unwrap(), 0.0);

    let p = CellProblem::new(Vec2::zeros(), 1.0, e2(), e1(), f.clone()).with_h(0.125);
    let u0 = boundary_field(&p).unwrap();
    let v = dirichlet_infimum(&u0, &frozen, 0.5, &f, &Method::MinCut, EnvSeed::new(0, 0)).unwrap();
    assert!((v - 1.0).abs() < 1e-12);

    assert!(dirichlet_infimum(&u0, &vec![false; grid.len()], 0.5, &f, &Method::MinCut, EnvSeed::new(0, 0)).is_err());
}

#[test]
fn dirichlet_infima_on_the_laminate() {
    let f = SurfaceDensity::laminate();
    let mut prev = f64::INFINITY;
    for eps in [0.25, 0.125, 0.0625] {
        let p = CellProblem::new(Vec2::zeros(), 1.0, e2(), e1(), f.clone()).with_h(1.0 / 64.0);
        let u0 = boundary_field(&p).unwrap();
        let frozen = frozen_band(&u0.grid, 1);
        let v = dirichlet_infimum(&u0, &frozen, eps, &f, &Method::MinCut, EnvSeed::new(0, 0)).unwrap();
        assert!(v <= prev + 1e-12);
        assert!(v >= 0.5 - 1e-12);
        prev = v;
    }
    assert!((prev - 0.5).abs() < 1e-9);

    // Coarsest case against enumeration on a 4x4 raster (4 free cells).
    let grid = Grid::rect(-0.5, -0.5, 0.25, 4, 4).unwrap();
    let frozen = frozen_band(&grid, 1);
    let labels = vec![RigidLabel::constant(Vec2::zeros()), RigidLabel::constant(e1())];
    let u0 = LabelField::from_fn(grid.clone(), labels.clone(), |x| (x.y >= 0.0) as u32).unwrap();
    let v = dirichlet_infimum(&u0, &frozen, 0.25, &f, &Method::MinCut, EnvSeed::new(0, 0)).unwrap();
    let free: Vec<usize> = (0..grid.len()).filter(|&c| !frozen[c]).collect();
    let mut best = f64::INFINITY;
    for bits in 0..1u32 << free.len() {
        let mut asg = u0.assignment.clone();
        for (k, &c) in free.iter().enumerate() {
            asg[c] = bits >> k & 1;
        }
        let u = LabelField::new(grid.clone(), labels.clone(), asg).unwrap();
        best = best.min(surface_energy(&u, &f, 0.25, None));
    }
    assert!((v - best).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_mu_is_subadditive(seed in 0u64..10_000, a in -4i32..4, l1 in 1i32..5, l2 in 1i32..5, zx in -2.0f64..2.0, vertical in any::<bool>()) {
        let f = SurfaceDensity::checkerboard(vec![1.0, 2.0], EnvSeed::new(seed, 0)).unwrap();
        let w = EnvSeed::new(seed, 0);
        let nu = if vertical { e2() } else { -e1() };
        let zeta = Vec2::new(zx, 1.0);
        let cfg = SolverConfig::mincut(0.25);
        let (a, s, b) = (a as f64, (a + l1) as f64, (a + l1 + l2) as f64);
        let whole = mu_sample(&f, w, zeta, nu, (a, b), &cfg).unwrap().value;
        let left = mu_sample(&f, w, zeta, nu, (a, s), &cfg).unwrap().value;
        let right = mu_sample(&f, w, zeta, nu, (s, b), &cfg).unwrap().value;
        prop_assert!(whole <= (left + right) * (1.0 + 1e-12));
        prop_assert!(whole >= f.params.c1 * (b - a) - 1e-9 && whole <= f.params.c2 * (b - a) + 1e-9);
    }

    #[test]
    fn mu_is_covariant_under_integer_shifts(seed in 0u64..10_000, k in -5i64..5, a in -3i32..3, len in 1i32..5) {
        let base = SurfaceDensity::checkerboard(vec![1.0, 3.0], EnvSeed::new(seed, 0)).unwrap();
        let cfg = SolverConfig::mincut(0.25);
        let w = EnvSeed::new(seed, 0);
        let rect = (a as f64, (a + len) as f64);
        let shifted = base.shift([k, 0]);
        let lhs = mu_sample(&shifted, w, e1(), e2(), rect, &cfg).unwrap().value;
        let rhs = mu_sample(&base, w, e1(), e2(), (rect.0 + k as f64, rect.1 + k as f64), &cfg).unwrap().value;
        prop_assert_eq!(lhs, rhs);
    }
}
