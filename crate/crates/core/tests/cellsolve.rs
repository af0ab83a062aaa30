use proptest::prelude::*;
use rigidhom::cellsolve::{
    boundary_field, frozen_band, glue, mincut_two_labels, slicing_lower_bound, solve_local, solve_local_from,
    solve_local_nested, solve_mincut, truncate_field, CellProblem, Schedule,
};
use rigidhom::counterex::{build_strip_competitor, CounterexConfig};
use rigidhom::energy::surface_energy;
use rigidhom::env::{EnvSeed, SurfaceDensity};
use rigidhom::fields::{Grid, LabelClass, LabelField, RigidLabel};
use rigidhom::{skew, Vec2};

fn e1() -> Vec2 {
    Vec2::new(1.0, 0.0)
}

fn e2() -> Vec2 {
    Vec2::new(0.0, 1.0)
}

fn brute_force(grid: &Grid, fixed: &[Option<bool>], a: &RigidLabel, b: &RigidLabel, f: &SurfaceDensity) -> f64 {
    let free: Vec<usize> = (0..grid.len()).filter(|&c| fixed[c].is_none()).collect();
    let mut best = f64::INFINITY;
    for bits in 0u32..(1 << free.len()) {
        let mut asg: Vec<u32> = (0..grid.len()).map(|c| if fixed[c] == Some(true) { 0 } else { 1 }).collect();
        for (k, &c) in free.iter().enumerate() {
            asg[c] = if bits >> k & 1 == 1 { 0 } else { 1 };
        }
        let u = LabelField::new(grid.clone(), vec![*a, *b], asg).unwrap();
        best = best.min(surface_energy(&u, f, 1.0, None));
    }
    best
}

#[test]
fn datum_splits_along_the_normal() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let p = CellProblem::new(Vec2::zeros(), 1.0, e2(), e1(), f.clone());
    let u = boundary_field(&p).unwrap();
    for c in 0..u.grid.len() {
        let up = u.grid.center(c).y > 0.0;
        assert_eq!(u.value(c, u.grid.center(c)), if up { e1() } else { Vec2::zeros() });
    }
    let q = CellProblem::new(Vec2::zeros(), 1.0, -e2(), e1(), f);
    let v = boundary_field(&q).unwrap();
    for c in 0..v.grid.len() {
        let up = v.grid.center(c).y > 0.0;
        assert_eq!(v.value(c, v.grid.center(c)), if up { Vec2::zeros() } else { e1() });
    }
}

#[test]
fn flat_datum_energy_is_c_times_t() {
    for (c, t) in [(1.0, 4.0), (1.7, 6.0)] {
        let f = SurfaceDensity::constant(c).unwrap();
        let p = CellProblem::new(Vec2::zeros(), t, e2(), e1(), f.clone());
        let u = boundary_field(&p).unwrap();
        assert!((surface_energy(&u, &f, 1.0, None) - c * t).abs() < 1e-12);
        assert!((solve_mincut(&p).unwrap().energy - c * t).abs() < 1e-12);
    }
}

#[test]
fn rotation_class_datum_adds_identity() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let p = CellProblem::new(Vec2::zeros(), 2.0, e2(), e1(), f).with_class(LabelClass::Rotation);
    let u = boundary_field(&p).unwrap();
    u.check_class(LabelClass::Rotation).unwrap();
    let x = Vec2::new(0.3, 0.7);
    let c = (0..u.grid.len()).find(|&c| u.grid.center(c).y > 0.5).unwrap();
    assert!((u.value(c, x) - (x + e1())).norm() < 1e-15);
    assert!((solve_mincut(&p).unwrap().energy - 2.0).abs() < 1e-12);
}

#[test]
fn laminate_cut_sits_in_the_weak_layer() {
    let f = SurfaceDensity::laminate();
    let p = CellProblem::new(Vec2::zeros(), 4.0, e2(), e1(), f.clone()).with_h(0.125);
    let r = solve_mincut(&p).unwrap();
    assert!((r.energy - 2.0).abs() < 1e-12);
    assert_eq!(r.gap, Some(r.energy - r.certificate.unwrap()));
    assert!(r.gap.unwrap().abs() < 1e-9);
    for jf in r.field.jump_faces() {
        let y = jf.midpoint.y.rem_euclid(1.0);
        assert!(y < 0.5, "face at x2 = {}", jf.midpoint.y);
    }
    // Small instance against enumeration, then scale.
    let small = CellProblem::new(Vec2::zeros(), 2.0, e2(), e1(), f.clone()).with_h(0.5);
    let bf = boundary_field(&small).unwrap();
    let frozen = frozen_band(&bf.grid, 1);
    let fixed: Vec<Option<bool>> = (0..bf.grid.len()).map(|c| frozen[c].then(|| bf.assignment[c] == 1)).collect();
    let [lo, up] = small.boundary_labels();
    let oracle = brute_force(&bf.grid, &fixed, &up, &lo, &f);
    assert!((solve_mincut(&small).unwrap().energy - oracle).abs() < 1e-12);
    assert!((r.energy / 4.0 - oracle / 2.0).abs() < 1e-12);
}

#[test]
fn two_label_dictionary_reproduces_mincut() {
    for seed in 0..24 {
        let f = SurfaceDensity::checkerboard(vec![1.0, 2.0], EnvSeed::new(seed, 0)).unwrap();
        let p = CellProblem::new(Vec2::new(0.5, 0.5), 4.0, e2(), Vec2::new(0.5, 1.0), f).with_h(0.5);
        let exact = solve_mincut(&p).unwrap();
        let dict = p.boundary_labels().to_vec();
        let local = solve_local(&p, &dict, &Schedule::default(), EnvSeed::new(seed, 1)).unwrap();
        assert!((local.energy - exact.energy).abs() < 1e-9, "seed {seed}: {} vs {}", local.energy, exact.energy);
    }
}

#[test]
fn extra_skew_labels_do_not_help_a_constant_density() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let p = CellProblem::new(Vec2::zeros(), 4.0, e2(), e1(), f).with_h(0.5).with_class(LabelClass::Skew);
    let mut dict = p.boundary_labels().to_vec();
    for k in 0..5 {
        let s = 0.3 * (k as f64 - 2.0) + 0.1;
        dict.push(RigidLabel::new(skew(s), Vec2::new(0.2 * k as f64, -0.1)));
    }
    let r = solve_local(&p, &dict, &Schedule::default(), EnvSeed::new(9, 0)).unwrap();
    assert!((r.energy - 4.0).abs() < 1e-9);
    assert!(r.certificate.unwrap() <= r.energy + 1e-12);
}

#[test]
fn local_search_does_not_lose_the_strip_competitor() {
    let cfg = CounterexConfig::new(100.0, 0.5, 0.125, 1.0 / 64.0);
    let f = cfg.density().unwrap();
    let strip = build_strip_competitor(&cfg).unwrap();
    let strip_energy = surface_energy(&strip, &f, cfg.epsilon, None);
    let p = CellProblem::new(Vec2::zeros(), 1.0, e2(), e1(), f)
        .with_h(cfg.h)
        .with_epsilon(cfg.epsilon)
        .with_class(LabelClass::Skew);
    let sched = Schedule { sweeps: 0, t0: 0.0, cooling: 0.5, icm_passes: 3, proposal_rounds: 0, expansion_cycles: 1 };
    let r = solve_local_from(&p, &strip.labels, &sched, EnvSeed::new(1, 0), &strip).unwrap();
    assert!(r.energy <= strip_energy + 1e-9, "{} > {strip_energy}", r.energy);
}

#[test]
fn solver_rejects_bad_input() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let p = CellProblem::new(Vec2::zeros(), 2.0, e2(), e1(), f.clone()).with_h(0.5);
    assert!(solve_local(&p, &[], &Schedule::default(), EnvSeed::new(0, 0)).is_err());
    assert!(solve_mincut(&p.clone().with_class(LabelClass::Skew)).is_err());
    assert!(solve_mincut(&CellProblem::new(Vec2::zeros(), 2.0, e2(), Vec2::zeros(), f)).is_err());
}

#[test]
fn glue_examples() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let p = CellProblem::new(Vec2::zeros(), 4.0, e2(), e1(), f.clone()).with_h(0.5);
    let outer = boundary_field(&p).unwrap();
    let all = vec![true; outer.grid.len()];
    let same = glue(&outer, &outer, &all).unwrap();
    assert_eq!(surface_energy(&same, &f, 1.0, None), surface_energy(&outer, &f, 1.0, None));
    for c in 0..outer.grid.len() {
        assert_eq!(same.value(c, outer.grid.center(c)), outer.value(c, outer.grid.center(c)));
    }

    // Inner field that deviates only deep inside the subregion.
    let g = &outer.grid;
    let sub: Vec<bool> = (0..g.len()).map(|c| g.center(c).x < 0.0).collect();
    let mut inner = outer.clone();
    inner.labels.push(RigidLabel::constant(Vec2::new(0.0, 3.0)));
    let deep = (0..g.len()).find(|&c| (g.center(c) - Vec2::new(-1.25, 0.25)).norm() < 1e-9).unwrap();
    inner.assignment[deep] = 2;
    let glued = glue(&inner, &outer, &sub).unwrap();
    assert_eq!(glued.value(deep, g.center(deep)), Vec2::new(0.0, 3.0));

    // Deviation inside the band is rejected.
    let mut bad = outer.clone();
    let edge = (0..g.len()).find(|&c| (g.center(c) - Vec2::new(-0.25, 1.25)).norm() < 1e-9).unwrap();
    bad.labels.push(RigidLabel::constant(Vec2::new(0.0, 3.0)));
    bad.assignment[edge] = 2;
    assert!(glue(&bad, &outer, &sub).is_err());
}

#[test]
fn glued_minimizers_are_feasible_for_the_union() {
    let f = SurfaceDensity::checkerboard(vec![1.0, 3.0], EnvSeed::new(2, 0)).unwrap();
    let left = CellProblem::new(Vec2::new(-1.0, 0.0), 2.0, e2(), e1(), f.clone()).with_h(0.5);
    let right = CellProblem::new(Vec2::new(1.0, 0.0), 2.0, e2(), e1(), f.clone()).with_h(0.5);
    let ul = solve_mincut(&left).unwrap();
    let ur = solve_mincut(&right).unwrap();
    // Embed both into the 4x2 rectangle carrying the union datum.
    let grid = Grid::rect(-2.0, -1.0, 0.5, 8, 4).unwrap();
    let datum = LabelField::from_fn(grid.clone(), ul.field.labels.clone(), |x| (x.y >= 0.0) as u32).unwrap();
    let lift = |u: &LabelField, x0: f64| {
        LabelField::from_fn(grid.clone(), u.labels.clone(), |x| {
            if x.x > x0 && x.x < x0 + 2.0 {
                let c = (0..u.grid.len()).find(|&c| (u.grid.center(c) - x).norm() < 1e-9).unwrap();
                u.assignment[c]
            } else {
                (x.y >= 0.0) as u32
            }
        })
        .unwrap()
    };
    let a = lift(&ul.field, -2.0);
    let b = lift(&ur.field, 0.0);
    let sub: Vec<bool> = (0..grid.len()).map(|c| grid.center(c).x < 0.0).collect();
    let glued = glue(&a, &b, &sub).unwrap();
    let band = frozen_band(&grid, 1);
    for c in 0..grid.len() {
        if band[c] {
            assert_eq!(glued.value(c, grid.center(c)), datum.value(c, grid.center(c)));
        }
    }
    let e = surface_energy(&glued, &f, 1.0, None);
    assert!(e <= ul.energy + ur.energy + 1e-9);
}

#[test]
fn truncation_examples() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let p = CellProblem::new(Vec2::zeros(), 4.0, e2(), e1(), f.clone()).with_h(0.5);
    let bdata = boundary_field(&p).unwrap();
    let (same, stats) = truncate_field(&bdata, 10.0, 0.1, &bdata).unwrap();
    assert_eq!(stats.rest_area, 0.0);
    assert_eq!(surface_energy(&same, &f, 1.0, None), surface_energy(&bdata, &f, 1.0, None));

    // Every interior label exceeds lambda.
    let g = bdata.grid.clone();
    let band = frozen_band(&g, 1);
    let mut big = bdata.clone();
    big.labels.push(RigidLabel::constant(Vec2::new(50.0, 0.0)));
    for c in 0..g.len() {
        if !band[c] {
            big.assignment[c] = 2;
        }
    }
    let (out, _) = truncate_field(&big, 10.0, 0.1, &bdata).unwrap();
    for c in 0..g.len() {
        assert_eq!(out.value(c, g.center(c)), bdata.value(c, g.center(c)));
    }
    assert!(out.sup_norm() <= 10.0);
}

#[test]
fn nested_dictionaries_rejected_when_not_nested() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let p = CellProblem::new(Vec2::zeros(), 2.0, e2(), e1(), f).with_h(0.5).with_class(LabelClass::Skew);
    let base = p.boundary_labels().to_vec();
    let other = vec![base[0], RigidLabel::constant(Vec2::new(0.0, 9.0))];
    assert!(solve_local_nested(&p, &[base, other], &Schedule::default(), EnvSeed::new(0, 0)).is_err());
}

fn table_density() -> impl Strategy<Value = SurfaceDensity> {
    prop::collection::vec(1.0f64..4.0, 4).prop_map(|v| SurfaceDensity::periodic_table(2, 2, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mincut_matches_enumeration(f in table_density(), zx in -2.0f64..2.0, fix in prop::collection::vec(0u8..3, 16)) {
        // 4x4 grid, up to 16 free cells.
        let grid = Grid::rect(0.0, 0.0, 0.5, 4, 4).unwrap();
        let fixed: Vec<Option<bool>> = fix.iter().map(|&k| match k { 0 => None, 1 => Some(true), _ => Some(false) }).collect();
        let a = RigidLabel::constant(Vec2::new(zx, 1.0));
        let b = RigidLabel::constant(Vec2::zeros());
        let (side, flow) = mincut_two_labels(&grid, &fixed, &a, &b, &f, 1.0);
        let asg: Vec<u32> = side.iter().map(|&s| if s { 0 } else { 1 }).collect();
        let u = LabelField::new(grid.clone(), vec![a, b], asg).unwrap();
        let e = surface_energy(&u, &f, 1.0, None);
        let oracle = brute_force(&grid, &fixed, &a, &b, &f);
        prop_assert!((e - oracle).abs() < 1e-9, "{} vs {}", e, oracle);
        prop_assert!((flow - oracle).abs() < 1e-9);
    }

    #[test]
    fn cell_energy_between_column_bound_and_flat(f in table_density(), zx in -2.0f64..2.0, eps in 0.5f64..2.0) {
        let t = 3.0;
        let p = CellProblem::new(Vec2::zeros(), t, e2(), Vec2::new(zx, 1.0), f.clone()).with_h(0.25).with_epsilon(eps);
        let r = solve_mincut(&p).unwrap();
        let flat = surface_energy(&boundary_field(&p).unwrap(), &f, eps, None);
        let c1 = f.params.c1;
        prop_assert!(r.energy <= flat + 1e-9);
        prop_assert!(r.energy <= f.params.c2 * t + 1e-9);
        prop_assert!(r.energy >= c1 * t - 1e-9);
        let lb = slicing_lower_bound(&r.field, &f, eps, e2()).unwrap();
        prop_assert!(lb <= r.energy + 1e-9);
        prop_assert!(lb >= c1 * t - 1e-9);
    }

    #[test]
    fn nested_dictionaries_are_monotone(seed in 0u64..1000, s1 in 0.1f64..1.0, s2 in 0.1f64..1.0) {
        let f = SurfaceDensity::checkerboard(vec![1.0, 2.0], EnvSeed::new(seed, 0)).unwrap();
        let p = CellProblem::new(Vec2::zeros(), 2.0, e2(), e1(), f).with_h(0.25).with_class(LabelClass::Skew);
        let d0 = p.boundary_labels().to_vec();
        let mut d1 = d0.clone();
        d1.push(RigidLabel::new(skew(s1), e1()));
        let mut d2 = d1.clone();
        d2.push(RigidLabel::new(skew(-s2), Vec2::zeros()));
        let sched = Schedule { sweeps: 4, ..Schedule::default() };
        let out = solve_local_nested(&p, &[d0, d1, d2], &sched, EnvSeed::new(seed, 1)).unwrap();
        prop_assert!(out[1].energy <= out[0].energy + 1e-12);
        prop_assert!(out[2].energy <= out[1].energy + 1e-12);
    }

    #[test]
    fn far_pieces_are_truncated_with_bounded_cost(bx in 1e3f64..1e6, i in 2usize..6, j in 2usize..6) {
        let f = SurfaceDensity::constant(1.0).unwrap();
        let p = CellProblem::new(Vec2::zeros(), 4.0, e2(), e1(), f.clone()).with_h(0.5);
        let bdata = boundary_field(&p).unwrap();
        let mut u = bdata.clone();
        u.labels.push(RigidLabel::constant(Vec2::new(bx, 0.0)));
        let c = u.grid.idx(i, j);
        u.assignment[c] = 2;
        let (out, stats) = truncate_field(&u, 10.0, 0.01, &bdata).unwrap();
        prop_assert_eq!(out.value(c, u.grid.center(c)), bdata.value(c, u.grid.center(c)));
        let before = surface_energy(&u, &f, 1.0, None);
        let after = surface_energy(&out, &f, 1.0, None);
        prop_assert!(after <= before + f.params.c2 * stats.rest_perimeter + 1e-9);
    }
}
