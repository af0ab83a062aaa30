use proptest::prelude::*;
use rigidhom::approx::{
    approximate, build_recovery, delinearize, detect_interfaces, linearize_labels, mincut_cell_solver, project_so2,
    rotation_angle, ApproxParams, RecoveryParams,
};
use rigidhom::cellsolve::{CellProblem, CellResult, SolverTag};
use rigidhom::counterex::{build_strip_competitor, CounterexConfig};
use rigidhom::energy::{surface_energy, DeformField};
use rigidhom::env::{EnvSeed, SurfaceDensity};
use rigidhom::fields::{Face, Grid, LabelClass, LabelField, RigidLabel};
use rigidhom::{rotation, skew, Mat2, Vec2};

fn e1() -> Vec2 {
    Vec2::new(1.0, 0.0)
}

fn e2() -> Vec2 {
    Vec2::new(0.0, 1.0)
}

/// Frobenius distance to SO(2) by scanning the angle.
fn grid_distance(m: &Mat2) -> (f64, f64) {
    let n = 200_000;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..n {
        let th = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let d = (m - rotation(th)).norm();
        if d < best.0 {
            best = (d, th);
        }
    }
    best
}

#[test]
fn projection_examples() {
    assert_eq!(project_so2(&Mat2::identity()).unwrap(), Mat2::identity());
    let r = rotation(0.7);
    assert!((project_so2(&(2.0 * r)).unwrap() - r).norm() < 1e-15);
    let m = Mat2::identity() + skew(0.1);
    let p = project_so2(&m).unwrap();
    assert!((rotation_angle(&p) - (-0.2f64).atan2(2.0)).abs() < 1e-15);
    let (d, _) = grid_distance(&m);
    assert!(((m - p).norm() - d).abs() < 1e-6);
    assert!(project_so2(&Mat2::zeros()).is_err());
    assert!(project_so2(&Mat2::new(1.0, 0.0, 0.0, -1.0)).is_err());
}

#[test]
fn rigid_input_is_reproduced() {
    let g = Grid::rect(0.0, 0.0, 1.0 / 16.0, 16, 16).unwrap();
    let cracks: Vec<Face> = (0..16).map(|i| g.face_between(g.idx(i, 9), g.idx(i, 10))).collect();
    let (r1, r2) = (rotation(0.2), rotation(1.1));
    let y = DeformField::from_fn(
        g.clone(),
        |c, x| if g.ij(c).1 < 10 { r1 * x } else { r2 * x + Vec2::new(0.3, -0.4) },
        cracks,
    )
    .unwrap();
    let (u, rep) = approximate(&y, &ApproxParams::new(0.05, 0.8)).unwrap();
    assert!(rep.linf_error < 1e-12);
    assert_eq!(rep.extra_jump_length, 0.0);
    assert_eq!(rep.subdivided_pieces, 0);
    for c in 0..g.len() {
        let x = g.center(c);
        let want = if g.ij(c).1 < 10 { r1 * x } else { r2 * x + Vec2::new(0.3, -0.4) };
        assert!((u.value(c, x) - want).norm() < 1e-12);
    }
}

#[test]
fn near_rigid_global_map_is_one_piece() {
    let (beta, gamma) = (0.8, 0.6);
    let run = |delta: f64| {
        let g = Grid::rect(0.0, 0.0, 1.0 / 32.0, 32, 32).unwrap();
        let m = Mat2::identity() + delta * skew(1.0);
        let y = DeformField::from_fn(g, |_, x| m * x, []).unwrap();
        approximate(&y, &ApproxParams { gamma: Some(gamma), ..ApproxParams::new(delta, beta) }).unwrap().1
    };
    let cal = run(0.1);
    assert_eq!(cal.piece_count, 1);
    let c = cal.linf_error / cal.linf_scale;
    let rep = run(0.05);
    assert_eq!(rep.piece_count, 1);
    assert_eq!(rep.rotation_distances.len(), 1);
    assert!(rep.linf_error <= c * rep.linf_scale + 1e-12, "{} > {}", rep.linf_error, c * rep.linf_scale);
}

#[test]
fn far_from_rotation_piece_is_subdivided() {
    let (delta, beta, gamma) = (0.05, 0.8, 0.6);
    let p = ApproxParams { gamma: Some(gamma), ..ApproxParams::new(delta, beta) };
    let target = 4.0 * p.c_star * p.linf_scale();
    // |lambda I - I| = sqrt(2) |lambda - 1|.
    let lambda = 1.0 + target / 2f64.sqrt();
    let g = Grid::rect(0.0, 0.0, 1.0 / 64.0, 64, 64).unwrap();
    let y = DeformField::from_fn(g, |_, x| lambda * x, []).unwrap();
    let (_, rep) = approximate(&y, &p).unwrap();
    assert_eq!(rep.piece_count, 1);
    assert!((rep.rotation_distances[0] - target).abs() < 1e-9);
    assert_eq!(rep.subdivided_pieces, 1);
    assert!(rep.cuboid_count > 1);
    assert!(rep.linf_error <= rep.linf_scale, "{} > {}", rep.linf_error, rep.linf_scale);
}

#[test]
fn approximation_rejects_bad_parameters() {
    let g = Grid::rect(0.0, 0.0, 0.25, 4, 4).unwrap();
    let y = DeformField::from_fn(g, |_, x| x, []).unwrap();
    assert!(approximate(&y, &ApproxParams { gamma: Some(0.9), ..ApproxParams::new(0.1, 0.8) }).is_err());
    assert!(approximate(&y, &ApproxParams::new(1.5, 0.8)).is_err());
}

fn rotation_field(thetas: &[f64]) -> LabelField {
    let g = Grid::rect(0.0, 0.0, 0.25, 4, thetas.len()).unwrap();
    let labels = thetas.iter().map(|&t| RigidLabel::new(rotation(t), Vec2::new(0.01, -0.02))).collect();
    LabelField::from_fn(g, labels, |x| (x.y / 0.25).floor() as u32).unwrap()
}

#[test]
fn linearization_examples() {
    let (delta, alpha) = (0.01f64, 0.5);
    let s = delta.powf(0.75 * alpha);
    let lin = linearize_labels(&rotation_field(&[0.0, s]), delta, alpha).unwrap();
    assert_eq!(lin.generators[0], Mat2::zeros());
    let m = lin.generators[1];
    assert!((m[(0, 1)] + s.sin() / s).abs() < 1e-15);
    assert!((m[(0, 1)] + 1.0).abs() < 0.01);
    assert!(lin.residuals[1] <= s * s);
    lin.field.check_class(LabelClass::Skew).unwrap();
    // Translations rescaled by delta^-alpha.
    assert!((lin.field.labels[0].b - Vec2::new(0.01, -0.02) / delta.powf(alpha)).norm() < 1e-12);
    assert!(linearize_labels(&rotation_field(&[std::f64::consts::FRAC_PI_4]), delta, alpha).is_err());
}

#[test]
fn interfaces_of_a_half_plane_split() {
    let g = Grid::rect(0.0, -0.5, 0.125, 8, 8).unwrap();
    let labels = vec![RigidLabel::constant(Vec2::zeros()), RigidLabel::constant(e1())];
    let u = LabelField::from_fn(g, labels, |x| (x.y >= 0.0) as u32).unwrap();
    let ifs = detect_interfaces(&u);
    assert_eq!(ifs.len(), 1);
    assert_eq!(ifs[0].normal, e2());
    assert!((ifs[0].length() - 1.0).abs() < 1e-12);
    assert_eq!(ifs[0].plus.b - ifs[0].minus.b, e1());
}

fn split_field(h: f64) -> LabelField {
    let n = (1.0 / h).round() as usize;
    let g = Grid::rect(0.0, -0.5, h, n, n).unwrap();
    let labels = vec![RigidLabel::constant(Vec2::zeros()), RigidLabel::constant(e1())];
    LabelField::from_fn(g, labels, |x| (x.y >= 0.0) as u32).unwrap()
}

#[test]
fn recovery_under_constant_density_is_the_datum() {
    let f = SurfaceDensity::constant(1.0).unwrap();
    let eps = 1.0 / 16.0;
    let u = split_field(0.25 * eps);
    let params = RecoveryParams { epsilon: eps, eta: 0.05, rho: 0.5, t: 4, cell_h: 0.25, kappa: 0.1 };
    let (v, rep) = build_recovery(&u, &f, &params, &|_, _| 1.0, &mincut_cell_solver(0.25)).unwrap();
    assert!((rep.energy - 1.0).abs() < 1e-12);
    assert!((rep.predicted - 1.0).abs() < 1e-12);
    assert!(rep.eta_ok);
    assert_eq!(rep.interfaces, 1);
    assert_eq!(rep.base_points.len(), 2);
    for c in 0..u.grid.len() {
        let x = u.grid.center(c);
        assert_eq!(v.value(c, x), u.value(c, x));
    }
}

#[test]
fn recovery_rejects_random_densities() {
    let f = SurfaceDensity::checkerboard(vec![1.0, 2.0], EnvSeed::new(0, 0)).unwrap();
    let eps = 0.25;
    let u = split_field(0.25 * eps);
    let params = RecoveryParams { epsilon: eps, eta: 0.05, rho: 0.5, t: 4, cell_h: 0.25, kappa: 0.1 };
    assert!(build_recovery(&u, &f, &params, &|_, _| 1.0, &mincut_cell_solver(0.25)).is_err());
}

#[test]
fn laminate_recovery_matches_the_homogenised_value() {
    let f = SurfaceDensity::laminate();
    let eps = 1.0 / 16.0;
    let u = split_field(0.125 * eps);
    let params = RecoveryParams { epsilon: eps, eta: 0.05, rho: 0.5, t: 4, cell_h: 0.125, kappa: 0.1 };
    let (_, rep) = build_recovery(&u, &f, &params, &|_, _| 0.5, &mincut_cell_solver(0.125)).unwrap();
    assert!(rep.energy <= 0.5 * (1.0 + 0.05) + eps, "{}", rep.energy);
    assert!(rep.energy >= 0.5 - 1e-12);
}

/// One fine cube over the whole interface, filled with the strip construction itself.
#[test]
fn recovery_with_the_strip_cell_matches_the_counterexample() {
    let (a, eps, t, cell_h) = (100.0, 1.0 / 16.0, 16usize, 0.125);
    let f = SurfaceDensity::counterexample(a).unwrap();
    let unit = CounterexConfig::new(a, t as f64 / 2.0, 1.0, cell_h);
    let strip_unit = build_strip_competitor(&unit).unwrap();
    let solver = |p: &CellProblem| {
        let g = p.grid()?;
        let shift = p.center;
        let labels: Vec<RigidLabel> = strip_unit.labels.iter().map(|l| RigidLabel::new(l.m, l.b - l.m * shift)).collect();
        let field = LabelField::new(g, labels, strip_unit.assignment.clone())?;
        Ok(CellResult {
            energy: surface_energy(&field, &p.density, p.epsilon, None),
            field,
            solver: SolverTag::Local,
            certificate: None,
            gap: None,
            discretization_bias: false,
        })
    };
    let u = split_field(cell_h * eps);
    let params = RecoveryParams { epsilon: eps, eta: 0.05, rho: 0.5, t, cell_h, kappa: 0.1 };
    let (_, rep) = build_recovery(&u, &f, &params, &|_, _| 2112.0, &solver).unwrap();
    assert_eq!(rep.fine_cubes, 1);

    let cfg = CounterexConfig::new(a, 0.5, eps, cell_h * eps);
    let strip = build_strip_competitor(&cfg).unwrap();
    let target = surface_energy(&strip, &cfg.density().unwrap(), eps, None);
    let rel = (rep.energy - target).abs() / target;
    assert!(rel <= 0.1, "recovery {} vs strip {target}", rep.energy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_beats_the_angle_scan(m in prop::array::uniform4(-3.0f64..3.0)) {
        let m = Mat2::new(m[0], m[1], m[2], m[3]);
        prop_assume!(Vec2::new(m[(0, 0)] + m[(1, 1)], m[(1, 0)] - m[(0, 1)]).norm() > 1e-3);
        let p = project_so2(&m).unwrap();
        prop_assert!((p.transpose() * p - Mat2::identity()).norm() < 1e-12);
        prop_assert!((p.determinant() - 1.0).abs() < 1e-12);
        let grid = (0..2000).map(|k| (m - rotation(k as f64 * std::f64::consts::TAU / 2000.0)).norm()).fold(f64::INFINITY, f64::min);
        prop_assert!((m - p).norm() <= grid + 1e-12);
    }

    #[test]
    fn delinearized_generators_reproduce_rotations(u in prop::collection::vec(-1.0f64..1.0, 1..5), delta in 0.001f64..0.1, alpha in 0.2f64..0.9) {
        let s = delta.powf(0.75 * alpha);
        let thetas: Vec<f64> = u.iter().map(|v| v * s).collect();
        let lin = linearize_labels(&rotation_field(&thetas), delta, alpha).unwrap();
        for (k, th) in thetas.iter().enumerate() {
            let back = delinearize(&lin.generators[k], lin.scale);
            prop_assert!((back - rotation(*th)).norm() <= 2.0 * s * s);
        }
    }

    #[test]
    fn approximation_is_idempotent_on_rigid_fields(t1 in -1.0f64..1.0, t2 in -1.0f64..1.0, col in 3usize..13, b in prop::array::uniform2(-1.0f64..1.0)) {
        let g = Grid::rect(0.0, 0.0, 1.0 / 16.0, 16, 16).unwrap();
        let cracks: Vec<Face> = (0..16).map(|j| g.face_between(g.idx(col, j), g.idx(col + 1, j))).collect();
        let (r1, r2) = (rotation(t1), rotation(t2));
        let shift = Vec2::new(b[0], b[1]);
        let y = DeformField::from_fn(g.clone(), |c, x| if g.ij(c).0 <= col { r1 * x } else { r2 * x + shift }, cracks).unwrap();
        let (_, rep) = approximate(&y, &ApproxParams::new(0.05, 0.8)).unwrap();
        prop_assert!(rep.linf_error < 1e-12);
        prop_assert_eq!(rep.extra_jump_length, 0.0);
    }
}
