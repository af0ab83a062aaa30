//! Estimation of f_hom through cube problems and the subadditive process.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellsolve::{mincut_two_labels, CellProblem, LocalSearch, Method, Schedule, SolverConfig, SolverTag};
use crate::energy::surface_energy;
use crate::env::{AxiomCheck, AxiomReport, AxiomStatus, DensityParams, EnvSeed, SurfaceDensity};
use crate::error::{invalid, Error, Result};
use crate::fields::{LabelField, OUTSIDE};
use crate::{check_unit, Vec2};

/// Largest denominator accepted when rationalising a normal.
pub const DENOMINATOR_CAP: u64 = 20;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Best rational approximation with denominator <= cap, by continued fractions.
fn rationalize(x: f64, cap: u64) -> Option<(i64, u64)> {
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1u64, 1i64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let (p2, q2) = (a as i64 * p1 + p0, a as u64 * q1 + q0);
        if q2 > cap {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - a;
        if (x - p1 as f64 / q1 as f64).abs() <= 1e-12 || frac == 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    (q1 > 0 && (x - p1 as f64 / q1 as f64).abs() <= 1e-12).then_some((p1, q1))
}

/// M_nu: smallest integer with M_nu * nu in Z^2.
pub fn rational_scale(nu: Vec2) -> Result<u64> {
    check_unit(nu)?;
    let comp = |v: f64| {
        let (p, q) = rationalize(v.abs(), DENOMINATOR_CAP)
            .ok_or_else(|| Error::UnsupportedDirection(format!("normal ({}, {}) is not rational within the denominator cap", nu.x, nu.y)))?;
        Ok::<_, Error>((p.unsigned_abs(), q))
    };
    let ((p1, q1), (p2, q2)) = (comp(nu.x)?, comp(nu.y)?);
    let l = q1 / gcd(q1, q2) * q2;
    let (a, b) = (p1 * (l / q1), p2 * (l / q2));
    if a * a + b * b != l * l {
        return Err(Error::UnsupportedDirection(format!("({}, {}) is not a rational point of the circle", nu.x, nu.y)));
    }
    Ok(l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubadditiveSample {
    pub omega: EnvSeed,
    pub zeta: Vec2,
    pub nu: Vec2,
    pub rect: (f64, f64),
    pub m_nu: u64,
    pub value: f64,
    pub solver: SolverTag,
    pub gap: Option<f64>,
}

/// Cube problem on T_nu(rect) = M_nu R_nu (rect x [-c, c)) with datum u_{0,zeta,nu}.
pub fn tnu_problem(
    f: &SurfaceDensity,
    zeta: Vec2,
    nu: Vec2,
    rect: (f64, f64),
    cfg: &SolverConfig,
) -> Result<(CellProblem, u64)> {
    if !(rect.1 > rect.0) {
        return invalid("rectangle must have positive length");
    }
    let m = rational_scale(nu)?;
    let tangent = Vec2::new(nu.y, -nu.x);
    let center = m as f64 * (rect.0 + rect.1) / 2.0 * tangent;
    let side = m as f64 * (rect.1 - rect.0);
    Ok((cfg.problem(center, side, nu, Vec2::zeros(), zeta, f.clone()), m))
}

pub fn mu_sample(
    f: &SurfaceDensity,
    omega: EnvSeed,
    zeta: Vec2,
    nu: Vec2,
    rect: (f64, f64),
    cfg: &SolverConfig,
) -> Result<SubadditiveSample> {
    let env = f.realize(omega);
    let (p, m) = tnu_problem(&env, zeta, nu, rect, cfg)?;
    let r = cfg.solve(&p, omega)?;
    Ok(SubadditiveSample {
        omega,
        zeta,
        nu,
        rect,
        m_nu: m,
        value: r.energy / m as f64,
        solver: r.solver,
        gap: r.gap,
    })
}

/// r(t) >= t.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RMap {
    #[default]
    Identity,
    Linear { factor: f64 },
}

impl RMap {
    pub fn apply(&self, t: f64) -> f64 {
        match self {
            RMap::Identity => t,
            RMap::Linear { factor } => factor * t,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RMap::Linear { factor } if !(*factor >= 1.0) => invalid("r-map needs r(t) >= t"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FHomRequest {
    pub zeta: Vec2,
    pub nu: Vec2,
    pub t_schedule: Vec<f64>,
    pub omega_count: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub solver: SolverConfig,
    #[serde(default)]
    pub r_map: RMap,
    #[serde(default = "origin")]
    pub base_point: Vec2,
}

fn origin() -> Vec2 {
    Vec2::zeros()
}

impl FHomRequest {
    pub fn new(zeta: Vec2, nu: Vec2, t_schedule: Vec<f64>, omega_count: usize, solver: SolverConfig) -> Self {
        FHomRequest { zeta, nu, t_schedule, omega_count, base_seed: 0, solver, r_map: RMap::Identity, base_point: Vec2::zeros() }
    }

    pub fn omegas(&self) -> Vec<EnvSeed> {
        (0..self.omega_count as u64).map(|k| EnvSeed::new(self.base_seed, k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FHomEstimate {
    pub zeta: Vec2,
    pub nu: Vec2,
    pub t_schedule: Vec<f64>,
    pub r_map: RMap,
    pub base_point: Vec2,
    pub omegas: Vec<EnvSeed>,
    /// `values[k][w]` = m / r(t_k) for realisation `w`.
    pub values: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub estimate: f64,
    pub ci: f64,
    pub converged: bool,
    /// Ensemble mean over a random environment.
    pub ergodic: bool,
    pub discretization_bias: bool,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var)
}

pub fn estimate_fhom(f: &SurfaceDensity, req: &FHomRequest) -> Result<FHomEstimate> {
    let ts = &req.t_schedule;
    if ts.len() < 2 || ts.windows(2).any(|w| !(w[1] > w[0])) || ts[0] <= 0.0 {
        return invalid("t schedule must be increasing with at least two entries");
    }
    if req.omega_count < 2 {
        return invalid("at least two realisations are needed for a confidence interval");
    }
    req.r_map.validate()?;
    let omegas = req.omegas();
    let random = f.is_random();
    let jobs: Vec<(usize, usize)> =
        (0..ts.len()).flat_map(|k| (0..if random { omegas.len() } else { 1 }).map(move |w| (k, w))).collect();
    let solved: Vec<Result<(f64, bool)>> = jobs
        .par_iter()
        .map(|&(k, w)| {
            let t = ts[k];
            let r = req.r_map.apply(t);
            let x = t * req.base_point;
            let env = f.realize(omegas[w]);
            let p = req.solver.problem(x, r, req.nu, x, req.zeta, env);
            let res = req.solver.solve(&p, omegas[w])?;
            Ok((res.energy / r, res.discretization_bias))
        })
        .collect();
    let mut values = vec![Vec::with_capacity(omegas.len()); ts.len()];
    let mut bias = false;
    for (&(k, _), r) in jobs.iter().zip(solved) {
        let (v, b) = r?;
        bias |= b;
        if random {
            values[k].push(v);
        } else {
            values[k] = vec![v; omegas.len()];
        }
    }
    let (means, variances): (Vec<f64>, Vec<f64>) = values.iter().map(|v| mean_var(v)).unzip();
    let last = ts.len() - 1;
    let ci = 1.96 * (variances[last] / omegas.len() as f64).sqrt();
    let converged = (means[last] - means[last - 1]).abs() <= ci.max(1e-12 * means[last].abs());
    Ok(FHomEstimate {
        zeta: req.zeta,
        nu: req.nu,
        t_schedule: ts.clone(),
        r_map: req.r_map,
        base_point: req.base_point,
        omegas,
        estimate: means[last],
        values,
        means,
        variances,
        ci,
        converged,
        ergodic: random,
        discretization_bias: bias,
    })
}

/// Estimates over a (zeta, nu) grid, optionally with the antipodal pairs (-zeta, -nu).
pub fn fhom_table(
    f: &SurfaceDensity,
    zetas: &[Vec2],
    nus: &[Vec2],
    antipodes: bool,
    template: &FHomRequest,
) -> Result<Vec<FHomEstimate>> {
    let mut out = Vec::new();
    for &nu in nus {
        for &zeta in zetas {
            let mut pairs = vec![(zeta, nu)];
            if antipodes {
                pairs.push((-zeta, -nu));
            }
            for (z, n) in pairs {
                let req = FHomRequest { zeta: z, nu: n, ..template.clone() };
                out.push(estimate_fhom(f, &req)?);
            }
        }
    }
    Ok(out)
}

fn close(a: &Vec2, b: &Vec2) -> bool {
    (a - b).norm() <= 1e-12
}

/// Bounds, (f3)/(f4) monotonicity, (f7) symmetry and base-point independence of an estimate table.
pub fn check_fhom_axioms(table: &[FHomEstimate], params: &DensityParams) -> AxiomReport {
    let mut rep = AxiomReport::default();
    let slack = |a: &FHomEstimate, b: &FHomEstimate| a.ci + b.ci + 1e-9 * a.estimate.abs().max(b.estimate.abs());
    let mut mags: Vec<f64> = table.iter().map(|e| e.zeta.norm()).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let mut dirs: Vec<Vec2> = Vec::new();
    for e in table {
        if !dirs.iter().any(|d| close(d, &e.nu) || close(d, &-e.nu)) {
            dirs.push(e.nu);
        }
    }
    let covered = mags.len() >= 2 && dirs.len() >= 2;

    let (mut worst, mut n) = (0.0f64, 0);
    for e in table {
        for v in e.values.iter().flatten() {
            n += 1;
            worst = worst.max(params.c1 - v).max(v - params.c2);
        }
    }
    rep.push("bounds", worst.max(0.0), n, "c1 <= m/r(t) <= c2 for every stored ratio");

    let (mut w3, mut n3, mut w4, mut n4, mut w7, mut n7, mut wx, mut nx) = (0.0f64, 0, 0.0f64, 0, 0.0f64, 0, 0.0f64, 0);
    for a in table {
        for b in table {
            let same_base = close(&a.base_point, &b.base_point);
            if same_base && close(&a.nu, &b.nu) {
                if a.zeta.norm() <= b.zeta.norm() {
                    n3 += 1;
                    w3 = w3.max(a.estimate - params.c0 * b.estimate - (a.ci + params.c0 * b.ci) - 1e-9 * a.estimate);
                }
                if params.c0 * a.zeta.norm() <= b.zeta.norm() {
                    n4 += 1;
                    w4 = w4.max(a.estimate - b.estimate - slack(a, b));
                }
            }
            if same_base && close(&a.zeta, &-b.zeta) && close(&a.nu, &-b.nu) {
                n7 += 1;
                w7 = w7.max((a.estimate - b.estimate).abs() - slack(a, b));
            }
            if !same_base && close(&a.zeta, &b.zeta) && close(&a.nu, &b.nu) {
                nx += 1;
                wx = wx.max((a.estimate - b.estimate).abs() - slack(a, b));
            }
        }
    }
    rep.push("f3", w3.max(0.0), n3, "|z1| <= |z2| => f(z1) <= c0 f(z2) within CI");
    rep.push("f4", w4.max(0.0), n4, "c0|z1| <= |z2| => f(z1) <= f(z2) within CI");
    rep.push("f7", w7.max(0.0), n7, "f(z,n) = f(-z,-n) within CI");
    rep.push("x_independence", wx.max(0.0), nx, "equal estimates at distinct base points within CI");
    if !covered {
        rep.checks.push(AxiomCheck {
            axiom: "coverage".into(),
            status: AxiomStatus::NotCovered,
            worst_violation: 0.0,
            samples: table.len(),
            note: format!("{} magnitudes, {} directions", mags.len(), dirs.len()),
        });
    }
    rep
}

/// Infimum of the surface energy over fields equal to `u0` on `frozen`.
pub fn dirichlet_infimum(
    u0: &LabelField,
    frozen: &[bool],
    epsilon: f64,
    f: &SurfaceDensity,
    method: &Method,
    seed: EnvSeed,
) -> Result<f64> {
    Ok(surface_energy(&dirichlet_minimizer(u0, frozen, epsilon, f, method, seed)?, f, epsilon, None))
}

pub fn dirichlet_minimizer(
    u0: &LabelField,
    frozen: &[bool],
    epsilon: f64,
    f: &SurfaceDensity,
    method: &Method,
    seed: EnvSeed,
) -> Result<LabelField> {
    let g = &u0.grid;
    if frozen.len() != g.len() || !(0..g.len()).any(|c| g.mask[c] && frozen[c]) {
        return invalid("the frozen region V is empty");
    }
    if !(epsilon > 0.0) {
        return invalid("epsilon must be positive");
    }
    let u = u0.canonicalize();
    match u.labels.len() {
        1 => Ok(u),
        2 => {
            let fixed: Vec<Option<bool>> =
                (0..g.len()).map(|c| (g.mask[c] && frozen[c]).then(|| u.assignment[c] == 1)).collect();
            let (side, _) = mincut_two_labels(g, &fixed, &u.labels[1], &u.labels[0], f, epsilon);
            let asg = (0..g.len()).map(|c| if g.mask[c] { side[c] as u32 } else { OUTSIDE }).collect();
            LabelField::new(g.clone(), u.labels.clone(), asg)
        }
        _ => {
            let schedule = match method {
                Method::Local { schedule, .. } => schedule.clone(),
                Method::MinCut => Schedule::default(),
            };
            let fz: Vec<bool> = (0..g.len()).map(|c| g.mask[c] && frozen[c]).collect();
            let mut s = LocalSearch {
                grid: g,
                density: f,
                eps: epsilon,
                frozen: &fz,
                dict: u.labels.clone(),
                class: crate::fields::LabelClass::Skew,
                truncation: None,
                cap: None,
            };
            let asg = s.run(u.assignment.clone(), &schedule, seed);
            LabelField::new(g.clone(), s.dict.clone(), asg)
        }
    }
}
