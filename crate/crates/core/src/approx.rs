//! Piecewise rigid approximation of deformations, rotation linearisation and
//! recovery fields built from periodic cell minimisers.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellsolve::{CellProblem, CellResult, SolverConfig};
use crate::energy::{surface_energy, DeformField};
use crate::env::SurfaceDensity;
use crate::error::{invalid, Error, Result};
use crate::fields::{Axis, Grid, LabelClass, LabelField, RigidLabel, OUTSIDE};
use crate::{e1, e2, Mat2, Vec2};

/// Nearest rotation in the Frobenius norm.
pub fn project_so2(m: &Mat2) -> Result<Mat2> {
    let v = Vec2::new(m[(0, 0)] + m[(1, 1)], m[(1, 0)] - m[(0, 1)]);
    let n = v.norm();
    if !(n > 1e-14 * m.norm()) || !n.is_finite() {
        return Err(Error::AmbiguousProjection(format!("{m:?} has no unique nearest rotation")));
    }
    let (c, s) = (v.x / n, v.y / n);
    Ok(Mat2::new(c, -s, s, c))
}

pub fn rotation_angle(r: &Mat2) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxParams {
    pub delta: f64,
    pub beta: f64,
    /// Defaults to 3 beta / 4.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "one")]
    pub c0: f64,
    /// C in the clustering threshold C delta^gamma.
    #[serde(default = "one")]
    pub cluster_c: f64,
    /// C* in the subdivision threshold 2 C* delta^(2 gamma - beta).
    #[serde(default = "one")]
    pub c_star: f64,
}

fn one() -> f64 {
    1.0
}

impl ApproxParams {
    pub fn new(delta: f64, beta: f64) -> Self {
        ApproxParams { delta, beta, gamma: None, c0: 1.0, cluster_c: 1.0, c_star: 1.0 }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(0.75 * self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.gamma();
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return invalid("need delta, beta in (0, 1)");
        }
        if !(g > 0.0 && g < self.beta) {
            return invalid("need 0 < gamma < beta");
        }
        if !(self.cluster_c > 0.0 && self.c_star > 0.0 && self.c0 > 0.0) {
            return invalid("approximation constants must be positive");
        }
        Ok(())
    }

    pub fn linf_scale(&self) -> f64 {
        self.delta.powf(2.0 * self.gamma() - self.beta)
    }

    pub fn jump_scale(&self) -> f64 {
        self.delta.powf(self.beta - self.gamma())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub linf_error: f64,
    pub extra_jump_length: f64,
    /// Pieces after clustering.
    pub piece_count: usize,
    pub rotation_distances: Vec<f64>,
    pub subdivided_pieces: usize,
    pub cuboid_count: usize,
    /// delta^(2 gamma - beta) and delta^(beta - gamma).
    pub linf_scale: f64,
    pub jump_scale: f64,
}

struct Piece {
    cells: Vec<usize>,
    m: Mat2,
    b: Vec2,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cluster(y: &DeformField, grads: &[Mat2], thr: f64) -> Vec<Vec<usize>> {
    let g = &y.grid;
    let mut owner = vec![usize::MAX; g.len()];
    let mut pieces = Vec::new();
    for seed in 0..g.len() {
        if !g.mask[seed] || owner[seed] != usize::MAX {
            continue;
        }
        let id = pieces.len();
        let reference = grads[seed];
        let mut cells = vec![seed];
        owner[seed] = id;
        let mut queue = VecDeque::from([seed]);
        while let Some(c) = queue.pop_front() {
            for n in g.neighbors(c) {
                if owner[n] == usize::MAX && !y.is_crack(c, n) && (grads[n] - reference).norm() <= thr {
                    owner[n] = id;
                    cells.push(n);
                    queue.push_back(n);
                }
            }
        }
        cells.sort_unstable();
        pieces.push(cells);
    }
    pieces
}

fn fit_piece(y: &DeformField, grads: &[Mat2], cells: Vec<usize>) -> Piece {
    // Mean as reference plus mean deviation, so identical gradients reproduce exactly.
    let r = grads[cells[0]];
    let dev = cells.iter().fold(Mat2::zeros(), |a, &c| a + (grads[c] - r)) / cells.len() as f64;
    let m = r + dev;
    let res: Vec<Vec2> = cells.iter().map(|&c| y.center_value(c) - m * y.grid.center(c)).collect();
    let b = Vec2::new(median(res.iter().map(|v| v.x).collect()), median(res.iter().map(|v| v.y).collect()));
    Piece { cells, m, b }
}

/// Cut lines (indices of grid lines between cells) along one axis, one per slab of width tau.
fn cut_lines(g: &Grid, cells: &[usize], in_piece: &dyn Fn(usize, usize) -> bool, axis: Axis, tau: f64) -> Vec<usize> {
    let coord = |c: usize| if axis == Axis::X { g.ij(c).0 } else { g.ij(c).1 };
    let lo = cells.iter().map(|&c| coord(c)).min().unwrap();
    let hi = cells.iter().map(|&c| coord(c)).max().unwrap();
    let mut best: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for m in lo + 1..=hi {
        let cs = cells
            .iter()
            .filter(|&&c| coord(c) == m)
            .filter(|&&c| {
                let (i, j) = g.ij(c);
                if axis == Axis::X {
                    in_piece(i - 1, j)
                } else {
                    in_piece(i, j - 1)
                }
            })
            .count();
        let slab = ((m as f64 * g.h) / tau).floor() as i64;
        let e = best.entry(slab).or_insert((cs, m));
        if cs < e.0 {
            *e = (cs, m);
        }
    }
    best.values().map(|&(_, m)| m).collect()
}

/// Piecewise rigid approximation of `y`: clustering, median translations, projection onto
/// SO(2) and cuboid refinement of pieces far from SO(2).
pub fn approximate(y: &DeformField, p: &ApproxParams) -> Result<(LabelField, ApproxReport)> {
    p.validate()?;
    let g = &y.grid;
    if g.masked_count() == 0 {
        return invalid("empty region");
    }
    let gamma = p.gamma();
    let grads = y.gradients();
    let thr = p.cluster_c * p.delta.powf(gamma);
    let pieces: Vec<Piece> = cluster(y, &grads, thr).into_par_iter().map(|c| fit_piece(y, &grads, c)).collect();
    let mut owner = vec![usize::MAX; g.len()];
    for (k, pc) in pieces.iter().enumerate() {
        for &c in &pc.cells {
            owner[c] = k;
        }
    }
    let split_thr = 2.0 * p.c_star * p.delta.powf(2.0 * gamma - p.beta);
    let tau_num = p.delta.powf(4.0 * gamma - 2.0 * p.beta);
    let per_piece: Vec<Result<(f64, Vec<(Vec<usize>, RigidLabel)>)>> = pieces
        .par_iter()
        .enumerate()
        .map(|(k, pc)| {
            let r = project_so2(&pc.m)?;
            let dist = (pc.m - r).norm();
            if dist <= split_thr {
                return Ok((dist, vec![(pc.cells.clone(), RigidLabel::new(r, pc.b))]));
            }
            let tau = tau_num / (dist * dist);
            let in_piece = |i: usize, j: usize| owner[g.idx(i, j)] == k;
            let cx = cut_lines(g, &pc.cells, &in_piece, Axis::X, tau);
            let cy = cut_lines(g, &pc.cells, &in_piece, Axis::Y, tau);
            let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
            for &c in &pc.cells {
                let (i, j) = g.ij(c);
                let key = (cx.partition_point(|&m| m <= i), cy.partition_point(|&m| m <= j));
                groups.entry(key).or_default().push(c);
            }
            let out = groups
                .into_values()
                .map(|cells| {
                    let centroid = cells.iter().fold(Vec2::zeros(), |a, &c| a + g.center(c)) / cells.len() as f64;
                    let anchor = *cells
                        .iter()
                        .min_by(|&&a, &&b| {
                            (g.center(a) - centroid).norm().total_cmp(&(g.center(b) - centroid).norm()).then(a.cmp(&b))
                        })
                        .unwrap();
                    let xl = g.center(anchor);
                    let d = pc.m * xl + pc.b - r * xl;
                    (cells, RigidLabel::new(r, d))
                })
                .collect();
            Ok((dist, out))
        })
        .collect();
    let mut labels = Vec::new();
    let mut assignment = vec![OUTSIDE; g.len()];
    let (mut dists, mut subdivided, mut cuboids) = (Vec::new(), 0, 0);
    for r in per_piece {
        let (dist, groups) = r?;
        dists.push(dist);
        if groups.len() > 1 || dist > split_thr {
            subdivided += 1;
            cuboids += groups.len();
        }
        for (cells, l) in groups {
            for c in cells {
                assignment[c] = labels.len() as u32;
            }
            labels.push(l);
        }
    }
    let field = LabelField::new(g.clone(), labels, assignment)?.canonicalize();
    let linf_error = (0..g.len())
        .into_par_iter()
        .filter(|&c| g.mask[c])
        .map(|c| {
            let l = field.label_of(c).unwrap();
            g.corners(c).iter().zip(&y.nodes[c]).map(|(&x, v)| (l.eval(x) - v).norm()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let extra = g
        .faces()
        .filter(|f| field.assignment[f.minus] != field.assignment[f.plus] && !y.cracks.contains(f))
        .count() as f64
        * g.h;
    Ok((
        field,
        ApproxReport {
            linf_error,
            extra_jump_length: extra,
            piece_count: pieces.len(),
            rotation_distances: dists,
            subdivided_pieces: subdivided,
            cuboid_count: cuboids,
            linf_scale: p.linf_scale(),
            jump_scale: p.jump_scale(),
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linearized {
    pub field: LabelField,
    /// Skew generators M_j (before the delta^(-alpha/4) rescale), one per label.
    pub generators: Vec<Mat2>,
    /// |R_j - I - s M_j| with s = delta^(3 alpha / 4).
    pub residuals: Vec<f64>,
    pub scale: f64,
}

pub fn linearize_labels(u: &LabelField, delta: f64, alpha: f64) -> Result<Linearized> {
    linearize_labels_with(u, delta, alpha, 2.0)
}

/// Skew labels delta^(-alpha/4) M_j x + delta^(-alpha) b_j with R_j ~ I + delta^(3 alpha/4) M_j.
pub fn linearize_labels_with(u: &LabelField, delta: f64, alpha: f64, c: f64) -> Result<Linearized> {
    if !(delta > 0.0 && delta < 1.0) || !(alpha > 0.0) || !(c > 0.0) {
        return invalid("need delta in (0, 1), alpha > 0, C > 0");
    }
    u.check_class(LabelClass::Rotation)?;
    let s = delta.powf(0.75 * alpha);
    let mut labels = Vec::with_capacity(u.labels.len());
    let mut gens = Vec::with_capacity(u.labels.len());
    let mut res = Vec::with_capacity(u.labels.len());
    for l in &u.labels {
        let a = l.m - Mat2::identity();
        if a.norm() > c * s {
            return Err(Error::OutOfRegime(format!("|R - I| = {} exceeds {} delta^(3 alpha/4) = {}", a.norm(), c, c * s)));
        }
        let m = (a - a.transpose()) / (2.0 * s);
        res.push((a - s * m).norm());
        gens.push(m);
        labels.push(RigidLabel::new(delta.powf(-alpha / 4.0) * m, delta.powf(-alpha) * l.b));
    }
    Ok(Linearized { field: LabelField::new(u.grid.clone(), labels, u.assignment.clone())?, generators: gens, residuals: res, scale: s })
}

/// Inverse of the linearisation on the generators: I + s M.
pub fn delinearize(m: &Mat2, scale: f64) -> Mat2 {
    Mat2::identity() + scale * m
}

/// A maximal straight run of jump faces between two fixed labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interface {
    pub normal: Vec2,
    /// Normal coordinate of the line.
    pub line: f64,
    /// Tangential extent.
    pub start: f64,
    pub end: f64,
    pub plus: RigidLabel,
    pub minus: RigidLabel,
}

impl Interface {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    fn point(&self, s: f64) -> Vec2 {
        if self.normal == e2() {
            Vec2::new(s, self.line)
        } else {
            Vec2::new(self.line, s)
        }
    }
}

pub fn detect_interfaces(u: &LabelField) -> Vec<Interface> {
    let u = u.canonicalize();
    let g = &u.grid;
    let mut runs: BTreeMap<(u8, usize, u32, u32), Vec<usize>> = BTreeMap::new();
    for f in g.faces() {
        let (lp, lm) = (u.assignment[f.plus], u.assignment[f.minus]);
        if lp == lm {
            continue;
        }
        let (i, j) = g.ij(f.minus);
        let key = match f.axis {
            Axis::X => (0, i + 1, lp, lm),
            Axis::Y => (1, j + 1, lp, lm),
        };
        runs.entry(key).or_default().push(if f.axis == Axis::X { j } else { i });
    }
    let mut out = Vec::new();
    for ((axis, line, lp, lm), mut ks) in runs {
        ks.sort_unstable();
        let (normal, line_c, t0) = if axis == 0 {
            (e1(), g.origin.x + line as f64 * g.h, g.origin.y)
        } else {
            (e2(), g.origin.y + line as f64 * g.h, g.origin.x)
        };
        let mut k = 0;
        while k < ks.len() {
            let mut e = k;
            while e + 1 < ks.len() && ks[e + 1] == ks[e] + 1 {
                e += 1;
            }
            out.push(Interface {
                normal,
                line: line_c,
                start: t0 + ks[k] as f64 * g.h,
                end: t0 + (ks[e] + 1) as f64 * g.h,
                plus: u.labels[lp as usize],
                minus: u.labels[lm as usize],
            });
            k = e + 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryParams {
    pub epsilon: f64,
    pub eta: f64,
    pub rho: f64,
    /// Cell side in periods.
    #[serde(default = "four")]
    pub t: usize,
    /// Cell-problem grid spacing at unit scale; the fine grid spacing must be cell_h * epsilon.
    pub cell_h: f64,
    #[serde(default = "kappa")]
    pub kappa: f64,
}

fn four() -> usize {
    4
}

fn kappa() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    pub interface: usize,
    pub point: Vec2,
    pub zeta: Vec2,
    pub cubes: usize,
    pub cell_energy: f64,
    /// Cell energy per unit length minus the oracle value.
    pub cell_excess: f64,
    /// Gradient bound S of the cell minimiser.
    pub gradient_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub energy: f64,
    pub predicted: f64,
    pub ratio: f64,
    pub interfaces: usize,
    pub base_points: Vec<BasePoint>,
    pub fine_cubes: usize,
    /// Interface length not covered by fine cubes.
    pub uncovered_length: f64,
    pub eta_ok: bool,
    pub max_grad: f64,
    pub scaled_max_grad: f64,
    pub epsilon: f64,
    pub t: usize,
}

type CellSolver<'a> = dyn Fn(&CellProblem) -> Result<CellResult> + Sync + 'a;

/// Default almost-minimiser: exact min-cut at the given cell spacing.
pub fn mincut_cell_solver(cell_h: f64) -> impl Fn(&CellProblem) -> Result<CellResult> + Sync {
    move |p: &CellProblem| SolverConfig::mincut(cell_h).solve(p, crate::env::EnvSeed::new(0, 0))
}

/// Recovery field for `u`: cell minimisers at coarse base points, rescaled by epsilon and
/// tiled along every interface.
pub fn build_recovery(
    u: &LabelField,
    f: &SurfaceDensity,
    params: &RecoveryParams,
    fhom_oracle: &(dyn Fn(Vec2, Vec2) -> f64 + Sync),
    cell_solver: &CellSolver<'_>,
) -> Result<(LabelField, RecoveryReport)> {
    let RecoveryParams { epsilon, eta, rho, t, cell_h, kappa } = *params;
    if !f.is_periodic() {
        return Err(Error::Unsupported("recovery needs an omega-independent periodic density".into()));
    }
    if !(epsilon > 0.0 && rho > 0.0 && eta > 0.0 && cell_h > 0.0) || t == 0 {
        return invalid("recovery needs positive epsilon, rho, eta, cell_h and t");
    }
    let g = &u.grid;
    if ((cell_h * epsilon) / g.h - 1.0).abs() > 1e-9 {
        return invalid("fine grid spacing must equal cell_h * epsilon");
    }
    let per_side = t as f64 / cell_h;
    if (per_side - per_side.round()).abs() > 1e-9 {
        return invalid("t * epsilon is not a multiple of the grid spacing");
    }
    let n_cell = per_side.round() as usize;
    let side = t as f64 * epsilon;
    let u = u.canonicalize();
    let ifaces = detect_interfaces(&u);

    let mut claimed = vec![false; g.len()];
    let mut labels = u.labels.clone();
    let mut assignment = u.assignment.clone();
    let mut base_points = Vec::new();
    let (mut fine_cubes, mut uncovered, mut predicted) = (0, 0.0, 0.0);

    for (k, iface) in ifaces.iter().enumerate() {
        let len = iface.length();
        let nb = ((len / rho) - 1e-9).ceil().max(1.0) as usize;
        let seg = len / nb as f64;
        let bps: Vec<f64> = (0..nb).map(|i| iface.start + (i as f64 + 0.5) * seg).collect();
        let zetas: Vec<Vec2> = bps
            .iter()
            .map(|&s| {
                let x = iface.point(s);
                iface.plus.eval(x) - iface.minus.eval(x)
            })
            .collect();
        predicted += zetas.iter().map(|&z| fhom_oracle(z, iface.normal) * seg).sum::<f64>();
        let ncubes = ((len / side) + 1e-9).floor() as usize;
        uncovered += len - ncubes as f64 * side;
        if ncubes == 0 {
            continue;
        }
        let center0 = iface.point(iface.start + side / 2.0);
        // Fine cubes assigned to their nearest base point.
        let mut by_base: Vec<Vec<usize>> = vec![Vec::new(); nb];
        for j in 0..ncubes {
            let s = iface.start + (j as f64 + 0.5) * side;
            let i = ((s - iface.start) / seg).floor().clamp(0.0, (nb - 1) as f64) as usize;
            by_base[i].push(j);
        }
        let solved: Vec<Result<Option<(CellResult, usize)>>> = by_base
            .par_iter()
            .enumerate()
            .map(|(i, cubes)| {
                if cubes.is_empty() {
                    return Ok(None);
                }
                let p = CellProblem::new(center0 / epsilon, t as f64, iface.normal, zetas[i], f.clone()).with_h(cell_h);
                let r = cell_solver(&p)?;
                if r.field.grid.nx != n_cell || r.field.grid.ny != n_cell {
                    return Err(Error::Internal("cell solver returned a field on an unexpected grid".into()));
                }
                Ok(Some((r, i)))
            })
            .collect();
        for r in solved {
            let Some((res, i)) = r? else { continue };
            let xi = iface.point(bps[i]);
            let zeta_minus = iface.minus.eval(xi);
            let [lo, up] = [RigidLabel::constant(Vec2::zeros()), RigidLabel::constant(zetas[i])];
            let mut used = 0;
            for &j in &by_base[i] {
                let cj = iface.point(iface.start + (j as f64 + 0.5) * side);
                let shift = (cj - center0) / epsilon;
                let ll = cj - Vec2::new(side, side) / 2.0;
                let (i0, j0) = (((ll.x - g.origin.x) / g.h).round(), ((ll.y - g.origin.y) / g.h).round());
                if i0 < 0.0 || j0 < 0.0 || i0 as usize + n_cell > g.nx || j0 as usize + n_cell > g.ny {
                    uncovered += side;
                    continue;
                }
                let (i0, j0) = (i0 as usize, j0 as usize);
                let cells: Vec<(usize, usize)> =
                    (0..n_cell).flat_map(|b| (0..n_cell).map(move |a| (a, b))).collect();
                let fits = cells.iter().all(|&(a, b)| {
                    let c = g.idx(i0 + a, j0 + b);
                    let upper = (g.center(c) - cj).dot(&iface.normal) >= 0.0;
                    let want = if upper { &iface.plus } else { &iface.minus };
                    g.mask[c] && !claimed[c] && u.label_of(c).is_some_and(|l| l.same_motion(want))
                });
                if !fits {
                    uncovered += side;
                    continue;
                }
                used += 1;
                fine_cubes += 1;
                let base = labels.len() as u32;
                for wl in &res.field.labels {
                    labels.push(if wl.same_motion(&up) {
                        iface.plus
                    } else if wl.same_motion(&lo) {
                        iface.minus
                    } else {
                        RigidLabel::new(wl.m / epsilon, wl.b - wl.m * shift + zeta_minus)
                    });
                }
                for &(a, b) in &cells {
                    let c = g.idx(i0 + a, j0 + b);
                    claimed[c] = true;
                    assignment[c] = base + res.field.assignment[res.field.grid.idx(a, b)];
                }
            }
            let cell_excess = res.energy / t as f64 - fhom_oracle(zetas[i], iface.normal);
            base_points.push(BasePoint {
                interface: k,
                point: xi,
                zeta: zetas[i],
                cubes: used,
                cell_energy: res.energy,
                cell_excess,
                gradient_bound: res.field.labels.iter().map(|l| l.m.norm()).fold(0.0, f64::max),
            });
        }
    }
    let out = LabelField::new(g.clone(), labels, assignment)?.canonicalize();
    let energy = surface_energy(&out, f, epsilon, None);
    let max_grad = out.labels.iter().map(|l| l.m.norm()).fold(0.0, f64::max);
    let eta_ok = base_points.iter().all(|b| b.cell_excess <= eta);
    Ok((
        out,
        RecoveryReport {
            energy,
            predicted,
            ratio: if predicted > 0.0 { energy / predicted } else { f64::NAN },
            interfaces: ifaces.len(),
            base_points,
            fine_cubes,
            uncovered_length: uncovered,
            eta_ok,
            max_grad,
            scaled_max_grad: epsilon.powf(1.0 + kappa) * max_grad,
            epsilon,
            t,
        },
    ))
}
