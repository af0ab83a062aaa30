//! Surface, Griffith and linearised energies on grid fields.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::SurfaceDensity;
use crate::error::{invalid, Error, Result};
use crate::fields::{Axis, Face, Grid, LabelField, MOTION_TOL};
use crate::{Mat2, Vec2};

/// Energy of one face given its jump, or 0 for a degenerate jump.
pub fn face_energy(f: &SurfaceDensity, mid: Vec2, jump: Vec2, normal: Vec2, eps: f64, h: f64) -> f64 {
    if jump.norm() > MOTION_TOL {
        f.value(mid / eps, jump, normal) * h
    } else {
        0.0
    }
}

// Row sums computed in parallel, added in row order.
fn row_sum(grid: &Grid, per_cell: impl Fn(usize) -> f64 + Sync) -> f64 {
    let rows: Vec<f64> = (0..grid.ny)
        .into_par_iter()
        .map(|j| (0..grid.nx).map(|i| per_cell(grid.idx(i, j))).sum())
        .collect();
    rows.iter().sum()
}

/// Sum of face energies over jump faces with both cells in `region` (default: the whole mask).
pub fn surface_energy(u: &LabelField, f: &SurfaceDensity, epsilon: f64, region: Option<&[bool]>) -> f64 {
    let g = &u.grid;
    let inside = |c: usize| region.is_none_or(|r| r[c]);
    row_sum(g, |c| {
        if !inside(c) {
            return 0.0;
        }
        g.faces_from(c)
            .filter(|fc| inside(fc.plus))
            .map(|fc| face_energy(f, g.midpoint(&fc), u.face_jump(&fc), fc.normal(), epsilon, g.h))
            .sum()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ElasticDensity {
    /// `scale * dist^2(F, SO(2))`.
    DistSquared { scale: f64 },
}

impl Default for ElasticDensity {
    fn default() -> Self {
        ElasticDensity::DistSquared { scale: 1.0 }
    }
}

impl ElasticDensity {
    pub fn eval(&self, m: &Mat2) -> f64 {
        match self {
            ElasticDensity::DistSquared { scale } => scale * dist2_so2(m),
        }
    }
}

/// dist^2(F, SO(2)) = |F|^2 + 2 - 2 |(F11 + F22, F21 - F12)|.
pub fn dist2_so2(m: &Mat2) -> f64 {
    let v = Vec2::new(m[(0, 0)] + m[(1, 1)], m[(1, 0)] - m[(0, 1)]);
    (m.norm_squared() + 2.0 - 2.0 * v.norm()).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticParams {
    pub delta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub w: ElasticDensity,
}

impl ElasticParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(unit(self.delta) && unit(self.beta) && unit(self.alpha) && self.epsilon > 0.0) {
            return invalid("elastic parameters need delta, beta, alpha in (0,1) and epsilon > 0");
        }
        Ok(())
    }
}

/// Energy value with an explicit infinite state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Energy {
    Finite(f64),
    Infinite,
}

impl Energy {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Energy::Finite(v) => Some(*v),
            Energy::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Energy::Infinite)
    }
}

/// Deformation sampled at the four corners of every cell; cracks are faces with independent sides.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformField {
    pub grid: Grid,
    /// Corner values per cell in the order (0,0), (1,0), (0,1), (1,1).
    pub nodes: Vec<[Vec2; 4]>,
    pub cracks: BTreeSet<Face>,
}

impl DeformField {
    pub fn new(grid: Grid, nodes: Vec<[Vec2; 4]>, cracks: impl IntoIterator<Item = Face>) -> Result<Self> {
        if nodes.len() != grid.len() {
            return invalid("node array length mismatch");
        }
        let cracks: BTreeSet<Face> = cracks.into_iter().collect();
        for f in &cracks {
            if !(f.minus < grid.len() && f.plus < grid.len() && grid.mask[f.minus] && grid.mask[f.plus])
                || grid.face_between(f.minus, f.plus) != *f
                || !grid.neighbors(f.minus).any(|n| n == f.plus)
            {
                return invalid("crack face is not an interior face of the grid");
            }
        }
        Ok(DeformField { grid, nodes, cracks })
    }

    /// Sample `y(cell, x)` at cell corners.
    pub fn from_fn(grid: Grid, y: impl Fn(usize, Vec2) -> Vec2, cracks: impl IntoIterator<Item = Face>) -> Result<Self> {
        let nodes = (0..grid.len()).map(|c| grid.corners(c).map(|p| y(c, p))).collect();
        Self::new(grid, nodes, cracks)
    }

    /// Embedding of a label field; cracks on faces between distinct motions.
    pub fn from_labels(u: &LabelField) -> Result<Self> {
        let u = u.canonicalize();
        let cracks: Vec<Face> = u.grid.faces().filter(|f| u.assignment[f.minus] != u.assignment[f.plus]).collect();
        Self::from_fn(u.grid.clone(), |c, x| if u.grid.mask[c] { u.value(c, x) } else { Vec2::zeros() }, cracks)
    }

    pub fn is_crack(&self, a: usize, b: usize) -> bool {
        self.cracks.contains(&self.grid.face_between(a, b))
    }

    /// Value at the cell centre (bilinear mean of the corners).
    pub fn center_value(&self, c: usize) -> Vec2 {
        let n = &self.nodes[c];
        (n[0] + n[1] + n[2] + n[3]) / 4.0
    }

    /// Central difference of the corner values at the cell centre.
    pub fn gradient(&self, c: usize) -> Mat2 {
        let n = &self.nodes[c];
        let h = self.grid.h;
        let d1 = ((n[1] - n[0]) + (n[3] - n[2])) / (2.0 * h);
        let d2 = ((n[2] - n[0]) + (n[3] - n[1])) / (2.0 * h);
        Mat2::from_columns(&[d1, d2])
    }

    pub fn gradients(&self) -> Vec<Mat2> {
        (0..self.grid.len()).map(|c| if self.grid.mask[c] { self.gradient(c) } else { Mat2::zeros() }).collect()
    }

    /// Value on the `side` cell at the midpoint of face `f` (mean of the two shared corners).
    pub fn face_value(&self, f: &Face, side: usize) -> Vec2 {
        let n = &self.nodes[side];
        let plus = side == f.plus;
        match (f.axis, plus) {
            (Axis::X, false) => (n[1] + n[3]) / 2.0,
            (Axis::X, true) => (n[0] + n[2]) / 2.0,
            (Axis::Y, false) => (n[2] + n[3]) / 2.0,
            (Axis::Y, true) => (n[0] + n[1]) / 2.0,
        }
    }

    /// |grad^2 y|^2 per cell from differences of neighbouring gradients, never across cracks.
    pub fn hessian_norms2(&self, grads: &[Mat2]) -> Result<Vec<f64>> {
        let g = &self.grid;
        let h = g.h;
        let mut out = vec![0.0; g.len()];
        for c in 0..g.len() {
            if !g.mask[c] {
                continue;
            }
            let (i, j) = g.ij(c);
            let mut total = 0.0;
            for axis in [Axis::X, Axis::Y] {
                let (lo, hi) = match axis {
                    Axis::X => ((i > 0).then(|| c - 1), (i + 1 < g.nx).then(|| c + 1)),
                    Axis::Y => ((j > 0).then(|| c - g.nx), (j + 1 < g.ny).then(|| c + g.nx)),
                };
                let usable = |n: Option<usize>| n.filter(|&n| g.mask[n] && !self.is_crack(c, n));
                let d = match (usable(lo), usable(hi)) {
                    (Some(a), Some(b)) => {
                        self.stencil_guard(a, c)?;
                        self.stencil_guard(c, b)?;
                        (grads[b] - grads[a]) / (2.0 * h)
                    }
                    (Some(a), None) => {
                        self.stencil_guard(a, c)?;
                        (grads[c] - grads[a]) / h
                    }
                    (None, Some(b)) => {
                        self.stencil_guard(c, b)?;
                        (grads[b] - grads[c]) / h
                    }
                    (None, None) => Mat2::zeros(),
                };
                total += d.norm_squared();
            }
            out[c] = total;
        }
        Ok(out)
    }

    fn stencil_guard(&self, a: usize, b: usize) -> Result<()> {
        if self.is_crack(a, b) {
            return Err(Error::Internal(format!("stencil between cells {a} and {b} straddles a crack")));
        }
        Ok(())
    }

    pub fn crack_jump(&self, f: &Face) -> Vec2 {
        self.face_value(f, f.plus) - self.face_value(f, f.minus)
    }

    fn surface_term(&self, f: &SurfaceDensity, eps: f64) -> f64 {
        self.cracks
            .iter()
            .map(|fc| face_energy(f, self.grid.midpoint(fc), self.crack_jump(fc), fc.normal(), eps, self.grid.h))
            .sum()
    }

    /// CSV rows `i,j,corner,y1,y2`.
    pub fn nodes_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["i", "j", "corner", "y1", "y2"])?;
        for c in 0..self.grid.len() {
            if !self.grid.mask[c] {
                continue;
            }
            let (i, j) = self.grid.ij(c);
            for (k, v) in self.nodes[c].iter().enumerate() {
                w.write_record(&[i.to_string(), j.to_string(), k.to_string(), format!("{:e}", v.x), format!("{:e}", v.y)])?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Internal(e.to_string()))?)
            .map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn cracks_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.cracks.iter().collect::<Vec<_>>())?)
    }

    pub fn from_csv(grid: Grid, nodes_csv: &str, cracks_json: &str) -> Result<Self> {
        let mut nodes = vec![[Vec2::zeros(); 4]; grid.len()];
        let mut rdr = csv::Reader::from_reader(nodes_csv.as_bytes());
        for rec in rdr.deserialize::<(usize, usize, usize, f64, f64)>() {
            let (i, j, k, y1, y2) = rec?;
            if i >= grid.nx || j >= grid.ny || k > 3 {
                return invalid("node index out of range");
            }
            nodes[grid.idx(i, j)][k] = Vec2::new(y1, y2);
        }
        let cracks: Vec<Face> = serde_json::from_str(cracks_json)?;
        Self::new(grid, nodes, cracks)
    }
}

fn bulk_sum(y: &DeformField, w: impl Fn(&Mat2) -> f64 + Sync, grads: &[Mat2], hess: &[f64], hess_weight: f64) -> f64 {
    let g = &y.grid;
    let h2 = g.h * g.h;
    row_sum(g, |c| if g.mask[c] { h2 * (w(&grads[c]) + hess_weight * hess[c]) } else { 0.0 })
}

/// delta^-2 int W(grad y) + delta^-2beta int |grad^2 y|^2 + crack surface energy.
pub fn griffith_energy(y: &DeformField, f: &SurfaceDensity, p: &ElasticParams) -> Result<f64> {
    if !(p.delta > 0.0 && p.epsilon > 0.0) {
        return invalid("griffith energy needs delta > 0 and epsilon > 0");
    }
    let grads = y.gradients();
    let hess = y.hessian_norms2(&grads)?;
    let d2 = p.delta * p.delta;
    let bulk = bulk_sum(y, |m| p.w.eval(m) / d2, &grads, &hess, p.delta.powf(-2.0 * p.beta));
    Ok(bulk + y.surface_term(f, p.epsilon))
}

/// Linearised energy; infinite when some cell has |grad u| > delta^(-alpha/4).
pub fn linearized_energy(u: &DeformField, f: &SurfaceDensity, p: &ElasticParams) -> Result<Energy> {
    p.validate()?;
    let grads = u.gradients();
    let cap = p.delta.powf(-p.alpha / 4.0);
    if grads.iter().any(|m| m.norm() > cap) {
        return Ok(Energy::Infinite);
    }
    let hess = u.hessian_norms2(&grads)?;
    let da = p.delta.powf(p.alpha);
    let d2 = p.delta * p.delta;
    let bulk = bulk_sum(
        u,
        |m| p.w.eval(&(Mat2::identity() + da * m)) / d2,
        &grads,
        &hess,
        p.delta.powf(2.0 * (p.alpha - p.beta)),
    );
    Ok(Energy::Finite(bulk + u.surface_term(f, p.epsilon)))
}
