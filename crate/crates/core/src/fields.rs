//! Piecewise rigid label fields on pixel grids.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::{check_unit, Mat2, Vec2};

/// Tolerance under which two motions, or a jump, count as equal / zero.
pub const MOTION_TOL: f64 = 1e-12;
/// Assignment value of cells outside the mask.
pub const OUTSIDE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub origin: Vec2,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Face with normal e1, between `cell` and its right neighbour.
    X,
    /// Face with normal e2, between `cell` and its upper neighbour.
    Y,
}

/// Interior face; `minus` is left/below, `plus` right/above.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Face {
    pub minus: usize,
    pub plus: usize,
    pub axis: Axis,
}

impl Face {
    pub fn normal(&self) -> Vec2 {
        match self.axis {
            Axis::X => Vec2::new(1.0, 0.0),
            Axis::Y => Vec2::new(0.0, 1.0),
        }
    }
}

impl Grid {
    pub fn new(origin: Vec2, h: f64, nx: usize, ny: usize) -> Result<Grid> {
        if !(h > 0.0 && h.is_finite()) || nx == 0 || ny == 0 {
            return invalid("grid needs h > 0 and at least one cell");
        }
        Ok(Grid { origin, h, nx, ny, mask: vec![true; nx * ny] })
    }

    /// Axis-aligned rectangle `[x0, x0 + nx h) x [y0, y0 + ny h)`.
    pub fn rect(x0: f64, y0: f64, h: f64, nx: usize, ny: usize) -> Result<Grid> {
        Self::new(Vec2::new(x0, y0), h, nx, ny)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Grid> {
        if mask.len() != self.len() {
            return invalid("mask length mismatch");
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn center(&self, c: usize) -> Vec2 {
        let (i, j) = self.ij(c);
        self.origin + self.h * Vec2::new(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Corners in the order (0,0), (1,0), (0,1), (1,1).
    pub fn corners(&self, c: usize) -> [Vec2; 4] {
        let (i, j) = self.ij(c);
        let p = self.origin + self.h * Vec2::new(i as f64, j as f64);
        let h = self.h;
        [p, p + Vec2::new(h, 0.0), p + Vec2::new(0.0, h), p + Vec2::new(h, h)]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn area(&self) -> f64 {
        self.masked_count() as f64 * self.h * self.h
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }

    pub fn midpoint(&self, f: &Face) -> Vec2 {
        let (i, j) = self.ij(f.minus);
        let h = self.h;
        match f.axis {
            Axis::X => self.origin + h * Vec2::new(i as f64 + 1.0, j as f64 + 0.5),
            Axis::Y => self.origin + h * Vec2::new(i as f64 + 0.5, j as f64 + 1.0),
        }
    }

    /// 4-neighbours inside the mask.
    pub fn neighbors(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.ij(c);
        let cand = [
            (i > 0).then(|| c - 1),
            (i + 1 < self.nx).then(|| c + 1),
            (j > 0).then(|| c - self.nx),
            (j + 1 < self.ny).then(|| c + self.nx),
        ];
        cand.into_iter().flatten().filter(move |&n| self.mask[n])
    }

    /// The face shared by two 4-adjacent cells.
    pub fn face_between(&self, a: usize, b: usize) -> Face {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let axis = if hi - lo == 1 && self.ij(lo).1 == self.ij(hi).1 { Axis::X } else { Axis::Y };
        Face { minus: lo, plus: hi, axis }
    }

    /// Interior faces between two masked cells, in raster order of the minus cell (X before Y).
    pub fn faces(&self) -> impl Iterator<Item = Face> + '_ {
        (0..self.len()).flat_map(move |c| self.faces_from(c))
    }

    pub fn faces_from(&self, c: usize) -> impl Iterator<Item = Face> + '_ {
        let (i, j) = self.ij(c);
        let m = self.mask[c];
        let x = (m && i + 1 < self.nx && self.mask[c + 1]).then_some(Face { minus: c, plus: c + 1, axis: Axis::X });
        let y = (m && j + 1 < self.ny && self.mask[c + self.nx])
            .then_some(Face { minus: c, plus: c + self.nx, axis: Axis::Y });
        x.into_iter().chain(y)
    }

    /// Number of faces separating masked cells from the exterior (grid edge or unmasked).
    pub fn boundary_face_count(&self) -> usize {
        (0..self.len()).filter(|&c| self.mask[c]).map(|c| 4 - self.neighbors(c).count()).sum()
    }

    pub fn is_connected(&self) -> bool {
        self.components_of(|_| true).1 == 1
    }

    /// 4-connected components of masked cells under a same-class predicate on faces.
    pub fn components_of(&self, same: impl Fn(&Face) -> bool) -> (Vec<u32>, usize) {
        let mut comp = vec![OUTSIDE; self.len()];
        let mut count = 0u32;
        let mut queue = VecDeque::new();
        for s in 0..self.len() {
            if !self.mask[s] || comp[s] != OUTSIDE {
                continue;
            }
            comp[s] = count;
            queue.push_back(s);
            while let Some(c) = queue.pop_front() {
                let nbs: Vec<usize> = self.neighbors(c).collect();
                for n in nbs {
                    if comp[n] == OUTSIDE && same(&self.face_between(c, n)) {
                        comp[n] = count;
                        queue.push_back(n);
                    }
                }
            }
            count += 1;
        }
        (comp, count as usize)
    }

    /// Chebyshev distance (in cells) from each masked cell to the mask exterior; exterior = 0.
    pub fn boundary_distance(&self) -> Vec<usize> {
        let mut d = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        for c in 0..self.len() {
            if !self.mask[c] {
                d[c] = 0;
                continue;
            }
            let (i, j) = self.ij(c);
            let mut touches = i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny;
            if !touches {
                touches = self.ring(c).any(|n| !self.mask[n]);
            }
            if touches {
                d[c] = 1;
                queue.push_back(c);
            }
        }
        while let Some(c) = queue.pop_front() {
            let ring: Vec<usize> = self.ring(c).collect();
            for n in ring {
                if d[n] == usize::MAX {
                    d[n] = d[c] + 1;
                    queue.push_back(n);
                }
            }
        }
        d
    }

    // 8-neighbourhood within the grid.
    fn ring(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.ij(c);
        let (i, j) = (i as i64, j as i64);
        (-1..=1i64).flat_map(move |dj| (-1..=1i64).map(move |di| (i + di, j + dj))).filter_map(move |(a, b)| {
            let inside = a >= 0 && b >= 0 && (a as usize) < self.nx && (b as usize) < self.ny;
            (inside && (a, b) != (i, j)).then(|| self.idx(a as usize, b as usize))
        })
    }
}

/// Cube `Q_rho^nu(center)` rasterised at spacing `h`; exact for axis normals with `rho/h` integral.
pub fn rasterize_cube(center: Vec2, rho: f64, nu: Vec2, h: f64) -> Result<Grid> {
    if !(rho > 0.0) || !(h > 0.0) {
        return invalid("rasterize_cube needs rho > 0 and h > 0");
    }
    check_unit(nu)?;
    let extent = rho * (nu.x.abs() + nu.y.abs());
    let n = ((extent / h) - 1e-9).ceil().max(1.0) as usize;
    let mut g = Grid::new(center - Vec2::new(n as f64 * h / 2.0, n as f64 * h / 2.0), h, n, n)?;
    let tangent = Vec2::new(nu.y, -nu.x);
    let half = rho / 2.0 * (1.0 + 1e-12);
    for c in 0..g.len() {
        let d = g.center(c) - center;
        g.mask[c] = d.dot(&nu).abs() <= half && d.dot(&tangent).abs() <= half;
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelClass {
    Rotation,
    Skew,
    Zero,
}

impl LabelClass {
    pub fn contains(&self, m: &Mat2) -> bool {
        match self {
            LabelClass::Rotation => {
                let e = m.transpose() * m - Mat2::identity();
                e.abs().max() <= 1e-10 && (m.determinant() - 1.0).abs() <= 1e-10
            }
            LabelClass::Skew => m[(0, 0)] == 0.0 && m[(1, 1)] == 0.0 && m[(0, 1)] == -m[(1, 0)],
            LabelClass::Zero => *m == Mat2::zeros(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidLabel {
    pub m: Mat2,
    pub b: Vec2,
}

impl RigidLabel {
    pub fn new(m: Mat2, b: Vec2) -> Self {
        RigidLabel { m, b }
    }

    pub fn constant(b: Vec2) -> Self {
        RigidLabel { m: Mat2::zeros(), b }
    }

    pub fn eval(&self, x: Vec2) -> Vec2 {
        self.m * x + self.b
    }

    pub fn same_motion(&self, other: &RigidLabel) -> bool {
        (self.m - other.m).abs().max() <= MOTION_TOL && (self.b - other.b).abs().max() <= MOTION_TOL
    }
}

pub fn eval_rigid(label: &RigidLabel, x: Vec2) -> Vec2 {
    label.eval(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpFace {
    pub midpoint: Vec2,
    pub normal: Vec2,
    pub length: f64,
    pub jump: Vec2,
    /// (plus-side label, minus-side label).
    pub labels: (u32, u32),
    pub face: Face,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelField {
    pub grid: Grid,
    pub labels: Vec<RigidLabel>,
    pub assignment: Vec<u32>,
}

impl LabelField {
    pub fn new(grid: Grid, labels: Vec<RigidLabel>, assignment: Vec<u32>) -> Result<LabelField> {
        if assignment.len() != grid.len() {
            return invalid("assignment length mismatch");
        }
        for (c, &a) in assignment.iter().enumerate() {
            let ok = if grid.mask[c] { (a as usize) < labels.len() } else { a == OUTSIDE };
            if !ok {
                return invalid(format!("cell {c} carries an invalid label index"));
            }
        }
        Ok(LabelField { grid, labels, assignment })
    }

    /// One label on every masked cell.
    pub fn constant(grid: Grid, label: RigidLabel) -> LabelField {
        let assignment = grid.mask.iter().map(|&m| if m { 0 } else { OUTSIDE }).collect();
        LabelField { grid, labels: vec![label], assignment }
    }

    /// Assign `pick(center)` among `labels` to each masked cell.
    pub fn from_fn(grid: Grid, labels: Vec<RigidLabel>, pick: impl Fn(Vec2) -> u32) -> Result<LabelField> {
        let assignment =
            (0..grid.len()).map(|c| if grid.mask[c] { pick(grid.center(c)) } else { OUTSIDE }).collect();
        Self::new(grid, labels, assignment)
    }

    pub fn label_of(&self, c: usize) -> Option<&RigidLabel> {
        let a = self.assignment[c];
        (a != OUTSIDE).then(|| &self.labels[a as usize])
    }

    /// Value of the field at `x` using the motion of cell `c`.
    pub fn value(&self, c: usize, x: Vec2) -> Vec2 {
        self.labels[self.assignment[c] as usize].eval(x)
    }

    pub fn face_jump(&self, f: &Face) -> Vec2 {
        let mid = self.grid.midpoint(f);
        self.value(f.plus, mid) - self.value(f.minus, mid)
    }

    pub fn jump_faces(&self) -> Vec<JumpFace> {
        self.grid
            .faces()
            .filter_map(|f| {
                let jump = self.face_jump(&f);
                (jump.norm() > MOTION_TOL).then(|| JumpFace {
                    midpoint: self.grid.midpoint(&f),
                    normal: f.normal(),
                    length: self.grid.h,
                    jump,
                    labels: (self.assignment[f.plus], self.assignment[f.minus]),
                    face: f,
                })
            })
            .collect()
    }

    pub fn jump_length(&self) -> f64 {
        self.jump_faces().len() as f64 * self.grid.h
    }

    /// Merge labels with equal motions, drop unused ones; indices follow first appearance.
    pub fn canonicalize(&self) -> LabelField {
        let mut reps: Vec<RigidLabel> = Vec::new();
        let mut map: HashMap<u32, u32> = HashMap::new();
        let mut assignment = vec![OUTSIDE; self.assignment.len()];
        for (c, &a) in self.assignment.iter().enumerate() {
            if a == OUTSIDE {
                continue;
            }
            let k = *map.entry(a).or_insert_with(|| {
                let l = self.labels[a as usize];
                match reps.iter().position(|r| r.same_motion(&l)) {
                    Some(p) => p as u32,
                    None => {
                        reps.push(l);
                        (reps.len() - 1) as u32
                    }
                }
            });
            assignment[c] = k;
        }
        LabelField { grid: self.grid.clone(), labels: reps, assignment }
    }

    /// Connected pieces of equal label.
    pub fn pieces(&self) -> (Vec<u32>, usize) {
        self.grid.components_of(|f| self.assignment[f.minus] == self.assignment[f.plus])
    }

    /// sup over masked cells (their corners) of |u|.
    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len())
            .filter(|&c| self.grid.mask[c])
            .flat_map(|c| self.grid.corners(c).map(|p| self.value(c, p).norm()))
            .fold(0.0, f64::max)
    }

    pub fn check_class(&self, class: LabelClass) -> Result<()> {
        match self.labels.iter().position(|l| !class.contains(&l.m)) {
            Some(k) => invalid(format!("label {k} is not in class {class:?}")),
            None => Ok(()),
        }
    }

    /// Restrict the mask; cells dropped from the mask lose their labels.
    pub fn restrict(&self, mask: &[bool]) -> Result<LabelField> {
        let keep: Vec<bool> = self.grid.mask.iter().zip(mask).map(|(&a, &b)| a && b).collect();
        let grid = self.grid.clone().with_mask(keep.clone())?;
        let assignment = self.assignment.iter().zip(&keep).map(|(&a, &k)| if k { a } else { OUTSIDE }).collect();
        Ok(LabelField { grid, labels: self.labels.clone(), assignment })
    }

    pub fn header(&self) -> FieldHeader {
        FieldHeader {
            origin: self.grid.origin,
            h: self.grid.h,
            nx: self.grid.nx,
            ny: self.grid.ny,
            labels: self.labels.clone(),
        }
    }

    /// Row-major integer raster (first row = bottom row), `-1` outside the mask.
    pub fn raster_csv(&self) -> String {
        let mut s = String::new();
        for row in self.assignment.chunks(self.grid.nx) {
            let line: Vec<String> =
                row.iter().map(|&a| if a == OUTSIDE { "-1".to_string() } else { a.to_string() }).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_parts(header: FieldHeader, raster: &str) -> Result<LabelField> {
        let mut assignment = Vec::with_capacity(header.nx * header.ny);
        let mut rows = 0;
        for line in raster.lines().filter(|l| !l.trim().is_empty()) {
            let before = assignment.len();
            for tok in line.split(',') {
                let v: i64 = tok
                    .trim()
                    .parse()
                    .map_err(|e| crate::Error::InvalidArgument(format!("raster entry {tok:?}: {e}")))?;
                assignment.push(if v < 0 { OUTSIDE } else { v as u32 });
            }
            if assignment.len() - before != header.nx {
                return invalid("raster row length mismatch");
            }
            rows += 1;
        }
        if rows != header.ny {
            return invalid("raster row count mismatch");
        }
        let mask = assignment.iter().map(|&a| a != OUTSIDE).collect();
        let grid = Grid::new(header.origin, header.h, header.nx, header.ny)?.with_mask(mask)?;
        LabelField::new(grid, header.labels, assignment)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub origin: Vec2,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub labels: Vec<RigidLabel>,
}

/// Common refinement: one label per occurring pair, shared assignment.
pub fn refine(u1: &LabelField, u2: &LabelField) -> Result<(LabelField, LabelField)> {
    if u1.grid != u2.grid {
        return invalid("refine needs identical grids");
    }
    let mut pairs: HashMap<(u32, u32), u32> = HashMap::new();
    let (mut l1, mut l2) = (Vec::new(), Vec::new());
    let mut assignment = vec![OUTSIDE; u1.assignment.len()];
    for c in 0..assignment.len() {
        let (a, b) = (u1.assignment[c], u2.assignment[c]);
        if a == OUTSIDE {
            continue;
        }
        let k = *pairs.entry((a, b)).or_insert_with(|| {
            l1.push(u1.labels[a as usize]);
            l2.push(u2.labels[b as usize]);
            (l1.len() - 1) as u32
        });
        assignment[c] = k;
    }
    Ok((
        LabelField { grid: u1.grid.clone(), labels: l1, assignment: assignment.clone() },
        LabelField { grid: u1.grid.clone(), labels: l2, assignment },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{rotation, skew};

    fn half_plane(zeta: Vec2) -> LabelField {
        let g = Grid::rect(-2.0, -2.0, 1.0, 4, 4).unwrap();
        LabelField::from_fn(g, vec![RigidLabel::constant(Vec2::zeros()), RigidLabel::constant(zeta)], |x| {
            (x.y >= 0.0) as u32
        })
        .unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(RigidLabel::constant(Vec2::new(1.0, 0.0)).eval(Vec2::new(3.0, 4.0)), Vec2::new(1.0, 0.0));
        let r = RigidLabel::new(rotation(std::f64::consts::FRAC_PI_2), Vec2::zeros()).eval(Vec2::new(1.0, 0.0));
        assert!((r - Vec2::new(0.0, 1.0)).norm() < 1e-15);
        let s = RigidLabel::new(skew(2.0), Vec2::new(0.0, 1.0));
        assert_eq!(eval_rigid(&s, Vec2::new(1.0, 1.0)), Vec2::new(2.0, -1.0));
    }

    #[test]
    fn half_plane_faces() {
        let u = half_plane(Vec2::new(1.0, 0.0));
        let f = u.jump_faces();
        assert_eq!(f.len(), 4);
        for jf in &f {
            assert_eq!(jf.jump, Vec2::new(1.0, 0.0));
            assert_eq!(jf.normal, Vec2::new(0.0, 1.0));
            assert_eq!(jf.midpoint.y, 0.0);
        }
        assert_eq!(u.jump_length(), 4.0);
    }

    #[test]
    fn duplicate_motions_have_no_faces() {
        let g = Grid::rect(0.0, 0.0, 1.0, 3, 3).unwrap();
        let l = RigidLabel::new(skew(0.5), Vec2::new(1.0, 2.0));
        let u = LabelField::from_fn(g, vec![l, l], |x| (x.x > 1.5) as u32).unwrap();
        assert!(u.jump_faces().is_empty());
        assert_eq!(u.canonicalize().labels.len(), 1);
    }

    #[test]
    fn refine_quadrants() {
        let g = Grid::rect(-1.0, -1.0, 0.5, 4, 4).unwrap();
        let a = RigidLabel::constant(Vec2::new(1.0, 0.0));
        let b = RigidLabel::constant(Vec2::new(0.0, 1.0));
        let z = RigidLabel::constant(Vec2::zeros());
        let u1 = LabelField::from_fn(g.clone(), vec![z, a], |x| (x.y > 0.0) as u32).unwrap();
        let u2 = LabelField::from_fn(g, vec![z, b], |x| (x.x > 0.0) as u32).unwrap();
        let (r1, r2) = refine(&u1, &u2).unwrap();
        assert_eq!(r1.labels.len(), 4);
        assert_eq!(r1.assignment, r2.assignment);
        for c in 0..16 {
            let x = r1.grid.center(c);
            assert_eq!(r1.value(c, x), u1.value(c, x));
            assert_eq!(r2.value(c, x), u2.value(c, x));
        }
        let (s1, _) = refine(&u1, &u1).unwrap();
        assert_eq!(s1.labels, u1.labels);
        assert_eq!(s1.assignment, u1.assignment);
    }

    #[test]
    fn cube_rasters() {
        let g = rasterize_cube(Vec2::zeros(), 1.0, Vec2::new(0.0, 1.0), 0.25).unwrap();
        assert_eq!((g.nx, g.ny, g.masked_count()), (4, 4, 16));
        assert_eq!(g.origin, Vec2::new(-0.5, -0.5));
        let g1 = rasterize_cube(Vec2::zeros(), 1.0, Vec2::new(1.0, 0.0), 0.25).unwrap();
        assert_eq!(g, g1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d = rasterize_cube(Vec2::zeros(), 1.0, Vec2::new(s, s), 0.125).unwrap();
        assert!((d.area() - 1.0).abs() < 0.1, "area {}", d.area());
        assert!(d.is_connected());
    }

    #[test]
    fn raster_round_trip() {
        let g = rasterize_cube(Vec2::new(0.3, 0.1), 2.0, Vec2::new(0.6, 0.8), 0.25).unwrap();
        let u = LabelField::from_fn(
            g,
            vec![RigidLabel::new(skew(0.3), Vec2::new(0.1, 1.0 / 3.0)), RigidLabel::constant(Vec2::zeros())],
            |x| (x.x + 0.2 * x.y > 0.1) as u32,
        )
        .unwrap();
        let head = serde_json::to_string(&u.header()).unwrap();
        let back = LabelField::from_parts(serde_json::from_str(&head).unwrap(), &u.raster_csv()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn band_distance() {
        let g = Grid::rect(0.0, 0.0, 1.0, 5, 5).unwrap();
        let d = g.boundary_distance();
        assert_eq!(d[g.idx(0, 0)], 1);
        assert_eq!(d[g.idx(1, 1)], 2);
        assert_eq!(d[g.idx(2, 2)], 3);
    }
}
