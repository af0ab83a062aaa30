//! Cell problems: exact two-label min-cut, multi-label local search, gluing and truncation.

pub mod maxflow;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{face_energy, surface_energy};
use crate::env::{EnvSeed, SurfaceDensity};
use crate::error::{invalid, Result};
use crate::fields::{rasterize_cube, Axis, Grid, LabelClass, LabelField, RigidLabel, OUTSIDE};
use crate::{check_unit, Mat2, Vec2};
use maxflow::FlowGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellProblem {
    pub center: Vec2,
    pub side: f64,
    pub nu: Vec2,
    /// Base point x of the jump datum u_{x,zeta,nu}.
    pub datum_point: Vec2,
    pub zeta: Vec2,
    pub class: LabelClass,
    pub epsilon: f64,
    pub h: f64,
    #[serde(default)]
    pub truncation: Option<f64>,
    /// Bound on |M|_inf for every label.
    #[serde(default)]
    pub gradient_cap: Option<f64>,
    pub density: SurfaceDensity,
    pub band: usize,
}

impl CellProblem {
    /// Cube `Q_side^nu(center)` with datum based at its centre; class {0}, unit scale, h = 1/4.
    pub fn new(center: Vec2, side: f64, nu: Vec2, zeta: Vec2, density: SurfaceDensity) -> Self {
        CellProblem {
            center,
            side,
            nu,
            datum_point: center,
            zeta,
            class: LabelClass::Zero,
            epsilon: 1.0,
            h: 0.25,
            truncation: None,
            gradient_cap: None,
            density,
            band: 1,
        }
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn with_band(mut self, band: usize) -> Self {
        self.band = band;
        self
    }

    pub fn with_class(mut self, class: LabelClass) -> Self {
        self.class = class;
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    pub fn with_datum_point(mut self, x: Vec2) -> Self {
        self.datum_point = x;
        self
    }

    pub fn with_truncation(mut self, k: Option<f64>) -> Self {
        self.truncation = k;
        self
    }

    pub fn with_gradient_cap(mut self, cap: Option<f64>) -> Self {
        self.gradient_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_unit(self.nu)?;
        if self.band < 1 {
            return invalid("boundary band must be at least one cell");
        }
        if !(self.epsilon > 0.0) || !(self.h > 0.0) || !(self.side > 0.0) {
            return invalid("cell problem needs positive epsilon, h and side");
        }
        if self.zeta.norm() == 0.0 || !self.zeta.iter().all(|v| v.is_finite()) {
            return invalid("jump datum zeta must be nonzero");
        }
        Ok(())
    }

    pub fn axis_aligned(&self) -> bool {
        self.nu.x == 0.0 || self.nu.y == 0.0
    }

    pub fn grid(&self) -> Result<Grid> {
        self.validate()?;
        let g = rasterize_cube(self.center, self.side, self.nu, self.h)?;
        if !g.is_connected() {
            return invalid("cell mask is disconnected");
        }
        Ok(g)
    }

    /// [lower, upper] labels of the datum.
    pub fn boundary_labels(&self) -> [RigidLabel; 2] {
        let m = if self.class == LabelClass::Rotation { Mat2::identity() } else { Mat2::zeros() };
        [RigidLabel::new(m, Vec2::zeros()), RigidLabel::new(m, self.zeta)]
    }

    pub fn upper(&self, x: Vec2) -> bool {
        (x - self.datum_point).dot(&self.nu) >= 0.0
    }
}

/// Cells within `band` cells (Chebyshev) of the mask exterior.
pub fn frozen_band(grid: &Grid, band: usize) -> Vec<bool> {
    grid.boundary_distance().iter().zip(&grid.mask).map(|(&d, &m)| m && d <= band).collect()
}

/// The two-valued datum on the rasterised cube.
pub fn boundary_field(p: &CellProblem) -> Result<LabelField> {
    let g = p.grid()?;
    LabelField::from_fn(g, p.boundary_labels().to_vec(), |x| p.upper(x) as u32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    MinCut,
    Local,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub energy: f64,
    pub field: LabelField,
    pub solver: SolverTag,
    pub certificate: Option<f64>,
    pub gap: Option<f64>,
    /// Set for oblique normals solved on a rasterised mask.
    pub discretization_bias: bool,
}

impl CellResult {
    pub fn summary(&self) -> CellSummary {
        CellSummary {
            energy: self.energy,
            solver: self.solver,
            certificate: self.certificate,
            gap: self.gap,
            discretization_bias: self.discretization_bias,
            labels: self.field.labels.len(),
            jump_length: self.field.jump_length(),
        }
    }
}

/// JSON form of a result without the field raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub energy: f64,
    pub solver: SolverTag,
    pub certificate: Option<f64>,
    pub gap: Option<f64>,
    pub discretization_bias: bool,
    pub labels: usize,
    pub jump_length: f64,
}

/// Minimum two-label labelling with `fixed` cells; `true` means label `a` (source side).
pub fn mincut_two_labels(
    grid: &Grid,
    fixed: &[Option<bool>],
    a: &RigidLabel,
    b: &RigidLabel,
    f: &SurfaceDensity,
    eps: f64,
) -> (Vec<bool>, f64) {
    let n = grid.len();
    let (s, t) = (n, n + 1);
    let mut g = FlowGraph::new(n + 2);
    for c in 0..n {
        if !grid.mask[c] {
            continue;
        }
        match fixed[c] {
            Some(true) => g.add_edge(s, c, f64::INFINITY, 0.0),
            Some(false) => g.add_edge(c, t, f64::INFINITY, 0.0),
            None => {}
        }
    }
    for fc in grid.faces() {
        let mid = grid.midpoint(&fc);
        let nrm = fc.normal();
        // plus = a, minus = b: cost when plus on source side.
        let w_plus_a = face_energy(f, mid, a.eval(mid) - b.eval(mid), nrm, eps, grid.h);
        let w_plus_b = face_energy(f, mid, b.eval(mid) - a.eval(mid), nrm, eps, grid.h);
        g.add_edge(fc.minus, fc.plus, w_plus_b, w_plus_a);
    }
    let flow = g.max_flow(s, t);
    let side = g.source_side(s);
    (side[..n].iter().zip(&grid.mask).map(|(&x, &m)| x && m).collect(), flow)
}

/// Exact two-label cell problem by max-flow.
pub fn solve_mincut(p: &CellProblem) -> Result<CellResult> {
    if !matches!(p.class, LabelClass::Zero | LabelClass::Rotation) {
        return invalid("min-cut solves the {0} and SO(2) classes only");
    }
    let bf = boundary_field(p)?;
    let frozen = frozen_band(&bf.grid, p.band);
    let fixed: Vec<Option<bool>> =
        (0..bf.grid.len()).map(|c| frozen[c].then(|| bf.assignment[c] == 1)).collect();
    let [lo, up] = p.boundary_labels();
    let (side, flow) = mincut_two_labels(&bf.grid, &fixed, &up, &lo, &p.density, p.epsilon);
    let assignment =
        (0..bf.grid.len()).map(|c| if bf.grid.mask[c] { side[c] as u32 } else { OUTSIDE }).collect();
    let field = LabelField::new(bf.grid.clone(), vec![lo, up], assignment)?;
    let energy = surface_energy(&field, &p.density, p.epsilon, None);
    Ok(CellResult {
        energy,
        field,
        solver: SolverTag::MinCut,
        certificate: Some(flow),
        gap: Some(energy - flow),
        discretization_bias: !p.axis_aligned(),
    })
}

/// Annealing and ICM schedule for [`solve_local`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub sweeps: usize,
    /// Initial temperature in units of `c1 * h`.
    pub t0: f64,
    pub cooling: f64,
    pub icm_passes: usize,
    pub proposal_rounds: usize,
    /// Full cycles of graph-cut expansion moves over the dictionary.
    #[serde(default = "one_cycle")]
    pub expansion_cycles: usize,
}

fn one_cycle() -> usize {
    1
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { sweeps: 20, t0: 1.0, cooling: 0.85, icm_passes: 100, proposal_rounds: 1, expansion_cycles: 1 }
    }
}

/// Multi-label search with a frozen set.
pub(crate) struct LocalSearch<'a> {
    pub grid: &'a Grid,
    pub density: &'a SurfaceDensity,
    pub eps: f64,
    pub frozen: &'a [bool],
    pub dict: Vec<RigidLabel>,
    pub class: LabelClass,
    pub truncation: Option<f64>,
    pub cap: Option<f64>,
}

impl LocalSearch<'_> {
    fn cell_cost(&self, asg: &[u32], c: usize, l: u32) -> f64 {
        let g = self.grid;
        let mut e = 0.0;
        for n in g.neighbors(c) {
            let fc = g.face_between(c, n);
            let mid = g.midpoint(&fc);
            let (lp, lm) = if fc.plus == c { (l, asg[n]) } else { (asg[n], l) };
            let jump = self.dict[lp as usize].eval(mid) - self.dict[lm as usize].eval(mid);
            e += face_energy(self.density, mid, jump, fc.normal(), self.eps, g.h);
        }
        e
    }

    fn total(&self, asg: &[u32]) -> f64 {
        let g = self.grid;
        g.faces()
            .map(|fc| {
                let mid = g.midpoint(&fc);
                let jump = self.dict[asg[fc.plus] as usize].eval(mid) - self.dict[asg[fc.minus] as usize].eval(mid);
                face_energy(self.density, mid, jump, fc.normal(), self.eps, g.h)
            })
            .sum()
    }

    fn free(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&c| self.grid.mask[c] && !self.frozen[c]).collect()
    }

    /// Greedy single-cell relabelling until no move lowers the energy.
    fn icm(&self, asg: &mut [u32], passes: usize) {
        let free = self.free();
        for _ in 0..passes.max(1) {
            let mut changed = false;
            for &c in &free {
                let cur = asg[c];
                let mut best = (self.cell_cost(asg, c, cur), cur);
                for l in 0..self.dict.len() as u32 {
                    if l == cur {
                        continue;
                    }
                    let e = self.cell_cost(asg, c, l);
                    if e < best.0 - 1e-12 * best.0.abs().max(1e-300) {
                        best = (e, l);
                    }
                }
                if best.1 != cur {
                    asg[c] = best.1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// One expansion move: every free cell either keeps its label or switches to `alpha`.
    /// Non-submodular pair terms are clipped; the move is kept only if the true energy drops.
    fn expand(&self, asg: &mut [u32], alpha: u32, energy: f64) -> f64 {
        let g = self.grid;
        let n = g.len();
        let (s, t) = (n, n + 1);
        let mut graph = FlowGraph::new(n + 2);
        let a = &self.dict[alpha as usize];
        let mut unary = vec![0.0; n];
        for c in 0..n {
            if g.mask[c] && self.frozen[c] && asg[c] != alpha {
                graph.add_edge(c, t, f64::INFINITY, 0.0);
            }
        }
        for fc in g.faces() {
            let mid = g.midpoint(&fc);
            let nrm = fc.normal();
            let (p, q) = (fc.minus, fc.plus);
            let (lp, lq) = (&self.dict[asg[p] as usize], &self.dict[asg[q] as usize]);
            let e = |plus: Vec2, minus: Vec2| face_energy(self.density, mid, plus - minus, nrm, self.eps, g.h);
            let va = a.eval(mid);
            let ek = e(lq.eval(mid), lp.eval(mid));
            let b = e(va, lp.eval(mid));
            let c = e(lq.eval(mid), va);
            unary[p] += c - ek;
            unary[q] -= c;
            let w = b + c - ek;
            if w > 0.0 {
                graph.add_edge(q, p, w, 0.0);
            }
        }
        for (c, &u) in unary.iter().enumerate() {
            if !g.mask[c] || u == 0.0 {
                continue;
            }
            if u > 0.0 {
                graph.add_edge(c, t, u, 0.0);
            } else {
                graph.add_edge(s, c, -u, 0.0);
            }
        }
        graph.max_flow(s, t);
        let side = graph.source_side(s);
        let mut next = asg.to_vec();
        for c in 0..n {
            if g.mask[c] && !self.frozen[c] && side[c] {
                next[c] = alpha;
            }
        }
        let e = self.total(&next);
        if e < energy - 1e-12 * energy.abs() {
            asg.copy_from_slice(&next);
            e
        } else {
            energy
        }
    }

    fn expansions(&self, asg: &mut [u32], cycles: usize) {
        let mut energy = self.total(asg);
        for _ in 0..cycles {
            let before = energy;
            for alpha in 0..self.dict.len() as u32 {
                energy = self.expand(asg, alpha, energy);
            }
            if energy >= before {
                break;
            }
        }
    }

    fn anneal(&self, asg: &mut Vec<u32>, s: &Schedule, seed: EnvSeed) {
        let free = self.free();
        let k = self.dict.len() as u32;
        if s.sweeps == 0 || free.is_empty() || k < 2 {
            return;
        }
        let mut rng = seed.rng(0x10ca1);
        let mut energy = self.total(asg);
        let mut best = (energy, asg.clone());
        let mut temp = s.t0 * self.density.params.c1 * self.grid.h;
        for _ in 0..s.sweeps {
            for &c in &free {
                let cur = asg[c];
                let mut l = rng.random_range(0..k - 1);
                if l >= cur {
                    l += 1;
                }
                let d = self.cell_cost(asg, c, l) - self.cell_cost(asg, c, cur);
                if d <= 0.0 || (temp > 0.0 && rng.random::<f64>() < (-d / temp).exp()) {
                    asg[c] = l;
                    energy += d;
                }
            }
            if energy < best.0 {
                best = (energy, asg.clone());
            }
            temp *= s.cooling;
        }
        *asg = best.1;
    }

    fn admissible(&self, l: &RigidLabel) -> bool {
        if !self.class.contains(&l.m) || self.cap.is_some_and(|k| l.m.amax() > k) {
            return false;
        }
        match self.truncation {
            None => true,
            Some(k) => label_within(self.grid, l, k),
        }
    }

    /// Least-squares skew (or constant) motions matching each piece's outside neighbours.
    fn propose(&mut self, asg: &[u32]) -> usize {
        let g = self.grid;
        let (comp, count) = g.components_of(|f| asg[f.minus] == asg[f.plus]);
        let mut rows: Vec<Vec<(Vec2, Vec2)>> = vec![Vec::new(); count];
        for fc in g.faces() {
            if asg[fc.minus] == asg[fc.plus] {
                continue;
            }
            let mid = g.midpoint(&fc);
            for (me, other) in [(fc.minus, fc.plus), (fc.plus, fc.minus)] {
                if !self.frozen[me] {
                    rows[comp[me] as usize].push((mid, self.dict[asg[other] as usize].eval(mid)));
                }
            }
        }
        let mut added = 0;
        for r in rows.iter().filter(|r| r.len() >= 2) {
            let cand = if self.class == LabelClass::Skew { fit_skew(r) } else { fit_constant(r) };
            if let Some(l) = cand {
                if self.admissible(&l) && !self.dict.iter().any(|d| d.same_motion(&l)) {
                    self.dict.push(l);
                    added += 1;
                }
            }
        }
        added
    }

    pub fn run(&mut self, mut asg: Vec<u32>, s: &Schedule, seed: EnvSeed) -> Vec<u32> {
        self.anneal(&mut asg, s, seed);
        self.expansions(&mut asg, s.expansion_cycles);
        self.icm(&mut asg, s.icm_passes);
        if matches!(self.class, LabelClass::Skew | LabelClass::Zero) {
            for _ in 0..s.proposal_rounds {
                if self.propose(&asg) == 0 {
                    break;
                }
                self.expansions(&mut asg, s.expansion_cycles);
                self.icm(&mut asg, s.icm_passes);
            }
        }
        asg
    }
}

fn fit_constant(rows: &[(Vec2, Vec2)]) -> Option<RigidLabel> {
    let mean = rows.iter().fold(Vec2::zeros(), |a, (_, v)| a + v) / rows.len() as f64;
    Some(RigidLabel::constant(mean))
}

// q(x) = (m x2 + b1, -m x1 + b2) in least squares.
fn fit_skew(rows: &[(Vec2, Vec2)]) -> Option<RigidLabel> {
    let mut a = Matrix3::<f64>::zeros();
    let mut r = Vector3::<f64>::zeros();
    for (x, v) in rows {
        for (row, rhs) in [(Vector3::new(x.y, 1.0, 0.0), v.x), (Vector3::new(-x.x, 0.0, 1.0), v.y)] {
            a += row * row.transpose();
            r += row * rhs;
        }
    }
    let sol = a.lu().solve(&r)?;
    sol.iter().all(|v| v.is_finite()).then(|| RigidLabel::new(crate::skew(sol[0]), Vec2::new(sol[1], sol[2])))
}

/// |M| <= k and |M x + b| <= k on every masked corner.
pub fn label_within(grid: &Grid, l: &RigidLabel, k: f64) -> bool {
    l.m.norm() <= k
        && (0..grid.len()).filter(|&c| grid.mask[c]).all(|c| grid.corners(c).iter().all(|&p| l.eval(p).norm() <= k))
}

/// Column (nu = +-e2) or row (nu = +-e1) slicing lower bound: each line joining differently
/// labelled frozen ends crosses a jump face.
pub fn slicing_lower_bound(field: &LabelField, f: &SurfaceDensity, eps: f64, nu: Vec2) -> Option<f64> {
    let g = &field.grid;
    let axis = if nu.x == 0.0 {
        Axis::Y
    } else if nu.y == 0.0 {
        Axis::X
    } else {
        return None;
    };
    let (lines, len) = if axis == Axis::Y { (g.nx, g.ny) } else { (g.ny, g.nx) };
    let cell = |line: usize, k: usize| if axis == Axis::Y { g.idx(line, k) } else { g.idx(k, line) };
    let mut total = 0.0;
    for line in 0..lines {
        let cells: Vec<usize> = (0..len).map(|k| cell(line, k)).filter(|&c| g.mask[c]).collect();
        let (Some(&first), Some(&last)) = (cells.first(), cells.last()) else { continue };
        if field.label_of(first).unwrap().same_motion(field.label_of(last).unwrap()) {
            continue;
        }
        let mut best = f64::INFINITY;
        for w in cells.windows(2) {
            let fc = g.face_between(w[0], w[1]);
            if fc.axis == axis && w[1] != w[0] && g.neighbors(w[0]).any(|n| n == w[1]) {
                best = best.min(f.lower_bound(g.midpoint(&fc) / eps, fc.normal()) * g.h);
            }
        }
        if best.is_finite() {
            total += best;
        }
    }
    Some(total)
}

fn dict_index(dict: &[RigidLabel], l: &RigidLabel) -> Option<u32> {
    dict.iter().position(|d| d.same_motion(l)).map(|k| k as u32)
}

/// Heuristic multi-label solve started from the datum.
pub fn solve_local(p: &CellProblem, dict: &[RigidLabel], schedule: &Schedule, seed: EnvSeed) -> Result<CellResult> {
    let bf = boundary_field(p)?;
    solve_local_from(p, dict, schedule, seed, &bf)
}

/// Heuristic multi-label solve from a given competitor (must match the datum on the band).
pub fn solve_local_from(
    p: &CellProblem,
    dict: &[RigidLabel],
    schedule: &Schedule,
    seed: EnvSeed,
    init: &LabelField,
) -> Result<CellResult> {
    if dict.is_empty() {
        return invalid("empty label dictionary");
    }
    let bf = boundary_field(p)?;
    if init.grid != bf.grid {
        return invalid("initial field lives on a different grid");
    }
    let [lo, up] = p.boundary_labels();
    if dict_index(dict, &lo).is_none() || dict_index(dict, &up).is_none() {
        return invalid("dictionary must contain both boundary labels");
    }
    if let Some(k) = p.truncation {
        if let Some(l) = dict.iter().find(|l| !label_within(&bf.grid, l, k)) {
            return invalid(format!("dictionary label {l:?} violates the truncation level {k}"));
        }
    }
    if let Some(k) = p.gradient_cap {
        if dict.iter().any(|l| l.m.amax() > k) {
            return invalid(format!("dictionary label exceeds the gradient cap {k}"));
        }
    }
    let frozen = frozen_band(&bf.grid, p.band);
    let mut asg = vec![OUTSIDE; bf.grid.len()];
    for c in 0..bf.grid.len() {
        if !bf.grid.mask[c] {
            continue;
        }
        let want = if frozen[c] { bf.label_of(c) } else { init.label_of(c) }.unwrap();
        if frozen[c] && !init.label_of(c).unwrap().same_motion(want) {
            return invalid("initial field differs from the datum on the frozen band");
        }
        asg[c] = dict_index(dict, want).ok_or_else(|| crate::Error::InvalidArgument("initial label missing from dictionary".into()))?;
    }
    let mut search = LocalSearch {
        grid: &bf.grid,
        density: &p.density,
        eps: p.epsilon,
        frozen: &frozen,
        dict: dict.to_vec(),
        class: p.class,
        truncation: p.truncation,
        cap: p.gradient_cap,
    };
    let asg = search.run(asg, schedule, seed);
    let field = LabelField::new(bf.grid.clone(), search.dict.clone(), asg)?;
    let energy = surface_energy(&field, &p.density, p.epsilon, None);
    let certificate = slicing_lower_bound(&bf, &p.density, p.epsilon, p.nu);
    Ok(CellResult {
        energy,
        field,
        solver: SolverTag::Local,
        certificate,
        gap: certificate.map(|c| energy - c),
        discretization_bias: !p.axis_aligned(),
    })
}

/// Solves on nested dictionaries, warm-starting each from the previous optimum.
pub fn solve_local_nested(
    p: &CellProblem,
    dicts: &[Vec<RigidLabel>],
    schedule: &Schedule,
    seed: EnvSeed,
) -> Result<Vec<CellResult>> {
    let mut out: Vec<CellResult> = Vec::new();
    for (k, d) in dicts.iter().enumerate() {
        if k > 0 && !dicts[k - 1].iter().all(|l| dict_index(d, l).is_some()) {
            return invalid("dictionaries are not nested");
        }
        let r = match out.last() {
            None => solve_local(p, d, schedule, seed)?,
            Some(prev) => {
                let mut dict = d.clone();
                for l in &prev.field.labels {
                    if dict_index(&dict, l).is_none() {
                        dict.push(*l);
                    }
                }
                let r = solve_local_from(p, &dict, schedule, seed, &prev.field)?;
                if r.energy <= prev.energy {
                    r
                } else {
                    prev.clone()
                }
            }
        };
        out.push(r);
    }
    Ok(out)
}

/// Solver selection shared by the estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub h: f64,
    #[serde(default = "one_band")]
    pub band: usize,
    #[serde(default = "zero_class")]
    pub class: LabelClass,
    #[serde(default)]
    pub method: Method,
}

fn one_band() -> usize {
    1
}

fn zero_class() -> LabelClass {
    LabelClass::Zero
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    #[default]
    MinCut,
    Local {
        #[serde(default)]
        schedule: Schedule,
        #[serde(default)]
        extra_labels: Vec<RigidLabel>,
    },
}

impl SolverConfig {
    pub fn mincut(h: f64) -> Self {
        SolverConfig { h, band: 1, class: LabelClass::Zero, method: Method::MinCut }
    }

    pub fn is_exact(&self) -> bool {
        self.method == Method::MinCut
    }

    pub fn problem(&self, center: Vec2, side: f64, nu: Vec2, datum: Vec2, zeta: Vec2, f: SurfaceDensity) -> CellProblem {
        CellProblem::new(center, side, nu, zeta, f)
            .with_h(self.h)
            .with_band(self.band)
            .with_class(self.class)
            .with_datum_point(datum)
    }

    pub fn solve(&self, p: &CellProblem, seed: EnvSeed) -> Result<CellResult> {
        match &self.method {
            Method::MinCut => solve_mincut(p),
            Method::Local { schedule, extra_labels } => {
                let mut dict = p.boundary_labels().to_vec();
                dict.extend(extra_labels.iter().copied());
                solve_local(p, &dict, schedule, seed)
            }
        }
    }
}

/// `inner` on `subregion`, `outer` elsewhere; both must agree on the cells of `subregion`
/// adjacent (8-neighbourhood) to its complement.
pub fn glue(inner: &LabelField, outer: &LabelField, subregion: &[bool]) -> Result<LabelField> {
    if inner.grid != outer.grid || subregion.len() != inner.grid.len() {
        return invalid("glue needs fields on one grid");
    }
    let g = &inner.grid;
    let sub = g.clone().with_mask(g.mask.iter().zip(subregion).map(|(&m, &s)| m && s).collect())?;
    let dist = sub.boundary_distance();
    for c in 0..g.len() {
        if sub.mask[c] && dist[c] == 1 && !inner.label_of(c).unwrap().same_motion(outer.label_of(c).unwrap()) {
            let (i, j) = g.ij(c);
            return invalid(format!("inner and outer differ in the band at cell ({i}, {j})"));
        }
    }
    let k = inner.labels.len() as u32;
    let mut labels = inner.labels.clone();
    labels.extend(outer.labels.iter().copied());
    let assignment = (0..g.len())
        .map(|c| match (g.mask[c], sub.mask[c]) {
            (false, _) => OUTSIDE,
            (true, true) => inner.assignment[c],
            (true, false) => outer.assignment[c] + k,
        })
        .collect();
    Ok(LabelField::new(g.clone(), labels, assignment)?.canonicalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestStats {
    /// Area of all replaced pieces.
    pub rest_area: f64,
    /// Length of the union of replaced-piece boundaries inside the region.
    pub rest_perimeter: f64,
    pub large_pieces: usize,
    pub small_pieces: usize,
    pub small_area: f64,
    pub sup_norm: f64,
    pub bdata_sup: f64,
    /// Smallest C with sup_norm <= C * lambda guaranteed: max(1, |bdata|_inf / lambda).
    pub c_theta: f64,
}

/// Replaces pieces exceeding `lambda`, and small pieces within the theta budget, by `bdata`.
pub fn truncate_field(u: &LabelField, lambda: f64, theta: f64, bdata: &LabelField) -> Result<(LabelField, RestStats)> {
    if !(lambda >= 1.0) || !(theta > 0.0) {
        return invalid("truncation needs lambda >= 1 and theta > 0");
    }
    let (ru, rb) = crate::fields::refine(u, bdata)?;
    let g = &ru.grid;
    let (comp, count) = ru.pieces();
    let mut sup = vec![0.0f64; count];
    let mut area = vec![0usize; count];
    let mut noop = vec![true; count];
    for c in 0..g.len() {
        if !g.mask[c] {
            continue;
        }
        let p = comp[c] as usize;
        area[p] += 1;
        let (lu, lb) = (ru.label_of(c).unwrap(), rb.label_of(c).unwrap());
        noop[p] &= lu.same_motion(lb);
        for x in g.corners(c) {
            sup[p] = sup[p].max(lu.eval(x).norm());
        }
    }
    let mut replaced = vec![false; count];
    let mut large = 0;
    for p in 0..count {
        if sup[p] > lambda && !noop[p] {
            replaced[p] = true;
            large += 1;
        }
    }
    let boundary_len = |rep: &[bool], only: Option<&[bool]>| -> f64 {
        let sel = |c: usize| only.map_or(rep[comp[c] as usize], |o| o[comp[c] as usize]);
        g.faces().filter(|f| comp[f.minus] != comp[f.plus] && (sel(f.minus) || sel(f.plus))).count() as f64 * g.h
    };
    let h_total = u.jump_length() + g.boundary_face_count() as f64 * g.h;
    let mut order: Vec<usize> = (0..count).filter(|&p| !replaced[p] && !noop[p]).collect();
    order.sort_by_key(|&p| (area[p], p));
    let mut small = vec![false; count];
    let mut small_area = 0.0;
    let mut small_count = 0;
    for p in order {
        let a = area[p] as f64 * g.h * g.h;
        if small_area + a > theta * h_total * h_total {
            break;
        }
        small[p] = true;
        if boundary_len(&replaced, Some(&small)) > theta * h_total {
            small[p] = false;
            continue;
        }
        small_area += a;
        small_count += 1;
    }
    let all: Vec<bool> = (0..count).map(|p| replaced[p] || small[p]).collect();
    let k = ru.labels.len() as u32;
    let mut labels = ru.labels.clone();
    labels.extend(rb.labels.iter().copied());
    let assignment: Vec<u32> = (0..g.len())
        .map(|c| {
            if !g.mask[c] {
                OUTSIDE
            } else if all[comp[c] as usize] {
                rb.assignment[c] + k
            } else {
                ru.assignment[c]
            }
        })
        .collect();
    let out = LabelField::new(g.clone(), labels, assignment)?.canonicalize();
    let rest_cells = (0..g.len()).filter(|&c| g.mask[c] && all[comp[c] as usize]).count();
    let sup_norm = out.sup_norm();
    let bdata_sup = bdata.sup_norm();
    Ok((
        out,
        RestStats {
            rest_area: rest_cells as f64 * g.h * g.h,
            rest_perimeter: boundary_len(&all, None),
            large_pieces: large,
            small_pieces: small_count,
            small_area,
            sup_norm,
            bdata_sup,
            c_theta: (bdata_sup / lambda).max(1.0),
        },
    ))
}
