//! The strip counterexample: laminated competitor, its upper bound, and the slicing
//! lower bound for gradient-capped competitors.

use serde::{Deserialize, Serialize};

use crate::cellsolve::{frozen_band, solve_local_from, CellProblem, Schedule};
use crate::energy::{face_energy, surface_energy};
use crate::env::{EnvSeed, SurfaceDensity};
use crate::error::{invalid, Result};
use crate::fields::{Axis, Grid, LabelClass, LabelField, RigidLabel};
use crate::{e1, e2, skew, Mat2, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexConfig {
    pub a: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Gradient cap delta^(-alpha/4) on |M|_inf; defaults to 1/(10 epsilon).
    #[serde(default)]
    pub delta_alpha_bound: Option<f64>,
    pub h: f64,
}

fn is_int(x: f64) -> bool {
    (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0)
}

impl CounterexConfig {
    pub fn new(a: f64, rho: f64, epsilon: f64, h: f64) -> Self {
        CounterexConfig { a, rho, epsilon, delta_alpha_bound: None, h }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 1.0) || !(self.rho > 0.0) || !(self.epsilon > 0.0) || !(self.h > 0.0) {
            return invalid("need a >= 1 and positive rho, epsilon, h");
        }
        if !is_int(self.rho / self.epsilon) || self.rho / self.epsilon < 2.0 - 1e-9 {
            return invalid("rho must be an integer multiple (>= 2) of epsilon");
        }
        if !is_int(self.epsilon / (8.0 * self.h)) {
            return invalid("h must divide epsilon/8");
        }
        if self.cap() <= 0.0 {
            return invalid("gradient cap must be positive");
        }
        Ok(())
    }

    pub fn cap(&self) -> f64 {
        self.delta_alpha_bound.unwrap_or(0.1 / self.epsilon)
    }

    /// epsilon * cap <= 1/10.
    pub fn small_regime(&self) -> bool {
        self.epsilon * self.cap() <= 0.1 + 1e-12
    }

    pub fn n_squares(&self) -> usize {
        (8.0 * self.rho / self.epsilon).round() as usize - 8
    }

    pub fn grid(&self) -> Result<Grid> {
        self.validate()?;
        let n = (2.0 * self.rho / self.h).round() as usize;
        Grid::rect(-self.rho, -self.rho, self.h, n, n)
    }

    pub fn density(&self) -> Result<SurfaceDensity> {
        SurfaceDensity::counterexample(self.a)
    }

    /// (2 rho - 7 eps / 4)(a + 6), 2 eps a^3 and (4 rho - 4 eps) 6 a.
    pub fn paper_terms(&self) -> [f64; 3] {
        let (a, r, e) = (self.a, self.rho, self.epsilon);
        [(2.0 * r - 1.75 * e) * (a + 6.0), 2.0 * e * a.powi(3), (4.0 * r - 4.0 * e) * 6.0 * a]
    }

    /// 2 rho (13 a + 6).
    pub fn limit_bound(&self) -> f64 {
        2.0 * self.rho * (13.0 * self.a + 6.0)
    }

    /// 30 rho a.
    pub fn lower_limit(&self) -> f64 {
        30.0 * self.rho * self.a
    }
}

/// u_{0,e1,e2} on the cube.
pub fn datum_field(cfg: &CounterexConfig) -> Result<LabelField> {
    let g = cfg.grid()?;
    LabelField::from_fn(g, vec![RigidLabel::constant(Vec2::zeros()), RigidLabel::constant(e1())], |x| (x.y >= 0.0) as u32)
}

/// M_eps = (4/eps)(e1 x e2 - e2 x e1).
pub fn strip_matrix(epsilon: f64) -> Mat2 {
    skew(4.0 / epsilon)
}

/// x_i of the i-th square (0-based).
pub fn square_center(cfg: &CounterexConfig, i: usize) -> Vec2 {
    let e = cfg.epsilon;
    Vec2::new(-cfg.rho + e + e / 8.0 + i as f64 * e / 4.0, 0.0)
}

pub fn build_strip_competitor(cfg: &CounterexConfig) -> Result<LabelField> {
    let g = cfg.grid()?;
    let e = cfg.epsilon;
    let m = strip_matrix(e);
    let n = cfg.n_squares();
    let mut labels = vec![RigidLabel::constant(Vec2::zeros()), RigidLabel::constant(e1())];
    for i in 0..n {
        labels.push(RigidLabel::new(m, m * (-square_center(cfg, i) + e / 8.0 * e2())));
    }
    let (rho, start) = (cfg.rho, -cfg.rho + e);
    LabelField::from_fn(g, labels, |x| {
        if x.y.abs() < e / 8.0 && x.x.abs() < rho - e {
            let i = (((x.x - start) / (e / 4.0)).floor() as usize).min(n - 1);
            2 + i as u32
        } else {
            (x.y >= 0.0) as u32
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripTerms {
    /// Faces with normal e1.
    pub vertical: f64,
    /// Top and bottom faces of the squares.
    pub square_horizontal: f64,
    /// The two datum segments of length eps at the strip ends.
    pub gamma_horizontal: f64,
}

impl StripTerms {
    pub fn total(&self) -> f64 {
        self.vertical + self.square_horizontal + self.gamma_horizontal
    }
}

/// Closed forms of the three parts (a >= 3).
pub fn strip_terms_exact(cfg: &CounterexConfig) -> StripTerms {
    let (a, e) = (cfg.a, cfg.epsilon);
    let n = cfg.n_squares() as f64;
    StripTerms {
        vertical: (n - 1.0) * e / 4.0 * 6f64.min(a * a) + 2.0 * (5.5 * e / 4.0 + a * e / 16.0),
        square_horizontal: 2.0 * n * a * 21.0 * e / 16.0,
        gamma_horizontal: 2.0 * e * a * (5.0 + a).min(a * a),
    }
}

/// The same split measured face by face.
pub fn strip_terms_measured(cfg: &CounterexConfig, u: &LabelField) -> Result<StripTerms> {
    let f = cfg.density()?;
    let mut t = StripTerms { vertical: 0.0, square_horizontal: 0.0, gamma_horizontal: 0.0 };
    for j in u.jump_faces() {
        let e = face_energy(&f, j.midpoint, j.jump, j.normal, cfg.epsilon, u.grid.h);
        if j.face.axis == Axis::X {
            t.vertical += e;
        } else if j.midpoint.x.abs() > cfg.rho - cfg.epsilon {
            t.gamma_horizontal += e;
        } else {
            t.square_horizontal += e;
        }
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub energy: f64,
    /// 2 rho (13 a + 6).
    pub bound: f64,
    /// Sum of the paper's three explicit terms at this epsilon.
    pub paper_sum: f64,
    /// paper_sum / bound - 1.
    pub tol: f64,
    pub pass: bool,
    /// |energy - paper_sum| / paper_sum.
    pub term_mismatch: f64,
    pub measured: StripTerms,
    pub exact: StripTerms,
}

pub fn verify_upper_bound(cfg: &CounterexConfig) -> Result<UpperBoundReport> {
    let u = build_strip_competitor(cfg)?;
    let f = cfg.density()?;
    let energy = surface_energy(&u, &f, cfg.epsilon, None);
    let bound = cfg.limit_bound();
    let paper_sum: f64 = cfg.paper_terms().iter().sum();
    let tol = (paper_sum / bound - 1.0).max(0.0);
    Ok(UpperBoundReport {
        energy,
        bound,
        paper_sum,
        tol,
        pass: energy <= bound * (1.0 + tol),
        term_mismatch: (energy - paper_sum).abs() / paper_sum,
        measured: strip_terms_measured(cfg, &u)?,
        exact: strip_terms_exact(cfg),
    })
}

/// Intercept at epsilon = 0 of the least-squares line through `(epsilon, energy)` points.
pub fn richardson_intercept(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return invalid("extrapolation needs two points");
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("extrapolation needs distinct epsilons");
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(my - sxy / sxx * mx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// max(chain, direct).
    pub value: f64,
    /// Per-face lower densities summed over all horizontal jump faces plus the a^3 parts.
    pub direct: f64,
    /// Column classification bound with each term clipped to the energy it accounts for.
    pub chain: f64,
    /// The unclipped classification bound.
    pub paper_chain: f64,
    pub energy: f64,
    pub i1_length: f64,
    pub i2_length: f64,
    pub i3_length: f64,
    pub pieces: usize,
}

#[derive(Default, Clone)]
struct PieceStats {
    rows: (usize, usize),
    seen: bool,
    m_inf: f64,
    s_len: f64,
    d_s: f64,
    v_meas: f64,
}

/// Slicing lower bound for a competitor frozen to the datum with skew labels |M|_inf <= cap.
pub fn slicing_certificate(u: &LabelField, cfg: &CounterexConfig) -> Result<CertificateReport> {
    cfg.validate()?;
    let (a, eps) = (cfg.a, cfg.epsilon);
    if a < 10.0 {
        return invalid("certificate needs a >= 10");
    }
    if !cfg.small_regime() {
        return invalid("certificate needs epsilon * cap <= 1/10");
    }
    let datum = datum_field(cfg)?;
    if u.grid != datum.grid {
        return invalid("competitor must live on the cube grid");
    }
    u.check_class(LabelClass::Skew)?;
    let u = u.canonicalize();
    let cap = cfg.cap();
    if let Some(l) = u.labels.iter().find(|l| l.m.amax() > cap * (1.0 + 1e-12)) {
        return invalid(format!("label gradient {} exceeds the cap {cap}", l.m.amax()));
    }
    let g = &u.grid;
    let band = frozen_band(g, 1);
    if (0..g.len()).any(|c| band[c] && !u.label_of(c).unwrap().same_motion(datum.label_of(c).unwrap())) {
        return invalid("competitor is not frozen to the datum near the boundary");
    }
    let f = cfg.density()?;
    let energy = surface_energy(&u, &f, eps, None);
    let (comp, count) = u.pieces();
    let top = comp[g.idx(0, g.ny - 1)];
    let bottom = comp[g.idx(0, 0)];
    let mut st = vec![PieceStats::default(); count];
    let mut stamp = vec![usize::MAX; count];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = g.idx(i, j);
            let p = comp[c] as usize;
            let s = &mut st[p];
            if !s.seen {
                s.rows = (j, j);
                s.seen = true;
                s.m_inf = u.label_of(c).unwrap().m.amax();
            }
            s.rows = (s.rows.0.min(j), s.rows.1.max(j));
            if stamp[p] == j {
                continue;
            }
            stamp[p] = j;
            // Leftmost face of the piece in this row, counted where the density is a^3.
            if i > 0 {
                let fc = g.face_between(g.idx(i - 1, j), c);
                let mid = g.midpoint(&fc);
                if f.lower_bound(mid / eps, e1()) >= a * a * a {
                    s.v_meas += face_energy(&f, mid, u.face_jump(&fc), e1(), eps, g.h);
                }
            }
        }
    }
    let face_lb = |jump: Vec2| a * (5.0 + a * jump.x.abs() + jump.y.abs()).min(a * a) * g.h;
    let (mut l1, mut l2, mut l3) = (0.0, 0.0, 0.0);
    let (mut chain, mut paper, mut direct) = (0.0, 0.0, 0.0);
    for i in 0..g.nx {
        let jumps: Vec<usize> =
            (0..g.ny - 1).filter(|&j| u.assignment[g.idx(i, j)] != u.assignment[g.idx(i, j + 1)]).collect();
        let d_col: f64 = jumps
            .iter()
            .map(|&j| face_lb(u.face_jump(&g.face_between(g.idx(i, j), g.idx(i, j + 1)))))
            .sum();
        direct += d_col;
        match jumps.len() {
            0 => {}
            2 => {
                l2 += g.h;
                let p = comp[g.idx(i, jumps[0] + 1)] as usize;
                st[p].s_len += g.h;
                st[p].d_s += d_col;
            }
            n => {
                if n == 1 {
                    l1 += g.h;
                } else {
                    l3 += g.h;
                }
                paper += 15.0 * a * g.h;
                chain += (15.0 * a * g.h).min(d_col);
            }
        }
    }
    let mut pieces = 0;
    for (p, s) in st.iter().enumerate() {
        if p as u32 == top || p as u32 == bottom || !s.seen {
            continue;
        }
        pieces += 1;
        direct += s.v_meas;
        let hj = (s.rows.1 - s.rows.0 + 1) as f64 * g.h;
        let v_paper = if hj >= 2.0 * eps { eps / 2.0 * ((hj / eps + 1e-9).floor() - 1.0) * a.powi(3) } else { 0.0 };
        let v = v_paper.min(s.v_meas);
        if s.s_len == 0.0 {
            chain += v;
            paper += v_paper;
            continue;
        }
        if s.m_inf <= 1.0 / (2.0 * hj) {
            let b = a * a / 2.0 * s.s_len;
            paper += b + v_paper;
            chain += b.min(s.d_s) + v;
        } else if s.s_len <= 4.0 * a * hj {
            let b = a * a / 16.0 * s.s_len;
            paper += b;
            chain += b.min(s.d_s + v);
        } else {
            let b = a * a / 8.0 * s.s_len;
            paper += b + v_paper;
            chain += b.min(s.d_s) + v;
        }
    }
    Ok(CertificateReport {
        value: chain.max(direct),
        direct,
        chain,
        paper_chain: paper,
        energy,
        i1_length: l1,
        i2_length: l2,
        i3_length: l3,
        pieces,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSearch {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "gap_schedule")]
    pub schedule: Schedule,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn gap_schedule() -> Schedule {
    Schedule { sweeps: 2, t0: 0.05, cooling: 0.5, icm_passes: 20, proposal_rounds: 1, expansion_cycles: 0 }
}

impl Default for GapSearch {
    fn default() -> Self {
        GapSearch { seeds: default_seeds(), schedule: gap_schedule() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub energy: f64,
    pub certificate: Option<f64>,
    pub max_gradient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub a: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub h: f64,
    pub cap: f64,
    pub unconstrained: f64,
    pub constrained_best: f64,
    pub best_certificate: Option<f64>,
    pub ratio: f64,
    pub pass: bool,
    pub candidates: Vec<Candidate>,
    /// 30 rho a (1 - 5%).
    pub certificate_threshold: f64,
    pub all_certified: Option<bool>,
    /// 2 rho (13 a + 6) / (30 rho a).
    pub bound_ratio: f64,
}

/// Strip energy against the best gradient-capped competitor found.
pub fn run_gap_experiment(cfg: &CounterexConfig, search: &GapSearch) -> Result<GapReport> {
    cfg.validate()?;
    let f = cfg.density()?;
    let strip = build_strip_competitor(cfg)?;
    let unconstrained = surface_energy(&strip, &f, cfg.epsilon, None);
    let cap = cfg.cap();
    let flat = datum_field(cfg)?;
    let p = CellProblem::new(Vec2::zeros(), 2.0 * cfg.rho, e2(), e1(), f.clone())
        .with_h(cfg.h)
        .with_epsilon(cfg.epsilon)
        .with_class(LabelClass::Skew)
        .with_gradient_cap(Some(cap));
    let mut dict = vec![RigidLabel::constant(Vec2::zeros()), RigidLabel::constant(e1())];
    for m in [cap, -cap, cap / 2.0, -cap / 2.0] {
        for b in [Vec2::zeros(), e1()] {
            dict.push(RigidLabel::new(skew(m), b));
        }
    }
    let mut fields = vec![("flat".to_string(), flat.clone())];
    for &s in &search.seeds {
        let r = solve_local_from(&p, &dict, &search.schedule, EnvSeed::new(s, 0), &flat)?;
        fields.push((format!("local_search_seed_{s}"), r.field));
    }
    let certify = cfg.a >= 10.0 && cfg.small_regime();
    let mut candidates = Vec::new();
    for (name, u) in fields {
        let certificate = if certify { Some(slicing_certificate(&u, cfg)?.value) } else { None };
        candidates.push(Candidate {
            name,
            energy: surface_energy(&u, &f, cfg.epsilon, None),
            certificate,
            max_gradient: u.canonicalize().labels.iter().map(|l| l.m.amax()).fold(0.0, f64::max),
        });
    }
    let best = candidates.iter().min_by(|x, y| x.energy.total_cmp(&y.energy)).unwrap().clone();
    let threshold = 0.95 * cfg.lower_limit();
    let ratio = unconstrained / best.energy;
    Ok(GapReport {
        a: cfg.a,
        rho: cfg.rho,
        epsilon: cfg.epsilon,
        h: cfg.h,
        cap,
        unconstrained,
        constrained_best: best.energy,
        best_certificate: best.certificate,
        ratio,
        pass: ratio < 1.0,
        all_certified: certify.then(|| candidates.iter().all(|c| c.certificate.is_some_and(|v| v >= threshold))),
        candidates,
        certificate_threshold: threshold,
        bound_ratio: cfg.limit_bound() / cfg.lower_limit(),
    })
}
