//! Surface density environments and their integer shifts.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::{check_unit, Vec2};

/// Piecewise-linear modulus of continuity, constant beyond the last node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modulus {
    pub table: Vec<(f64, f64)>,
}

impl Default for Modulus {
    fn default() -> Self {
        Modulus { table: vec![(0.0, 0.0), (0.5, 0.5)] }
    }
}

impl Modulus {
    pub fn validate(&self) -> Result<()> {
        let t = &self.table;
        if t.is_empty() || t[0] != (0.0, 0.0) {
            return invalid("modulus table must start at (0, 0)");
        }
        for w in t.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                return invalid("modulus table must have increasing r and nondecreasing values");
            }
        }
        if t.iter().any(|&(_, s)| !(0.0..=0.5).contains(&s)) {
            return invalid("modulus values must lie in [0, 1/2]");
        }
        Ok(())
    }

    pub fn eval(&self, r: f64) -> f64 {
        let t = &self.table;
        if r <= t[0].0 {
            return t[0].1;
        }
        for w in t.windows(2) {
            let ((r0, s0), (r1, s1)) = (w[0], w[1]);
            if r <= r1 {
                return s0 + (s1 - s0) * (r - r0) / (r1 - r0);
            }
        }
        t[t.len() - 1].1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityParams {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default)]
    pub sigma: Modulus,
}

impl DensityParams {
    pub fn new(c0: f64, c1: f64, c2: f64) -> Result<Self> {
        let p = DensityParams { c0, c1, c2, sigma: Modulus::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 >= 1.0) {
            return invalid("c0 must be >= 1");
        }
        // c1 = 1 is admitted for the counterexample density.
        if !(self.c1 > 0.0 && self.c1 <= 1.0) {
            return invalid("c1 must lie in (0, 1]");
        }
        if !(self.c2 >= 1.0) || !(self.c1 < self.c2) {
            return invalid("c2 must be >= 1 and exceed c1");
        }
        self.sigma.validate()
    }
}

/// Realisation key of a random environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSeed {
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl EnvSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        EnvSeed { seed, stream }
    }

    /// Uniform 64-bit draw attached to the integer cell `(i, j)`.
    pub fn cell_word(&self, i: i64, j: i64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(16 * pair(zigzag(i), zigzag(j)) as u128);
        rng.next_u64()
    }

    /// Generator for sequential draws (annealing and sampling), separate from cell words.
    pub fn rng(&self, tag: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(self.stream.wrapping_add(1 << 32));
        rng
    }
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

// Szudzik pairing; exact while both arguments stay below 2^32.
fn pair(a: u64, b: u64) -> u64 {
    if a >= b {
        a.wrapping_mul(a).wrapping_add(a).wrapping_add(b)
    } else {
        b.wrapping_mul(b).wrapping_add(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DensityKind {
    Constant { value: f64 },
    /// Unit-cell raster; row `j` covers frac(x2) in [j/ny, (j+1)/ny).
    PeriodicCellTable { nx: usize, ny: usize, values: Vec<f64> },
    /// i.i.d. choice from `values` on every unit cell, shifted by `offset`.
    RandomCheckerboard { values: Vec<f64>, offset: [i64; 2] },
    Counterexample { a: f64 },
}

/// Serialized form `{kind, params, constants, seed}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub kind: String,
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<DensityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<EnvSeed>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensitySpec", into = "DensitySpec")]
pub struct SurfaceDensity {
    pub params: DensityParams,
    pub kind: DensityKind,
    pub seed: EnvSeed,
}

/// Lower-level evaluator used by the axiom validator.
pub trait Density: Sync {
    fn params(&self) -> &DensityParams;
    fn value(&self, x: Vec2, zeta: Vec2, nu: Vec2) -> f64;
}

impl Density for SurfaceDensity {
    fn params(&self) -> &DensityParams {
        &self.params
    }
    fn value(&self, x: Vec2, zeta: Vec2, nu: Vec2) -> f64 {
        SurfaceDensity::value(self, x, zeta, nu)
    }
}

fn scalar_params(values: &[f64]) -> Result<DensityParams> {
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return invalid("density values must be finite and positive");
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(0.0, f64::max);
    let (c1, c2) = (lo.min(1.0), hi.max(1.0));
    let c1 = if c1 == c2 { 0.5 } else { c1 };
    DensityParams::new(1.0, c1, c2)
}

impl SurfaceDensity {
    pub fn constant(c: f64) -> Result<Self> {
        Ok(SurfaceDensity {
            params: scalar_params(&[c])?,
            kind: DensityKind::Constant { value: c },
            seed: EnvSeed::new(0, 0),
        })
    }

    pub fn periodic_table(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || values.len() != nx * ny {
            return invalid("cell table size does not match nx*ny");
        }
        Ok(SurfaceDensity {
            params: scalar_params(&values)?,
            kind: DensityKind::PeriodicCellTable { nx, ny, values },
            seed: EnvSeed::new(0, 0),
        })
    }

    /// 0.5 on frac(x2) in [0, 1/2), 1.0 elsewhere.
    pub fn laminate() -> Self {
        Self::periodic_table(1, 2, vec![0.5, 1.0]).expect("valid laminate")
    }

    pub fn checkerboard(values: Vec<f64>, seed: EnvSeed) -> Result<Self> {
        Ok(SurfaceDensity {
            params: scalar_params(&values)?,
            kind: DensityKind::RandomCheckerboard { values, offset: [0, 0] },
            seed,
        })
    }

    pub fn counterexample(a: f64) -> Result<Self> {
        if !(a >= 1.0 && a.is_finite()) {
            return invalid("counterexample requires a >= 1");
        }
        let s = (a * a + 1.0).sqrt();
        let params = DensityParams::new((a * a / 5.0).max(s), 1.0, a * a * s)?;
        Ok(SurfaceDensity { params, kind: DensityKind::Counterexample { a }, seed: EnvSeed::new(0, 0) })
    }

    pub fn with_params(mut self, params: DensityParams) -> Result<Self> {
        params.validate()?;
        self.params = params;
        Ok(self)
    }

    pub fn is_random(&self) -> bool {
        matches!(self.kind, DensityKind::RandomCheckerboard { .. })
    }

    pub fn is_periodic(&self) -> bool {
        !self.is_random()
    }

    /// The environment for realisation `omega` (identity for deterministic kinds).
    pub fn realize(&self, omega: EnvSeed) -> SurfaceDensity {
        let mut out = self.clone();
        if self.is_random() {
            out.seed = omega;
        }
        out
    }

    /// Checked evaluation.
    pub fn eval(&self, x: Vec2, zeta: Vec2, nu: Vec2) -> Result<f64> {
        check_unit(nu)?;
        if !(zeta.x.is_finite() && zeta.y.is_finite()) || zeta.norm() == 0.0 {
            return invalid("jump zeta must be nonzero and finite");
        }
        Ok(self.value(x, zeta, nu))
    }

    /// Unchecked evaluation for inner loops.
    pub fn value(&self, x: Vec2, zeta: Vec2, nu: Vec2) -> f64 {
        match &self.kind {
            DensityKind::Constant { value } => *value,
            DensityKind::PeriodicCellTable { nx, ny, values } => {
                let (i, j) = table_index(x, *nx, *ny);
                values[j * nx + i]
            }
            DensityKind::RandomCheckerboard { values, offset } => {
                let w = self.seed.cell_word(x.x.floor() as i64 + offset[0], x.y.floor() as i64 + offset[1]);
                values[(w % values.len() as u64) as usize]
            }
            DensityKind::Counterexample { a } => {
                if in_band(x.y) {
                    let g = (5.0 + a * zeta.x.abs() + zeta.y.abs()).min(a * a);
                    g * (a * nu.y.abs() + nu.x.abs())
                } else {
                    a * a * a
                }
            }
        }
    }

    /// Infimum of the density over jumps at `(x, nu)`.
    pub fn lower_bound(&self, x: Vec2, nu: Vec2) -> f64 {
        match &self.kind {
            DensityKind::Counterexample { a } => {
                if in_band(x.y) {
                    5f64.min(a * a) * (a * nu.y.abs() + nu.x.abs())
                } else {
                    a * a * a
                }
            }
            _ => self.value(x, Vec2::new(1.0, 0.0), nu),
        }
    }

    /// Environment shifted by `z`: `f'(x) = f(x + z)`.
    pub fn shift(&self, z: [i64; 2]) -> SurfaceDensity {
        let mut out = self.clone();
        if let DensityKind::RandomCheckerboard { offset, .. } = &mut out.kind {
            offset[0] += z[0];
            offset[1] += z[1];
        }
        out
    }

    /// Per-cell value of a checkerboard (integer cell index), for oracles and plots.
    pub fn cell_value(&self, i: i64, j: i64) -> Option<f64> {
        match &self.kind {
            DensityKind::RandomCheckerboard { values, offset } => {
                let w = self.seed.cell_word(i + offset[0], j + offset[1]);
                Some(values[(w % values.len() as u64) as usize])
            }
            _ => None,
        }
    }

    /// Parse a unit-cell raster from CSV (first row = bottom row).
    pub fn table_from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut values = Vec::new();
        let (mut nx, mut ny) = (0usize, 0usize);
        for rec in rdr.records() {
            let rec = rec?;
            let row: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("table entry {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if ny == 0 {
                nx = row.len();
            } else if row.len() != nx {
                return invalid("ragged cell table");
            }
            values.extend(row);
            ny += 1;
        }
        Self::periodic_table(nx, ny, values)
    }

    pub fn table_to_csv(&self) -> Option<String> {
        match &self.kind {
            DensityKind::PeriodicCellTable { nx, values, .. } => Some(
                values
                    .chunks(*nx)
                    .map(|r| r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","))
                    .collect::<Vec<_>>()
                    .join("\n")
                    + "\n",
            ),
            _ => None,
        }
    }
}

fn table_index(x: Vec2, nx: usize, ny: usize) -> (usize, usize) {
    let fx = x.x - x.x.floor();
    let fy = x.y - x.y.floor();
    (((fx * nx as f64).floor() as usize).min(nx - 1), ((fy * ny as f64).floor() as usize).min(ny - 1))
}

fn in_band(x2: f64) -> bool {
    let y = x2 - (x2 + 0.5).floor();
    y.abs() <= 0.25
}

impl TryFrom<DensitySpec> for SurfaceDensity {
    type Error = Error;

    fn try_from(s: DensitySpec) -> Result<Self> {
        let p = &s.params;
        let num = |k: &str| -> Result<f64> {
            p.get(k).and_then(|v| v.as_f64()).ok_or_else(|| Error::InvalidArgument(format!("density param {k:?} missing")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            serde_json::from_value(p.get(k).cloned().unwrap_or(serde_json::Value::Null))
                .map_err(|e| Error::InvalidArgument(format!("density param {k:?}: {e}")))
        };
        let allowed: &[&str] = match s.kind.as_str() {
            "constant" => &["value"],
            "periodic_cell_table" => &["nx", "ny", "values"],
            "laminate" => &[],
            "random_checkerboard" => &["values", "offset"],
            "counterexample" => &["a"],
            other => return invalid(format!("unknown density kind {other:?}")),
        };
        if let Some(obj) = p.as_object() {
            if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
                return invalid(format!("unknown density param {k:?}"));
            }
        } else if !p.is_null() {
            return invalid("density params must be an object");
        }
        let mut d = match s.kind.as_str() {
            "constant" => Self::constant(num("value")?)?,
            "periodic_cell_table" => Self::periodic_table(num("nx")? as usize, num("ny")? as usize, list("values")?)?,
            "laminate" => Self::laminate(),
            "random_checkerboard" => {
                let mut d = Self::checkerboard(list("values")?, s.seed.unwrap_or(EnvSeed::new(0, 0)))?;
                if let Some(off) = p.get("offset") {
                    let off: [i64; 2] = serde_json::from_value(off.clone())?;
                    d = d.shift(off);
                }
                d
            }
            _ => Self::counterexample(num("a")?)?,
        };
        if let Some(c) = s.constants {
            d = d.with_params(c)?;
        }
        if let Some(seed) = s.seed {
            d.seed = seed;
        }
        Ok(d)
    }
}

impl From<SurfaceDensity> for DensitySpec {
    fn from(d: SurfaceDensity) -> Self {
        use serde_json::json;
        let (kind, params) = match &d.kind {
            DensityKind::Constant { value } => ("constant", json!({ "value": value })),
            DensityKind::PeriodicCellTable { nx, ny, values } => {
                ("periodic_cell_table", json!({ "nx": nx, "ny": ny, "values": values }))
            }
            DensityKind::RandomCheckerboard { values, offset } => {
                ("random_checkerboard", json!({ "values": values, "offset": offset }))
            }
            DensityKind::Counterexample { a } => ("counterexample", json!({ "a": a })),
        };
        DensitySpec { kind: kind.into(), params, constants: Some(d.params), seed: Some(d.seed) }
    }
}

/// Sampling plan for [`validate_axioms`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePlan {
    pub x_per_axis: usize,
    pub zeta_count: usize,
    pub nu_count: usize,
    /// Side of the sampled square `[-extent/2, extent/2)^2`.
    #[serde(default = "one")]
    pub extent: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan { x_per_axis: 64, zeta_count: 16, nu_count: 16, extent: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxiomStatus {
    Pass,
    Fail,
    Structural,
    NotCovered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub axiom: String,
    pub status: AxiomStatus,
    pub worst_violation: f64,
    pub samples: usize,
    pub note: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn get(&self, axiom: &str) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.axiom == axiom)
    }

    pub fn passed(&self, axiom: &str) -> bool {
        self.get(axiom).is_some_and(|c| matches!(c.status, AxiomStatus::Pass | AxiomStatus::Structural))
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != AxiomStatus::Fail)
    }

    pub(crate) fn push(&mut self, axiom: &str, worst: f64, samples: usize, note: impl Into<String>) {
        let status = if samples == 0 {
            AxiomStatus::NotCovered
        } else if worst > 0.0 {
            AxiomStatus::Fail
        } else {
            AxiomStatus::Pass
        };
        self.checks.push(AxiomCheck { axiom: axiom.into(), status, worst_violation: worst, samples, note: note.into() });
    }
}

/// Deterministic jump samples: golden-angle directions, log-spaced magnitudes in [0.1, 10].
pub fn zeta_samples(n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|k| {
            let ang = 2.0 * std::f64::consts::PI * (k as f64 * 0.618_033_988_749_895).fract();
            let mag = if n > 1 { 0.1 * 100f64.powf(k as f64 / (n - 1) as f64) } else { 1.0 };
            Vec2::new(mag * ang.cos(), mag * ang.sin())
        })
        .collect()
}

/// Equispaced normals on the circle, starting at e1.
pub fn nu_samples(n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|k| {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Vec2::new(ang.cos(), ang.sin())
        })
        .collect()
}

/// Checks (f2)-(f7) on a sample grid; (f1) is structural.
pub fn validate_axioms<D: Density + ?Sized>(f: &D, plan: &SamplePlan) -> Result<AxiomReport> {
    if plan.x_per_axis == 0 || plan.zeta_count == 0 || plan.nu_count == 0 || !(plan.extent > 0.0) {
        return invalid("sample plan counts must be >= 1");
    }
    let p = f.params();
    let zetas = zeta_samples(plan.zeta_count);
    let nus = nu_samples(plan.nu_count);
    let n = plan.x_per_axis;
    let xs: Vec<Vec2> = (0..n * n)
        .map(|k| {
            let (i, j) = (k % n, k / n);
            let s = plan.extent / n as f64;
            Vec2::new(-plan.extent / 2.0 + (i as f64 + 0.5) * s, -plan.extent / 2.0 + (j as f64 + 0.5) * s)
        })
        .collect();

    #[derive(Default, Clone, Copy)]
    struct Acc {
        f2: f64,
        f3: f64,
        f4: f64,
        f5: f64,
        f6: f64,
        f7: f64,
        n2: usize,
        n3: usize,
        n4: usize,
        n: usize,
    }
    use rayon::prelude::*;
    let acc = xs
        .par_iter()
        .map(|&x| {
            let mut a = Acc::default();
            for &nu in &nus {
                let vals: Vec<f64> = zetas.iter().map(|&z| f.value(x, z, nu)).collect();
                for (k, &z) in zetas.iter().enumerate() {
                    let v = vals[k];
                    a.n += 1;
                    a.f5 = a.f5.max(p.c1 - v);
                    a.f6 = a.f6.max(v - p.c2);
                    let w = f.value(x, -z, -nu);
                    a.f7 = a.f7.max((v - w).abs() - 1e-12 * v.abs().max(w.abs()));
                    for (l, &z2) in zetas.iter().enumerate() {
                        let v2 = vals[l];
                        a.n2 += 1;
                        let s = p.sigma.eval((z2 - z).norm());
                        a.f2 = a.f2.max((v2 - v).abs() - s * (v + v2));
                        if z.norm() <= z2.norm() {
                            a.n3 += 1;
                            a.f3 = a.f3.max(v - p.c0 * v2);
                        }
                        if p.c0 * z.norm() <= z2.norm() {
                            a.n4 += 1;
                            a.f4 = a.f4.max(v - v2);
                        }
                    }
                }
            }
            a
        })
        .reduce(Acc::default, |a, b| Acc {
            f2: a.f2.max(b.f2),
            f3: a.f3.max(b.f3),
            f4: a.f4.max(b.f4),
            f5: a.f5.max(b.f5),
            f6: a.f6.max(b.f6),
            f7: a.f7.max(b.f7),
            n2: a.n2 + b.n2,
            n3: a.n3 + b.n3,
            n4: a.n4 + b.n4,
            n: a.n + b.n,
        });

    let mut r = AxiomReport::default();
    r.checks.push(AxiomCheck {
        axiom: "f1".into(),
        status: AxiomStatus::Structural,
        worst_violation: 0.0,
        samples: 0,
        note: "structural: satisfied by construction".into(),
    });
    r.push("f2", acc.f2.max(0.0), acc.n2, "|f(z2)-f(z1)| <= sigma(|z2-z1|)(f(z1)+f(z2))");
    r.push("f3", acc.f3.max(0.0), acc.n3, "|z1| <= |z2| => f(z1) <= c0 f(z2)");
    r.push("f4", acc.f4.max(0.0), acc.n4, "c0|z1| <= |z2| => f(z1) <= f(z2)");
    r.push("f5", acc.f5.max(0.0), acc.n, "c1 <= f");
    r.push("f6", acc.f6.max(0.0), acc.n, "f <= c2");
    r.push("f7", acc.f7.max(0.0), acc.n, "f(x,z,n) = f(x,-z,-n)");
    Ok(r)
}
