//! Subcommand bodies. Each returns the artifacts to write; nothing here touches the output directory.

use std::path::Path;

use rayon::prelude::*;
use rigidhom::approx::{approximate, build_recovery, mincut_cell_solver, ApproxParams, RecoveryParams};
use rigidhom::cellsolve::CellSummary;
use rigidhom::counterex::{richardson_intercept, run_gap_experiment, verify_upper_bound, CounterexConfig};
use rigidhom::energy::DeformField;
use rigidhom::env::{validate_axioms, AxiomStatus, EnvSeed};
use rigidhom::fields::{FieldHeader, Grid, LabelField, RigidLabel};
use rigidhom::homog::{check_fhom_axioms, estimate_fhom, fhom_table, FHomRequest};
use rigidhom::io::{convergence_plot, estimates_csv, line_plot, partition_svg, Series};
use rigidhom::{rotation, skew, Mat2, Vec2};
use serde::Serialize;
use serde_json::json;

use crate::config::*;
use crate::Failure;

pub struct Outcome {
    pub summary: serde_json::Value,
    pub results: String,
    /// Extra files (SVG plots, field dumps) in write order.
    pub files: Vec<(String, String)>,
    /// Set when a requested check failed.
    pub invalid: Option<String>,
}

fn csv_string<R: Serialize>(header: &[&str], rows: &[R]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Failure::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Failure::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

pub fn fhom(cfg: &FhomConfig) -> Result<Outcome, Failure> {
    let zeta0 = *cfg.zetas.first().ok_or_else(|| Failure::Config("zetas is empty".into()))?;
    let nu0 = *cfg.nus.first().ok_or_else(|| Failure::Config("nus is empty".into()))?;
    let mut template = FHomRequest::new(zeta0, nu0, cfg.t_schedule.clone(), cfg.omega_count, cfg.solver.clone());
    template.base_seed = cfg.seed;
    template.r_map = cfg.r_map;
    template.base_point = cfg.base_point;
    let table = fhom_table(&cfg.density, &cfg.zetas, &cfg.nus, cfg.antipodes, &template)?;
    log::info!("estimated {} (zeta, nu) pairs", table.len());
    let axioms = cfg.check_axioms.then(|| check_fhom_axioms(&table, &cfg.density.params));
    let invalid = axioms.as_ref().filter(|r| !r.all_pass()).map(|r| {
        let failed: Vec<&str> =
            r.checks.iter().filter(|c| c.status == AxiomStatus::Fail).map(|c| c.axiom.as_str()).collect();
        format!("f_hom checks failed: {}", failed.join(", "))
    });
    let files = table.iter().enumerate().map(|(k, e)| (format!("fhom_{k}.svg"), convergence_plot(e))).collect();
    Ok(Outcome {
        summary: json!({ "estimates": table, "axioms": axioms }),
        results: estimates_csv(&table)?,
        files,
        invalid,
    })
}

pub fn cell(cfg: &CellConfig) -> Result<Outcome, Failure> {
    let p = cfg
        .solver
        .problem(cfg.center, cfg.side, cfg.nu, cfg.datum_point.unwrap_or(cfg.center), cfg.zeta, cfg.density.clone())
        .with_epsilon(cfg.epsilon)
        .with_truncation(cfg.truncation)
        .with_gradient_cap(cfg.gradient_cap);
    let seed = EnvSeed::new(cfg.seed, 0);
    let r = cfg.solver.solve(&p, seed)?;
    let s: CellSummary = r.summary();
    let row = (
        seed.seed,
        seed.stream,
        cfg.side,
        cfg.zeta.x,
        cfg.zeta.y,
        cfg.nu.x,
        cfg.nu.y,
        cfg.center.x,
        cfg.center.y,
        cfg.epsilon,
        cfg.solver.h,
        method_name(&cfg.solver.method),
        s.energy,
        s.certificate,
        s.gap,
        s.jump_length,
    );
    let header = [
        "seed", "stream", "t", "zeta1", "zeta2", "nu1", "nu2", "x1", "x2", "epsilon", "h", "method", "energy",
        "certificate", "gap", "jump_length",
    ];
    let field_header: FieldHeader = r.field.header();
    let files = vec![
        ("partition.svg".into(), partition_svg(&r.field)),
        ("field.json".into(), pretty(&field_header)),
        ("field.csv".into(), r.field.raster_csv()),
    ];
    Ok(Outcome { summary: json!({ "problem": p, "result": s }), results: csv_string(&header, &[row])?, files, invalid: None })
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn validate(cfg: &ValidateConfig) -> Result<Outcome, Failure> {
    let rep = validate_axioms(&cfg.density, &cfg.plan)?;
    let rows: Vec<_> = rep
        .checks
        .iter()
        .map(|c| (c.axiom.as_str(), status_name(c.status), c.worst_violation, c.samples, c.note.as_str()))
        .collect();
    let all_pass = rep.all_pass();
    let invalid = (!all_pass).then(|| {
        let failed: Vec<&str> =
            rep.checks.iter().filter(|c| c.status == AxiomStatus::Fail).map(|c| c.axiom.as_str()).collect();
        format!("axioms failed: {}", failed.join(", "))
    });
    Ok(Outcome {
        summary: json!({ "all_pass": all_pass, "report": rep }),
        results: csv_string(&["axiom", "status", "worst_violation", "samples", "note"], &rows)?,
        files: Vec::new(),
        invalid,
    })
}

fn status_name(s: AxiomStatus) -> String {
    to_json(&s).as_str().unwrap_or_default().to_string()
}

fn read_labels(base: &Path, header: &str, raster: &str) -> Result<LabelField, Failure> {
    let read = |p: &str| std::fs::read_to_string(base.join(p)).map_err(|e| Failure::Config(format!("{p}: {e}")));
    let h: FieldHeader = serde_json::from_str(&read(header)?).map_err(|e| Failure::Config(format!("{header}: {e}")))?;
    LabelField::from_parts(h, &read(raster)?).map_err(|e| Failure::Config(format!("{raster}: {e}")))
}

fn slope(pts: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = pts.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn approx(cfg: &ApproxConfig, base: &Path) -> Result<Outcome, Failure> {
    let deltas = if cfg.deltas.is_empty() { vec![cfg.params.delta] } else { cfg.deltas.clone() };
    let fixed = match &cfg.input {
        ApproxInput::Labels { header, raster } => {
            let mut u = read_labels(base, header, raster)?;
            for l in &mut u.labels {
                l.m += Mat2::identity();
            }
            Some(DeformField::from_labels(&u)?)
        }
        ApproxInput::Bending { .. } => None,
    };
    let runs = deltas
        .par_iter()
        .map(|&delta| {
            let p = ApproxParams { delta, ..cfg.params.clone() };
            let y = match (&cfg.input, &fixed) {
                (ApproxInput::Bending { n, k }, _) => {
                    let g = Grid::rect(0.0, 0.0, 1.0 / *n as f64, *n, *n)?;
                    let k = k * delta.powf(p.beta);
                    DeformField::from_fn(g, |_, x| rotation(k * x.x) * x, [])?
                }
                (_, Some(y)) => y.clone(),
                _ => unreachable!(),
            };
            let (u, rep) = approximate(&y, &p)?;
            Ok((p, u, rep))
        })
        .collect::<Result<Vec<_>, rigidhom::Error>>()?;
    let rows: Vec<_> = runs
        .iter()
        .map(|(p, _, r)| {
            (
                p.delta,
                p.beta,
                p.gamma(),
                r.linf_error,
                r.extra_jump_length,
                r.piece_count,
                r.subdivided_pieces,
                r.cuboid_count,
                r.linf_scale,
                r.jump_scale,
            )
        })
        .collect();
    let header = [
        "delta", "beta", "gamma", "linf_error", "extra_jump_length", "pieces", "subdivided", "cuboids", "linf_scale",
        "jump_scale",
    ];
    let linf: Vec<(f64, f64)> = runs.iter().map(|(p, _, r)| (p.delta, r.linf_error)).collect();
    let jump: Vec<(f64, f64)> = runs.iter().map(|(p, _, r)| (p.delta, r.extra_jump_length)).collect();
    let reports: Vec<_> = runs.iter().map(|(p, _, r)| json!({ "params": p, "report": r })).collect();
    let mut files = vec![("approx_0.svg".to_string(), partition_svg(&runs[0].1))];
    if runs.len() > 1 {
        let plottable = |v: &[(f64, f64)]| v.iter().copied().filter(|p| p.1 > 0.0).collect::<Vec<_>>();
        let series = [
            Series { name: "linf_error".into(), points: plottable(&linf), band: None },
            Series { name: "extra_jump_length".into(), points: plottable(&jump), band: None },
        ];
        files.push(("approx_scaling.svg".into(), line_plot("approximation scaling", "delta", "error", &series, true)));
    }
    Ok(Outcome {
        summary: json!({ "runs": reports, "linf_slope": slope(&linf), "extra_jump_slope": slope(&jump) }),
        results: csv_string(&header, &rows)?,
        files,
        invalid: None,
    })
}

fn interface_field(spec: &InterfaceSpec, h: f64) -> Result<LabelField, Failure> {
    let n = (1.0 / h).round() as usize;
    if n == 0 || (n as f64 * h - 1.0).abs() > 1e-9 {
        return Err(Failure::Config(format!("grid spacing {h} does not divide the unit square")));
    }
    let labels = vec![RigidLabel::constant(Vec2::zeros()), RigidLabel::new(skew(spec.skew), spec.zeta)];
    let u = match spec.normal {
        Normal::E2 => LabelField::from_fn(Grid::rect(0.0, -0.5, h, n, n)?, labels, |x| (x.y >= 0.0) as u32)?,
        Normal::E1 => LabelField::from_fn(Grid::rect(-0.5, 0.0, h, n, n)?, labels, |x| (x.x >= 0.0) as u32)?,
    };
    Ok(u)
}

pub fn recovery(cfg: &RecoveryConfig) -> Result<Outcome, Failure> {
    let nu = match cfg.interface.normal {
        Normal::E1 => Vec2::new(1.0, 0.0),
        Normal::E2 => Vec2::new(0.0, 1.0),
    };
    let fhat = match &cfg.fhom {
        FhomSource::Value { value } => *value,
        FhomSource::Estimate { t_schedule, omega_count, solver } => {
            let req = FHomRequest::new(cfg.interface.zeta, nu, t_schedule.clone(), *omega_count, solver.clone());
            estimate_fhom(&cfg.density, &req)?.estimate
        }
    };
    log::info!("f_hom value {fhat}");
    let oracle = |_z: Vec2, _n: Vec2| fhat;
    let solver = mincut_cell_solver(cfg.cell_h);
    let runs = cfg
        .epsilons
        .iter()
        .map(|&eps| {
            let u = interface_field(&cfg.interface, cfg.cell_h * eps)?;
            let params =
                RecoveryParams { epsilon: eps, eta: cfg.eta, rho: cfg.rho, t: cfg.t, cell_h: cfg.cell_h, kappa: cfg.kappa };
            Ok(build_recovery(&u, &cfg.density, &params, &oracle, &solver)?)
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let rows: Vec<_> = runs
        .iter()
        .map(|(_, r)| {
            (
                r.epsilon,
                r.t,
                cfg.cell_h,
                cfg.interface.zeta.x,
                cfg.interface.zeta.y,
                nu.x,
                nu.y,
                r.energy,
                r.predicted,
                r.ratio,
                r.fine_cubes,
                r.uncovered_length,
                r.eta_ok,
                r.max_grad,
                r.scaled_max_grad,
            )
        })
        .collect();
    let header = [
        "epsilon", "t", "cell_h", "zeta1", "zeta2", "nu1", "nu2", "energy", "predicted", "ratio", "fine_cubes",
        "uncovered_length", "eta_ok", "max_grad", "scaled_max_grad",
    ];
    let mut files = Vec::new();
    if let Some((w, _)) = runs.first() {
        files.push(("recovery_0.svg".to_string(), partition_svg(w)));
    }
    if runs.len() > 1 {
        let pts = runs.iter().map(|(_, r)| (r.epsilon, r.scaled_max_grad)).filter(|p| p.1 > 0.0).collect();
        let series = [Series { name: "eps^(1+kappa) max|grad|".into(), points: pts, band: None }];
        files.push(("recovery_gradients.svg".into(), line_plot("recovery gradients", "epsilon", "scaled", &series, true)));
    }
    let reports: Vec<_> = runs.iter().map(|(_, r)| r).collect();
    Ok(Outcome {
        summary: json!({ "fhom": fhat, "reports": reports }),
        results: csv_string(&header, &rows)?,
        files,
        invalid: None,
    })
}

pub fn counterexample(cfg: &CounterexampleConfig) -> Result<Outcome, Failure> {
    let base =
        CounterexConfig { a: cfg.a, rho: cfg.rho, epsilon: cfg.epsilon, delta_alpha_bound: cfg.delta_alpha_bound, h: cfg.h };
    let ub = verify_upper_bound(&base)?;
    let gap = run_gap_experiment(&base, &cfg.search)?;
    log::info!("gap ratio {}", gap.ratio);
    let extra = cfg
        .extrapolation
        .par_iter()
        .map(|&eps| verify_upper_bound(&CounterexConfig { epsilon: eps, ..base.clone() }).map(|r| (eps, r.energy)))
        .collect::<Result<Vec<_>, _>>()?;
    let extrapolation = if extra.is_empty() {
        None
    } else {
        let intercept = richardson_intercept(&extra)?;
        Some(json!({ "points": extra, "intercept": intercept, "limit_bound": base.limit_bound() }))
    };
    type Row<'a> = (&'a str, &'a str, f64, f64, f64, f64, f64, Option<f64>, Option<f64>);
    let mut rows: Vec<Row> = vec![("strip", "strip_competitor", cfg.a, cfg.rho, cfg.epsilon, cfg.h, ub.energy, None, None)];
    for c in &gap.candidates {
        rows.push(("candidate", &c.name, cfg.a, cfg.rho, cfg.epsilon, cfg.h, c.energy, c.certificate, Some(c.max_gradient)));
    }
    for &(eps, e) in &extra {
        rows.push(("upper_bound", "strip_competitor", cfg.a, cfg.rho, eps, cfg.h, e, None, None));
    }
    let header = ["record", "name", "a", "rho", "epsilon", "h", "energy", "certificate", "max_gradient"];
    let mut files = Vec::new();
    if extra.len() > 1 {
        let series = [Series { name: "strip energy".into(), points: extra.clone(), band: None }];
        files.push(("upper_bound.svg".to_string(), line_plot("strip competitor", "epsilon", "energy", &series, false)));
    }
    Ok(Outcome {
        summary: json!({ "upper_bound": ub, "gap": gap, "extrapolation": extrapolation }),
        results: csv_string(&header, &rows)?,
        files,
        invalid: None,
    })
}
