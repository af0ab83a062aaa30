//! CSV tables and static SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::fields::LabelField;
use crate::homog::FHomEstimate;

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// One row per (t, omega) solve, with everything needed to re-solve it.
pub fn estimates_csv(table: &[FHomEstimate]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["zeta1", "zeta2", "nu1", "nu2", "x1", "x2", "t", "r", "seed", "stream", "value"])?;
    for e in table {
        for (k, &t) in e.t_schedule.iter().enumerate() {
            for (om, v) in e.omegas.iter().zip(&e.values[k]) {
                w.serialize((
                    e.zeta.x,
                    e.zeta.y,
                    e.nu.x,
                    e.nu.y,
                    e.base_point.x,
                    e.base_point.y,
                    t,
                    e.r_map.apply(t),
                    om.seed,
                    om.stream,
                    v,
                ))?;
            }
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

/// Rows of `(name, x, y)` for scaling studies.
pub fn series_csv(header: [&str; 3], series: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for (name, pts) in series {
        for (x, y) in pts {
            w.serialize((name, x, y))?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Half-widths of a band around the points.
    pub band: Option<Vec<f64>>,
}

/// Line plot with optional bands, linear or log-log axes.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], loglog: bool) -> String {
    let tr = |v: f64| if loglog { v.max(1e-300).log10() } else { v };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (k, &(x, y)) in s.points.iter().enumerate() {
            let b = s.band.as_ref().map_or(0.0, |b| b[k]);
            x0 = x0.min(tr(x));
            x1 = x1.max(tr(x));
            y0 = y0.min(tr(y - b).min(tr(y)));
            y1 = y1.max(tr(y + b));
        }
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let px = |x: f64| PAD + (tr(x) - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (tr(y) - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let fmt = |v: f64| if loglog { format!("{:.3e}", 10f64.powf(v)) } else { format!("{v:.4}") };
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="middle">{}</text>"#, H - PAD + 14.0, fmt(x0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W - PAD, H - PAD + 14.0, fmt(x1));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 4.0, H - PAD, fmt(y0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 4.0, PAD + 4.0, fmt(y1));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    for (k, ser) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        if let Some(b) = &ser.band {
            let upper: Vec<String> =
                ser.points.iter().zip(b).map(|(&(x, y), w)| format!("{:.2},{:.2}", px(x), py(y + w))).collect();
            let lower: Vec<String> =
                ser.points.iter().zip(b).rev().map(|(&(x, y), w)| format!("{:.2},{:.2}", px(x), py(y - w))).collect();
            let _ = writeln!(s, r#"<polygon points="{} {}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        }
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, pts.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, px(x), py(y));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{}</text>"#,
            W - PAD - 110.0,
            PAD + 14.0 * k as f64,
            esc(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Mean of m/r(t) against t with the 1.96 standard-error band.
pub fn convergence_plot(e: &FHomEstimate) -> String {
    let n = e.omegas.len() as f64;
    let band = e.variances.iter().map(|v| 1.96 * (v / n).sqrt()).collect();
    let ser = Series {
        name: format!("zeta=({:.3},{:.3}) nu=({:.3},{:.3})", e.zeta.x, e.zeta.y, e.nu.x, e.nu.y),
        points: e.t_schedule.iter().copied().zip(e.means.iter().copied()).collect(),
        band: Some(band),
    };
    line_plot("f_hom estimate", "t", "m / r(t)", &[ser], false)
}

/// Cells coloured by label, jump faces drawn in black.
pub fn partition_svg(u: &LabelField) -> String {
    let g = &u.grid;
    let scale = (480.0 / g.nx.max(g.ny) as f64).max(0.25);
    let (w, h) = (g.nx as f64 * scale, g.ny as f64 * scale);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" shape-rendering="crispEdges">"#);
    let _ = writeln!(s, r#"<rect width="{w:.1}" height="{h:.1}" fill="white"/>"#);
    let palette = ["#cfe2f3", "#f4cccc", "#d9ead3", "#fff2cc", "#d9d2e9", "#fce5cd", "#d0e0e3", "#ead1dc"];
    for j in 0..g.ny {
        // Runs of equal label along a row.
        let mut i = 0;
        while i < g.nx {
            let a = u.assignment[g.idx(i, j)];
            let mut e = i;
            while e + 1 < g.nx && u.assignment[g.idx(e + 1, j)] == a {
                e += 1;
            }
            if g.mask[g.idx(i, j)] {
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    i as f64 * scale,
                    h - (j + 1) as f64 * scale,
                    (e - i + 1) as f64 * scale,
                    scale,
                    palette[a as usize % palette.len()]
                );
            }
            i = e + 1;
        }
    }
    let mut d = String::new();
    for f in u.jump_faces() {
        let (i, j) = g.ij(f.face.minus);
        let (x, y) = ((i + 1) as f64 * scale, h - (j + 1) as f64 * scale);
        match f.face.axis {
            crate::fields::Axis::X => {
                let _ = write!(d, "M{x:.2},{y:.2}v{scale:.2}");
            }
            crate::fields::Axis::Y => {
                let _ = write!(d, "M{:.2},{y:.2}h{scale:.2}", x - scale);
            }
        }
    }
    let _ = writeln!(s, r#"<path d="{d}" stroke="black" stroke-width="1" fill="none"/>"#);
    s.push_str("</svg>\n");
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
