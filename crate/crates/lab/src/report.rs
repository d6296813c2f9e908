//! JSON, CSV and SVG output of a sweep report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hml_core::DiscreteFunction;
use serde::{Deserialize, Serialize};

use crate::config::Outputs;
use crate::run::SweepReport;
use crate::LabError;

pub const CSV_HEADER: &str = "parameter,lambda,h,iters,converged";
pub const LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

type Segment = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub level: f64,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure {
    pub title: String,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub contours: Vec<Contour>,
    /// Boundary of the active node set.
    pub outline: Vec<Segment>,
}

/// Marching squares on the grid values at `level`; saddles split by the cell mean.
pub fn marching_squares(u: &DiscreteFunction, values: &[f64], level: f64) -> Vec<Segment> {
    let g = &u.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let mut out = Vec::new();
    let at = |i: usize, j: usize| values[g.index(i, j)];
    let pt = |i: f64, j: f64| [g.origin[0] + i * g.h, g.origin[1] + j * g.h];
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            // corners counter-clockwise from (i, j)
            let v = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let c = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            let mut case = 0;
            for (b, &x) in v.iter().enumerate() {
                if x > level {
                    case |= 1 << b;
                }
            }
            if case == 0 || case == 15 {
                continue;
            }
            let cross = |e: usize| {
                let (a, b) = (e, (e + 1) % 4);
                let t = (level - v[a]) / (v[b] - v[a]);
                pt(i as f64 + c[a].0 + t * (c[b].0 - c[a].0), j as f64 + c[a].1 + t * (c[b].1 - c[a].1))
            };
            // edge e joins corner e and e+1
            let pairs: &[(usize, usize)] = match case {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(2, 3)],
                5 | 10 => {
                    let centre_above = v.iter().sum::<f64>() / 4.0 > level;
                    if (case == 5) == centre_above {
                        &[(0, 1), (2, 3)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in pairs {
                out.push([cross(a), cross(b)]);
            }
        }
    }
    out
}

pub fn contour_figure(title: &str, w: &DiscreteFunction) -> Figure {
    let g = &w.grid;
    let hi = [g.origin[0] + (g.nx() - 1) as f64 * g.h, g.origin[1] + (g.ny() - 1) as f64 * g.h];
    let contours = LEVELS.iter().map(|&level| Contour { level, segments: marching_squares(w, &w.values, level) }).collect();
    let mask: Vec<f64> = w.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    Figure { title: title.into(), lo: [g.origin[0], g.origin[1]], hi, contours, outline: marching_squares(w, &mask, 0.5) }
}

pub fn to_json(report: &SweepReport) -> Result<String, LabError> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json(s: &str) -> Result<SweepReport, LabError> {
    Ok(serde_json::from_str(s)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn to_csv(report: &SweepReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &report.rows {
        let _ = writeln!(s, "{},{},{},{},{}", opt(r.parameter), opt(r.lambda), r.h, r.iters, r.converged);
    }
    s
}

const WIDTH: f64 = 480.0;

fn path_data(segs: &[Segment], map: impl Fn([f64; 2]) -> (f64, f64)) -> String {
    let mut d = String::new();
    for s in segs {
        let (a, b) = (map(s[0]), map(s[1]));
        let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", a.0, a.1, b.0, b.1);
    }
    d
}

pub fn to_svg(fig: &Figure) -> String {
    let (w, h) = (fig.hi[0] - fig.lo[0], fig.hi[1] - fig.lo[1]);
    let scale = WIDTH / w;
    let height = h * scale;
    let map = |x: [f64; 2]| ((x[0] - fig.lo[0]) * scale, height - (x[1] - fig.lo[1]) * scale);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.2} {height:.2}">"#);
    let _ = writeln!(s, "<title>{}</title>", escape(&fig.title));
    let _ = writeln!(s, r##"<path class="outline" fill="none" stroke="#000" stroke-width="1.5" d="{}"/>"##, path_data(&fig.outline, map));
    for c in &fig.contours {
        // blue at low levels, red near the peak
        let r = (255.0 * c.level) as u8;
        let b = 255 - r;
        let _ = writeln!(
            s,
            r##"<path class="contour" data-level="{:.1}" fill="none" stroke="#{r:02x}40{b:02x}" stroke-width="1" d="{}"/>"##,
            c.level,
            path_data(&c.segments, map)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes every requested format; the SVG needs a figure in the report.
pub fn emit_report(report: &SweepReport, outputs: &Outputs) -> Result<(), LabError> {
    if let Some(p) = &outputs.json {
        write(p, &to_json(report)?)?;
    }
    if let Some(p) = &outputs.csv {
        write(p, &to_csv(report))?;
    }
    if let Some(p) = &outputs.svg {
        match &report.figure {
            Some(f) => write(p, &to_svg(f))?,
            None => return Err(LabError::Row("no figure to draw: every row failed".into())),
        }
    }
    Ok(())
}

fn write(p: &Path, s: &str) -> Result<(), LabError> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(p, s)?;
    Ok(())
}
