//! Experiment dispatch: rows, verdicts and the optional contour figure.

use std::f64::consts::{FRAC_PI_2, PI};

use hml_core::oracle::{curvature_sweep, reference_potential};
use hml_core::spectrum::{boundary_profile, GridLadder, PROFILE_CELLS};
use hml_core::{estimate_lambda, solve_potential, Domain, GridSpec, SearchMode, SearchOptions, SolveOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{validate_config, Case, Experiment, ExperimentConfig, Reference, Relation};
use crate::report::{contour_figure, Figure};
use crate::LabError;

/// Candidate singular points keep this many cells from the boundary, as profile points do.
pub const CANDIDATE_CELLS: f64 = PROFILE_CELLS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub parameter: Option<f64>,
    /// Estimate at the fine spacing (or profile / competitor value).
    pub lambda: Option<f64>,
    /// Estimate at the coarse ladder spacing.
    pub lambda_coarse: Option<f64>,
    /// `|lambda - lambda_coarse|`.
    pub band: Option<f64>,
    pub h: f64,
    /// Newton iterations summed over the candidate solves.
    pub iters: usize,
    pub evals: usize,
    pub converged: bool,
    pub minimizer: Vec<f64>,
    pub anchor: String,
    pub error: Option<String>,
}

impl Row {
    fn empty(label: &str, parameter: Option<f64>, h: f64, anchor: &str) -> Self {
        Row {
            label: label.into(),
            parameter,
            lambda: None,
            lambda_coarse: None,
            band: None,
            h,
            iters: 0,
            evals: 0,
            converged: false,
            minimizer: Vec::new(),
            anchor: anchor.into(),
            error: None,
        }
    }

    fn band_or_zero(&self) -> f64 {
        self.band.unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub anchor: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the config serialized as JSON, outputs excluded.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub experiment: Experiment,
    pub p: f64,
    pub h: f64,
    pub truncation: f64,
    pub rows: Vec<Row>,
    pub verdicts: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<Figure>,
    pub provenance: Provenance,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn row(&self, label: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.label == label)
    }
}

pub fn anchor(e: Experiment) -> &'static str {
    match e {
        Experiment::BoundsReport => "universal-bracket",
        Experiment::AnnulusSweep => "annulus-monotonicity",
        Experiment::ConeSweep => "cone-monotonicity",
        Experiment::ConvexityCheck => "convexity-rigidity",
        Experiment::PunctureCheck => "puncture-collapse",
        Experiment::ExteriorCheck => "exterior-collapse",
        Experiment::PolygonCheck => "cone-support-transfer",
        Experiment::CurvatureTest => "negative-curvature-drop",
        Experiment::ProfileProbe => "boundary-constant",
    }
}

/// A domain together with its grid box and candidate search.
#[derive(Clone, Debug)]
pub struct Probe {
    pub domain: Domain,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub mode: SearchMode,
}

pub fn reference_label(r: Reference) -> String {
    match r {
        Reference::HalfPlane => "half-plane".into(),
        Reference::PuncturedPlane => "punctured-plane".into(),
        Reference::Cone { phi } => format!("cone({phi:.6})"),
    }
}

/// Truncation of a reference to the ball of radius `r` about the origin.
pub fn reference_probe(reference: Reference, r: f64) -> Result<Probe, LabError> {
    let ball = Domain::ball(vec![0.0, 0.0], r)?;
    Ok(match reference {
        Reference::HalfPlane => Probe {
            domain: Domain::intersection(vec![Domain::halfspace(vec![0.0, 1.0], 0.0)?, ball])?,
            lo: vec![-r, 0.0],
            hi: vec![r, r],
            mode: SearchMode::Ray { origin: vec![0.0, 0.0], direction: vec![0.0, 1.0] },
        },
        Reference::PuncturedPlane => Probe {
            domain: Domain::punctured(ball, vec![0.0, 0.0])?,
            lo: vec![-r, -r],
            hi: vec![r, r],
            mode: SearchMode::Ray { origin: vec![0.0, 0.0], direction: vec![1.0, 0.0] },
        },
        Reference::Cone { phi } => {
            let x = if phi >= FRAC_PI_2 { r } else { r * phi.sin() };
            let y = (r * phi.cos()).min(0.0);
            Probe {
                domain: Domain::intersection(vec![ball, Domain::cone([0.0, 0.0], [0.0, 1.0], phi)?])?,
                lo: vec![-x, y],
                hi: vec![x, r],
                mode: SearchMode::Ray { origin: vec![0.0, 0.0], direction: vec![0.0, 1.0] },
            }
        }
    })
}

pub fn case_probe(c: &Case) -> Result<Probe, LabError> {
    let (lo, hi) = c.grid_box().ok_or_else(|| LabError::Config(vec![format!("case {} needs a bbox", c.name)]))?;
    Ok(Probe { domain: c.domain.clone(), lo, hi, mode: c.search.clone().unwrap_or(SearchMode::Auto) })
}

fn search_options(cfg: &ExperimentConfig, mode: &SearchMode) -> SearchOptions {
    SearchOptions { mode: mode.clone(), coarse: cfg.coarse, min_cells: CANDIDATE_CELLS, max_evals: cfg.max_evals, solve: SolveOptions::default(), bracket: None }
}

/// Rounds `lo` down onto `h Z^n`, so that every level of a ladder puts the
/// origin, and with it the singular point of each reference, on a node.
pub fn lattice_floor(lo: &[f64], h: f64) -> Vec<f64> {
    lo.iter().map(|&a| (a / h + 1e-9).floor() * h).collect()
}

/// Fine and coarse estimates of one probe.
fn measure(label: &str, parameter: Option<f64>, probe: Result<Probe, LabError>, cfg: &ExperimentConfig) -> Row {
    let mut row = Row::empty(label, parameter, cfg.h, anchor(cfg.experiment));
    let probe = match probe {
        Ok(p) => p,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let opts = search_options(cfg, &probe.mode);
    let run = |h: f64| -> Result<_, LabError> {
        let grid = GridSpec::covering(&lattice_floor(&probe.lo, h), &probe.hi, h)?;
        Ok(estimate_lambda(&probe.domain, &grid, cfg.p, &opts)?)
    };
    match run(cfg.h) {
        Ok(est) => {
            row.lambda = Some(est.value);
            row.minimizer = est.minimizer.clone();
            row.iters = est.table.iter().map(|c| c.iterations).sum();
            row.evals = est.table.len();
            row.converged = est.table.iter().all(|c| c.converged);
        }
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    if cfg.ladder_ratio > 0.0 {
        match run(cfg.h * cfg.ladder_ratio) {
            Ok(est) => {
                row.lambda_coarse = Some(est.value);
                row.band = Some((row.lambda.unwrap() - est.value).abs());
            }
            Err(e) => row.error = Some(format!("coarse level: {e}")),
        }
    }
    row
}

struct Job {
    label: String,
    parameter: Option<f64>,
    probe: Result<Probe, LabError>,
    /// Participates in the contour figure.
    figure: bool,
}

fn reference_job(r: Reference, cfg: &ExperimentConfig) -> Job {
    let parameter = match r {
        Reference::Cone { phi } => Some(phi),
        _ => None,
    };
    Job { label: reference_label(r), parameter, probe: reference_probe(r, cfg.truncation), figure: false }
}

fn default_reference(e: Experiment) -> (Reference, Relation) {
    match e {
        Experiment::PunctureCheck | Experiment::ExteriorCheck => (Reference::PuncturedPlane, Relation::Near),
        Experiment::CurvatureTest => (Reference::HalfPlane, Relation::Below),
        _ => (Reference::HalfPlane, Relation::Near),
    }
}

fn case_reference(c: &Case, e: Experiment) -> (Reference, Relation) {
    let (r, rel) = default_reference(e);
    let r = match (c.reference, e, c.parameter) {
        (Some(r), _, _) => r,
        (None, Experiment::PolygonCheck, Some(phi)) => Reference::Cone { phi },
        _ => r,
    };
    (r, c.relation.unwrap_or(rel))
}

/// SHA-256 of the config with its output paths left out.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bare = ExperimentConfig { outputs: Default::default(), ..cfg.clone() };
    let bytes = serde_json::to_vec(&bare).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepReport, LabError> {
    let findings = validate_config(cfg);
    if !findings.is_empty() {
        return Err(LabError::Config(findings));
    }
    let tag = anchor(cfg.experiment);
    let mut jobs: Vec<Job> = Vec::new();
    let push_ref = |jobs: &mut Vec<Job>, r: Reference| {
        if !jobs.iter().any(|j| j.label == reference_label(r)) {
            jobs.push(reference_job(r, cfg));
        }
    };
    match cfg.experiment {
        Experiment::BoundsReport => {
            push_ref(&mut jobs, Reference::PuncturedPlane);
            push_ref(&mut jobs, Reference::HalfPlane);
        }
        Experiment::AnnulusSweep => {
            push_ref(&mut jobs, Reference::PuncturedPlane);
            push_ref(&mut jobs, Reference::HalfPlane);
            for &delta in &cfg.sweep {
                let probe = Domain::annulus(vec![0.0, 0.0], delta, 1.0).map_err(LabError::from).map(|d| Probe {
                    domain: d,
                    lo: vec![-1.0, -1.0],
                    hi: vec![1.0, 1.0],
                    mode: SearchMode::Ray { origin: vec![0.0, 0.0], direction: vec![1.0, 0.0] },
                });
                jobs.push(Job { label: format!("annulus({delta})"), parameter: Some(delta), probe, figure: true });
            }
        }
        Experiment::ConeSweep => {
            push_ref(&mut jobs, Reference::HalfPlane);
            for &phi in &cfg.sweep {
                let probe = reference_probe(Reference::Cone { phi }, cfg.truncation);
                jobs.push(Job { label: format!("cone({phi:.6})"), parameter: Some(phi), probe, figure: true });
            }
        }
        Experiment::ProfileProbe => {
            if cfg.cases.iter().any(|c| c.reference.is_some()) || cfg.cases.is_empty() {
                push_ref(&mut jobs, Reference::HalfPlane);
            }
        }
        _ => {
            for c in &cfg.cases {
                push_ref(&mut jobs, case_reference(c, cfg.experiment).0);
            }
        }
    }
    if cfg.experiment != Experiment::ProfileProbe {
        for c in &cfg.cases {
            jobs.push(Job { label: c.name.clone(), parameter: c.parameter, probe: case_probe(c), figure: true });
        }
    }

    let mut rows: Vec<Row> = jobs.par_iter().map(|j| measure(&j.label, j.parameter, clone_probe(&j.probe), cfg)).collect();
    let mut verdicts = Vec::new();

    match cfg.experiment {
        Experiment::BoundsReport => {
            let lo = find(&rows, "punctured-plane");
            let hi = find(&rows, "half-plane");
            for c in &cfg.cases {
                verdicts.push(bracket_verdict(&c.name, lo, hi, find(&rows, &c.name), tag));
            }
        }
        Experiment::AnnulusSweep | Experiment::ConeSweep => {
            let increasing = cfg.experiment == Experiment::AnnulusSweep;
            let sweep: Vec<&Row> = rows.iter().filter(|r| r.label.starts_with(if increasing { "annulus(" } else { "cone(" })).collect();
            verdicts.push(monotone_verdict(&sweep, increasing, tag));
            if increasing {
                verdicts.push(band_verdict("low-end", sweep.first().copied(), find(&rows, "punctured-plane"), tag));
                verdicts.push(band_verdict("high-end", sweep.last().copied(), find(&rows, "half-plane"), tag));
            } else if cfg.sweep.first().is_some_and(|&phi| (phi - FRAC_PI_2).abs() < 1e-12) {
                verdicts.push(band_verdict("right-angle", sweep.first().copied(), find(&rows, "half-plane"), tag));
            }
            for c in &cfg.cases {
                let (r, rel) = case_reference(c, cfg.experiment);
                verdicts.push(relation_verdict(c, rel, find(&rows, &c.name), find(&rows, &reference_label(r)), cfg.tolerance, tag));
            }
        }
        Experiment::ProfileProbe => {
            let reference = find(&rows, "half-plane").cloned();
            for c in &cfg.cases {
                let (profile_rows, verdict) = profile_rows(c, cfg, reference.as_ref(), tag);
                rows.extend(profile_rows);
                verdicts.extend(verdict);
            }
        }
        _ => {
            for c in &cfg.cases {
                let (r, rel) = case_reference(c, cfg.experiment);
                verdicts.push(relation_verdict(c, rel, find(&rows, &c.name), find(&rows, &reference_label(r)), cfg.tolerance, tag));
            }
        }
    }

    if let Some(cs) = &cfg.curvature {
        let mut base = Row::empty("flat-potential", Some(0.0), cs.h, tag);
        let mut sweep_rows = Vec::new();
        match reference_potential(cfg.p, cs.radius, cs.h).and_then(|u0| Ok((u0.clone(), curvature_sweep(cs.k, &cs.eps, u0)?))) {
            Ok((u0, pts)) => {
                base.lambda = Some(u0.energy);
                base.iters = u0.report.iterations;
                base.evals = 1;
                base.converged = u0.converged;
                base.minimizer = u0.y.clone();
                for (eps, e) in &pts {
                    let mut r = Row::empty("competitor", Some(*eps), cs.h, tag);
                    r.lambda = Some(*e);
                    r.converged = u0.converged;
                    sweep_rows.push(r);
                }
                let best = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                verdicts.push(Verdict {
                    name: "competitor-drop".into(),
                    anchor: tag.into(),
                    pass: best < u0.energy,
                    value: best,
                    bound: u0.energy,
                    tolerance: 0.0,
                    detail: format!("min over eps of eps^(p-n) E(w) {best:.6} < flat energy {:.6}, k = {}", u0.energy, cs.k),
                });
            }
            Err(e) => {
                base.error = Some(e.to_string());
                verdicts.push(failed("competitor-drop", tag, &e.to_string()));
            }
        }
        rows.push(base);
        rows.extend(sweep_rows);
    }

    let figure = if cfg.outputs.svg.is_some() { select_figure(&jobs, &rows, cfg) } else { None };

    Ok(SweepReport {
        experiment: cfg.experiment,
        p: cfg.p,
        h: cfg.h,
        truncation: cfg.truncation,
        rows,
        verdicts,
        figure,
        provenance: Provenance { config_hash: config_hash(cfg), seed: cfg.seed, version: env!("CARGO_PKG_VERSION").into() },
    })
}

fn clone_probe(p: &Result<Probe, LabError>) -> Result<Probe, LabError> {
    match p {
        Ok(p) => Ok(p.clone()),
        Err(e) => Err(LabError::Row(e.to_string())),
    }
}

fn find<'a>(rows: &'a [Row], label: &str) -> Option<&'a Row> {
    rows.iter().find(|r| r.label == label)
}

fn failed(name: &str, anchor: &str, detail: &str) -> Verdict {
    Verdict { name: name.into(), anchor: anchor.into(), pass: false, value: f64::NAN, bound: f64::NAN, tolerance: 0.0, detail: detail.into() }
}

fn value_of(r: Option<&Row>) -> Result<(f64, f64), String> {
    match r {
        None => Err("row missing".into()),
        Some(r) => match r.lambda {
            Some(v) => Ok((v, r.band_or_zero())),
            None => Err(format!("row {} failed: {}", r.label, r.error.as_deref().unwrap_or("no value"))),
        },
    }
}

fn bracket_verdict(name: &str, lo: Option<&Row>, hi: Option<&Row>, case: Option<&Row>, anchor: &str) -> Verdict {
    let vname = format!("bracket:{name}");
    match (value_of(lo), value_of(hi), value_of(case)) {
        (Ok((l, bl)), Ok((u, bu)), Ok((v, bv))) => {
            let band = bl.max(bu).max(bv);
            Verdict {
                name: vname,
                anchor: anchor.into(),
                pass: l - band <= v && v <= u + band,
                value: v,
                bound: u,
                tolerance: band,
                detail: format!("punctured {l:.6} <= {v:.6} <= half-plane {u:.6}, band {band:.6}"),
            }
        }
        (a, b, c) => failed(&vname, anchor, &[a.err(), b.err(), c.err()].into_iter().flatten().collect::<Vec<_>>().join("; ")),
    }
}

fn band_verdict(name: &str, row: Option<&Row>, reference: Option<&Row>, anchor: &str) -> Verdict {
    match (value_of(row), value_of(reference)) {
        (Ok((v, bv)), Ok((r, br))) => {
            let band = bv.max(br);
            Verdict {
                name: name.into(),
                anchor: anchor.into(),
                pass: (v - r).abs() <= band,
                value: v,
                bound: r,
                tolerance: band,
                detail: format!("|{v:.6} - {r:.6}| against band {band:.6}"),
            }
        }
        (a, b) => failed(name, anchor, &[a.err(), b.err()].into_iter().flatten().collect::<Vec<_>>().join("; ")),
    }
}

fn monotone_verdict(sweep: &[&Row], increasing: bool, anchor: &str) -> Verdict {
    let mut vals = Vec::new();
    for r in sweep {
        match value_of(Some(r)) {
            Ok(v) => vals.push((r.parameter.unwrap_or(f64::NAN), v.0, v.1)),
            Err(e) => return failed("monotone", anchor, &e),
        }
    }
    // largest inversion beyond the pair's noise band
    let mut worst = f64::NEG_INFINITY;
    let mut at = String::new();
    for w in vals.windows(2) {
        let drop = if increasing { w[0].1 - w[1].1 } else { w[1].1 - w[0].1 };
        let excess = drop - w[0].2.max(w[1].2);
        if excess > worst {
            worst = excess;
            at = format!("between {} and {}", w[0].0, w[1].0);
        }
    }
    if vals.len() < 2 {
        worst = 0.0;
    }
    Verdict {
        name: "monotone".into(),
        anchor: anchor.into(),
        pass: worst <= 0.0,
        value: worst,
        bound: 0.0,
        tolerance: 0.0,
        detail: format!("{} up to the band; worst excess {worst:.6} {at}", if increasing { "nondecreasing" } else { "nonincreasing" }),
    }
}

fn relation_verdict(c: &Case, rel: Relation, row: Option<&Row>, reference: Option<&Row>, tol: f64, anchor: &str) -> Verdict {
    let tag = match rel {
        Relation::Near => "near",
        Relation::AtMost => "at-most",
        Relation::Below => "below",
    };
    let name = format!("{tag}:{}", c.name);
    match (value_of(row), value_of(reference)) {
        (Ok((v, bv)), Ok((r, br))) => {
            let band = bv.max(br);
            let (pass, tolerance, detail) = match rel {
                Relation::Near => ((v / r - 1.0).abs() <= tol, tol, format!("relative gap {:.4} to the reference {r:.6}", v / r - 1.0)),
                Relation::AtMost => (v <= r + band, band, format!("{v:.6} <= {r:.6} + band {band:.6}")),
                Relation::Below => (v < r - band, band, format!("{v:.6} < {r:.6} - band {band:.6}")),
            };
            Verdict { name, anchor: anchor.into(), pass, value: v, bound: r, tolerance, detail }
        }
        (a, b) => failed(&name, anchor, &[a.err(), b.err()].into_iter().flatten().collect::<Vec<_>>().join("; ")),
    }
}

fn profile_rows(c: &Case, cfg: &ExperimentConfig, reference: Option<&Row>, anchor: &str) -> (Vec<Row>, Vec<Verdict>) {
    let spec = cfg.profile.as_ref().expect("validated");
    let name = format!("profile-tail:{}", c.name);
    let (lo, hi) = match c.grid_box() {
        Some(b) => b,
        None => return (Vec::new(), vec![failed(&name, anchor, "no grid box")]),
    };
    let ladder = GridLadder { lo, hi, spacings: spec.spacings.clone() };
    match boundary_profile(&c.domain, &spec.path, &ladder, cfg.p, &SolveOptions::default()) {
        Ok(prof) => {
            let rows: Vec<Row> = prof
                .points
                .iter()
                .map(|q| {
                    let mut r = Row::empty(&c.name, Some(q.d), q.h, anchor);
                    r.lambda = Some(q.value);
                    r.converged = q.converged;
                    r.evals = 1;
                    r.minimizer = q.x.clone();
                    r
                })
                .collect();
            let verdicts = match (c.reference, value_of(reference)) {
                (None, _) => Vec::new(),
                (Some(_), Ok((r, _))) => vec![Verdict {
                    name,
                    anchor: anchor.into(),
                    pass: (prof.tail / r - 1.0).abs() <= cfg.tolerance,
                    value: prof.tail,
                    bound: r,
                    tolerance: cfg.tolerance,
                    detail: format!("median of the last three profile values against the half-plane {r:.6}"),
                }],
                (Some(_), Err(e)) => vec![failed(&name, anchor, &e)],
            };
            (rows, verdicts)
        }
        Err(e) => {
            let mut r = Row::empty(&c.name, None, cfg.h, anchor);
            r.error = Some(e.to_string());
            (vec![r], vec![failed(&name, anchor, &e.to_string())])
        }
    }
}

/// Potential at the minimizer of the lowest case row.
fn select_figure(jobs: &[Job], rows: &[Row], cfg: &ExperimentConfig) -> Option<Figure> {
    let (job, row) = jobs
        .iter()
        .zip(rows)
        .filter(|(j, r)| j.figure && r.lambda.is_some() && j.probe.is_ok())
        .min_by(|a, b| a.1.lambda.unwrap().total_cmp(&b.1.lambda.unwrap()))
        .or_else(|| jobs.iter().zip(rows).find(|(j, r)| r.lambda.is_some() && j.probe.is_ok()))?;
    let probe = job.probe.as_ref().ok()?;
    let grid = GridSpec::covering(&probe.lo, &probe.hi, cfg.h).ok()?;
    if grid.dim() != 2 {
        return None;
    }
    let sol = solve_potential(&probe.domain, &grid, &row.minimizer, cfg.p, &SolveOptions { min_cells: 0.0, ..Default::default() }).ok()?;
    Some(contour_figure(&row.label, &sol.w))
}

/// Angles `k pi / 8` for `k = 4..=8`.
pub fn default_cone_sweep() -> Vec<f64> {
    (4..=8).map(|k| PI * k as f64 / 8.0).collect()
}
