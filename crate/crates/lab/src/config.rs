//! Experiment configuration and static validation.

use std::path::PathBuf;

use hml_core::mesh::DEFAULT_NODE_CAP;
use hml_core::spectrum::SearchMode;
use hml_core::{Domain, GridSpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BoundsReport,
    AnnulusSweep,
    ConeSweep,
    ConvexityCheck,
    PunctureCheck,
    ExteriorCheck,
    PolygonCheck,
    CurvatureTest,
    ProfileProbe,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::BoundsReport => "bounds-report",
            Experiment::AnnulusSweep => "annulus-sweep",
            Experiment::ConeSweep => "cone-sweep",
            Experiment::ConvexityCheck => "convexity-check",
            Experiment::PunctureCheck => "puncture-check",
            Experiment::ExteriorCheck => "exterior-check",
            Experiment::PolygonCheck => "polygon-check",
            Experiment::CurvatureTest => "curvature-test",
            Experiment::ProfileProbe => "profile-probe",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(self, Experiment::AnnulusSweep | Experiment::ConeSweep)
    }
}

/// Unbounded model domain, truncated to a ball of the configured radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Reference {
    HalfPlane,
    PuncturedPlane,
    /// Cone about `e2` with half-opening angle `phi`.
    Cone { phi: f64 },
}

/// How a case compares with its reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// Relative difference within the tolerance.
    Near,
    /// Not above the reference by more than the noise band.
    AtMost,
    /// Below the reference by more than the noise band.
    Below,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub name: String,
    pub domain: Domain,
    /// Grid box `[lo, hi]`; the domain's bounding box when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[Vec<f64>; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
}

impl Case {
    pub fn new(name: &str, domain: Domain) -> Self {
        Case { name: name.into(), domain, bbox: None, search: None, reference: None, relation: None, parameter: None }
    }

    pub fn grid_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.bbox {
            Some([lo, hi]) => Some((lo.clone(), hi.clone())),
            None => self.domain.bounding_box(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSpec {
    /// Curvature matrix entry of the parabola `x2 = k x1^2`.
    pub k: f64,
    pub eps: Vec<f64>,
    /// Truncation radius and spacing of the half-plane potential.
    pub radius: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    /// Probe points, approaching the boundary or infinity.
    pub path: Vec<Vec<f64>>,
    /// Candidate spacings for the per-point grids.
    pub spacings: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub p: f64,
    /// Fine grid spacing.
    pub h: f64,
    /// The noise band compares against spacing `h * ladder_ratio`; 0 disables it.
    #[serde(default = "default_ratio")]
    pub ladder_ratio: f64,
    /// Radius of the ball truncating unbounded references.
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    /// Relative tolerance of `near` verdicts.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub cases: Vec<Case>,
    /// Annulus inner radii or cone half-angles.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default = "default_coarse")]
    pub coarse: usize,
    #[serde(default = "default_evals")]
    pub max_evals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<CurvatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSpec>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub seed: u64,
}

fn default_ratio() -> f64 {
    2.0
}
fn default_truncation() -> f64 {
    4.0
}
fn default_tolerance() -> f64 {
    0.1
}
fn default_coarse() -> usize {
    7
}
fn default_evals() -> usize {
    40
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, p: f64, h: f64) -> Self {
        ExperimentConfig {
            experiment,
            p,
            h,
            ladder_ratio: default_ratio(),
            truncation: default_truncation(),
            tolerance: default_tolerance(),
            cases: Vec::new(),
            sweep: Vec::new(),
            coarse: default_coarse(),
            max_evals: default_evals(),
            curvature: None,
            profile: None,
            outputs: Outputs::default(),
            seed: 0,
        }
    }
}

/// Static checks; an empty list means the config is runnable.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    if !(cfg.h > 0.0 && cfg.h.is_finite()) {
        out.push(format!("grid spacing must be positive, got {}", cfg.h));
    }
    if !(cfg.ladder_ratio == 0.0 || cfg.ladder_ratio > 1.0) {
        out.push(format!("ladder ratio must be 0 or exceed 1, got {}", cfg.ladder_ratio));
    }
    if !(cfg.truncation > 0.0) {
        out.push("truncation radius must be positive".into());
    }
    if !(cfg.tolerance > 0.0) {
        out.push("tolerance must be positive".into());
    }
    if cfg.coarse < 2 || cfg.max_evals == 0 {
        out.push("need coarse >= 2 and max_evals >= 1".into());
    }
    // references and sweeps live in the plane
    let mut dims: Vec<usize> = cfg.cases.iter().map(|c| c.domain.dim()).collect();
    if cfg.experiment != Experiment::ProfileProbe || cfg.cases.is_empty() {
        dims.push(2);
    }
    for n in dims {
        if !(cfg.p > n as f64) {
            out.push(format!("requires p > n (p = {}, n = {n})", cfg.p));
            break;
        }
    }
    for c in &cfg.cases {
        if let Err(e) = c.domain.validate() {
            out.push(format!("case {}: {e}", c.name));
            continue;
        }
        match c.grid_box() {
            None => out.push(format!("case {}: unbounded domain needs an explicit bbox", c.name)),
            Some((lo, hi)) => {
                if lo.len() != c.domain.dim() || hi.len() != lo.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
                    out.push(format!("case {}: malformed bbox", c.name));
                } else if cfg.h > 0.0 {
                    let g = GridSpec { origin: lo.clone(), h: cfg.h, dims: lo.iter().zip(&hi).map(|(a, b)| ((b - a) / cfg.h).ceil() as usize + 1).collect() };
                    if let Err(e) = g.validate(DEFAULT_NODE_CAP) {
                        out.push(format!("case {}: {e}", c.name));
                    }
                }
            }
        }
        if cfg.experiment == Experiment::PolygonCheck && c.parameter.is_none() && c.reference.is_none() {
            out.push(format!("case {}: polygon-check needs a cone angle parameter", c.name));
        }
    }
    if cfg.h > 0.0 && cfg.truncation > 0.0 {
        let r = cfg.truncation;
        let nodes = (2.0 * r / cfg.h + 1.0).powi(2);
        if nodes > DEFAULT_NODE_CAP as f64 {
            out.push(format!("reference grid of {nodes:.0} nodes exceeds the cap {DEFAULT_NODE_CAP}"));
        }
    }
    if cfg.experiment.is_sweep() {
        if cfg.sweep.is_empty() {
            out.push("sweep range is empty".into());
        } else if !cfg.sweep.windows(2).all(|w| w[0] < w[1]) {
            out.push("sweep range must be strictly increasing".into());
        }
        let ok = |v: f64| match cfg.experiment {
            Experiment::AnnulusSweep => v > 0.0 && v < 1.0,
            _ => v > 0.0 && v <= std::f64::consts::PI,
        };
        if cfg.sweep.iter().any(|&v| !ok(v)) {
            out.push("sweep values outside the admissible range".into());
        }
    } else if matches!(cfg.experiment, Experiment::ConvexityCheck | Experiment::PunctureCheck | Experiment::ExteriorCheck | Experiment::PolygonCheck | Experiment::CurvatureTest | Experiment::ProfileProbe)
        && cfg.cases.is_empty()
        && cfg.curvature.is_none()
    {
        out.push(format!("{} needs at least one case", cfg.experiment.name()));
    }
    if let Some(cs) = &cfg.curvature {
        if cs.eps.is_empty() || cs.eps.iter().any(|&e| !(e > 0.0 && e < 0.125)) {
            out.push("curvature eps values must lie in (0, 1/8)".into());
        }
        if cs.k.abs() > 0.5 {
            out.push("curvature needs |k| <= 1/2".into());
        }
        if !(cs.radius > 2.0 && cs.h > 0.0) {
            out.push("curvature reference needs radius > 2 and h > 0".into());
        }
    }
    if cfg.experiment == Experiment::ProfileProbe {
        match &cfg.profile {
            None => out.push("profile-probe needs a profile spec".into()),
            Some(ps) => {
                if ps.path.is_empty() || ps.spacings.is_empty() {
                    out.push("profile path and spacings must be non-empty".into());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn findings() {
        let mut cfg = ExperimentConfig::new(Experiment::ConvexityCheck, 2.0, 0.05);
        cfg.cases.push(Case::new("disk", Domain::ball(vec![0.0, 0.0], 1.0).unwrap()));
        assert!(validate_config(&cfg).iter().any(|f| f.contains("requires p > n")));
        cfg.p = 4.0;
        assert!(validate_config(&cfg).is_empty());
        cfg.cases.push(Case::new("bad", Domain::Annulus { center: vec![0.0, 0.0], r1: 1.0, r2: 0.5 }));
        assert_eq!(validate_config(&cfg).len(), 1);
        cfg.cases.pop();
        cfg.cases.push(Case::new("open", Domain::halfspace(vec![0.0, 1.0], 0.0).unwrap()));
        assert!(validate_config(&cfg)[0].contains("bbox"));
    }

    #[test]
    fn sweep_findings() {
        let mut cfg = ExperimentConfig::new(Experiment::AnnulusSweep, 4.0, 0.05);
        assert!(!validate_config(&cfg).is_empty());
        cfg.sweep = vec![0.5, 0.3];
        assert!(validate_config(&cfg).iter().any(|f| f.contains("increasing")));
        cfg.sweep = vec![0.3, 0.5];
        assert!(validate_config(&cfg).is_empty());
    }
}
