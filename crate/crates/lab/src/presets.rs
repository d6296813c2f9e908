//! Ready-made experiment configs.

use std::f64::consts::{FRAC_PI_2, PI};

use hml_core::geometry::Compact;
use hml_core::{Domain, Profile, SearchMode};

use crate::config::{Case, CurvatureSpec, Experiment, ExperimentConfig, Reference, Relation};
use crate::LabError;

pub const CATALOG: [&str; 5] = ["pacman", "notched-square", "indented-disk", "epigraph-bump", "dumbbell"];

/// Fillet radius of the pacman corners.
pub const PACMAN_FILLET: f64 = 0.2;
/// Radius of the disk bitten out of the indented disk.
pub const BITE_RADIUS: f64 = 0.25;
/// Vertex of the notch cut into the unit square.
pub const NOTCH_VERTEX: [f64; 2] = [0.5, 0.25];
/// Smallest depth the indented-disk preset accepts. At the default spacing a
/// shallower bite is only a few cells deep and the drop is not resolved.
pub const MIN_DEPTH: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default)]
pub struct PresetArgs {
    pub phi: Option<f64>,
    pub depth: Option<f64>,
}

pub fn preset(name: &str, args: PresetArgs) -> Result<ExperimentConfig, LabError> {
    match name {
        "pacman" => pacman(args.phi.unwrap_or(5.0 * PI / 6.0)),
        "notched-square" => notched_square(args.phi.unwrap_or(7.0 * PI / 10.0)),
        "indented-disk" => indented_disk(args.depth.unwrap_or(0.1)),
        "epigraph-bump" => Ok(epigraph_bump()),
        "dumbbell" => Err(LabError::Preset("dumbbell is reserved and not implemented".into())),
        other => Err(LabError::Preset(format!("unknown preset {other:?}; known: {}", CATALOG.join(", ")))),
    }
}

fn check_phi(phi: f64, lo: f64, hi: f64) -> Result<(), LabError> {
    if phi > lo && phi < hi {
        Ok(())
    } else {
        Err(LabError::Preset(format!("phi must lie in ({lo}, {hi}), got {phi}")))
    }
}

/// Search along the symmetry axis of a cone opening upwards from `vertex`.
fn axis_ray(vertex: [f64; 2]) -> SearchMode {
    SearchMode::Ray { origin: vertex.to_vec(), direction: vec![0.0, 1.0] }
}

fn comparison(experiment: Experiment) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(experiment, 4.0, 1.0 / 128.0);
    cfg.truncation = 1.0;
    cfg
}

/// Sector `B_1 ∩ C_phi` with the two rim corners rounded off; still inside the cone.
pub fn pacman_domain(phi: f64) -> Result<Domain, LabError> {
    check_phi(phi, FRAC_PI_2, PI)?;
    let rho = PACMAN_FILLET;
    let s = ((1.0 - rho) * (1.0 - rho) - rho * rho).sqrt();
    let a1 = [phi.sin(), phi.cos()];
    let a2 = [-phi.sin(), phi.cos()];
    let n1 = [-phi.cos(), phi.sin()];
    let n2 = [phi.cos(), phi.sin()];
    let c1 = [s * a1[0] + rho * n1[0], s * a1[1] + rho * n1[1]];
    let c2 = [s * a2[0] + rho * n2[0], s * a2[1] + rho * n2[1]];
    let ang = |v: [f64; 2]| v[1].atan2(v[0]);
    let mut v = vec![[0.0, 0.0]];
    arc(&mut v, c1, rho, ang([-n1[0], -n1[1]]), ang(c1), 16);
    arc(&mut v, [0.0, 0.0], 1.0, ang(c1), ang(c2), 96);
    arc(&mut v, c2, rho, ang(c2), ang([-n2[0], -n2[1]]), 16);
    v.dedup_by(|a, b| (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-12);
    Ok(Domain::polygon(v)?)
}

/// Counter-clockwise arc samples from `t0` to `t1`, endpoints included.
fn arc(out: &mut Vec<[f64; 2]>, c: [f64; 2], r: f64, t0: f64, t1: f64, segs: usize) {
    let sweep = (t1 - t0).rem_euclid(2.0 * PI);
    for i in 0..=segs {
        let t = t0 + sweep * i as f64 / segs as f64;
        out.push([c[0] + r * t.cos(), c[1] + r * t.sin()]);
    }
}

pub fn pacman(phi: f64) -> Result<ExperimentConfig, LabError> {
    let mut cfg = comparison(Experiment::PolygonCheck);
    let mut case = Case::new("pacman", pacman_domain(phi)?);
    case.bbox = Some([vec![-1.0, -1.0], vec![1.0, 1.0]]);
    case.parameter = Some(phi);
    case.search = Some(axis_ray([0.0, 0.0]));
    case.reference = Some(Reference::Cone { phi });
    case.relation = Some(Relation::Near);
    cfg.cases.push(case);
    Ok(cfg)
}

pub fn notched_square_domain(phi: f64) -> Result<Domain, LabError> {
    check_phi(phi, FRAC_PI_2, PI)?;
    Ok(Domain::intersection(vec![Domain::rectangle([0.0, 0.0], [1.0, 1.0])?, Domain::cone(NOTCH_VERTEX, [0.0, 1.0], phi)?])?)
}

pub fn notched_square(phi: f64) -> Result<ExperimentConfig, LabError> {
    let mut cfg = comparison(Experiment::PolygonCheck);
    let mut case = Case::new("notched-square", notched_square_domain(phi)?);
    case.parameter = Some(phi);
    case.search = Some(axis_ray(NOTCH_VERTEX));
    case.reference = Some(Reference::Cone { phi });
    case.relation = Some(Relation::AtMost);
    cfg.cases.push(case);
    Ok(cfg)
}

/// Unit disk minus a disk of radius 1/4 overlapping the top of the rim by `depth`.
pub fn indented_disk_domain(depth: f64) -> Result<Domain, LabError> {
    if !(depth >= MIN_DEPTH && depth < 2.0 * BITE_RADIUS) {
        return Err(LabError::Preset(format!("depth must lie in [{MIN_DEPTH}, {}), got {depth}", 2.0 * BITE_RADIUS)));
    }
    let bite = Compact::Ball { center: vec![0.0, 1.0 + BITE_RADIUS - depth], radius: BITE_RADIUS };
    Ok(Domain::intersection(vec![Domain::ball(vec![0.0, 0.0], 1.0)?, Domain::ExteriorOfCompact { compact: bite }])?)
}

pub fn indented_disk(depth: f64) -> Result<ExperimentConfig, LabError> {
    let mut cfg = comparison(Experiment::CurvatureTest);
    let mut case = Case::new("indented-disk", indented_disk_domain(depth)?);
    case.parameter = Some(depth);
    case.reference = Some(Reference::HalfPlane);
    case.relation = Some(Relation::Below);
    cfg.cases.push(case);
    cfg.curvature = Some(CurvatureSpec { k: -0.5, eps: vec![0.1, 0.05, 0.025, 0.0125], radius: 16.0, h: 1.0 / 16.0 });
    Ok(cfg)
}

/// Upper half-disk pushed up by a smooth compactly supported bump.
pub fn epigraph_bump_domain() -> Result<Domain, LabError> {
    let graph = Domain::Epigraph { profile: Profile::Bump { amplitude: 0.25, width: 0.5 }, bound: 2.0 };
    Ok(Domain::intersection(vec![graph, Domain::ball(vec![0.0, 0.0], 1.0)?])?)
}

pub fn epigraph_bump() -> ExperimentConfig {
    let mut cfg = comparison(Experiment::CurvatureTest);
    let mut case = Case::new("epigraph-bump", epigraph_bump_domain().expect("fixed parameters are valid"));
    case.bbox = Some([vec![-1.0, 0.0], vec![1.0, 1.0]]);
    case.reference = Some(Reference::HalfPlane);
    case.relation = Some(Relation::Below);
    cfg.cases.push(case);
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate_config;

    #[test]
    fn catalog_is_valid() {
        for name in CATALOG {
            match preset(name, PresetArgs::default()) {
                Ok(cfg) => assert!(validate_config(&cfg).is_empty(), "{name}: {:?}", validate_config(&cfg)),
                Err(e) => assert_eq!(name, "dumbbell", "{e}"),
            }
        }
        assert!(preset("teacup", PresetArgs::default()).is_err());
    }

    #[test]
    fn pacman_stays_in_its_cone() {
        let phi = 5.0 * PI / 6.0;
        let d = pacman_domain(phi).unwrap();
        let cone = Domain::cone([0.0, 0.0], [0.0, 1.0], phi).unwrap();
        let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                let x = [-1.0 + (i as f64 + 0.5) / 30.0, -1.0 + (j as f64 + 0.5) / 30.0];
                if d.contains(&x).unwrap() {
                    assert!(cone.contains(&x).unwrap() && disk.contains(&x).unwrap(), "{x:?}");
                }
            }
        }
        // the vertex stays on the boundary, the rim corners are gone
        assert!(d.distance(&[0.0, 0.0]).unwrap().abs() < 1e-12);
        assert!(d.contains(&[0.0, 0.5]).unwrap());
        assert!(!d.contains(&[0.99 * phi.sin(), 0.99 * phi.cos() + 0.02]).unwrap());
        assert!(pacman_domain(0.3).is_err());
    }

    #[test]
    fn indentation() {
        let d = indented_disk_domain(0.1).unwrap();
        assert!(!d.contains(&[0.0, 0.95]).unwrap());
        assert!(d.contains(&[0.0, 0.85]).unwrap());
        assert!(d.contains(&[0.9, 0.0]).unwrap());
        assert!(indented_disk_domain(0.01).is_err());
    }
}
