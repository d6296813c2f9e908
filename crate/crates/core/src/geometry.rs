//! Domains, exact distance to the complement, similarity transforms.
//!
//! Points are plain slices; every domain has a fixed ambient dimension and
//! rejects points of the wrong length.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BOUNDARY_TOL: f64 = 1e-9;

/// Compact obstacle for [`Domain::ExteriorOfCompact`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Compact {
    Ball { center: Vec<f64>, radius: f64 },
    /// Convex polygon, vertices in order.
    Polygon { vertices: Vec<[f64; 2]> },
}

/// User supplied height function.
#[derive(Clone)]
pub struct CustomProfile(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomProfile(..)")
    }
}

impl PartialEq for CustomProfile {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Height profile of an epigraph `{x2 > f(x1)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    /// `amplitude * exp(1 - 1/(1 - s^2/width^2))` for `|s| < width`, else 0.
    Bump { amplitude: f64, width: f64 },
    /// `coef * |s|^exponent`.
    Power { coef: f64, exponent: f64 },
    #[serde(skip)]
    Custom(CustomProfile),
}

impl Profile {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Profile::Bump { amplitude, width } => {
                let t = s / width;
                if t.abs() < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - t * t)).exp()
                } else {
                    0.0
                }
            }
            Profile::Power { coef, exponent } => coef * s.abs().powf(*exponent),
            Profile::Custom(c) => (c.0)(s),
        }
    }
}

/// Open set in R^n with exact distance to its complement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Domain {
    /// `{x : normal . x > offset}`
    Halfspace { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    PuncturedSpace { puncture: Vec<f64> },
    PuncturedDomain { base: Box<Domain>, puncture: Vec<f64> },
    Annulus { center: Vec<f64>, r1: f64, r2: f64 },
    /// Points whose angle to `axis` (seen from `vertex`) is below `phi`.
    #[serde(rename = "cone")]
    Cone2D { vertex: [f64; 2], axis: [f64; 2], phi: f64 },
    /// Interior of a simple closed chain, even-odd rule.
    #[serde(rename = "polygon")]
    Polygon2D { vertices: Vec<[f64; 2]> },
    ExteriorOfCompact { compact: Compact },
    /// `{x2 > f(x1)}`; `f` is only evaluated on `[-bound, bound]`.
    Epigraph { profile: Profile, bound: f64 },
    Intersection { parts: Vec<Domain> },
    Translate { offset: Vec<f64>, inner: Box<Domain> },
    /// Counter-clockwise rotation about the origin (2D only).
    Rotate { angle: f64, inner: Box<Domain> },
    /// Dilation about the origin.
    Scale { r: f64, inner: Box<Domain> },
    Transform { transform: SimilarityTransform, inner: Box<Domain> },
}

/// `x -> r Q x + y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub r: f64,
    pub q: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn seg_project(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let e = sub2(b, a);
    let l2 = e[0] * e[0] + e[1] * e[1];
    let t = if l2 > 0.0 {
        (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    [a[0] + t * e[0], a[1] + t * e[1]]
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let q = seg_project(p, a, b);
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

fn even_odd(p: [f64; 2], v: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = v.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let xc = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < xc {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn edge_dist(p: [f64; 2], v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| seg_dist(p, v[i], v[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| cross2(v[i], v[(i + 1) % n])).sum::<f64>()
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let o = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| cross2(sub2(q, p), sub2(r, p));
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| seg_dist(r, p, q) <= 1e-14;
    on(c, d, a) || on(c, d, b) || on(a, b, c) || on(a, b, d)
}

fn validate_polygon(v: &[[f64; 2]]) -> Result<()> {
    let n = v.len();
    if n < 3 {
        return Err(Error::InvalidDomain("polygon needs at least 3 vertices".into()));
    }
    if v.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidDomain("non-finite polygon vertex".into()));
    }
    let scale = v.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
    for i in 0..n {
        let (a, b, c) = (v[i], v[(i + 1) % n], v[(i + 2) % n]);
        let e = sub2(b, a);
        if e[0] == 0.0 && e[1] == 0.0 {
            return Err(Error::InvalidDomain(format!("repeated vertex at index {}", (i + 1) % n)));
        }
        let f = sub2(c, b);
        if cross2(e, f).abs() <= 1e-12 * scale * scale {
            return Err(Error::InvalidDomain(format!(
                "collinear vertices around index {}",
                (i + 1) % n
            )));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return Err(Error::InvalidDomain(format!("edges {i} and {j} intersect")));
            }
        }
    }
    Ok(())
}

fn is_convex_polygon(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    let mut sign = 0.0;
    for i in 0..n {
        let c = cross2(sub2(v[(i + 1) % n], v[i]), sub2(v[(i + 2) % n], v[(i + 1) % n]));
        if sign == 0.0 {
            sign = c.signum();
        } else if c * sign < 0.0 {
            return false;
        }
    }
    true
}

fn unit_or_err(v: &[f64], what: &str) -> Result<()> {
    let l = norm(v);
    if !l.is_finite() || (l - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDomain(format!("{what} must be a unit vector (|v| = {l})")));
    }
    Ok(())
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() || v.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidDomain(format!("{what} must be a non-empty finite point")));
    }
    Ok(())
}

impl SimilarityTransform {
    pub fn new(r: f64, q: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let t = SimilarityTransform { r, q, y };
        t.validate()?;
        Ok(t)
    }

    pub fn identity(n: usize) -> Self {
        let q = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        SimilarityTransform { r: 1.0, q, y: vec![0.0; n] }
    }

    pub fn dilation(r: f64, n: usize) -> Self {
        SimilarityTransform { r, ..Self::identity(n) }
    }

    pub fn translation(y: Vec<f64>) -> Self {
        SimilarityTransform { y: y.clone(), ..Self::identity(y.len()) }
    }

    /// Counter-clockwise rotation in the plane.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        SimilarityTransform { r: 1.0, q: vec![vec![c, -s], vec![s, c]], y: vec![0.0, 0.0] }
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 || n > 3 {
            return Err(Error::InvalidTransform(format!("dimension {n} not supported")));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidTransform(format!("scale must be positive, got {}", self.r)));
        }
        if self.q.len() != n || self.q.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidTransform("Q must be n x n".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let qtq: f64 = (0..n).map(|k| self.q[k][i] * self.q[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (qtq - want).abs() > 1e-9 {
                    return Err(Error::InvalidTransform("Q is not orthogonal".into()));
                }
            }
        }
        if self.y.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        Ok(())
    }

    /// `Q v` (no scaling, no translation).
    pub fn rotate_vec(&self, v: &[f64]) -> Vec<f64> {
        self.q.iter().map(|row| dot(row, v)).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.q.iter().enumerate() {
            out[i] = self.r * dot(row, x) + self.y[i];
        }
    }

    /// `T^{-1} z = Q^T (z - y) / r`.
    pub fn apply_inverse_into(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (j, o) in out.iter_mut().enumerate().take(n) {
            let mut s = 0.0;
            for i in 0..n {
                s += self.q[i][j] * (z[i] - self.y[i]);
            }
            *o = s / self.r;
        }
    }

    pub fn inverse(&self) -> Self {
        let n = self.dim();
        let qt: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| self.q[j][i]).collect()).collect();
        let y = (0..n).map(|i| -dot(&qt[i], &self.y) / self.r).collect();
        SimilarityTransform { r: 1.0 / self.r, q: qt, y }
    }

    /// `self . other`, i.e. apply `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> Self {
        let n = self.dim();
        let q = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| self.q[i][k] * other.q[k][j]).sum()).collect())
            .collect();
        let y = self.apply(&other.y);
        SimilarityTransform { r: self.r * other.r, q, y }
    }
}

impl Domain {
    pub fn halfspace(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let d = Domain::Halfspace { normal, offset };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let d = Domain::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn annulus(center: Vec<f64>, r1: f64, r2: f64) -> Result<Self> {
        let d = Domain::Annulus { center, r1, r2 };
        d.validate()?;
        Ok(d)
    }

    pub fn cone(vertex: [f64; 2], axis: [f64; 2], phi: f64) -> Result<Self> {
        let d = Domain::Cone2D { vertex, axis, phi };
        d.validate()?;
        Ok(d)
    }

    pub fn polygon(vertices: Vec<[f64; 2]>) -> Result<Self> {
        let d = Domain::Polygon2D { vertices };
        d.validate()?;
        Ok(d)
    }

    /// Axis-aligned box `[lo, hi]` as a polygon.
    pub fn rectangle(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        Domain::polygon(vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    }

    pub fn punctured(base: Domain, puncture: Vec<f64>) -> Result<Self> {
        let d = Domain::PuncturedDomain { base: Box::new(base), puncture };
        d.validate()?;
        Ok(d)
    }

    pub fn intersection(parts: Vec<Domain>) -> Result<Self> {
        let d = Domain::Intersection { parts };
        d.validate()?;
        Ok(d)
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            Domain::Halfspace { normal, .. } => normal.len(),
            Domain::Ball { center, .. } | Domain::Annulus { center, .. } => center.len(),
            Domain::PuncturedSpace { puncture } => puncture.len(),
            Domain::PuncturedDomain { base, .. } => base.dim(),
            Domain::Cone2D { .. } | Domain::Polygon2D { .. } | Domain::Epigraph { .. } => 2,
            Domain::Rotate { .. } => 2,
            Domain::ExteriorOfCompact { compact } => match compact {
                Compact::Ball { center, .. } => center.len(),
                Compact::Polygon { .. } => 2,
            },
            Domain::Intersection { parts } => parts.first().map_or(0, |p| p.dim()),
            Domain::Translate { offset, .. } => offset.len(),
            Domain::Scale { inner, .. } => inner.dim(),
            Domain::Transform { transform, .. } => transform.dim(),
        }
    }

    /// Checks the construction invariants of every variant.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || n > 3 {
            return Err(Error::InvalidDomain(format!("dimension {n} not supported")));
        }
        match self {
            Domain::Halfspace { normal, offset } => {
                unit_or_err(normal, "halfspace normal")?;
                if !offset.is_finite() {
                    return Err(Error::InvalidDomain("non-finite halfspace offset".into()));
                }
            }
            Domain::Ball { center, radius } => {
                finite(center, "ball center")?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidDomain(format!("ball radius must be positive, got {radius}")));
                }
            }
            Domain::PuncturedSpace { puncture } => finite(puncture, "puncture")?,
            Domain::PuncturedDomain { base, puncture } => {
                base.validate()?;
                finite(puncture, "puncture")?;
                if puncture.len() != base.dim() {
                    return Err(Error::DimensionMismatch { expected: base.dim(), got: puncture.len() });
                }
            }
            Domain::Annulus { center, r1, r2 } => {
                finite(center, "annulus center")?;
                if !(*r1 > 0.0 && r1 < r2 && r2.is_finite()) {
                    return Err(Error::InvalidDomain(format!("annulus requires 0 < r1 < r2, got r1 = {r1}, r2 = {r2}")));
                }
            }
            Domain::Cone2D { vertex, axis, phi } => {
                finite(vertex, "cone vertex")?;
                unit_or_err(axis, "cone axis")?;
                if !(*phi > 0.0 && *phi <= std::f64::consts::PI) {
                    return Err(Error::InvalidDomain(format!("cone angle must lie in (0, pi], got {phi}")));
                }
            }
            Domain::Polygon2D { vertices } => validate_polygon(vertices)?,
            Domain::ExteriorOfCompact { compact } => match compact {
                Compact::Ball { center, radius } => {
                    finite(center, "obstacle center")?;
                    if !(*radius > 0.0 && radius.is_finite()) {
                        return Err(Error::InvalidDomain("obstacle radius must be positive".into()));
                    }
                }
                Compact::Polygon { vertices } => {
                    validate_polygon(vertices)?;
                    if !is_convex_polygon(vertices) {
                        return Err(Error::InvalidDomain("obstacle polygon must be convex".into()));
                    }
                }
            },
            Domain::Epigraph { profile, bound } => {
                if !(*bound > 0.0) {
                    return Err(Error::InvalidDomain("epigraph bound must be positive".into()));
                }
                match profile {
                    Profile::Bump { amplitude, width } => {
                        if !(amplitude.is_finite() && *width > 0.0) {
                            return Err(Error::InvalidDomain("bump needs finite amplitude and width > 0".into()));
                        }
                    }
                    Profile::Power { coef, exponent } => {
                        if !(coef.is_finite() && *exponent > 0.0) {
                            return Err(Error::InvalidDomain("power profile needs exponent > 0".into()));
                        }
                    }
                    Profile::Custom(_) => {}
                }
            }
            Domain::Intersection { parts } => {
                if parts.is_empty() {
                    return Err(Error::InvalidDomain("empty intersection".into()));
                }
                for p in parts {
                    p.validate()?;
                    if p.dim() != n {
                        return Err(Error::DimensionMismatch { expected: n, got: p.dim() });
                    }
                }
            }
            Domain::Translate { offset, inner } => {
                finite(offset, "translation")?;
                inner.validate()?;
                if inner.dim() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: inner.dim() });
                }
            }
            Domain::Rotate { angle, inner } => {
                if !angle.is_finite() {
                    return Err(Error::InvalidDomain("non-finite rotation angle".into()));
                }
                inner.validate()?;
                if inner.dim() != 2 {
                    return Err(Error::DimensionMismatch { expected: 2, got: inner.dim() });
                }
            }
            Domain::Scale { r, inner } => {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(Error::InvalidDomain("scale must be positive".into()));
                }
                inner.validate()?;
            }
            Domain::Transform { transform, inner } => {
                transform.validate()?;
                inner.validate()?;
                if inner.dim() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: inner.dim() });
                }
            }
        }
        Ok(())
    }

    /// Distance from `x` to the complement; 0 outside.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        self.dist(x)
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        Ok(self.distance(x)? > 0.0)
    }

    fn dist(&self, x: &[f64]) -> Result<f64> {
        let d = match self {
            Domain::Halfspace { normal, offset } => (dot(normal, x) - offset).max(0.0),
            Domain::Ball { center, radius } => (radius - dist2(x, center)).max(0.0),
            Domain::PuncturedSpace { puncture } => dist2(x, puncture),
            Domain::PuncturedDomain { base, puncture } => base.dist(x)?.min(dist2(x, puncture)),
            Domain::Annulus { center, r1, r2 } => {
                let r = dist2(x, center);
                (r - r1).min(r2 - r).max(0.0)
            }
            Domain::Cone2D { vertex, axis, phi } => {
                let v = [x[0] - vertex[0], x[1] - vertex[1]];
                let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
                if r == 0.0 {
                    return Ok(0.0);
                }
                let alpha = cross2(*axis, v).atan2(axis[0] * v[0] + axis[1] * v[1]).abs();
                if alpha >= *phi {
                    0.0
                } else {
                    let gap = phi - alpha;
                    if gap < FRAC_PI_2 {
                        r * gap.sin()
                    } else {
                        r
                    }
                }
            }
            Domain::Polygon2D { vertices } => {
                let p = [x[0], x[1]];
                if even_odd(p, vertices) {
                    edge_dist(p, vertices)
                } else {
                    0.0
                }
            }
            Domain::ExteriorOfCompact { compact } => match compact {
                Compact::Ball { center, radius } => (dist2(x, center) - radius).max(0.0),
                Compact::Polygon { vertices } => {
                    let p = [x[0], x[1]];
                    if even_odd(p, vertices) {
                        0.0
                    } else {
                        edge_dist(p, vertices)
                    }
                }
            },
            Domain::Epigraph { profile, bound } => epigraph_nearest(profile, *bound, x)?.0,
            Domain::Intersection { parts } => {
                let mut m = f64::INFINITY;
                for p in parts {
                    m = m.min(p.dist(x)?);
                    if m <= 0.0 {
                        return Ok(0.0);
                    }
                }
                m
            }
            Domain::Translate { offset, inner } => {
                let mut buf = [0.0; 3];
                for i in 0..x.len() {
                    buf[i] = x[i] - offset[i];
                }
                inner.dist(&buf[..x.len()])?
            }
            Domain::Rotate { angle, inner } => {
                let (s, c) = angle.sin_cos();
                inner.dist(&[c * x[0] + s * x[1], -s * x[0] + c * x[1]])?
            }
            Domain::Scale { r, inner } => {
                let mut buf = [0.0; 3];
                for i in 0..x.len() {
                    buf[i] = x[i] / r;
                }
                r * inner.dist(&buf[..x.len()])?
            }
            Domain::Transform { transform, inner } => {
                let mut buf = [0.0; 3];
                transform.apply_inverse_into(x, &mut buf);
                transform.r * inner.dist(&buf[..x.len()])?
            }
        };
        Ok(d)
    }

    /// The wrapper transform of a `Translate`/`Rotate`/`Scale`/`Transform` node.
    fn wrapper(&self) -> Option<(SimilarityTransform, &Domain)> {
        match self {
            Domain::Translate { offset, inner } => Some((SimilarityTransform::translation(offset.clone()), inner)),
            Domain::Rotate { angle, inner } => Some((SimilarityTransform::rotation(*angle), inner)),
            Domain::Scale { r, inner } => Some((SimilarityTransform::dilation(*r, inner.dim()), inner)),
            Domain::Transform { transform, inner } => Some((transform.clone(), inner)),
            _ => None,
        }
    }

    /// Candidate nearest points on the boundary, one or more per boundary piece.
    fn candidates(&self, x: &[f64], out: &mut Vec<Vec<f64>>) -> Result<()> {
        match self {
            Domain::Halfspace { normal, offset } => {
                let s = dot(normal, x) - offset;
                out.push(x.iter().zip(normal).map(|(a, b)| a - s * b).collect());
            }
            Domain::Ball { center, radius } => out.push(sphere_project(x, center, *radius)),
            Domain::PuncturedSpace { puncture } => out.push(puncture.clone()),
            Domain::PuncturedDomain { base, puncture } => {
                base.candidates(x, out)?;
                out.push(puncture.clone());
            }
            Domain::Annulus { center, r1, r2 } => {
                out.push(sphere_project(x, center, *r1));
                out.push(sphere_project(x, center, *r2));
            }
            Domain::Cone2D { vertex, axis, phi } => {
                for sgn in [1.0, -1.0] {
                    let (s, c) = (sgn * phi).sin_cos();
                    let e = [c * axis[0] - s * axis[1], s * axis[0] + c * axis[1]];
                    let t = ((x[0] - vertex[0]) * e[0] + (x[1] - vertex[1]) * e[1]).max(0.0);
                    out.push(vec![vertex[0] + t * e[0], vertex[1] + t * e[1]]);
                }
            }
            Domain::Polygon2D { vertices } | Domain::ExteriorOfCompact { compact: Compact::Polygon { vertices } } => {
                let n = vertices.len();
                for i in 0..n {
                    let q = seg_project([x[0], x[1]], vertices[i], vertices[(i + 1) % n]);
                    out.push(q.to_vec());
                }
            }
            Domain::ExteriorOfCompact { compact: Compact::Ball { center, radius } } => {
                out.push(sphere_project(x, center, *radius))
            }
            Domain::Epigraph { profile, bound } => {
                let (_, s) = epigraph_nearest(profile, *bound, x)?;
                out.push(vec![s, profile.eval(s)]);
            }
            Domain::Intersection { parts } => {
                for p in parts {
                    p.candidates(x, out)?;
                }
            }
            _ => {
                let (t, inner) = self.wrapper().expect("wrapper variant");
                let n = x.len();
                let mut buf = [0.0; 3];
                t.apply_inverse_into(x, &mut buf);
                let start = out.len();
                inner.candidates(&buf[..n], out)?;
                for c in &mut out[start..] {
                    *c = t.apply(c);
                }
            }
        }
        Ok(())
    }
}

fn sphere_project(x: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let r = dist2(x, center);
    if r == 0.0 {
        // every sphere point is nearest; lexicographically smallest one
        let mut p = center.to_vec();
        p[0] -= radius;
        return p;
    }
    x.iter().zip(center).map(|(a, c)| c + radius * (a - c) / r).collect()
}

/// Distance to the graph and the abscissa of the nearest graph point.
fn epigraph_nearest(profile: &Profile, bound: f64, x: &[f64]) -> Result<(f64, f64)> {
    if x[0].abs() > bound {
        return Err(Error::OutsideEvaluationBound { at: x[0], bound });
    }
    let v = x[1] - profile.eval(x[0]);
    if v <= 0.0 {
        return Ok((0.0, x[0]));
    }
    // the nearest graph point lies within the vertical distance v
    let (lo, hi) = (x[0] - v, x[0] + v);
    if lo < -bound || hi > bound {
        let at = if lo < -bound { lo } else { hi };
        return Err(Error::OutsideEvaluationBound { at, bound });
    }
    let g = |s: f64| ((s - x[0]).powi(2) + (profile.eval(s) - x[1]).powi(2)).sqrt();
    const SAMPLES: usize = 64;
    let step = (hi - lo) / SAMPLES as f64;
    let (mut best_s, mut best) = (x[0], v);
    let mut best_k = None;
    for k in 0..=SAMPLES {
        let s = lo + k as f64 * step;
        let d = g(s);
        if d < best {
            best = d;
            best_s = s;
            best_k = Some(k);
        }
    }
    let (mut a, mut b) = match best_k {
        Some(k) => (lo + (k.max(1) - 1) as f64 * step, lo + ((k + 1).min(SAMPLES)) as f64 * step),
        None => (x[0] - step, x[0] + step),
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..80 {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
        if b - a < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    for (s, val) in [(c, gc), (d, gd)] {
        if val < best {
            best = val;
            best_s = s;
        }
    }
    Ok((best, best_s))
}

/// Image `T(domain)`; satisfies `d_{T Omega}(T x) = r d_Omega(x)`.
pub fn apply_transform(t: &SimilarityTransform, domain: &Domain) -> Result<Domain> {
    t.validate()?;
    let n = domain.dim();
    if t.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: t.dim() });
    }
    let map2 = |p: [f64; 2]| {
        let v = t.apply(&p);
        [v[0], v[1]]
    };
    let out = match domain {
        Domain::Halfspace { normal, offset } => {
            let qn = t.rotate_vec(normal);
            let off = t.r * offset + dot(&qn, &t.y);
            Domain::Halfspace { normal: qn, offset: off }
        }
        Domain::Ball { center, radius } => Domain::Ball { center: t.apply(center), radius: t.r * radius },
        Domain::PuncturedSpace { puncture } => Domain::PuncturedSpace { puncture: t.apply(puncture) },
        Domain::PuncturedDomain { base, puncture } => Domain::PuncturedDomain {
            base: Box::new(apply_transform(t, base)?),
            puncture: t.apply(puncture),
        },
        Domain::Annulus { center, r1, r2 } => Domain::Annulus {
            center: t.apply(center),
            r1: t.r * r1,
            r2: t.r * r2,
        },
        Domain::Cone2D { vertex, axis, phi } => {
            let a = t.rotate_vec(axis);
            Domain::Cone2D { vertex: map2(*vertex), axis: [a[0], a[1]], phi: *phi }
        }
        Domain::Polygon2D { vertices } => Domain::Polygon2D { vertices: vertices.iter().map(|v| map2(*v)).collect() },
        Domain::ExteriorOfCompact { compact } => Domain::ExteriorOfCompact {
            compact: match compact {
                Compact::Ball { center, radius } => Compact::Ball { center: t.apply(center), radius: t.r * radius },
                Compact::Polygon { vertices } => Compact::Polygon { vertices: vertices.iter().map(|v| map2(*v)).collect() },
            },
        },
        Domain::Intersection { parts } => Domain::Intersection {
            parts: parts.iter().map(|p| apply_transform(t, p)).collect::<Result<_>>()?,
        },
        Domain::Epigraph { .. } => Domain::Transform { transform: t.clone(), inner: Box::new(domain.clone()) },
        _ => {
            let (w, inner) = domain.wrapper().expect("wrapper variant");
            return apply_transform(&t.compose(&w), inner);
        }
    };
    Ok(out)
}

/// A halfspace containing the convex `domain` whose boundary passes through `b`.
pub fn supporting_halfspace(domain: &Domain, b: &[f64]) -> Result<Domain> {
    if b.len() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: domain.dim(), got: b.len() });
    }
    let tol = BOUNDARY_TOL * norm(b).max(1.0);
    match domain {
        Domain::Halfspace { normal, offset } => {
            let gap = (dot(normal, b) - offset).abs();
            if gap > tol {
                return Err(Error::NotOnBoundary(gap));
            }
            Ok(domain.clone())
        }
        Domain::Ball { center, radius } => {
            let r = dist2(b, center);
            if (r - radius).abs() > tol {
                return Err(Error::NotOnBoundary((r - radius).abs()));
            }
            let normal: Vec<f64> = b.iter().zip(center).map(|(x, c)| -(x - c) / r).collect();
            let offset = dot(&normal, b);
            Ok(Domain::Halfspace { normal, offset })
        }
        Domain::Polygon2D { vertices } => {
            if !is_convex_polygon(vertices) {
                return Err(Error::NonConvex("polygon has a reflex corner".into()));
            }
            let p = [b[0], b[1]];
            let ccw = signed_area(vertices) > 0.0;
            let n = vertices.len();
            let mut acc = [0.0, 0.0];
            let mut hits = 0;
            let mut best = f64::INFINITY;
            for i in 0..n {
                let (a, c) = (vertices[i], vertices[(i + 1) % n]);
                let dd = seg_dist(p, a, c);
                best = best.min(dd);
                if dd <= tol {
                    let e = sub2(c, a);
                    let l = (e[0] * e[0] + e[1] * e[1]).sqrt();
                    let nrm = if ccw { [-e[1] / l, e[0] / l] } else { [e[1] / l, -e[0] / l] };
                    acc[0] += nrm[0];
                    acc[1] += nrm[1];
                    hits += 1;
                }
            }
            if hits == 0 {
                return Err(Error::NotOnBoundary(best));
            }
            let l = (acc[0] * acc[0] + acc[1] * acc[1]).sqrt();
            let normal = vec![acc[0] / l, acc[1] / l];
            let offset = dot(&normal, b);
            Ok(Domain::Halfspace { normal, offset })
        }
        Domain::Cone2D { vertex, axis, phi } => {
            if *phi > FRAC_PI_2 + 1e-15 {
                return Err(Error::NonConvex(format!("cone with angle {phi} > pi/2")));
            }
            let v = [b[0] - vertex[0], b[1] - vertex[1]];
            let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
            if r <= tol {
                let offset = axis[0] * vertex[0] + axis[1] * vertex[1];
                return Ok(Domain::Halfspace { normal: axis.to_vec(), offset });
            }
            let alpha = cross2(*axis, v).atan2(axis[0] * v[0] + axis[1] * v[1]);
            let gap = r * (alpha.abs() - phi).abs().min(FRAC_PI_2).sin();
            if gap > tol {
                return Err(Error::NotOnBoundary(gap));
            }
            let sgn = if alpha >= 0.0 { 1.0 } else { -1.0 };
            let (s, c) = (sgn * phi).sin_cos();
            let e = [c * axis[0] - s * axis[1], s * axis[0] + c * axis[1]];
            let nrm = if sgn > 0.0 { [e[1], -e[0]] } else { [-e[1], e[0]] };
            let offset = nrm[0] * vertex[0] + nrm[1] * vertex[1];
            Ok(Domain::Halfspace { normal: nrm.to_vec(), offset })
        }
        Domain::Intersection { parts } => {
            // any convex part whose boundary carries b supports the whole set
            let mut last = Error::NotOnBoundary(f64::INFINITY);
            for p in parts {
                match supporting_halfspace(p, b) {
                    Ok(h) => return Ok(h),
                    Err(e) => last = e,
                }
            }
            Err(last)
        }
        Domain::Translate { .. } | Domain::Rotate { .. } | Domain::Scale { .. } | Domain::Transform { .. } => {
            let (t, inner) = domain.wrapper().expect("wrapper variant");
            let mut buf = [0.0; 3];
            t.apply_inverse_into(b, &mut buf);
            let h = supporting_halfspace(inner, &buf[..b.len()])?;
            apply_transform(&t, &h)
        }
        other => Err(Error::NonConvex(format!("{} is not a convex variant", other.tag()))),
    }
}

/// Nearest point of the boundary; ties go to the lexicographically smallest.
pub fn nearest_boundary_point(domain: &Domain, x: &[f64]) -> Result<Vec<f64>> {
    let d = domain.distance(x)?;
    if d <= 0.0 {
        return Err(Error::OutsideDomain);
    }
    let mut cands = Vec::new();
    domain.candidates(x, &mut cands)?;
    let dists: Vec<f64> = cands.iter().map(|c| dist2(c, x)).collect();
    let m = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let tie = m + 1e-12 * m.max(1.0);
    let best = cands
        .into_iter()
        .zip(dists)
        .filter(|(_, dd)| *dd <= tie)
        .map(|(c, _)| c)
        .min_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or(Error::OutsideDomain)?;
    Ok(best)
}

impl Domain {
    /// Short variant name, matching the JSON tag.
    pub fn tag(&self) -> &'static str {
        match self {
            Domain::Halfspace { .. } => "halfspace",
            Domain::Ball { .. } => "ball",
            Domain::PuncturedSpace { .. } => "punctured-space",
            Domain::PuncturedDomain { .. } => "punctured-domain",
            Domain::Annulus { .. } => "annulus",
            Domain::Cone2D { .. } => "cone",
            Domain::Polygon2D { .. } => "polygon",
            Domain::ExteriorOfCompact { .. } => "exterior-of-compact",
            Domain::Epigraph { .. } => "epigraph",
            Domain::Intersection { .. } => "intersection",
            Domain::Translate { .. } => "translate",
            Domain::Rotate { .. } => "rotate",
            Domain::Scale { .. } => "scale",
            Domain::Transform { .. } => "transform",
        }
    }

    /// Axis-aligned box containing the domain, `None` when unbounded.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Domain::Ball { center, radius } | Domain::Annulus { center, r2: radius, .. } => {
                Some((center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect()))
            }
            Domain::Polygon2D { vertices } => {
                let lo = vec![vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min), vertices.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min)];
                let hi = vec![vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max), vertices.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max)];
                Some((lo, hi))
            }
            Domain::PuncturedDomain { base, .. } => base.bounding_box(),
            Domain::Intersection { parts } => {
                let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
                for b in parts.iter().filter_map(|p| p.bounding_box()) {
                    acc = Some(match acc {
                        None => b,
                        Some((lo, hi)) => (
                            lo.iter().zip(&b.0).map(|(a, c)| a.max(*c)).collect(),
                            hi.iter().zip(&b.1).map(|(a, c)| a.min(*c)).collect(),
                        ),
                    });
                }
                acc
            }
            Domain::Translate { offset, inner } => inner.bounding_box().map(|(lo, hi)| {
                (lo.iter().zip(offset).map(|(a, o)| a + o).collect(), hi.iter().zip(offset).map(|(a, o)| a + o).collect())
            }),
            Domain::Rotate { angle, inner } => inner.bounding_box().map(|b| box_image(&SimilarityTransform::rotation(*angle), &b)),
            Domain::Scale { r, inner } => {
                inner.bounding_box().map(|b| box_image(&SimilarityTransform::dilation(*r, b.0.len()), &b))
            }
            Domain::Transform { transform, inner } => inner.bounding_box().map(|b| box_image(transform, &b)),
            _ => None,
        }
    }
}

/// Box around the image of the corners of `b`.
fn box_image(t: &SimilarityTransform, b: &(Vec<f64>, Vec<f64>)) -> (Vec<f64>, Vec<f64>) {
    let n = b.0.len();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for mask in 0..(1usize << n) {
        let corner: Vec<f64> = (0..n).map(|a| if mask >> a & 1 == 1 { b.1[a] } else { b.0[a] }).collect();
        let z = t.apply(&corner);
        for a in 0..n {
            lo[a] = lo[a].min(z[a]);
            hi[a] = hi[a].max(z[a]);
        }
    }
    (lo, hi)
}
