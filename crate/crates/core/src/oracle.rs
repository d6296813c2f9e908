//! Closed forms and explicit constructions: 1D potentials, the decay
//! exponent, the parabolic straightening map and its competitor, the
//! boundary trace identity, sphere averages and blow-ups.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{apply_transform, Domain, SimilarityTransform};
use crate::mesh::{interpolate, pairwise_sum, DiscreteFunction, GridSpec};
use crate::potential::{solve_potential, PotentialSolution, SolveOptions};

/// Piecewise linear potential of an interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Potential1D {
    pub a: f64,
    pub b: f64,
    pub y: f64,
    pub p: f64,
    pub breakpoints: Vec<f64>,
    /// Slope on each piece between consecutive breakpoints (and beyond them).
    pub slopes: Vec<f64>,
    pub energy: f64,
    pub rayleigh: f64,
}

impl Potential1D {
    pub fn value(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            0.0
        } else if x <= self.y {
            if self.a.is_finite() {
                (x - self.a) / (self.y - self.a)
            } else {
                1.0
            }
        } else if self.b.is_finite() {
            (self.b - x) / (self.b - self.y)
        } else {
            1.0
        }
    }
}

/// Exact potential of `(a, b)` at `y`; at most one endpoint may be infinite.
pub fn potential_1d(a: f64, b: f64, y: f64, p: f64) -> Result<Potential1D> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("need p > 1, got {p}")));
    }
    if !(a < y && y < b) || y.is_nan() {
        return Err(Error::OutsideDomain);
    }
    if a.is_infinite() && b.is_infinite() {
        return Err(Error::InvalidDomain("the whole line has no potential".into()));
    }
    let (l, r) = (y - a, b - y);
    let (energy, rayleigh, slopes) = if a.is_infinite() {
        (r.powf(1.0 - p), 1.0, vec![0.0, -1.0 / r])
    } else if b.is_infinite() {
        (l.powf(1.0 - p), 1.0, vec![1.0 / l, 0.0])
    } else {
        let ratio = l.min(r) / l.max(r);
        (l.powf(1.0 - p) + r.powf(1.0 - p), 1.0 + ratio.powf(p - 1.0), vec![1.0 / l, -1.0 / r])
    };
    Ok(Potential1D { a, b, y, p, breakpoints: vec![a, y, b], slopes, energy, rayleigh })
}

/// Decay exponent bound of the half-space potential.
pub fn beta0(p: f64) -> f64 {
    let c = -1.0 / 3.0 + 2.0 / (3.0 * (p - 1.0));
    c + (c * c + 1.0 / 3.0).sqrt()
}

fn check_symmetric(k: &[Vec<f64>]) -> Result<()> {
    let m = k.len();
    if k.iter().any(|row| row.len() != m) {
        return Err(Error::InvalidParameter("K must be square".into()));
    }
    for i in 0..m {
        for j in 0..m {
            if !k[i][j].is_finite() || (k[i][j] - k[j][i]).abs() > 1e-12 * (1.0 + k[i][j].abs()) {
                return Err(Error::InvalidParameter("K must be symmetric and finite".into()));
            }
        }
    }
    Ok(())
}

fn quad_form(k: &[Vec<f64>], v: &[f64]) -> f64 {
    k.iter().zip(v).map(|(row, vi)| vi * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()).sum()
}

fn check_phi_args(k: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if y.len() != k.len() + 1 {
        return Err(Error::DimensionMismatch { expected: k.len() + 1, got: y.len() });
    }
    Ok(())
}

/// `Phi(y) = (y', y_n - y'.K y')`.
pub fn phi_map(k: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    check_phi_args(k, y)?;
    let m = k.len();
    let mut out = y.to_vec();
    out[m] = y[m] - quad_form(k, &y[..m]);
    Ok(out)
}

pub fn phi_inverse(k: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
    check_phi_args(k, x)?;
    let m = k.len();
    let mut out = x.to_vec();
    out[m] = x[m] + quad_form(k, &x[..m]);
    Ok(out)
}

/// `DPhi(y)`: identity except the last row `(-2 K y', 1)`.
pub fn phi_jacobian(k: &[Vec<f64>], y: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_phi_args(k, y)?;
    let m = k.len();
    let mut j: Vec<Vec<f64>> = (0..=m).map(|i| (0..=m).map(|c| if i == c { 1.0 } else { 0.0 }).collect()).collect();
    for c in 0..m {
        j[m][c] = -2.0 * k[c].iter().zip(&y[..m]).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(j)
}

/// Determinant of a lower triangular matrix, or `None` if entries above the diagonal are nonzero.
pub fn triangular_determinant(j: &[Vec<f64>]) -> Option<f64> {
    let mut det = 1.0;
    for (i, row) in j.iter().enumerate() {
        if row[i + 1..].iter().any(|&v| v != 0.0) {
            return None;
        }
        det *= row[i];
    }
    Some(det)
}

/// Operator norm of a symmetric matrix (largest |eigenvalue|).
pub fn symmetric_norm(k: &[Vec<f64>]) -> f64 {
    let m = k.len();
    match m {
        0 => 0.0,
        1 => k[0][0].abs(),
        2 => {
            let (a, b, d) = (k[0][0], k[0][1], k[1][1]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mean + rad).abs().max((mean - rad).abs())
        }
        _ => {
            let mut v = vec![1.0; m];
            let mut lam = 0.0;
            for _ in 0..500 {
                let w: Vec<f64> = k.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
                let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return 0.0;
                }
                lam = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v = w.iter().map(|a| a / norm).collect();
            }
            lam
        }
    }
}

type CacheKey = (u64, u64, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<PotentialSolution>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<PotentialSolution>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Half-ball truncation `{x2 > 0, |x| < r}` of the half-plane potential at `e2`,
/// computed once per `(p, r, h)`.
pub fn reference_potential(p: f64, r: f64, h: f64) -> Result<Arc<PotentialSolution>> {
    let key = (p.to_bits(), r.to_bits(), h.to_bits());
    if let Some(s) = cache().lock().expect("cache poisoned").get(&key) {
        return Ok(s.clone());
    }
    if !(r > 2.0) {
        return Err(Error::InvalidParameter(format!("truncation radius must exceed 2, got {r}")));
    }
    let dom = Domain::intersection(vec![Domain::halfspace(vec![0.0, 1.0], 0.0)?, Domain::ball(vec![0.0, 0.0], r)?])?;
    let grid = GridSpec::covering(&[-r, 0.0], &[r, r], h)?;
    let sol = Arc::new(solve_potential(&dom, &grid, &[0.0, 1.0], p, &SolveOptions::default())?);
    if (sol.y[1] - 1.0).abs() > 1e-12 || sol.y[0].abs() > 1e-12 {
        return Err(Error::InvalidGrid("e2 must be a grid node".into()));
    }
    Ok(cache().lock().expect("cache poisoned").entry(key).or_insert(sol).clone())
}

/// Parameters of the curvature competitor in the plane.
#[derive(Clone, Debug)]
pub struct CurvatureSetup {
    /// 1 x 1 in the plane.
    pub k: Vec<Vec<f64>>,
    pub eps: f64,
    pub u0: Arc<PotentialSolution>,
}

impl CurvatureSetup {
    /// `||K|| = 1/2` is admitted: `|Phi(y)| >= 1/2` on `|y| >= 1` still holds there.
    pub fn new(k: Vec<Vec<f64>>, eps: f64, u0: Arc<PotentialSolution>) -> Result<Self> {
        check_symmetric(&k)?;
        if k.len() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: k.len() });
        }
        let norm = symmetric_norm(&k);
        if norm > 0.5 + 1e-15 {
            return Err(Error::InvalidParameter(format!("need ||K|| <= 1/2, got {norm}")));
        }
        if !(eps > 0.0 && eps < 0.125) {
            return Err(Error::InvalidParameter(format!("need 0 < eps < 1/8, got {eps}")));
        }
        Ok(CurvatureSetup { k, eps, u0 })
    }
}

/// Clamp ramp: 0 below 0, identity on (0, 1), 1 above.
pub fn ramp(s: f64) -> f64 {
    s.clamp(0.0, 1.0)
}

#[derive(Clone, Debug)]
pub struct Competitor {
    /// Sample of `w` on the requested grid.
    pub w: DiscreteFunction,
    /// `eps^(p-n) ||Dw||_p^p`, integrated in straightened coordinates.
    pub scaled_energy: f64,
    /// `||Du0||_p^p` on the same grid.
    pub reference_energy: f64,
    /// `w(eps e2)`.
    pub peak: f64,
    /// `w` vanishes on every sample node with `y2 <= y1 K y1` or `|y| >= 1`.
    pub support_ok: bool,
}

/// Degree 4 rule on the reference triangle: barycentric points and weights summing to 1.
const DUNAVANT4: [([f64; 3], f64); 6] = [
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
];

/// Corner offsets of the four half-weighted triangles of a cell, matching the energy.
const CELL_TRIANGLES: [[usize; 3]; 4] = [[0, 1, 3], [0, 2, 3], [0, 1, 2], [1, 2, 3]];
const CORNERS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];

/// `sum_T int_T |A(x) DW|^p` with `A(x) g = (g1 - 2 eps k g2 x1, g2)`.
fn pullback_energy(grid: &GridSpec, w: &[f64], p: f64, eps: f64, k: f64) -> f64 {
    let (nx, ny) = (grid.nx(), grid.ny());
    let h = grid.h;
    let area = 0.5 * h * h;
    let rows: Vec<f64> = (0..ny - 1)
        .into_par_iter()
        .map(|j| {
            let mut row = Vec::with_capacity(nx - 1);
            for i in 0..nx - 1 {
                let base = i + nx * j;
                let c = [w[base], w[base + 1], w[base + nx], w[base + nx + 1]];
                if c.iter().all(|&v| v == 0.0) {
                    row.push(0.0);
                    continue;
                }
                let x0 = grid.origin[0] + i as f64 * h;
                let mut s = 0.0;
                for tri in &CELL_TRIANGLES {
                    let g = p1_gradient(tri, &c, h);
                    let mut q = 0.0;
                    for (bary, wt) in &DUNAVANT4 {
                        let x1 = x0 + h * (0..3).map(|a| bary[a] * CORNERS[tri[a]][0]).sum::<f64>();
                        let a1 = g[0] - 2.0 * eps * k * g[1] * x1;
                        q += wt * (a1 * a1 + g[1] * g[1]).powf(0.5 * p);
                    }
                    // each triangle carries half weight in the averaged split
                    s += 0.5 * area * q;
                }
                row.push(s);
            }
            pairwise_sum(&row)
        })
        .collect();
    pairwise_sum(&rows)
}

fn p1_gradient(tri: &[usize; 3], c: &[f64; 4], h: f64) -> [f64; 2] {
    let (p0, p1, p2) = (CORNERS[tri[0]], CORNERS[tri[1]], CORNERS[tri[2]]);
    let (e1, e2) = ([p1[0] - p0[0], p1[1] - p0[1]], [p2[0] - p0[0], p2[1] - p0[1]]);
    let (d1, d2) = (c[tri[1]] - c[tri[0]], c[tri[2]] - c[tri[0]]);
    let det = e1[0] * e2[1] - e1[1] * e2[0];
    [(d1 * e2[1] - d2 * e1[1]) / (det * h), (e1[0] * d2 - e2[0] * d1) / (det * h)]
}

/// `W(x) = ramp(2 - 4 eps |x|) u0(x)` at the nodes of `u0`.
fn straightened_competitor(u0: &DiscreteFunction, eps: f64) -> Vec<f64> {
    let g = &u0.grid;
    (0..g.len())
        .map(|i| {
            let v = u0.values[i];
            if v == 0.0 {
                return 0.0;
            }
            let x = g.point(i);
            ramp(2.0 - 4.0 * eps * (x[0] * x[0] + x[1] * x[1]).sqrt()) * v
        })
        .collect()
}

/// `w(y) = ramp(2 - 4|Phi(y)|) u0(Phi(y)/eps)`, its scaled energy and sample on `grid`.
pub fn curvature_competitor(setup: &CurvatureSetup, grid: &GridSpec) -> Result<Competitor> {
    let eps = setup.eps;
    if grid.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: grid.dim() });
    }
    if grid.h > eps / 8.0 * (1.0 + 1e-12) {
        return Err(Error::GridTooCoarse { h: grid.h, eps });
    }
    let u0 = &setup.u0.w;
    let p = setup.u0.p;
    let k = setup.k[0][0];
    let big_w = straightened_competitor(u0, eps);
    let scaled_energy = pullback_energy(&u0.grid, &big_w, p, eps, k);
    let reference_energy = setup.u0.energy;

    let eval = |y: &[f64]| -> Result<f64> {
        let phi = phi_map(&setup.k, y)?;
        let r = (phi[0] * phi[0] + phi[1] * phi[1]).sqrt();
        let c = ramp(2.0 - 4.0 * r);
        if c == 0.0 || phi[1] <= 0.0 {
            return Ok(0.0);
        }
        let x = [phi[0] / eps, phi[1] / eps];
        Ok(match interpolate(u0, &x) {
            Some((v, _)) => c * v,
            None => 0.0,
        })
    };
    let mut values = vec![0.0; grid.len()];
    let mut active = vec![false; grid.len()];
    let mut support_ok = true;
    for i in 0..grid.len() {
        let y = grid.point(i);
        let v = eval(&y)?;
        let inside = y[1] > k * y[0] * y[0] && y[0] * y[0] + y[1] * y[1] < 1.0;
        if !inside && v != 0.0 {
            support_ok = false;
        }
        values[i] = v;
        active[i] = inside;
    }
    let peak = eval(&[0.0, eps])?;
    Ok(Competitor { w: DiscreteFunction { grid: grid.clone(), values, active }, scaled_energy, reference_energy, peak, support_ok })
}

/// Scaled competitor energies over a sweep of `eps`.
pub fn curvature_sweep(k: f64, eps: &[f64], u0: Arc<PotentialSolution>) -> Result<Vec<(f64, f64)>> {
    eps.iter()
        .map(|&e| {
            let s = CurvatureSetup::new(vec![vec![k]], e, u0.clone())?;
            let w = straightened_competitor(&s.u0.w, e);
            Ok((e, pullback_energy(&s.u0.w.grid, &w, s.u0.p, e, k)))
        })
        .collect()
}

/// Least squares slope of `y` against `x`.
pub fn linear_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|a| a.0).sum::<f64>() / n;
    let my = pts.iter().map(|a| a.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|a| (a.0 - mx) * (a.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|a| (a.0 - mx) * (a.0 - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Coefficient of the boundary integral in the trace identity.
pub fn trace_coefficient(p: f64) -> f64 {
    -(p - 1.0) / (2.0 * p)
}

/// Both sides of `int |Du|^(p-2) d2u (Du.(x1,0)) = -(p-1)/(2p) int |d2u(x1,0)|^p x1^2`
/// for a half-plane potential whose grid row 0 lies on the wall.
pub fn trace_identity_gap(u0: &DiscreteFunction, p: f64) -> Result<TraceIdentity> {
    let g = &u0.grid;
    if g.dim() != 2 || g.origin[1] != 0.0 {
        return Err(Error::InvalidGrid("expected a 2D grid with its first row on x2 = 0".into()));
    }
    let (nx, ny) = (g.nx(), g.ny());
    let h = g.h;
    let v = &u0.values;
    let area = 0.5 * h * h;
    let rows: Vec<f64> = (0..ny - 1)
        .into_par_iter()
        .map(|j| {
            let mut row = Vec::with_capacity(nx - 1);
            for i in 0..nx - 1 {
                let base = i + nx * j;
                let c = [v[base], v[base + 1], v[base + nx], v[base + nx + 1]];
                let x0 = g.origin[0] + i as f64 * h;
                let mut s = 0.0;
                for tri in &CELL_TRIANGLES {
                    let gr = p1_gradient(tri, &c, h);
                    let xc = x0 + h * tri.iter().map(|&a| CORNERS[a][0]).sum::<f64>() / 3.0;
                    let m2 = gr[0] * gr[0] + gr[1] * gr[1];
                    s += 0.5 * area * m2.powf(0.5 * p - 1.0) * gr[1] * gr[0] * xc;
                }
                row.push(s);
            }
            pairwise_sum(&row)
        })
        .collect();
    let lhs = pairwise_sum(&rows);
    let terms: Vec<f64> = (0..nx)
        .map(|i| {
            let x1 = g.origin[0] + i as f64 * h;
            // one-sided second order derivative; the wall value is zero
            let d2 = (4.0 * v[i + nx] - v[i + 2 * nx] - 3.0 * v[i]) / (2.0 * h);
            h * d2.abs().powf(p) * x1 * x1
        })
        .collect();
    let rhs = trace_coefficient(p) * pairwise_sum(&terms);
    if rhs == 0.0 {
        return Err(Error::ZeroFunction);
    }
    Ok(TraceIdentity { lhs, rhs, gap: ((lhs - rhs) / rhs).abs() })
}

/// Average of `theta.K theta` over the unit sphere of dimension `m - 1`, `m = K.len()`,
/// against `tr(K)/m`.
pub fn angular_average_check(k: &[Vec<f64>]) -> Result<(f64, f64)> {
    check_symmetric(k)?;
    let m = k.len();
    if m == 0 {
        return Err(Error::InvalidParameter("empty K".into()));
    }
    let nodes: Vec<Vec<f64>> = match m {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..16)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / 16.0;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        // cross-polytope rule, exact for polynomials of degree 3
        _ => (0..2 * m)
            .map(|i| {
                let mut e = vec![0.0; m];
                e[i / 2] = if i % 2 == 0 { 1.0 } else { -1.0 };
                e
            })
            .collect(),
    };
    let avg = nodes.iter().map(|t| quad_form(k, t)).sum::<f64>() / nodes.len() as f64;
    let tr: f64 = (0..m).map(|i| k[i][i]).sum();
    Ok((avg, tr / m as f64))
}

/// `t (domain - x0)` for a boundary point `x0`.
pub fn blowup_rescale(domain: &Domain, x0: &[f64], t: f64) -> Result<Domain> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {t}")));
    }
    let d = domain.distance(x0)?;
    if d > 1e-9 {
        return Err(Error::NotOnBoundary(d));
    }
    let n = x0.len();
    let shift = SimilarityTransform::translation(x0.iter().map(|c| -c).collect());
    let tr = SimilarityTransform::dilation(t, n).compose(&shift);
    apply_transform(&tr, domain)
}

/// Fraction of nodes of `B_r(0)` (spacing `h`) where membership in `a` and `b` differs.
pub fn symmetric_difference(a: &Domain, b: &Domain, r: f64, h: f64) -> Result<f64> {
    let n = a.dim();
    let grid = GridSpec::covering(&vec![-r; n], &vec![r; n], h)?;
    let (mut inside, mut differ) = (0usize, 0usize);
    for i in 0..grid.len() {
        let x = grid.point(i);
        if x.iter().map(|c| c * c).sum::<f64>() >= r * r {
            continue;
        }
        inside += 1;
        if a.contains(&x)? != b.contains(&x)? {
            differ += 1;
        }
    }
    Ok(differ as f64 / inside.max(1) as f64)
}

/// Fits `u0(0, s) ~ c s^(-beta)` on `s in [s_lo, s_hi]`.
pub fn decay_fit(u0: &DiscreteFunction, s_lo: f64, s_hi: f64) -> Result<(f64, f64)> {
    let mut pts = Vec::new();
    let mut s = s_lo;
    while s <= s_hi {
        if let Some((v, true)) = interpolate(u0, &[0.0, s]) {
            if v > 0.0 {
                pts.push((s.ln(), v.ln()));
            }
        }
        s *= 1.1;
    }
    if pts.len() < 3 {
        return Err(Error::InvalidParameter("too few samples for the decay fit".into()));
    }
    let slope = linear_slope(&pts);
    let n = pts.len() as f64;
    let icpt = pts.iter().map(|a| a.1).sum::<f64>() / n - slope * pts.iter().map(|a| a.0).sum::<f64>() / n;
    Ok((icpt.exp(), -slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn potential_1d_examples() {
        let w = potential_1d(0.0, 2.0, 1.0, 4.0).unwrap();
        assert_eq!((w.energy, w.rayleigh), (2.0, 2.0));
        let w = potential_1d(0.0, 3.0, 1.0, 4.0).unwrap();
        assert_eq!((w.energy, w.rayleigh), (1.125, 1.125));
        assert_eq!(w.value(2.0), 0.5);
        let w = potential_1d(f64::NEG_INFINITY, 1.0, 0.0, 4.0).unwrap();
        assert_eq!((w.energy, w.rayleigh), (1.0, 1.0));
        assert_eq!(w.value(-100.0), 1.0);
        assert!(matches!(potential_1d(0.0, 1.0, 2.0, 4.0), Err(Error::OutsideDomain)));
        assert!(potential_1d(f64::NEG_INFINITY, f64::INFINITY, 0.0, 4.0).is_err());
    }

    #[test]
    fn beta0_examples() {
        assert!((beta0(3.0) - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((beta0(2.0) - 1.0).abs() < 1e-14);
        // beta0(p) = 1/3 + 1/(3(p - 1)) + O(p^-2)
        let b = beta0(1e6);
        assert!((b - (1.0 / 3.0 + 1.0 / (3.0 * (1e6 - 1.0)))).abs() < 1e-12);
        assert!((b - (1.0 / 3.0 + 3e-7)).abs() < 5e-8);
        let mut prev = f64::INFINITY;
        for i in 0..=196 {
            let p = 2.0 + 0.5 * i as f64;
            let b = beta0(p);
            assert!(b < prev && b > 1.0 / p);
            prev = b;
        }
    }

    #[test]
    fn phi_examples() {
        let z = vec![vec![0.0]];
        assert_eq!(phi_map(&z, &[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
        assert_eq!(phi_map(&[vec![0.25]], &[2.0, 1.0]).unwrap(), vec![2.0, 0.0]);
        let j = phi_jacobian(&[vec![0.25, 0.1], vec![0.1, -0.3]], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(triangular_determinant(&j), Some(1.0));
        assert!(phi_map(&z, &[1.0]).is_err());
    }

    #[test]
    fn angular_average_examples() {
        assert_eq!(angular_average_check(&[vec![-0.3]]).unwrap(), (-0.3, -0.3));
        let (a, b) = angular_average_check(&[vec![0.2, 0.0], vec![0.0, -0.4]]).unwrap();
        assert!((a - b).abs() < 1e-15 && (b + 0.1).abs() < 1e-15);
        let (a, _) = angular_average_check(&[vec![0.3, 0.2], vec![0.2, -0.3]]).unwrap();
        assert!(a.abs() < 1e-15);
        let k3 = vec![vec![1.0, 0.5, 0.0], vec![0.5, -0.25, 0.1], vec![0.0, 0.1, 0.5]];
        let (a, b) = angular_average_check(&k3).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn dunavant_rule_is_degree_four() {
        // int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let q: f64 = DUNAVANT4.iter().map(|(l, w)| w * 0.5 * l[1].powi(a as i32) * l[2].powi(b as i32)).sum();
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                assert!((q - exact).abs() < 1e-12, "{a} {b}");
            }
        }
    }

    #[test]
    fn pullback_without_curvature_is_the_energy() {
        let g = GridSpec::new(vec![-1.0, 0.0], 0.125, vec![17, 9]).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let e = crate::mesh::energy_raw(&g, &v, 4.0, 0.0);
        let q = pullback_energy(&g, &v, 4.0, 0.05, 0.0);
        assert!((e - q).abs() < 1e-12 * e);
    }

    #[test]
    fn blowup_examples() {
        let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(blowup_rescale(&disk, &[0.5, 0.0], 2.0), Err(Error::NotOnBoundary(_))));
        let id = blowup_rescale(&disk, &[1.0, 0.0], 1.0).unwrap();
        assert!(id.contains(&[0.5, 0.0]).unwrap() == false && id.contains(&[-0.5, 0.0]).unwrap());
        let b = blowup_rescale(&disk, &[0.0, -1.0], 100.0).unwrap();
        let half = Domain::halfspace(vec![0.0, 1.0], 0.0).unwrap();
        let f = symmetric_difference(&b, &half, 1.0, 1.0 / 128.0).unwrap();
        assert!(f < 0.02, "{f}");
        // reflex corner of an L-shaped polygon
        let l = Domain::polygon(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]]).unwrap();
        let cone = Domain::cone([0.0, 0.0], [-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2], 0.75 * std::f64::consts::PI).unwrap();
        for t in [2.0, 8.0] {
            let b = blowup_rescale(&l, &[1.0, 1.0], t).unwrap();
            let f = symmetric_difference(&b, &cone, 1.0, 1.0 / 64.0).unwrap();
            assert!(f < 1e-12, "{t} {f}");
        }
        let b = blowup_rescale(&l, &[1.0, 1.0], 0.5).unwrap();
        assert!(symmetric_difference(&b, &cone, 1.0, 1.0 / 64.0).unwrap() > 0.0);
    }

    #[test]
    fn curvature_setup_validation() {
        let u0 = reference_potential(4.0, 4.0, 0.25).unwrap();
        assert!(CurvatureSetup::new(vec![vec![0.6]], 0.05, u0.clone()).is_err());
        assert!(CurvatureSetup::new(vec![vec![-0.5]], 0.05, u0.clone()).is_ok());
        assert!(CurvatureSetup::new(vec![vec![0.1]], 0.2, u0.clone()).is_err());
        let s = CurvatureSetup::new(vec![vec![0.25]], 0.1, u0).unwrap();
        let coarse = GridSpec::covering(&[-1.0, -1.0], &[1.0, 1.0], 0.05).unwrap();
        assert!(matches!(curvature_competitor(&s, &coarse), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn competitor_support_and_peak() {
        let u0 = reference_potential(4.0, 8.0, 0.125).unwrap();
        for k in [0.25, -0.5] {
            let s = CurvatureSetup::new(vec![vec![k]], 0.1, u0.clone()).unwrap();
            let g = GridSpec::covering(&[-1.0, -1.0], &[1.0, 1.0], 0.0125).unwrap();
            let c = curvature_competitor(&s, &g).unwrap();
            assert!(c.support_ok);
            assert!((c.peak - 1.0).abs() < 1e-12);
        }
        // K = 0: the competitor is admissible for the truncated problem
        let s = CurvatureSetup::new(vec![vec![0.0]], 0.1, u0.clone()).unwrap();
        let g = GridSpec::covering(&[-1.0, -1.0], &[1.0, 1.0], 0.0125).unwrap();
        let c = curvature_competitor(&s, &g).unwrap();
        assert!(c.scaled_energy >= c.reference_energy * (1.0 - 1e-8));
    }

    #[test]
    fn trace_identity_sign_and_coefficient() {
        assert_eq!(trace_coefficient(4.0), -0.375);
        let u0 = reference_potential(4.0, 4.0, 0.125).unwrap();
        let t = trace_identity_gap(&u0.w, 4.0).unwrap();
        assert!(t.rhs < 0.0 && t.lhs < 0.0, "{t:?}");
    }

    proptest! {
        #[test]
        fn phi_round_trip(k in -0.5f64..0.5, y1 in -3.0f64..3.0, y2 in -3.0f64..3.0) {
            let kk = vec![vec![k]];
            let x = phi_map(&kk, &[y1, y2]).unwrap();
            let back = phi_inverse(&kk, &x).unwrap();
            prop_assert!((back[0] - y1).abs() < 1e-14 && (back[1] - y2).abs() < 1e-14 * (1.0 + y2.abs() + y1 * y1));
        }

        #[test]
        fn phi_keeps_far_points_away(k in -0.5f64..=0.5, ang in 0.0f64..std::f64::consts::TAU, r in 1.0f64..10.0) {
            let y = [r * ang.cos(), r * ang.sin()];
            let x = phi_map(&[vec![k]], &y).unwrap();
            prop_assert!((x[0] * x[0] + x[1] * x[1]).sqrt() >= 0.5 - 1e-12);
        }
    }
}
