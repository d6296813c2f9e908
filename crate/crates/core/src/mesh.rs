//! Uniform grids, P1 p-energy, its derivatives, cutoffs and resampling.
//!
//! In 2D each cell is split along both diagonals and the two P1 energies
//! are averaged (four right triangles of area h^2/4), which keeps the
//! discrete energy invariant under the symmetries of the lattice.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, SimilarityTransform};
use crate::linalg::Stencil;

pub const DEFAULT_NODE_CAP: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec<f64>,
    pub h: f64,
    /// Node counts per axis; node index is `i1 + dims[0] * i2`.
    pub dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFunction {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub active: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub energy: f64,
    pub grad_norm: f64,
    pub eps_reg: f64,
    pub iterations: usize,
}

/// Mask and exact distances at every node.
#[derive(Clone, Debug)]
pub struct Raster {
    pub active: Vec<bool>,
    pub dist: Vec<f64>,
}

impl GridSpec {
    pub fn new(origin: Vec<f64>, h: f64, dims: Vec<usize>) -> Result<Self> {
        let g = GridSpec { origin, h, dims };
        g.validate(DEFAULT_NODE_CAP)?;
        Ok(g)
    }

    /// Smallest grid with spacing `h` anchored at `lo` that reaches `hi`.
    pub fn covering(lo: &[f64], hi: &[f64], h: f64) -> Result<Self> {
        let dims = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| ((b - a) / h - 1e-9).ceil().max(1.0) as usize + 1)
            .collect();
        GridSpec::new(lo.to_vec(), h, dims)
    }

    pub fn validate(&self, cap: usize) -> Result<()> {
        let n = self.dims.len();
        if !(n == 1 || n == 2) {
            return Err(Error::InvalidGrid(format!("only 1D and 2D grids are supported, got {n}")));
        }
        if self.origin.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.origin.len() });
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {}", self.h)));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidGrid("need at least 2 nodes per axis".into()));
        }
        let nodes = self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).unwrap_or(usize::MAX);
        if nodes > cap {
            return Err(Error::GridTooLarge { nodes, cap });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    pub fn ny(&self) -> usize {
        if self.dims.len() > 1 {
            self.dims[1]
        } else {
            1
        }
    }

    /// Multi-index of a node.
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.dims[0], idx / self.dims[0])
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.dims[0] * j
    }

    /// Coordinates of node `idx` written into `out[..n]`.
    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let (i, j) = self.ij(idx);
        out[0] = self.origin[0] + i as f64 * self.h;
        if self.dims.len() > 1 {
            out[1] = self.origin[1] + j as f64 * self.h;
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(idx, &mut p);
        p
    }

    /// Nearest node to `x` (clamped to the grid).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut ij = [0usize; 2];
        for (a, slot) in ij.iter_mut().enumerate().take(self.dim()) {
            let f = ((x[a] - self.origin[a]) / self.h).round();
            *slot = f.clamp(0.0, (self.dims[a] - 1) as f64) as usize;
        }
        self.index(ij[0], ij[1])
    }

    /// Fractional grid coordinates of `x`.
    pub fn frac_index(&self, x: &[f64]) -> [f64; 2] {
        let mut f = [0.0; 2];
        for a in 0..self.dim() {
            f[a] = (x[a] - self.origin[a]) / self.h;
        }
        f
    }
}

impl DiscreteFunction {
    pub fn zeros(grid: GridSpec, active: Vec<bool>) -> Self {
        let n = grid.len();
        DiscreteFunction { grid, values: vec![0.0; n], active }
    }

    /// Samples `f` at active nodes, 0 elsewhere.
    pub fn from_fn(grid: GridSpec, active: Vec<bool>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut u = DiscreteFunction::zeros(grid, active);
        let mut buf = [0.0; 2];
        let n = u.grid.dim();
        for i in 0..u.values.len() {
            if u.active[i] {
                u.grid.point_into(i, &mut buf);
                u.values[i] = f(&buf[..n]);
            }
        }
        u
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if self.values.len() != n || self.active.len() != n {
            return Err(Error::InvalidGrid("value or mask length differs from the grid".into()));
        }
        for (v, a) in self.values.iter().zip(&self.active) {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("non-finite node value".into()));
            }
            if !a && *v != 0.0 {
                return Err(Error::InvalidParameter("nonzero value at an inactive node".into()));
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        DiscreteFunction { values: self.values.iter().map(|v| c * v).collect(), ..self.clone() }
    }
}

/// Relative distance below which a node is taken to lie on the boundary.
pub const BOUNDARY_SNAP: f64 = 1e-9;

/// Mask `distance > 0` and the distance field.
pub fn rasterize(domain: &Domain, grid: &GridSpec) -> Result<Raster> {
    grid.validate(DEFAULT_NODE_CAP)?;
    if domain.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: domain.dim() });
    }
    let n = grid.dim();
    let dist = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut buf = [0.0; 2];
            grid.point_into(i, &mut buf);
            // nodes within round-off of the boundary count as boundary nodes
            domain.distance(&buf[..n]).map(|d| if d.abs() <= BOUNDARY_SNAP * grid.h { 0.0 } else { d })
        })
        .collect::<Result<Vec<f64>>>()?;
    let active: Vec<bool> = dist.iter().map(|&d| d > 0.0).collect();
    if !active.iter().any(|&a| a) {
        return Err(Error::EmptyMask);
    }
    Ok(Raster { active, dist })
}

/// Pairwise summation of `v`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let m = v.len() / 2;
        pairwise_sum(&v[..m]) + pairwise_sum(&v[m..])
    }
}

/// `s^(p/2)` with an integer fast path.
#[inline]
fn pow_half(s: f64, half_p: f64, int_half: Option<i32>) -> f64 {
    match int_half {
        Some(k) => s.powi(k),
        None => s.powf(half_p),
    }
}

#[derive(Clone, Copy)]
struct Exponent {
    p: f64,
    half: f64,
    int_half: Option<i32>,
    int_half_m1: Option<i32>,
}

impl Exponent {
    fn new(p: f64) -> Self {
        let half = p / 2.0;
        let int = if half.fract() == 0.0 && half.abs() < 64.0 { Some(half as i32) } else { None };
        Exponent { p, half, int_half: int, int_half_m1: int.map(|k| k - 1) }
    }

    #[inline]
    fn f(&self, s: f64) -> f64 {
        pow_half(s, self.half, self.int_half)
    }

    /// `p s^(p/2 - 1)`
    #[inline]
    fn df(&self, s: f64) -> f64 {
        self.p * pow_half(s, self.half - 1.0, self.int_half_m1)
    }
}

/// Gradient templates of the four triangles of a cell, in units of 1/h.
/// Corners: 0 = (i,j), 1 = (i+1,j), 2 = (i,j+1), 3 = (i+1,j+1).
const TRIANGLES: [[(usize, [f64; 2]); 3]; 4] = [
    [(0, [-1.0, 0.0]), (1, [1.0, -1.0]), (3, [0.0, 1.0])],
    [(0, [0.0, -1.0]), (2, [-1.0, 1.0]), (3, [1.0, 0.0])],
    [(0, [-1.0, -1.0]), (1, [1.0, 0.0]), (2, [0.0, 1.0])],
    [(1, [0.0, -1.0]), (2, [-1.0, 0.0]), (3, [1.0, 1.0])],
];

#[inline]
fn cell_corners(v: &[f64], nx: usize, i: usize, j: usize) -> [f64; 4] {
    let k = i + nx * j;
    [v[k], v[k + 1], v[k + nx], v[k + nx + 1]]
}

#[inline]
fn tri_grad(c: &[f64; 4], t: usize, h: f64) -> [f64; 2] {
    let mut g = [0.0; 2];
    for &(k, b) in &TRIANGLES[t] {
        g[0] += b[0] * c[k];
        g[1] += b[1] * c[k];
    }
    [g[0] / h, g[1] / h]
}

pub(crate) fn check_exponent(p: f64, n: usize) -> Result<()> {
    if !(p > n as f64) || !p.is_finite() {
        return Err(Error::ExponentTooSmall { p, n });
    }
    Ok(())
}

/// Regularized energy of raw node values on `grid`.
pub fn energy_raw(grid: &GridSpec, v: &[f64], p: f64, eps: f64) -> f64 {
    let ex = Exponent::new(p);
    let h = grid.h;
    let e2 = eps * eps;
    if grid.dim() == 1 {
        let terms: Vec<f64> = v.windows(2).map(|w| h * ex.f(((w[1] - w[0]) / h).powi(2) + e2)).collect();
        return pairwise_sum(&terms);
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let vol = h * h / 4.0;
    let rows: Vec<f64> = (0..ny - 1)
        .into_par_iter()
        .map(|j| {
            let mut row = Vec::with_capacity(nx - 1);
            for i in 0..nx - 1 {
                let c = cell_corners(v, nx, i, j);
                let mut s = 0.0;
                for t in 0..4 {
                    let g = tri_grad(&c, t, h);
                    s += ex.f(g[0] * g[0] + g[1] * g[1] + e2);
                }
                row.push(vol * s);
            }
            pairwise_sum(&row)
        })
        .collect();
    pairwise_sum(&rows)
}

/// Exact differential of [`energy_raw`] at every node (no masking).
pub fn gradient_raw(grid: &GridSpec, v: &[f64], p: f64, eps: f64) -> Vec<f64> {
    let ex = Exponent::new(p);
    let h = grid.h;
    let e2 = eps * eps;
    let mut out = vec![0.0; v.len()];
    if grid.dim() == 1 {
        for i in 0..v.len() - 1 {
            let g = (v[i + 1] - v[i]) / h;
            let q = ex.df(g * g + e2) * g;
            out[i] -= q;
            out[i + 1] += q;
        }
        return out;
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    // per-cell contributions to its four corners
    let cells: Vec<[f64; 4]> = (0..(nx - 1) * (ny - 1))
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c % (nx - 1), c / (nx - 1));
            let cv = cell_corners(v, nx, i, j);
            let mut acc = [0.0; 4];
            for (t, tri) in TRIANGLES.iter().enumerate() {
                let g = tri_grad(&cv, t, h);
                let w = ex.df(g[0] * g[0] + g[1] * g[1] + e2) / 4.0;
                // vol * df * g . b / h, vol = h^2 / 4
                for &(k, b) in tri {
                    acc[k] += w * h * (g[0] * b[0] + g[1] * b[1]);
                }
            }
            acc
        })
        .collect();
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let (i, j) = (idx % nx, idx / nx);
        let cw = nx - 1;
        let mut s = 0.0;
        if i < nx - 1 && j < ny - 1 {
            s += cells[i + cw * j][0];
        }
        if i > 0 && j < ny - 1 {
            s += cells[i - 1 + cw * j][1];
        }
        if i < nx - 1 && j > 0 {
            s += cells[i + cw * (j - 1)][2];
        }
        if i > 0 && j > 0 {
            s += cells[i - 1 + cw * (j - 1)][3];
        }
        *o = s;
    });
    out
}

/// Hessian of [`energy_raw`] as a 9-point (3-point in 1D) stencil.
/// `floor` bounds the squared gradient from below in the curvature weights.
pub fn hessian_raw(grid: &GridSpec, v: &[f64], p: f64, eps: f64, floor: f64) -> Stencil {
    let ex = Exponent::new(p);
    let h = grid.h;
    let e2 = eps * eps;
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut st = Stencil::zeros(nx, ny);
    if grid.dim() == 1 {
        for i in 0..nx - 1 {
            let g = (v[i + 1] - v[i]) / h;
            let s = (g * g + e2).max(floor);
            let k = (ex.df(s) + ex.p * (ex.p - 2.0) * pow_half(s, ex.half - 2.0, ex.int_half.map(|k| k - 2)) * g * g) / h;
            st.a[i][4] += k;
            st.a[i + 1][4] += k;
            st.a[i][5] -= k;
            st.a[i + 1][3] -= k;
        }
        return st;
    }
    // local 4x4 matrices, upper triangle row-major: 00 01 02 03 11 12 13 22 23 33
    let cells: Vec<[f64; 10]> = (0..(nx - 1) * (ny - 1))
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c % (nx - 1), c / (nx - 1));
            let cv = cell_corners(v, nx, i, j);
            let mut m = [[0.0; 4]; 4];
            for (t, tri) in TRIANGLES.iter().enumerate() {
                let g = tri_grad(&cv, t, h);
                let s = (g[0] * g[0] + g[1] * g[1] + e2).max(floor);
                let alpha = ex.df(s);
                let beta = ex.p * (ex.p - 2.0) * pow_half(s, ex.half - 2.0, ex.int_half.map(|k| k - 2));
                // vol / h^2 = 1/4
                for &(k, bk) in tri {
                    let gk = g[0] * bk[0] + g[1] * bk[1];
                    for &(l, bl) in tri {
                        let gl = g[0] * bl[0] + g[1] * bl[1];
                        m[k][l] += 0.25 * (alpha * (bk[0] * bl[0] + bk[1] * bl[1]) + beta * gk * gl);
                    }
                }
            }
            [m[0][0], m[0][1], m[0][2], m[0][3], m[1][1], m[1][2], m[1][3], m[2][2], m[2][3], m[3][3]]
        })
        .collect();
    let cw = nx - 1;
    st.a.par_iter_mut().enumerate().for_each(|(idx, row)| {
        let (i, j) = (idx % nx, idx / nx);
        // stencil slot of offset (di, dj) is (dj + 1) * 3 + (di + 1)
        if i < nx - 1 && j < ny - 1 {
            let m = &cells[i + cw * j];
            row[4] += m[0];
            row[5] += m[1];
            row[7] += m[2];
            row[8] += m[3];
        }
        if i > 0 && j < ny - 1 {
            let m = &cells[i - 1 + cw * j];
            row[4] += m[4];
            row[3] += m[1];
            row[6] += m[5];
            row[7] += m[6];
        }
        if i < nx - 1 && j > 0 {
            let m = &cells[i + cw * (j - 1)];
            row[4] += m[7];
            row[1] += m[2];
            row[2] += m[5];
            row[5] += m[8];
        }
        if i > 0 && j > 0 {
            let m = &cells[i - 1 + cw * (j - 1)];
            row[4] += m[9];
            row[0] += m[3];
            row[1] += m[6];
            row[3] += m[8];
        }
    });
    st
}

/// `sum over simplices of vol (|grad u|^2 + eps^2)^(p/2)`.
pub fn p_energy(u: &DiscreteFunction, p: f64, eps: f64) -> Result<f64> {
    check_exponent(p, u.grid.dim())?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps_reg must be nonnegative, got {eps}")));
    }
    Ok(energy_raw(&u.grid, &u.values, p, eps))
}

/// Differential of [`p_energy`], zero at inactive nodes.
pub fn p_energy_gradient(u: &DiscreteFunction, p: f64, eps: f64) -> Result<Vec<f64>> {
    check_exponent(p, u.grid.dim())?;
    let mut g = gradient_raw(&u.grid, &u.values, p, eps);
    for (gi, a) in g.iter_mut().zip(&u.active) {
        if !a {
            *gi = 0.0;
        }
    }
    Ok(g)
}

/// Quintic smoothstep ramp: 1 on `[0, 1/2]`, 0 on `[1, inf)`.
pub fn eta(t: f64) -> f64 {
    if t <= 0.5 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let s = 2.0 * (t - 0.5);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Multiplies `u` by `(1 - eta(d/delta)) eta(|x|/r)`.
pub fn cutoff(u: &DiscreteFunction, domain: &Domain, delta: f64, r: f64) -> Result<DiscreteFunction> {
    if !(delta > 0.0 && r > 0.0) {
        return Err(Error::InvalidParameter("cutoff needs delta > 0 and r > 0".into()));
    }
    let n = u.grid.dim();
    let mut out = u.clone();
    let mut buf = [0.0; 2];
    for i in 0..out.values.len() {
        if out.values[i] == 0.0 {
            continue;
        }
        u.grid.point_into(i, &mut buf);
        let x = &buf[..n];
        let d = domain.distance(x)?;
        let rad = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        out.values[i] *= (1.0 - eta(d / delta)) * eta(rad / r);
    }
    Ok(out)
}

const SNAP: f64 = 1e-9;

/// `v(z) = u(T^{-1} z)` by multilinear interpolation onto `target`.
pub fn resample(u: &DiscreteFunction, t: &SimilarityTransform, target: &GridSpec) -> Result<DiscreteFunction> {
    target.validate(DEFAULT_NODE_CAP)?;
    let n = u.grid.dim();
    if t.dim() != n || target.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: t.dim().max(target.dim()) });
    }
    let mut out = DiscreteFunction::zeros(target.clone(), vec![false; target.len()]);
    let mut z = [0.0; 2];
    let mut x = [0.0; 2];
    for idx in 0..target.len() {
        target.point_into(idx, &mut z);
        t.apply_inverse_into(&z[..n], &mut x);
        if let Some((val, act)) = interpolate(u, &x[..n]) {
            out.values[idx] = if act { val } else { 0.0 };
            out.active[idx] = act;
        }
    }
    Ok(out)
}

/// Multilinear interpolation; `None` outside the grid. The flag tells
/// whether every node carrying weight is active.
pub fn interpolate(u: &DiscreteFunction, x: &[f64]) -> Option<(f64, bool)> {
    let g = &u.grid;
    let n = g.dim();
    let f = g.frac_index(x);
    let mut base = [0usize; 2];
    let mut w = [0.0f64; 2];
    for a in 0..n {
        let mut fa = f[a];
        let r = fa.round();
        if (fa - r).abs() < SNAP {
            fa = r;
        }
        let max = (g.dims[a] - 1) as f64;
        if fa < 0.0 || fa > max {
            return None;
        }
        let b = fa.floor().min(max - 1.0).max(0.0);
        base[a] = b as usize;
        w[a] = fa - b;
    }
    let mut val = 0.0;
    let mut act = true;
    let corners = if n == 1 { 2 } else { 4 };
    for c in 0..corners {
        let (di, dj) = (c & 1, c >> 1);
        let wi = if di == 1 { w[0] } else { 1.0 - w[0] };
        let wj = if n == 1 { 1.0 } else if dj == 1 { w[1] } else { 1.0 - w[1] };
        let wt = wi * wj;
        if wt == 0.0 {
            continue;
        }
        let k = g.index(base[0] + di, if n == 1 { 0 } else { base[1] + dj });
        val += wt * u.values[k];
        act &= u.active[k];
    }
    Some((val, act))
}

const MAGIC: &[u8; 4] = b"HMLF";

/// Binary dump: magic, version, n, dims, h, origin, then values (LE f64).
pub fn write_field(path: &Path, u: &DiscreteFunction) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(u.grid.dim() as u32).to_le_bytes())?;
    for d in &u.grid.dims {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    w.write_all(&u.grid.h.to_le_bytes())?;
    for o in &u.grid.origin {
        w.write_all(&o.to_le_bytes())?;
    }
    for v in &u.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(GridSpec, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || Error::InvalidGrid("malformed field file".into());
    let mut pos = 0usize;
    let mut take = |k: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + k).ok_or_else(bad)?;
        pos += k;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad());
    }
    let _version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if n == 0 || n > 3 {
        return Err(bad());
    }
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
    }
    let h = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut origin = Vec::with_capacity(n);
    for _ in 0..n {
        origin.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    let grid = GridSpec::new(origin, h, dims)?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    Ok((grid, values))
}

/// CSV with one row per node: coordinates, value, active flag.
pub fn write_csv<W: Write>(out: W, u: &DiscreteFunction) -> Result<()> {
    let mut w = BufWriter::new(out);
    let n = u.grid.dim();
    if n == 1 {
        writeln!(w, "x,value,active")?;
    } else {
        writeln!(w, "x,y,value,active")?;
    }
    let mut buf = [0.0; 2];
    for i in 0..u.values.len() {
        u.grid.point_into(i, &mut buf);
        for c in &buf[..n] {
            write!(w, "{c},")?;
        }
        writeln!(w, "{},{}", u.values[i], u.active[i] as u8)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_square_grid(m: usize) -> GridSpec {
        GridSpec::new(vec![0.0, 0.0], 1.0 / m as f64, vec![m + 1, m + 1]).unwrap()
    }

    fn random_field(grid: &GridSpec, rng: &mut ChaCha8Rng) -> DiscreteFunction {
        let active = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.ij(k);
                i > 0 && j > 0 && i + 1 < grid.nx() && j + 1 < grid.ny()
            })
            .collect();
        let mut u = DiscreteFunction::zeros(grid.clone(), active);
        for k in 0..u.values.len() {
            if u.active[k] {
                u.values[k] = rng.gen_range(-1.0..1.0);
            }
        }
        u
    }

    #[test]
    fn rasterize_examples() {
        let g = GridSpec::new(vec![-1.0, -1.0], 0.5, vec![5, 5]).unwrap();
        let b = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let r = rasterize(&b, &g).unwrap();
        assert!(r.active[g.index(2, 2)]);
        assert_eq!(r.active.iter().filter(|&&a| a).count(), 9);
        let ps = Domain::PuncturedSpace { puncture: vec![0.0, 0.0] };
        let r = rasterize(&ps, &g).unwrap();
        assert!(!r.active[g.index(2, 2)]);
        assert_eq!(r.active.iter().filter(|&&a| a).count(), 24);
        let h = 0.01;
        let g = GridSpec::covering(&[-1.0, -1.0], &[1.0, 1.0], h).unwrap();
        let a = Domain::annulus(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let count = rasterize(&a, &g).unwrap().active.iter().filter(|&&a| a).count() as f64;
        let area = PI * (1.0 - 0.25) / (h * h);
        assert!((count / area - 1.0).abs() < 0.02);
        let far = Domain::ball(vec![10.0, 10.0], 0.1).unwrap();
        assert!(matches!(rasterize(&far, &g), Err(Error::EmptyMask)));
    }

    #[test]
    fn energy_examples() {
        let g = GridSpec::new(vec![0.0], 1.0, vec![3]).unwrap();
        let hat = DiscreteFunction { grid: g.clone(), values: vec![0.0, 1.0, 0.0], active: vec![false, true, false] };
        assert!((p_energy(&hat, 4.0, 0.0).unwrap() - 2.0).abs() < 1e-15);
        // d/du(peak) = p [(1/(y-a))^(p-1) + (1/(b-y))^(p-1)]
        let grad = p_energy_gradient(&hat, 4.0, 0.0).unwrap();
        assert_eq!(grad, vec![0.0, 8.0, 0.0]);
        let z = DiscreteFunction::zeros(g, vec![false, true, false]);
        assert_eq!(p_energy(&z, 4.0, 0.0).unwrap(), 0.0);
        assert!(p_energy_gradient(&z, 4.0, 0.0).unwrap().iter().all(|&v| v == 0.0));
        let sq = unit_square_grid(16);
        let lin = DiscreteFunction::from_fn(sq.clone(), vec![true; sq.len()], |x| x[0]);
        assert!((p_energy(&lin, 4.0, 0.0).unwrap() - 1.0).abs() < 1e-13);
        assert!(matches!(p_energy(&lin, 2.0, 0.0), Err(Error::ExponentTooSmall { .. })));
    }

    #[test]
    fn asymmetric_hat_gradient() {
        // nodes 0,1,3 of (0,3): slopes 1 and -1/2
        let g = GridSpec::new(vec![0.0], 1.0, vec![4]).unwrap();
        let u = DiscreteFunction { grid: g, values: vec![0.0, 1.0, 0.5, 0.0], active: vec![false, true, true, false] };
        let grad = p_energy_gradient(&u, 4.0, 0.0).unwrap();
        // d/du1 of (u1)^4 + (u2-u1)^4 + (u2)^4 at (1, 1/2): 4 - 4(-1/2)^3 = 4.5
        assert!((grad[1] - 4.5).abs() < 1e-13);
        assert!((grad[2] - (4.0 * (-0.5f64).powi(3) + 4.0 * 0.125)).abs() < 1e-13);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = unit_square_grid(6);
        let (p, eps) = (4.0, 1e-3);
        for _ in 0..100 {
            let u = random_field(&g, &mut rng);
            let an = p_energy_gradient(&u, p, eps).unwrap();
            let scale = an.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..u.values.len() {
                if !u.active[k] {
                    continue;
                }
                let step = 1e-5;
                let mut up = u.clone();
                up.values[k] += step;
                let mut dn = u.clone();
                dn.values[k] -= step;
                let fd = (p_energy(&up, p, eps).unwrap() - p_energy(&dn, p, eps).unwrap()) / (2.0 * step);
                assert!((fd - an[k]).abs() <= 1e-6 * scale.max(an[k].abs()), "{fd} vs {}", an[k]);
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in [unit_square_grid(5), GridSpec::new(vec![0.0], 0.25, vec![9]).unwrap()] {
            let u = random_field(&g, &mut rng);
            let u = if g.dim() == 1 {
                let mut w = u.clone();
                for k in 1..8 {
                    w.values[k] = rng.gen_range(-1.0..1.0);
                }
                w
            } else {
                u
            };
            let (p, eps) = (3.5, 1e-2);
            let st = hessian_raw(&g, &u.values, p, eps, 0.0);
            let dir: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut hv = vec![0.0; g.len()];
            st.apply(&dir, &mut hv);
            let step = 1e-6;
            let plus: Vec<f64> = u.values.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let minus: Vec<f64> = u.values.iter().zip(&dir).map(|(a, b)| a - step * b).collect();
            let gp = gradient_raw(&g, &plus, p, eps);
            let gm = gradient_raw(&g, &minus, p, eps);
            let scale = hv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..g.len() {
                let fd = (gp[k] - gm[k]) / (2.0 * step);
                assert!((fd - hv[k]).abs() < 1e-6 * scale, "{k}: {fd} vs {}", hv[k]);
            }
        }
    }

    #[test]
    fn cutoff_examples() {
        let g = GridSpec::new(vec![0.0, 0.0], 0.125, vec![17, 9]).unwrap();
        let dom = Domain::halfspace(vec![0.0, 1.0], 0.0).unwrap();
        let u = DiscreteFunction::from_fn(g.clone(), rasterize(&dom, &g).unwrap().active, |x| 1.0 + x[0]);
        let (delta, r) = (0.5, 2.0);
        let c = cutoff(&u, &dom, delta, r).unwrap();
        // node at d = delta/4 = 0.125
        let k = g.index(2, 1);
        assert_eq!(c.values[k], 0.0);
        // d >= delta and |x| <= r/2
        let k = g.index(2, 4);
        assert_eq!(c.values[k], u.values[k]);
        let z = DiscreteFunction::zeros(g.clone(), u.active.clone());
        assert!(cutoff(&z, &dom, delta, r).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cutoff_error_shrinks() {
        let g = GridSpec::covering(&[-4.0, 0.0], &[4.0, 4.0], 1.0 / 16.0).unwrap();
        let dom = Domain::intersection(vec![
            Domain::halfspace(vec![0.0, 1.0], 0.0).unwrap(),
            Domain::ball(vec![0.0, 0.0], 4.0).unwrap(),
        ])
        .unwrap();
        let ras = rasterize(&dom, &g).unwrap();
        let u = DiscreteFunction::from_fn(g.clone(), ras.active.clone(), |x| {
            let d = dom.distance(x).unwrap();
            d.min(1.0) * (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp()
        });
        let p = 4.0;
        let errs: Vec<f64> = [(0.8, 1.0), (0.4, 2.0), (0.2, 3.5)]
            .iter()
            .map(|&(delta, r)| {
                let c = cutoff(&u, &dom, delta, r).unwrap();
                let diff = DiscreteFunction {
                    values: u.values.iter().zip(&c.values).map(|(a, b)| a - b).collect(),
                    ..u.clone()
                };
                p_energy(&diff, p, 0.0).unwrap()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn resample_identity_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GridSpec::new(vec![-1.0, -1.0], 0.125, vec![17, 17]).unwrap();
        let u = random_field(&g, &mut rng);
        let same = resample(&u, &SimilarityTransform::identity(2), &g).unwrap();
        assert_eq!(same.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), u.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let rot = resample(&u, &SimilarityTransform::rotation(PI / 2.0), &g).unwrap();
        assert_eq!(rot.active.iter().filter(|&&a| a).count(), u.active.iter().filter(|&&a| a).count());
        let (e0, e1) = (p_energy(&u, 4.0, 0.0).unwrap(), p_energy(&rot, 4.0, 0.0).unwrap());
        assert!((e0 - e1).abs() < 1e-12 * e0);
        // reflection x1 -> -x1
        let refl = SimilarityTransform::new(1.0, vec![vec![-1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let e2 = p_energy(&resample(&u, &refl, &g).unwrap(), 4.0, 0.0).unwrap();
        assert!((e0 - e2).abs() < 1e-12 * e0);
    }

    #[test]
    fn dyadic_dilation_scales_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GridSpec::new(vec![-1.0, -1.0], 0.125, vec![17, 17]).unwrap();
        let u = random_field(&g, &mut rng);
        let big = GridSpec::new(vec![-2.0, -2.0], 0.25, vec![17, 17]).unwrap();
        let v = resample(&u, &SimilarityTransform::dilation(2.0, 2), &big).unwrap();
        let p = 4.0;
        let (eu, ev) = (p_energy(&u, p, 0.0).unwrap(), p_energy(&v, p, 0.0).unwrap());
        assert!((ev - 2f64.powf(2.0 - p) * eu).abs() < 1e-13 * eu);
    }

    #[test]
    fn field_round_trip() {
        let dir = std::env::temp_dir().join(format!("hml-field-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let g = GridSpec::new(vec![-1.0, 0.5], 0.25, vec![5, 3]).unwrap();
        let u = DiscreteFunction::from_fn(g.clone(), vec![true; g.len()], |x| x[0] * x[1]);
        let path = dir.join("u.field");
        write_field(&path, &u).unwrap();
        let (g2, v2) = read_field(&path).unwrap();
        assert_eq!(g2, g);
        assert_eq!(v2, u.values);
        let mut csv = Vec::new();
        write_csv(&mut csv, &u).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x,y,value,active\n"));
        assert_eq!(text.lines().count(), 16);
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn energy_is_convex(seed in 0u64..10_000, t in 0.0f64..1.0, p in 2.1f64..6.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = unit_square_grid(5);
            let u = random_field(&g, &mut rng);
            let v = random_field(&g, &mut rng);
            let mix = DiscreteFunction {
                values: u.values.iter().zip(&v.values).map(|(a, b)| t * a + (1.0 - t) * b).collect(),
                ..u.clone()
            };
            let lhs = p_energy(&mix, p, 0.0).unwrap();
            let rhs = t * p_energy(&u, p, 0.0).unwrap() + (1.0 - t) * p_energy(&v, p, 0.0).unwrap();
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn clamping_never_raises_energy(seed in 0u64..10_000, p in 2.1f64..6.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = unit_square_grid(6);
            let mut u = random_field(&g, &mut rng);
            for v in &mut u.values { *v *= 2.0; }
            let clamped = DiscreteFunction { values: u.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(), ..u.clone() };
            prop_assert!(p_energy(&clamped, p, 0.0).unwrap() <= p_energy(&u, p, 0.0).unwrap() + 1e-15);
        }
    }
}
