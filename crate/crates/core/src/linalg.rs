//! Linear solves for the Newton systems: 9-point stencil operators,
//! a geometric multigrid preconditioner with Galerkin coarse levels,
//! preconditioned conjugate gradients, and a tridiagonal direct solve.

use rayon::prelude::*;

/// Symmetric operator on an `nx * ny` lattice; slot `(dj+1)*3 + (di+1)`
/// couples node `(i,j)` to `(i+di, j+dj)`.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub nx: usize,
    pub ny: usize,
    pub a: Vec<[f64; 9]>,
}

const OFFS: [(isize, isize); 9] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

impl Stencil {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Stencil { nx, ny, a: vec![[0.0; 9]; nx * ny] }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    #[inline]
    fn neighbor(&self, idx: usize, k: usize) -> Option<usize> {
        let (i, j) = ((idx % self.nx) as isize, (idx / self.nx) as isize);
        let (di, dj) = OFFS[k];
        let (ii, jj) = (i + di, j + dj);
        if ii < 0 || jj < 0 || ii >= self.nx as isize || jj >= self.ny as isize {
            None
        } else {
            Some(ii as usize + self.nx * jj as usize)
        }
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nx = self.nx;
        y.par_iter_mut().enumerate().for_each(|(idx, yi)| {
            let row = &self.a[idx];
            let (i, j) = (idx % nx, idx / nx);
            let mut s = row[4] * x[idx];
            if i > 0 {
                s += row[3] * x[idx - 1];
            }
            if i + 1 < nx {
                s += row[5] * x[idx + 1];
            }
            if j > 0 {
                let b = idx - nx;
                s += row[1] * x[b];
                if i > 0 {
                    s += row[0] * x[b - 1];
                }
                if i + 1 < nx {
                    s += row[2] * x[b + 1];
                }
            }
            if j + 1 < self.ny {
                let t = idx + nx;
                s += row[7] * x[t];
                if i > 0 {
                    s += row[6] * x[t - 1];
                }
                if i + 1 < nx {
                    s += row[8] * x[t + 1];
                }
            }
            *yi = s;
        });
    }

    /// Replaces rows and columns of fixed nodes by the identity.
    pub fn eliminate(&mut self, free: &[bool]) {
        for idx in 0..self.a.len() {
            if !free[idx] {
                self.a[idx] = [0.0; 9];
                self.a[idx][4] = 1.0;
                continue;
            }
            for k in 0..9 {
                if k == 4 {
                    continue;
                }
                if let Some(n) = self.neighbor(idx, k) {
                    if !free[n] {
                        self.a[idx][k] = 0.0;
                    }
                } else {
                    self.a[idx][k] = 0.0;
                }
            }
        }
    }

    /// Adds `shift * diag` to the diagonal of free rows.
    pub fn shift_diagonal(&mut self, free: &[bool], shift: f64) {
        for (row, &f) in self.a.iter_mut().zip(free) {
            if f {
                row[4] *= 1.0 + shift;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a.par_chunks(4096).zip(b.par_chunks(4096)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum()).collect();
    parts.iter().sum()
}

struct Level {
    st: Stencil,
    free: Vec<bool>,
}

enum Coarsest {
    Dense { map: Vec<usize>, chol: Vec<f64>, n: usize },
    Sweeps,
}

/// Geometric V(1,1) cycle with symmetric Gauss-Seidel and Galerkin coarse operators.
pub struct Multigrid {
    levels: Vec<Level>,
    coarsest: Coarsest,
}

fn parents(i: usize, nc: usize) -> [(usize, f64); 2] {
    // weight 0 marks an unused slot
    if i % 2 == 0 {
        [(i / 2, 1.0), (0, 0.0)]
    } else {
        let hi = (i + 1) / 2;
        if hi < nc {
            [((i - 1) / 2, 0.5), (hi, 0.5)]
        } else {
            [((i - 1) / 2, 0.5), (0, 0.0)]
        }
    }
}

fn coarsen(fine: &Level) -> Level {
    let (nx, ny) = (fine.st.nx, fine.st.ny);
    let (cx, cy) = (nx / 2 + 1, ny / 2 + 1);
    let mut c = Stencil::zeros(cx, cy);
    for f in 0..nx * ny {
        if !fine.free[f] {
            continue;
        }
        let (i, j) = (f % nx, f / nx);
        let (pi, pj) = (parents(i, cx), parents(j, cy));
        let row = &fine.st.a[f];
        for k in 0..9 {
            let val = row[k];
            if val == 0.0 {
                continue;
            }
            let Some(g) = fine.st.neighbor(f, k) else { continue };
            if !fine.free[g] {
                continue;
            }
            let (gi, gj) = (g % nx, g / nx);
            let (qi, qj) = (parents(gi, cx), parents(gj, cy));
            for &(ci, wi) in &pi {
                if wi == 0.0 {
                    continue;
                }
                for &(cj, wj) in &pj {
                    if wj == 0.0 {
                        continue;
                    }
                    let wc = wi * wj * val;
                    for &(di, vi) in &qi {
                        if vi == 0.0 {
                            continue;
                        }
                        for &(dj, vj) in &qj {
                            if vj == 0.0 {
                                continue;
                            }
                            let off_i = di as isize - ci as isize;
                            let off_j = dj as isize - cj as isize;
                            let slot = ((off_j + 1) * 3 + off_i + 1) as usize;
                            c.a[ci + cx * cj][slot] += wc * vi * vj;
                        }
                    }
                }
            }
        }
    }
    let maxd = c.a.iter().fold(0.0f64, |m, r| m.max(r[4]));
    let free: Vec<bool> = c.a.iter().map(|r| r[4] > 1e-14 * maxd).collect();
    c.eliminate(&free);
    Level { st: c, free }
}

fn cholesky(m: &mut [f64], n: usize) {
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= m[j * n + k] * m[j * n + k];
        }
        let d = if d > 0.0 { d.sqrt() } else { 1e-300f64.sqrt() };
        m[j * n + j] = d;
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / d;
        }
    }
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

const DENSE_MAX: usize = 3000;

impl Multigrid {
    /// `st` must already have fixed rows eliminated.
    pub fn new(st: Stencil, free: Vec<bool>) -> Self {
        let mut levels = vec![Level { st, free }];
        loop {
            let last = levels.last().unwrap();
            let (nx, ny) = (last.st.nx, last.st.ny);
            let nfree = last.free.iter().filter(|&&f| f).count();
            if nx.min(ny) <= 3 || nfree <= 64 {
                break;
            }
            let next = coarsen(last);
            levels.push(next);
        }
        let last = levels.last().unwrap();
        let map: Vec<usize> = (0..last.free.len()).filter(|&i| last.free[i]).collect();
        let coarsest = if map.len() <= DENSE_MAX {
            let n = map.len();
            let mut pos = vec![usize::MAX; last.free.len()];
            for (k, &i) in map.iter().enumerate() {
                pos[i] = k;
            }
            let mut m = vec![0.0; n * n];
            for (r, &i) in map.iter().enumerate() {
                for k in 0..9 {
                    if let Some(g) = last.st.neighbor(i, k) {
                        if pos[g] != usize::MAX {
                            m[r * n + pos[g]] += last.st.a[i][k];
                        }
                    }
                }
            }
            cholesky(&mut m, n);
            Coarsest::Dense { map, chol: m, n }
        } else {
            Coarsest::Sweeps
        };
        Multigrid { levels, coarsest }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn smooth(level: &Level, b: &[f64], x: &mut [f64], forward: bool) {
        let st = &level.st;
        let n = st.len();
        let mut relax = |idx: usize| {
            if !level.free[idx] {
                return;
            }
            let row = &st.a[idx];
            let mut s = b[idx];
            for k in 0..9 {
                if k == 4 || row[k] == 0.0 {
                    continue;
                }
                if let Some(g) = st.neighbor(idx, k) {
                    s -= row[k] * x[g];
                }
            }
            x[idx] = s / row[4];
        };
        if forward {
            (0..n).for_each(&mut relax);
        } else {
            (0..n).rev().for_each(&mut relax);
        }
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let level = &self.levels[l];
        if l + 1 == self.levels.len() {
            match &self.coarsest {
                Coarsest::Dense { map, chol, n } => {
                    let mut rhs: Vec<f64> = map.iter().map(|&i| b[i]).collect();
                    cholesky_solve(chol, *n, &mut rhs);
                    x.iter_mut().for_each(|v| *v = 0.0);
                    for (k, &i) in map.iter().enumerate() {
                        x[i] = rhs[k];
                    }
                }
                Coarsest::Sweeps => {
                    x.iter_mut().for_each(|v| *v = 0.0);
                    for _ in 0..50 {
                        Self::smooth(level, b, x, true);
                        Self::smooth(level, b, x, false);
                    }
                }
            }
            return;
        }
        x.iter_mut().for_each(|v| *v = 0.0);
        Self::smooth(level, b, x, true);
        let mut r = vec![0.0; b.len()];
        level.st.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let coarse = &self.levels[l + 1];
        let (nx, ny) = (level.st.nx, level.st.ny);
        let (cx, cy) = (coarse.st.nx, coarse.st.ny);
        let mut rc = vec![0.0; cx * cy];
        for f in 0..nx * ny {
            if !level.free[f] || r[f] == 0.0 {
                continue;
            }
            let (i, j) = (f % nx, f / nx);
            for &(ci, wi) in &parents(i, cx) {
                for &(cj, wj) in &parents(j, cy) {
                    if wi * wj != 0.0 {
                        rc[ci + cx * cj] += wi * wj * r[f];
                    }
                }
            }
        }
        for (k, v) in rc.iter_mut().enumerate() {
            if !coarse.free[k] {
                *v = 0.0;
            }
        }
        let mut ec = vec![0.0; cx * cy];
        self.cycle(l + 1, &rc, &mut ec);
        for f in 0..nx * ny {
            if !level.free[f] {
                continue;
            }
            let (i, j) = (f % nx, f / nx);
            let mut s = 0.0;
            for &(ci, wi) in &parents(i, cx) {
                for &(cj, wj) in &parents(j, cy) {
                    if wi * wj != 0.0 {
                        s += wi * wj * ec[ci + cx * cj];
                    }
                }
            }
            x[f] += s;
        }
        Self::smooth(level, b, x, false);
    }

    /// One V-cycle from a zero initial guess: `x ~ A^{-1} b`.
    pub fn precondition(&self, b: &[f64], x: &mut [f64]) {
        self.cycle(0, b, x);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Preconditioned CG for `A x = b`, starting from zero.
pub fn pcg(st: &Stencil, mg: &Multigrid, b: &[f64], rtol: f64, max_iter: usize) -> (Vec<f64>, CgStats) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return (x, CgStats { iterations: 0, rel_residual: 0.0 });
    }
    let mut z = vec![0.0; n];
    mg.precondition(&r, &mut z);
    let mut pdir = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut it = 0;
    let mut rel = 1.0;
    while it < max_iter {
        st.apply(&pdir, &mut ap);
        let pap = dot(&pdir, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&pdir).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        it += 1;
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= rtol {
            break;
        }
        mg.precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        pdir.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    (x, CgStats { iterations: it, rel_residual: rel })
}

/// Direct solve of a 1D (tridiagonal) stencil system; fixed rows must be identity.
pub fn tridiagonal_solve(st: &Stencil, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut x = vec![0.0; n];
    for i in 0..n {
        let (lo, diag, up) = (st.a[i][3], st.a[i][4], st.a[i][5]);
        let m = if i > 0 { diag - lo * c[i - 1] } else { diag };
        c[i] = if i + 1 < n { up / m } else { 0.0 };
        d[i] = if i > 0 { (b[i] - lo * d[i - 1]) / m } else { b[i] / m };
    }
    for i in (0..n).rev() {
        x[i] = if i + 1 < n { d[i] - c[i] * x[i + 1] } else { d[i] };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weighted_laplacian(nx: usize, ny: usize, coef: impl Fn(usize, usize) -> f64) -> Stencil {
        // sum of w_e (e_i - e_j)(e_i - e_j)^T over lattice and diagonal edges
        let mut st = Stencil::zeros(nx, ny);
        for idx in 0..nx * ny {
            let (i, j) = (idx % nx, idx / nx);
            for k in 5..9 {
                if let Some(g) = st.neighbor(idx, k) {
                    let (gi, gj) = (g % nx, g / nx);
                    let diag = if k == 5 || k == 7 { 1.0 } else { 0.1 };
                    let w = diag * 0.5 * (coef(i, j) + coef(gi, gj));
                    st.a[idx][4] += w;
                    st.a[g][4] += w;
                    st.a[idx][k] -= w;
                    st.a[g][8 - k] -= w;
                }
            }
            if let Some(g) = st.neighbor(idx, 6) {
                let (gi, gj) = (g % nx, g / nx);
                let w = 0.1 * 0.5 * (coef(i, j) + coef(gi, gj));
                st.a[idx][4] += w;
                st.a[g][4] += w;
                st.a[idx][6] -= w;
                st.a[g][2] -= w;
            }
        }
        st
    }

    #[test]
    fn pcg_solves_variable_coefficient_problem() {
        let (nx, ny) = (65, 49);
        let mut st = weighted_laplacian(nx, ny, |i, j| 1.0 + 1e3 * ((i * j) % 7) as f64);
        let free: Vec<bool> = (0..nx * ny)
            .map(|k| {
                let (i, j) = (k % nx, k / nx);
                i > 0 && j > 0 && i + 1 < nx && j + 1 < ny && !(i == 30 && j == 20)
            })
            .collect();
        st.eliminate(&free);
        let b: Vec<f64> = (0..nx * ny).map(|k| if free[k] { ((k * 31) % 17) as f64 - 8.0 } else { 0.0 }).collect();
        let mg = Multigrid::new(st.clone(), free.clone());
        assert!(mg.depth() > 2);
        let (x, stats) = pcg(&st, &mg, &b, 1e-10, 200);
        assert!(stats.rel_residual <= 1e-10, "{stats:?}");
        assert!(stats.iterations < 60, "{stats:?}");
        let mut ax = vec![0.0; x.len()];
        st.apply(&x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-9 * bn);
        assert!(x.iter().zip(&free).all(|(v, f)| *f || *v == 0.0));
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let n = 7;
        let mut st = Stencil::zeros(n, 1);
        for i in 0..n {
            st.a[i][4] = 2.0 + i as f64;
            if i > 0 {
                st.a[i][3] = -1.0;
            }
            if i + 1 < n {
                st.a[i][5] = -1.0;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = tridiagonal_solve(&st, &b);
        let mut ax = vec![0.0; n];
        st.apply(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-12);
        }
    }
}
