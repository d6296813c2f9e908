//! Discrete potentials: minimize the p-energy with `w(y) = 1`, `w = 0` off the mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::linalg::{pcg, tridiagonal_solve, Multigrid};
use crate::mesh::{check_exponent, energy_raw, gradient_raw, hessian_raw, rasterize, DiscreteFunction, EnergyReport, GridSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Stop when the projected gradient norm is below `tol * energy`.
    pub tol: f64,
    pub max_iter: usize,
    /// Regularization; `None` means `1e-8 / h`.
    pub eps_reg: Option<f64>,
    /// Minimum distance of the singular node to the boundary, in cells.
    pub min_cells: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-8, max_iter: 200, eps_reg: None, min_cells: 2.0 }
    }
}

#[derive(Clone, Debug)]
pub struct PotentialSolution {
    pub w: DiscreteFunction,
    /// Snapped singular point and its node index.
    pub y: Vec<f64>,
    pub y_index: usize,
    /// Energy at `eps_reg = 0`.
    pub energy: f64,
    pub report: EnergyReport,
    pub converged: bool,
    pub domain: Domain,
    /// Exact distance to the complement at every node.
    pub dist: Vec<f64>,
    pub p: f64,
}

impl PotentialSolution {
    /// `d(y)^(p-n) * energy`, the scale-free potential energy.
    pub fn scaled_energy(&self) -> f64 {
        let n = self.w.grid.dim() as f64;
        self.dist[self.y_index].powf(self.p - n) * self.energy
    }

    pub fn d_y(&self) -> f64 {
        self.dist[self.y_index]
    }
}

/// Volume of the unit ball in dimension 1, 2 or 3.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => 4.0 / 3.0 * std::f64::consts::PI,
    }
}

fn project(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Solves for the potential of `domain` at `y` on `grid`.
pub fn solve_potential(domain: &Domain, grid: &GridSpec, y: &[f64], p: f64, opts: &SolveOptions) -> Result<PotentialSolution> {
    check_exponent(p, grid.dim())?;
    let raster = rasterize(domain, grid)?;
    solve_on_raster(domain, grid, &raster.active, raster.dist, y, p, opts)
}

pub(crate) fn solve_on_raster(
    domain: &Domain,
    grid: &GridSpec,
    active: &[bool],
    dist: Vec<f64>,
    y: &[f64],
    p: f64,
    opts: &SolveOptions,
) -> Result<PotentialSolution> {
    check_exponent(p, grid.dim())?;
    if y.len() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: y.len() });
    }
    if domain.distance(y)? <= 0.0 {
        return Err(Error::OutsideDomain);
    }
    let h = grid.h;
    let k = grid.nearest_node(y);
    let min = opts.min_cells * h;
    if !active[k] || dist[k] < min * (1.0 - 1e-12) {
        return Err(Error::SnapRejected { d: dist[k], min });
    }
    let yk = grid.point(k);
    let dy = dist[k];
    let n = grid.len();
    let nd = grid.dim();

    let mut v = vec![0.0; n];
    let mut buf = [0.0; 2];
    for i in 0..n {
        if active[i] {
            grid.point_into(i, &mut buf);
            let r = buf[..nd].iter().zip(&yk).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v[i] = (1.0 - r / dy).max(0.0);
        }
    }
    v[k] = 1.0;
    // the energy decouples over components; the others keep their zero minimizer
    let label = components(grid, active);
    let own = label[k];
    let free: Vec<bool> = (0..n).map(|i| active[i] && i != k && label[i] == own).collect();

    let eps = opts.eps_reg.unwrap_or(1e-8 / h);
    let mut energy = energy_raw(grid, &v, p, eps);
    let mut iters = 0;
    let mut converged = false;
    let mut gnorm = f64::INFINITY;
    let mut trial = vec![0.0; n];
    while iters < opts.max_iter {
        let mut g = gradient_raw(grid, &v, p, eps);
        let mut work = free.clone();
        for i in 0..n {
            if !free[i] {
                g[i] = 0.0;
                continue;
            }
            let at_lo = v[i] <= 0.0 && g[i] > 0.0;
            let at_hi = v[i] >= 1.0 && g[i] < 0.0;
            if at_lo || at_hi {
                work[i] = false;
            }
        }
        let pg: Vec<f64> = (0..n).map(|i| if work[i] { g[i] } else { 0.0 }).collect();
        gnorm = pg.iter().map(|a| a * a).sum::<f64>().sqrt();
        if gnorm <= opts.tol * energy {
            converged = true;
            break;
        }
        // curvature weights bounded below on flat regions
        let gmax2 = max_slope2(grid, &v);
        let floor = 1e-10 * gmax2 + eps * eps;
        let mut st = hessian_raw(grid, &v, p, eps, floor);
        st.eliminate(&work);
        st.shift_diagonal(&work, 1e-12);
        let rhs: Vec<f64> = pg.iter().map(|a| -a).collect();
        let step = if nd == 1 {
            tridiagonal_solve(&st, &rhs)
        } else {
            let mg = Multigrid::new(st.clone(), work.clone());
            let rtol = (gnorm / energy).clamp(1e-10, 1e-2).sqrt().min(0.1);
            pcg(&st, &mg, &rhs, rtol, 200).0
        };
        let mut dd: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
        let step = if dd < 0.0 {
            step
        } else {
            dd = -gnorm * gnorm;
            rhs
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = if free[i] { project(v[i] + alpha * step[i]) } else { v[i] };
            }
            let e = energy_raw(grid, &trial, p, eps);
            if e <= energy + 1e-4 * alpha * dd {
                std::mem::swap(&mut v, &mut trial);
                energy = e;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iters += 1;
        if !accepted || -dd <= 1e-15 * energy {
            // no further decrease is representable
            converged = -dd <= 1e-12 * energy;
            break;
        }
    }
    let energy0 = energy_raw(grid, &v, p, 0.0);
    let w = DiscreteFunction { grid: grid.clone(), values: v, active: active.to_vec() };
    Ok(PotentialSolution {
        w,
        y: yk,
        y_index: k,
        energy: energy0,
        report: EnergyReport { energy, grad_norm: gnorm, eps_reg: eps, iterations: iters },
        converged,
        domain: domain.clone(),
        dist,
        p,
    })
}

fn max_slope2(grid: &GridSpec, v: &[f64]) -> f64 {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut m = 0.0f64;
    for j in 0..ny {
        for i in 0..nx {
            let k = i + nx * j;
            if i + 1 < nx {
                m = m.max((v[k + 1] - v[k]).powi(2));
            }
            if j + 1 < ny {
                m = m.max((v[k + nx] - v[k]).powi(2));
            }
        }
    }
    m / (grid.h * grid.h)
}

/// Connected components of the mask (8-neighbour in 2D).
pub fn components(grid: &GridSpec, active: &[bool]) -> Vec<usize> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut label = vec![usize::MAX; active.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..active.len() {
        if !active[s] || label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        stack.push(s);
        while let Some(c) = stack.pop() {
            let (i, j) = ((c % nx) as isize, (c / nx) as isize);
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= nx as isize || b >= ny as isize {
                        continue;
                    }
                    let q = a as usize + nx * b as usize;
                    if active[q] && label[q] == usize::MAX {
                        label[q] = next;
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    label
}

/// The potential vanishes on every component not containing `y` and is
/// positive on the component of `y`.
pub fn component_support_check(sol: &PotentialSolution) -> bool {
    let label = components(&sol.w.grid, &sol.w.active);
    let own = label[sol.y_index];
    sol.w.values.iter().zip(&label).zip(&sol.w.active).all(|((&v, &l), &a)| {
        if !a {
            true
        } else if l == own {
            v > 0.0
        } else {
            v.abs() < 1e-9
        }
    })
}
