//! Rayleigh quotients with the distance weight, the constant estimated
//! through potentials, boundary probes and the Morrey constant.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::mesh::{check_exponent, energy_raw, rasterize, DiscreteFunction, GridSpec, Raster};
use crate::potential::{solve_on_raster, PotentialSolution, SolveOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayleighReport {
    /// `M = max |u| / d^(1 - n/p)` over active nodes.
    pub sup_quotient: f64,
    pub argmax: Vec<f64>,
    pub argmax_index: usize,
    /// `||Du||_p^p` without regularization.
    pub energy: f64,
    pub rp: f64,
}

/// Rayleigh quotient of `u` on `domain`, distances evaluated exactly at the nodes.
pub fn rayleigh(u: &DiscreteFunction, domain: &Domain, p: f64) -> Result<RayleighReport> {
    u.validate()?;
    check_exponent(p, u.grid.dim())?;
    if domain.dim() != u.grid.dim() {
        return Err(Error::DimensionMismatch { expected: u.grid.dim(), got: domain.dim() });
    }
    let n = u.grid.dim();
    let dist = (0..u.grid.len())
        .into_par_iter()
        .map(|i| {
            if !u.active[i] {
                return Ok(0.0);
            }
            let mut buf = [0.0; 2];
            u.grid.point_into(i, &mut buf);
            domain.distance(&buf[..n])
        })
        .collect::<Result<Vec<f64>>>()?;
    rayleigh_with_dist(u, &dist, p)
}

pub(crate) fn rayleigh_with_dist(u: &DiscreteFunction, dist: &[f64], p: f64) -> Result<RayleighReport> {
    let n = u.grid.dim() as f64;
    let expo = 1.0 - n / p;
    let mut best = (0.0f64, usize::MAX);
    for (i, (&v, &d)) in u.values.iter().zip(dist).enumerate() {
        if v == 0.0 || !u.active[i] {
            continue;
        }
        if d <= 0.0 {
            return Err(Error::InvalidParameter("function does not vanish off the domain".into()));
        }
        let q = v.abs() / d.powf(expo);
        if q > best.0 {
            best = (q, i);
        }
    }
    if best.1 == usize::MAX {
        return Err(Error::ZeroFunction);
    }
    let energy = energy_raw(&u.grid, &u.values, p, 0.0);
    Ok(RayleighReport {
        sup_quotient: best.0,
        argmax: u.grid.point(best.1),
        argmax_index: best.1,
        energy,
        rp: energy / best.0.powf(p),
    })
}

/// `R_p(u) >= d(x0)^(p-n) E(w_x0) >= R_p(w_x0)` with `x0` the argmax of `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceChain {
    pub x0: Vec<f64>,
    pub rp_u: f64,
    pub scaled_energy: f64,
    pub rp_w: f64,
    /// `rp_u - rp_w`.
    pub gap: f64,
    pub holds: bool,
}

/// Relative slack allowed in the chain for the inexact potential solve.
pub const DOMINANCE_TOL: f64 = 1e-6;

pub fn potential_dominance_check(u: &DiscreteFunction, domain: &Domain, p: f64, opts: &SolveOptions) -> Result<DominanceChain> {
    let raster = rasterize(domain, &u.grid)?;
    let rep = rayleigh_with_dist(u, &raster.dist, p)?;
    let opts = SolveOptions { min_cells: 0.0, ..opts.clone() };
    let sol = solve_on_raster(domain, &u.grid, &raster.active, raster.dist, &rep.argmax, p, &opts)?;
    let scaled = sol.scaled_energy();
    let rw = rayleigh_with_dist(&sol.w, &sol.dist, p)?;
    let slack = DOMINANCE_TOL * rep.rp;
    Ok(DominanceChain {
        x0: rep.argmax,
        rp_u: rep.rp,
        scaled_energy: scaled,
        rp_w: rw.rp,
        gap: rep.rp - rw.rp,
        holds: rep.rp >= scaled - slack && scaled >= rw.rp - slack,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SearchMode {
    /// Candidates on the half-line `origin + t * direction`, `t >= 0`.
    Ray { origin: Vec<f64>, direction: Vec<f64> },
    /// Coarse lattice over the mask, simplex refinement in the plane.
    Lattice,
    /// Ray along the grid in 1D, lattice in 2D.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub mode: SearchMode,
    /// Coarse candidates along the ray, or per axis of the lattice.
    pub coarse: usize,
    /// Candidates need `d >= min_cells * h`.
    pub min_cells: f64,
    /// Cap on distinct potential solves.
    pub max_evals: usize,
    pub solve: SolveOptions,
    /// Reference values carried into the estimate.
    pub bracket: Option<[f64; 2]>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { mode: SearchMode::Auto, coarse: 9, min_cells: 2.0, max_evals: 60, solve: SolveOptions::default(), bracket: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub y: Vec<f64>,
    pub d: f64,
    /// `d(y)^(p-n) * E(w_y)`.
    pub scaled_energy: f64,
    pub rp: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub value: f64,
    pub minimizer: Vec<f64>,
    pub table: Vec<Candidate>,
    pub grid: GridSpec,
    pub p: f64,
    pub eps_reg: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl LambdaEstimate {
    pub fn best(&self) -> &Candidate {
        self.table.iter().find(|c| c.scaled_energy == self.value).expect("value comes from the table")
    }
}

struct Evaluator<'a> {
    domain: &'a Domain,
    grid: &'a GridSpec,
    raster: Raster,
    p: f64,
    opts: &'a SearchOptions,
    cache: HashMap<usize, Option<usize>>,
    table: Vec<Candidate>,
}

impl<'a> Evaluator<'a> {
    fn feasible(&self, k: usize) -> bool {
        self.raster.active[k] && self.raster.dist[k] >= self.opts.min_cells * self.grid.h * (1.0 - 1e-12)
    }

    fn solve(&self, k: usize) -> Result<Candidate> {
        let y = self.grid.point(k);
        let sol = solve_on_raster(self.domain, self.grid, &self.raster.active, self.raster.dist.clone(), &y, self.p, &self.opts.solve)?;
        candidate(&sol)
    }

    /// Solves every uncached node in `nodes` in parallel.
    fn batch(&mut self, nodes: &[usize]) -> Result<()> {
        let mut todo: Vec<usize> = Vec::new();
        for &k in nodes {
            if !self.cache.contains_key(&k) && !todo.contains(&k) {
                todo.push(k);
            }
        }
        let room = self.opts.max_evals.saturating_sub(self.table.len());
        todo.truncate(room);
        let results: Vec<(usize, Option<Result<Candidate>>)> = todo
            .par_iter()
            .map(|&k| if self.feasible(k) { (k, Some(self.solve(k))) } else { (k, None) })
            .collect();
        for (k, r) in results {
            match r {
                Some(c) => {
                    self.cache.insert(k, Some(self.table.len()));
                    self.table.push(c?);
                }
                None => {
                    self.cache.insert(k, None);
                }
            }
        }
        Ok(())
    }

    fn value_at(&mut self, x: &[f64]) -> Result<f64> {
        let inside = x.iter().enumerate().all(|(a, &c)| {
            let f = (c - self.grid.origin[a]) / self.grid.h;
            f > -0.5 && f < self.grid.dims[a] as f64 - 0.5
        });
        if !inside {
            return Ok(f64::INFINITY);
        }
        let k = self.grid.nearest_node(x);
        if !self.cache.contains_key(&k) {
            if self.table.len() >= self.opts.max_evals {
                return Ok(f64::INFINITY);
            }
            self.batch(&[k])?;
        }
        Ok(match self.cache[&k] {
            Some(i) => self.table[i].scaled_energy,
            None => f64::INFINITY,
        })
    }
}

fn candidate(sol: &PotentialSolution) -> Result<Candidate> {
    let r = rayleigh_with_dist(&sol.w, &sol.dist, sol.p)?;
    Ok(Candidate {
        y: sol.y.clone(),
        d: sol.d_y(),
        scaled_energy: sol.scaled_energy(),
        rp: r.rp,
        converged: sol.converged,
        iterations: sol.report.iterations,
    })
}

/// Derivative-free simplex descent (reflection, contraction, shrink) until
/// the simplex diameter drops below `stop`.
fn simplex_descent(start: &[f64], step: f64, stop: f64, max_rounds: usize, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<()> {
    let m = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m + 1);
    simplex.push((start.to_vec(), f(start)?));
    for a in 0..m {
        let mut x = start.to_vec();
        x[a] += step;
        let mut v = f(&x)?;
        if !v.is_finite() {
            x[a] = start[a] - step;
            v = f(&x)?;
        }
        simplex.push((x, v));
    }
    for _ in 0..max_rounds {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diam = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        if diam < stop {
            break;
        }
        let worst = simplex[m].clone();
        let centroid: Vec<f64> = (0..m).map(|a| simplex[..m].iter().map(|(x, _)| x[a]).sum::<f64>() / m as f64).collect();
        let refl: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| 2.0 * c - w).collect();
        let fr = f(&refl)?;
        if fr < simplex[m - 1].1 {
            simplex[m] = (refl, fr);
            continue;
        }
        let contr: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| 0.5 * (c + w)).collect();
        let fc = f(&contr)?;
        if fc < worst.1 {
            simplex[m] = (contr, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for s in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = s.0.iter().zip(&best).map(|(a, b)| 0.5 * (a + b)).collect();
            let v = f(&x)?;
            *s = (x, v);
        }
    }
    Ok(())
}

/// Minimizes `y -> d(y)^(p-n) E(w_y)` over candidate nodes. Its infimum equals that of
/// `R_p(w_y)`, and it avoids the sup over nodes hugging a curved boundary.
pub fn estimate_lambda(domain: &Domain, grid: &GridSpec, p: f64, opts: &SearchOptions) -> Result<LambdaEstimate> {
    check_exponent(p, grid.dim())?;
    if opts.coarse < 2 || opts.max_evals == 0 {
        return Err(Error::InvalidParameter("need at least 2 coarse candidates and one evaluation".into()));
    }
    let raster = rasterize(domain, grid)?;
    let mut ev = Evaluator { domain, grid, raster, p, opts, cache: HashMap::new(), table: Vec::new() };
    let n = grid.dim();
    let h = grid.h;
    let mode = match (&opts.mode, n) {
        (SearchMode::Auto, 1) => SearchMode::Ray { origin: grid.origin.clone(), direction: vec![1.0] },
        (SearchMode::Auto, _) => SearchMode::Lattice,
        (m, _) => m.clone(),
    };
    match mode {
        SearchMode::Ray { origin, direction } => {
            if origin.len() != n || direction.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: origin.len().min(direction.len()) });
            }
            let norm = direction.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::InvalidParameter("ray direction must be nonzero".into()));
            }
            let dir: Vec<f64> = direction.iter().map(|a| a / norm).collect();
            let at = |t: f64| -> Vec<f64> { origin.iter().zip(&dir).map(|(o, d)| o + t * d).collect() };
            // feasible nodes met along the ray, in order
            let diag = grid.dims.iter().map(|&d| ((d - 1) as f64 * h).powi(2)).sum::<f64>().sqrt();
            let steps = (diag / (0.5 * h)).ceil() as usize + 1;
            let mut along: Vec<(f64, usize)> = Vec::new();
            for s in 0..=steps {
                let t = s as f64 * 0.5 * h;
                let x = at(t);
                let fi = grid.frac_index(&x);
                if (0..n).any(|a| fi[a] < -0.5 || fi[a] > grid.dims[a] as f64 - 0.5) {
                    continue;
                }
                let k = grid.nearest_node(&x);
                if ev.feasible(k) && along.last().map_or(true, |l| l.1 != k) {
                    along.push((t, k));
                }
            }
            if along.is_empty() {
                return Err(Error::NoCandidates);
            }
            let m = opts.coarse.min(along.len());
            let picks: Vec<usize> = (0..m)
                .map(|i| {
                    let s = if m == 1 { 0.0 } else { 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / (m - 1) as f64).cos()) };
                    along[(s * (along.len() - 1) as f64).round() as usize].1
                })
                .collect();
            ev.batch(&picks)?;
            let (bt, spacing) = best_param(&ev, &along);
            simplex_descent(&[bt], spacing.max(h), h, 200, |x| ev.value_at(&at(x[0])))?;
        }
        SearchMode::Lattice => {
            let feas: Vec<usize> = (0..grid.len()).filter(|&k| ev.feasible(k)).collect();
            if feas.is_empty() {
                return Err(Error::NoCandidates);
            }
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for &k in &feas {
                let x = grid.point(k);
                for a in 0..n {
                    lo[a] = lo[a].min(x[a]);
                    hi[a] = hi[a].max(x[a]);
                }
            }
            let m = opts.coarse;
            let mut picks = Vec::new();
            let mut idx = [0usize; 2];
            let total = m.pow(n as u32);
            for c in 0..total {
                idx[0] = c % m;
                idx[1] = c / m;
                let x: Vec<f64> = (0..n).map(|a| lo[a] + (hi[a] - lo[a]) * (idx[a] as f64 + 0.5) / m as f64).collect();
                let k = grid.nearest_node(&x);
                if ev.feasible(k) {
                    picks.push(k);
                }
            }
            if picks.is_empty() {
                let stride = (feas.len() / total).max(1);
                picks = feas.iter().step_by(stride).copied().collect();
            }
            ev.batch(&picks)?;
            let best = ev.table.iter().min_by(|a, b| a.scaled_energy.total_cmp(&b.scaled_energy)).map(|c| c.y.clone());
            if let Some(start) = best {
                let spacing = (0..n).map(|a| (hi[a] - lo[a]) / m as f64).fold(0.0f64, f64::max);
                simplex_descent(&start, (0.5 * spacing).max(h), h, 200, |x| ev.value_at(x))?;
            }
        }
        SearchMode::Auto => unreachable!(),
    }
    let table = ev.table;
    let Some(best) = table.iter().min_by(|a, b| a.scaled_energy.total_cmp(&b.scaled_energy)) else {
        return Err(Error::NoCandidates);
    };
    Ok(LambdaEstimate {
        value: best.scaled_energy,
        minimizer: best.y.clone(),
        grid: grid.clone(),
        p,
        eps_reg: opts.solve.eps_reg.unwrap_or(1e-8 / h),
        lower: opts.bracket.map(|b| b[0]),
        upper: opts.bracket.map(|b| b[1]),
        table,
    })
}

/// Ray parameter of the best evaluated node and the local spacing of the coarse picks.
fn best_param(ev: &Evaluator, along: &[(f64, usize)]) -> (f64, f64) {
    let mut evaluated: Vec<(f64, f64)> = along
        .iter()
        .filter_map(|&(t, k)| match ev.cache.get(&k) {
            Some(Some(i)) => Some((t, ev.table[*i].scaled_energy)),
            _ => None,
        })
        .collect();
    evaluated.dedup_by(|a, b| a.0 == b.0);
    let Some(bi) = (0..evaluated.len()).min_by(|&a, &b| evaluated[a].1.total_cmp(&evaluated[b].1)) else {
        return (along[0].0, ev.grid.h);
    };
    let t = evaluated[bi].0;
    let mut gap = f64::INFINITY;
    if bi > 0 {
        gap = gap.min(t - evaluated[bi - 1].0);
    }
    if bi + 1 < evaluated.len() {
        gap = gap.min(evaluated[bi + 1].0 - t);
    }
    (t, if gap.is_finite() { 0.5 * gap } else { ev.grid.h })
}

/// Box and decreasing spacings for per-point grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLadder {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub spacings: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub x: Vec<f64>,
    pub d: f64,
    pub h: f64,
    /// `d^(p-n) * ||Dw_x||_p^p`.
    pub value: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProfile {
    pub points: Vec<ProfilePoint>,
    /// Median of the last three values.
    pub tail: f64,
}

/// Probe cells per unit distance to the boundary.
pub const PROFILE_CELLS: f64 = 8.0;

pub fn boundary_profile(domain: &Domain, path: &[Vec<f64>], ladder: &GridLadder, p: f64, opts: &SolveOptions) -> Result<BoundaryProfile> {
    if path.is_empty() {
        return Err(Error::InvalidParameter("empty path".into()));
    }
    let n = domain.dim();
    check_exponent(p, n)?;
    let mut ds = Vec::with_capacity(path.len());
    for x in path {
        let d = domain.distance(x)?;
        if d <= 0.0 {
            return Err(Error::OutsideDomain);
        }
        ds.push(d);
    }
    let norms: Vec<f64> = path.iter().map(|x| x.iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    let toward_boundary = ds.windows(2).all(|w| w[1] <= w[0]);
    let outward = norms.windows(2).all(|w| w[1] >= w[0]);
    if !(toward_boundary || outward) {
        return Err(Error::InvalidParameter("path must approach the boundary or infinity monotonically".into()));
    }
    let mut plan = Vec::with_capacity(path.len());
    for (x, &d) in path.iter().zip(&ds) {
        let Some(h) = ladder.spacings.iter().copied().filter(|&h| h <= d / PROFILE_CELLS * (1.0 + 1e-12)).reduce(f64::max) else {
            return Err(Error::LadderExhausted(format!("no spacing <= {} for the point at distance {d}", d / PROFILE_CELLS)));
        };
        plan.push((x.clone(), h));
    }
    let points = plan
        .par_iter()
        .map(|(x, h)| {
            let grid = GridSpec::covering(&ladder.lo, &ladder.hi, *h)?;
            let raster = rasterize(domain, &grid)?;
            let sol = solve_on_raster(domain, &grid, &raster.active, raster.dist, x, p, opts)?;
            Ok(ProfilePoint { x: sol.y.clone(), d: sol.d_y(), h: *h, value: sol.scaled_energy(), converged: sol.converged })
        })
        .collect::<Result<Vec<_>>>()?;
    let tail = tail_median(&points.iter().map(|q| q.value).collect::<Vec<_>>());
    Ok(BoundaryProfile { points, tail })
}

/// Median of the last three entries (fewer if the slice is shorter).
pub fn tail_median(v: &[f64]) -> f64 {
    let mut t: Vec<f64> = v[v.len().saturating_sub(3)..].to_vec();
    t.sort_by(f64::total_cmp);
    t[t.len() / 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorreyEstimate {
    pub n: usize,
    pub p: f64,
    pub radii: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Aitken extrapolation when the ladder converges geometrically, else the last value.
    pub lambda: f64,
    pub constant: f64,
    /// `false` when the ladder increases by more than the tolerance.
    pub monotone: bool,
}

/// Relative tolerance for ladder monotonicity.
pub const LADDER_TOL: f64 = 1e-3;

/// `C_{n,p} = lambda(B_R \ {0})^(-1/p)` over a ladder of truncation radii at spacing `h`.
pub fn morrey_constant(n: usize, p: f64, radii: &[f64], h: f64, opts: &SearchOptions) -> Result<MorreyEstimate> {
    if !(n == 1 || n == 2) {
        return Err(Error::InvalidParameter(format!("dimension {n} not supported")));
    }
    check_exponent(p, n)?;
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("radii must be increasing".into()));
    }
    let mut lambdas = Vec::with_capacity(radii.len());
    for &r in radii {
        let zero = vec![0.0; n];
        let dom = Domain::punctured(Domain::ball(zero.clone(), r)?, zero.clone())?;
        let lo = vec![-r; n];
        let hi = vec![r; n];
        let grid = GridSpec::covering(&lo, &hi, h)?;
        let mut dir = vec![0.0; n];
        dir[0] = 1.0;
        let o = SearchOptions { mode: SearchMode::Ray { origin: zero, direction: dir }, ..opts.clone() };
        lambdas.push(estimate_lambda(&dom, &grid, p, &o)?.value);
    }
    let monotone = lambdas.windows(2).all(|w| w[1] <= w[0] * (1.0 + LADDER_TOL));
    let lambda = aitken(&lambdas);
    Ok(MorreyEstimate { n, p, radii: radii.to_vec(), lambdas, lambda, constant: lambda.powf(-1.0 / p), monotone })
}

fn aitken(v: &[f64]) -> f64 {
    let k = v.len();
    let last = v[k - 1];
    if k < 3 {
        return last;
    }
    let (a, b, c) = (v[k - 3], v[k - 2], v[k - 1]);
    let (d1, d2) = (b - a, c - b);
    if d1 == 0.0 || d1 * d2 <= 0.0 || (d2 / d1).abs() >= 1.0 {
        return last;
    }
    c - d2 * d2 / (d2 - d1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::rasterize;

    fn interval(a: f64, b: f64) -> Domain {
        Domain::intersection(vec![Domain::halfspace(vec![1.0], a).unwrap(), Domain::halfspace(vec![-1.0], -b).unwrap()]).unwrap()
    }

    fn solve(dom: &Domain, g: &GridSpec, y: &[f64]) -> PotentialSolution {
        crate::potential::solve_potential(dom, g, y, 4.0, &SolveOptions::default()).unwrap()
    }

    #[test]
    fn rayleigh_examples() {
        let dom = interval(0.0, 3.0);
        let g = GridSpec::new(vec![0.0], 0.125, vec![25]).unwrap();
        let s = solve(&dom, &g, &[1.0]);
        let r = rayleigh(&s.w, &dom, 4.0).unwrap();
        assert!((r.rp - 1.125).abs() < 1e-10);
        assert_eq!(r.argmax, vec![1.0]);

        let half = Domain::halfspace(vec![1.0], 0.0).unwrap();
        let g = GridSpec::new(vec![0.0], 0.25, vec![401]).unwrap();
        let s = solve(&half, &g, &[1.0]);
        let r = rayleigh(&s.w, &half, 4.0).unwrap();
        assert!((r.rp - 1.0).abs() < 1e-10, "{}", r.rp);

        let z = DiscreteFunction::zeros(g.clone(), vec![true; g.len()]);
        assert!(matches!(rayleigh(&z, &half, 4.0), Err(Error::ZeroFunction)));
    }

    #[test]
    fn rayleigh_rejects_support_outside() {
        let dom = interval(0.0, 1.0);
        let g = GridSpec::new(vec![-0.5], 0.25, vec![9]).unwrap();
        let u = DiscreteFunction::from_fn(g.clone(), vec![true; 9], |_| 1.0);
        assert!(matches!(rayleigh(&u, &dom, 4.0), Err(Error::InvalidParameter(_))));
    }

    fn disk_grid() -> (Domain, GridSpec) {
        let dom = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let g = GridSpec::covering(&[-1.0, -1.0], &[1.0, 1.0], 1.0 / 16.0).unwrap();
        (dom, g)
    }

    #[test]
    fn dominance_chain_examples() {
        let (dom, g) = disk_grid();
        let s = solve(&dom, &g, &[0.25, 0.0]);
        let c = potential_dominance_check(&s.w, &dom, 4.0, &SolveOptions::default()).unwrap();
        assert!(c.holds);
        assert!((c.rp_u - c.scaled_energy).abs() < 1e-6 * c.rp_u, "{c:?}");
        assert!((c.scaled_energy - c.rp_w).abs() < 1e-6 * c.rp_u, "{c:?}");

        let c2 = potential_dominance_check(&s.w.scaled(2.0), &dom, 4.0, &SolveOptions::default()).unwrap();
        assert!((c2.rp_u - c.rp_u).abs() < 1e-12 * c.rp_u);
        assert!((c2.rp_w - c.rp_w).abs() < 1e-12 * c.rp_w);

        let r = rasterize(&dom, &g).unwrap();
        let tent = DiscreteFunction::from_fn(g.clone(), r.active.clone(), |x| 1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt());
        let c = potential_dominance_check(&tent, &dom, 4.0, &SolveOptions::default()).unwrap();
        assert!(c.holds);
        assert!(c.gap > 0.0 && c.rp_u > c.scaled_energy * (1.0 + 1e-3), "{c:?}");
    }

    #[test]
    fn one_dimensional_lambda_approaches_one() {
        let dom = interval(0.0, 1.0);
        let g = GridSpec::new(vec![0.0], 1.0 / 64.0, vec![65]).unwrap();
        let est = estimate_lambda(&dom, &g, 4.0, &SearchOptions::default()).unwrap();
        let y = est.minimizer[0].min(1.0 - est.minimizer[0]);
        assert!((y - 2.0 / 64.0).abs() < 1e-12, "{:?}", est.minimizer);
        let exact = 1.0 + (y / (1.0 - y)).powi(3);
        assert!((est.value - exact).abs() < 1e-10);
        assert_eq!(est.value, est.table.iter().map(|c| c.scaled_energy).fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn thin_domain_has_no_candidates() {
        let dom = interval(0.0, 0.3);
        let g = GridSpec::new(vec![0.0], 0.1, vec![4]).unwrap();
        assert!(matches!(estimate_lambda(&dom, &g, 4.0, &SearchOptions::default()), Err(Error::NoCandidates)));
    }

    #[test]
    fn lattice_search_on_disk_goes_to_the_boundary() {
        let (dom, g) = disk_grid();
        let est = estimate_lambda(&dom, &g, 4.0, &SearchOptions { coarse: 5, ..Default::default() }).unwrap();
        let best = est.best();
        // convex: the infimum is approached at the boundary
        assert!(best.d <= 0.25, "{best:?}");
        assert!(est.table.iter().all(|c| c.d >= 2.0 / 16.0 - 1e-12));
    }

    #[test]
    fn one_dimensional_profile_tends_to_one() {
        let dom = interval(0.0, 1.0);
        let path: Vec<Vec<f64>> = (2..=6).map(|k| vec![0.5f64.powi(k)]).collect();
        let ladder = GridLadder { lo: vec![0.0], hi: vec![1.0], spacings: (3..=10).map(|k| 0.5f64.powi(k)).collect() };
        let prof = boundary_profile(&dom, &path, &ladder, 4.0, &SolveOptions::default()).unwrap();
        for q in &prof.points {
            let y = q.x[0];
            assert!((q.value - (1.0 + (y / (1.0 - y)).powi(3))).abs() < 1e-9);
        }
        assert!(prof.tail > 1.0 && prof.tail < 1.001);
        let short = GridLadder { spacings: vec![0.125], ..ladder };
        assert!(matches!(boundary_profile(&dom, &path, &short, 4.0, &SolveOptions::default()), Err(Error::LadderExhausted(_))));
    }

    #[test]
    fn profile_rejects_wandering_path() {
        let dom = interval(0.0, 1.0);
        let path = vec![vec![0.5], vec![0.1], vec![0.3]];
        let ladder = GridLadder { lo: vec![0.0], hi: vec![1.0], spacings: vec![1.0 / 128.0] };
        assert!(boundary_profile(&dom, &path, &ladder, 4.0, &SolveOptions::default()).is_err());
    }

    #[test]
    fn morrey_constant_in_one_dimension_is_one() {
        let m = morrey_constant(1, 4.0, &[1.0, 2.0, 4.0], 1.0 / 64.0, &SearchOptions::default()).unwrap();
        assert!(m.monotone);
        assert!((m.constant - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn aitken_on_geometric_sequence() {
        let v = [1.0 + 1.0, 1.0 + 0.5, 1.0 + 0.25];
        assert!((aitken(&v) - 1.0).abs() < 1e-14);
        assert_eq!(aitken(&[3.0, 2.0, 2.5]), 2.5);
    }

    #[test]
    fn tail_median_of_short_slices() {
        assert_eq!(tail_median(&[5.0]), 5.0);
        assert_eq!(tail_median(&[9.0, 1.0, 3.0, 2.0]), 2.0);
    }
}
