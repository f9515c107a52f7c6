//! Adaptive moving meshes: the scheme in curvilinear coordinates with the bottom
//! carried as an extra state, discrete metrics satisfying the geometric
//! conservation laws, Winslow-type mesh redistribution and the coupled SSP-RK3
//! update of (J Û, J, x).
//!
//! Node data is stored node-major with width 3M + 1: (U, b).

use rayon::prelude::*;

use crate::dissipation::{moving_mesh_d_hat, moving_mesh_d_ring, rotation_angle, InterfaceMetrics, Rotation};
use crate::ecflux::{coefficients, ec_flux_z, mean};
use crate::energy::{check_gamma, energy, entropy_vars_ext_unchecked, phi_hat};
use crate::error::{Error, Result};
use crate::model::{fill_z, Boundary, ConservedField, LayerSystem, StructuredGrid, H_MIN, MAX_LAYERS, MAX_WIDTH};
use crate::solver_fixed::{compensated_sum, line_node, DtPolicy, EnergyRecord, SchemeConfig, SourceFn, GHOSTS};
use crate::wavespeed::max_wave_speed;

pub const JACOBI_DAMPING: f64 = 0.7;
pub const DEFAULT_ITERATIONS: usize = 10;

/// Field whose gradient drives the mesh concentration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sigma {
    /// h_m (0-based layer index)
    Depth(usize),
    /// h_m + b
    DepthPlusBottom(usize),
    /// Σ h + b
    TotalSurface,
}

impl Sigma {
    pub fn eval(&self, u: &[f64], b: f64) -> f64 {
        match *self {
            Sigma::Depth(m) => u[3 * m],
            Sigma::DepthPlusBottom(m) => u[3 * m] + b,
            Sigma::TotalSurface => b + u.iter().step_by(3).sum::<f64>(),
        }
    }

    pub fn check(&self, layers: usize) -> Result<()> {
        match *self {
            Sigma::Depth(m) | Sigma::DepthPlusBottom(m) if m >= layers => {
                Err(Error::Config(format!("monitor field refers to layer {} of {layers}", m + 1)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorConfig {
    pub theta: f64,
    /// Weight of the Laplacian term (0 disables it).
    pub laplacian: f64,
    pub sigma: Sigma,
    pub smoothing: usize,
    pub iterations: usize,
}

impl MonitorConfig {
    pub fn new(theta: f64, sigma: Sigma) -> Self {
        Self { theta, laplacian: 0.0, sigma, smoothing: 1, iterations: DEFAULT_ITERATIONS }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if !(self.theta >= 0.0 && self.laplacian >= 0.0) {
            return Err(Error::Config("monitor weights must be non-negative".into()));
        }
        self.sigma.check(layers)
    }
}

/// Index bookkeeping for a lattice padded by `w` nodes in each active direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padded {
    pub w: [usize; 2],
    pub e: [usize; 2],
}

impl Padded {
    fn new(grid: &StructuredGrid, w: usize) -> Self {
        let w1 = if grid.is_1d() { 0 } else { w };
        Self { w: [w, w1], e: [grid.n[0] + 2 * w, grid.n[1] + 2 * w1] }
    }

    /// Flat index of lattice position (i, j), which may lie in the padding.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> usize {
        let a = (i + self.w[0] as isize) as usize;
        let c = (j + self.w[1] as isize) as usize;
        c * self.e[0] + a
    }

    fn len(&self) -> usize {
        self.e[0] * self.e[1]
    }
}

fn ext_value(n: usize, bc: Boundary, shift: f64, i: isize, get: &dyn Fn(usize) -> f64) -> f64 {
    let ni = n as isize;
    match bc {
        Boundary::Periodic => {
            let k = i.rem_euclid(ni);
            get(k as usize) + ((i - k) / ni) as f64 * shift
        }
        Boundary::Outflow => {
            if i < 0 {
                2.0 * get(0) - ext_value(n, bc, shift, -i, get)
            } else if i >= ni {
                2.0 * get(n - 1) - ext_value(n, bc, shift, 2 * (ni - 1) - i, get)
            } else {
                get(i as usize)
            }
        }
    }
}

/// Pads a nodal field: periodic wrap plus `shift[d]` per period, odd
/// reflection at outflow ends.
fn extend(grid: &StructuredGrid, v: &[f64], w: usize, shift: [f64; 2]) -> (Padded, Vec<f64>) {
    let pd = Padded::new(grid, w);
    let (n0, n1) = (grid.n[0], grid.n[1]);
    let mut rows = vec![0.0; pd.e[0] * n1];
    for j in 0..n1 {
        let get = |i: usize| v[grid.index(i, j)];
        for a in 0..pd.e[0] {
            rows[j * pd.e[0] + a] = ext_value(n0, grid.bc[0], shift[0], a as isize - w as isize, &get);
        }
    }
    if grid.is_1d() {
        return (pd, rows);
    }
    let mut out = vec![0.0; pd.len()];
    for a in 0..pd.e[0] {
        let get = |j: usize| rows[j * pd.e[0] + a];
        for c in 0..pd.e[1] {
            out[c * pd.e[0] + a] = ext_value(n1, grid.bc[1], shift[1], c as isize - w as isize, &get);
        }
    }
    (pd, out)
}

/// J and the metric terms on the lattice padded by `GHOSTS` nodes.
/// `m[l] = [Jξ_l/∂t, Jξ_l/∂x1, Jξ_l/∂x2]`.
#[derive(Clone, Debug)]
pub struct Metrics {
    pub pad: Padded,
    pub jac: Vec<f64>,
    pub m: [[Vec<f64>; 3]; 2],
}

impl Metrics {
    #[inline]
    pub fn get(&self, l: usize, comp: usize, i: isize, j: isize) -> f64 {
        self.m[l][comp][self.pad.at(i, j)]
    }

    #[inline]
    pub fn jac_at(&self, i: isize, j: isize) -> f64 {
        self.jac[self.pad.at(i, j)]
    }
}

/// Discrete metrics by the high-order central differences of the coordinates.
pub fn metrics(grid: &StructuredGrid, p: usize, x: [&[f64]; 2], xdot: [&[f64]; 2]) -> Result<Metrics> {
    let alpha = coefficients(p)?;
    let wc = GHOSTS + p;
    let per = [grid.period(0), grid.period(1)];
    let (cp, x1) = extend(grid, x[0], wc, [per[0], 0.0]);
    let (_, x2) = extend(grid, x[1], wc, [0.0, per[1]]);
    let (pd, v1) = extend(grid, xdot[0], GHOSTS, [0.0; 2]);
    let (_, v2) = extend(grid, xdot[1], GHOSTS, [0.0; 2]);
    let d = |f: &[f64], dir: usize, i: isize, j: isize| -> f64 {
        let h = grid.spacing(dir);
        let mut s = 0.0;
        for (qi, &a) in alpha.iter().enumerate() {
            let q = (qi + 1) as isize;
            let (fp, fm) = if dir == 0 { (f[cp.at(i + q, j)], f[cp.at(i - q, j)]) } else { (f[cp.at(i, j + q)], f[cp.at(i, j - q)]) };
            s += a * (fp - fm);
        }
        s / (2.0 * h)
    };
    let n = pd.len();
    let mut jac = vec![0.0; n];
    let mut m: [[Vec<f64>; 3]; 2] = Default::default();
    for l in 0..2 {
        for c in 0..3 {
            m[l][c] = vec![0.0; n];
        }
    }
    let g = GHOSTS as isize;
    let (lo1, hi1) = if grid.is_1d() { (0, 1) } else { (-g, grid.n[1] as isize + g) };
    for j in lo1..hi1 {
        for i in -g..(grid.n[0] as isize + g) {
            let k = pd.at(i, j);
            if grid.is_1d() {
                let x1x = d(&x1, 0, i, j);
                jac[k] = x1x;
                m[0][1][k] = 1.0;
                m[0][0][k] = -v1[k];
            } else {
                let (x1a, x1b) = (d(&x1, 0, i, j), d(&x1, 1, i, j));
                let (x2a, x2b) = (d(&x2, 0, i, j), d(&x2, 1, i, j));
                jac[k] = x1a * x2b - x1b * x2a;
                m[0][1][k] = x2b;
                m[0][2][k] = -x1b;
                m[1][1][k] = -x2a;
                m[1][2][k] = x1a;
                for l in 0..2 {
                    m[l][0][k] = -(v1[k] * m[l][1][k] + v2[k] * m[l][2][k]);
                }
            }
        }
    }
    for j in 0..grid.n[1] as isize {
        for i in 0..grid.n[0] as isize {
            let v = jac[pd.at(i, j)];
            if !(v > 0.0) {
                return Err(Error::Tangled { node: grid.index(i as usize, j as usize), jac: v });
            }
        }
    }
    Ok(Metrics { pad: pd, jac, m })
}

/// High-order interface average of a nodal quantity along `dir`, interface
/// right of lattice position (i, j).
fn interface_avg(alpha: &[f64], f: impl Fn(isize) -> f64) -> f64 {
    let mut s = 0.0;
    for (qi, &a) in alpha.iter().enumerate() {
        let q = qi as isize + 1;
        for sh in 0..q {
            s += a * 0.5 * (f(-sh) + f(-sh + q));
        }
    }
    s
}

/// Max over nodes of the two discrete surface conservation residuals.
pub fn scl_residual(grid: &StructuredGrid, p: usize, met: &Metrics) -> Result<f64> {
    let alpha = coefficients(p)?;
    let mut worst = 0.0f64;
    for j in 0..grid.n[1] as isize {
        for i in 0..grid.n[0] as isize {
            for k in 1..3 {
                let mut r = 0.0;
                for l in 0..grid.dims() {
                    let at = |ii: isize, jj: isize| met.get(l, k, ii, jj);
                    let (fp, fm) = if l == 0 {
                        (interface_avg(alpha, |s| at(i + s, j)), interface_avg(alpha, |s| at(i - 1 + s, j)))
                    } else {
                        (interface_avg(alpha, |s| at(i, j + s)), interface_avg(alpha, |s| at(i, j - 1 + s)))
                    };
                    r += (fp - fm) / grid.spacing(l);
                }
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

pub fn identity_mesh(grid: &StructuredGrid) -> [Vec<f64>; 2] {
    let n = grid.len();
    let mut x = [vec![0.0; n], vec![0.0; n]];
    for j in 0..grid.n[1] {
        for i in 0..grid.n[0] {
            let k = grid.index(i, j);
            x[0][k] = grid.coord(0, i);
            x[1][k] = grid.coord(1, j);
        }
    }
    x
}

/// Monitor ω ≥ 1 from nodal σ values, after `cfg.smoothing` low-pass passes.
pub fn monitor(grid: &StructuredGrid, sigma: &[f64], cfg: &MonitorConfig) -> Vec<f64> {
    let n = grid.len();
    let dims = grid.dims();
    let val = |d: usize, i: usize, j: usize, o: isize| -> f64 {
        let k = if d == 0 { grid.index(grid.ghost_index(0, i as isize + o), j) } else { grid.index(i, grid.ghost_index(1, j as isize + o)) };
        sigma[k]
    };
    let mut grad = vec![0.0; n];
    let mut lap = vec![0.0; n];
    for j in 0..grid.n[1] {
        for i in 0..grid.n[0] {
            let k = grid.index(i, j);
            let (mut g2, mut l) = (0.0, 0.0);
            for d in 0..dims {
                let h = grid.spacing(d);
                let (sp, sm) = (val(d, i, j, 1), val(d, i, j, -1));
                g2 += ((sp - sm) / (2.0 * h)).powi(2);
                l += (sp - 2.0 * sigma[k] + sm) / (h * h);
            }
            grad[k] = g2.sqrt();
            lap[k] = l.abs();
        }
    }
    let gmax = grad.iter().cloned().fold(0.0, f64::max);
    let lmax = lap.iter().cloned().fold(0.0, f64::max);
    let mut w: Vec<f64> = (0..n)
        .map(|k| {
            let mut s = 1.0;
            if gmax > 0.0 {
                s += cfg.theta * (grad[k] / gmax).powi(2);
            }
            if lmax > 0.0 && cfg.laplacian > 0.0 {
                s += cfg.laplacian * (lap[k] / lmax).powi(2);
            }
            s.sqrt()
        })
        .collect();
    for _ in 0..cfg.smoothing {
        for d in 0..dims {
            let prev = w.clone();
            for j in 0..grid.n[1] {
                for i in 0..grid.n[0] {
                    let at = |o: isize| {
                        if d == 0 {
                            prev[grid.index(grid.ghost_index(0, i as isize + o), j)]
                        } else {
                            prev[grid.index(i, grid.ghost_index(1, j as isize + o))]
                        }
                    };
                    w[grid.index(i, j)] = 0.25 * (at(-1) + 2.0 * at(0) + at(1));
                }
            }
        }
    }
    w
}

/// Damped Jacobi sweeps for Σ_ℓ ∂_ξℓ(ω ∂_ξℓ x) = 0. Outflow edges slide,
/// corners stay.
pub fn relax_mesh(grid: &StructuredGrid, omega: &[f64], x0: [&[f64]; 2], sweeps: usize) -> [Vec<f64>; 2] {
    let mut x = [x0[0].to_vec(), x0[1].to_vec()];
    let dims = grid.dims();
    let per = [grid.period(0), grid.period(1)];
    for _ in 0..sweeps {
        let prev = x.clone();
        let new: Vec<(f64, f64)> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % grid.n[0], k / grid.n[0]);
                let pos = [i, j];
                let mut out = [prev[0][k], prev[1][k]];
                for c in 0..dims {
                    // component c is pinned on outflow ends of direction c
                    if grid.bc[c] == Boundary::Outflow && (pos[c] == 0 || pos[c] + 1 == grid.n[c]) {
                        continue;
                    }
                    let (mut num, mut den) = (0.0, 0.0);
                    for d in 0..dims {
                        // along an outflow edge of direction d only tangential neighbours act
                        let on_edge = grid.bc[d] == Boundary::Outflow && (pos[d] == 0 || pos[d] + 1 == grid.n[d]);
                        if on_edge && d != c {
                            continue;
                        }
                        let h2 = grid.spacing(d).powi(2);
                        for o in [-1isize, 1] {
                            let q = pos[d] as isize + o;
                            let nd = grid.n[d] as isize;
                            if grid.bc[d] == Boundary::Outflow && (q < 0 || q >= nd) {
                                continue;
                            }
                            let qq = q.rem_euclid(nd) as usize;
                            let kn = if d == 0 { grid.index(qq, j) } else { grid.index(i, qq) };
                            let shift = if d == c { ((q - qq as isize) / nd) as f64 * per[d] } else { 0.0 };
                            let we = 2.0 * omega[k] * omega[kn] / (omega[k] + omega[kn]) / h2;
                            num += we * (prev[c][kn] + shift);
                            den += we;
                        }
                    }
                    if den > 0.0 {
                        out[c] = prev[c][k] + JACOBI_DAMPING * (num / den - prev[c][k]);
                    }
                }
                (out[0], out[1])
            })
            .collect();
        for (k, (a, b)) in new.into_iter().enumerate() {
            x[0][k] = a;
            x[1][k] = b;
        }
    }
    x
}

/// New node positions from σ on the current mesh. Constant σ keeps the mesh.
pub fn mesh_adapt(grid: &StructuredGrid, sigma: &[f64], cfg: &MonitorConfig, x: [&[f64]; 2], p: usize) -> Result<[Vec<f64>; 2]> {
    let first = sigma.first().copied().unwrap_or(0.0);
    if sigma.iter().all(|&s| s == first) {
        return Ok([x[0].to_vec(), x[1].to_vec()]);
    }
    let w = monitor(grid, sigma, cfg);
    let nx = relax_mesh(grid, &w, x, cfg.iterations);
    let zero = vec![0.0; grid.len()];
    metrics(grid, p, [&nx[0], &nx[1]], [&zero, &zero])?;
    Ok(nx)
}

/// Curvilinear two-point flux of width 3M + 1 along ξ_dir; `ml`, `mr` are
/// [Jξ/∂t, Jξ/∂x1, Jξ/∂x2] at both nodes.
pub fn curvilinear_ec_flux(sys: &LayerSystem, ul: &[f64], ur: &[f64], ml: [f64; 3], mr: [f64; 3], out: &mut [f64]) {
    let nl = sys.layers();
    let nw = sys.width();
    let mut zl = [0.0; MAX_LAYERS];
    let mut zr = [0.0; MAX_LAYERS];
    fill_z(sys, &ul[..nw], ul[nw], &mut zl);
    fill_z(sys, &ur[..nw], ur[nw], &mut zr);
    pair_flux(sys, ul, &zl[..nl], ur, &zr[..nl], ml, mr, out);
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn pair_flux(sys: &LayerSystem, ul: &[f64], zl: &[f64], ur: &[f64], zr: &[f64], ml: [f64; 3], mr: [f64; 3], out: &mut [f64]) {
    let nw = sys.width();
    let mt = mean(ml[0], mr[0]);
    let m1 = mean(ml[1], mr[1]);
    let m2 = mean(ml[2], mr[2]);
    let mut f = [0.0; MAX_WIDTH];
    for m in 0..sys.layers() {
        let o = 3 * m;
        let h = mean(ul[o], ur[o]);
        out[o] = mt * h;
        out[o + 1] = mt * h * mean(ul[o + 1] / ul[o], ur[o + 1] / ur[o]);
        out[o + 2] = mt * h * mean(ul[o + 2] / ul[o], ur[o + 2] / ur[o]);
    }
    out[nw] = mt * mean(ul[nw], ur[nw]);
    if m1 != 0.0 {
        ec_flux_z(sys, 0, ul, zl, ur, zr, &mut f);
        for c in 0..nw {
            out[c] += m1 * f[c];
        }
    }
    if m2 != 0.0 {
        ec_flux_z(sys, 1, ul, zl, ur, zr, &mut f);
        for c in 0..nw {
            out[c] += m2 * f[c];
        }
    }
}

#[derive(Clone, Debug)]
pub struct MovingState {
    /// J Û, node-major, width 3M + 1.
    pub cu: Vec<f64>,
    pub jac: Vec<f64>,
    pub x: [Vec<f64>; 2],
    pub xdot: [Vec<f64>; 2],
    pub t: f64,
    pub steps: usize,
    pub ledger: Vec<EnergyRecord>,
}

impl MovingState {
    /// Û = 𝓤/J per node.
    pub fn hat(&self, ne: usize) -> Vec<f64> {
        let mut out = self.cu.clone();
        for (c, &j) in out.chunks_exact_mut(ne).zip(&self.jac) {
            c.iter_mut().for_each(|v| *v /= j);
        }
        out
    }

    pub fn field(&self, sys: &LayerSystem) -> ConservedField {
        let ne = sys.width() + 1;
        let hat = self.hat(ne);
        let mut f = ConservedField::zeros(sys.layers(), self.jac.len());
        for (k, c) in hat.chunks_exact(ne).enumerate() {
            f.set_node(k, &c[..ne - 1]);
            f.b[k] = c[ne - 1];
        }
        f
    }
}

pub struct MovingSolver<'a> {
    pub sys: &'a LayerSystem,
    pub grid: &'a StructuredGrid,
    pub cfg: SchemeConfig,
    pub gamma: f64,
    pub monitor: Option<MonitorConfig>,
    alpha: &'static [f64],
    source: Option<&'a SourceFn>,
}

/// Tendencies of 𝓤 and J.
pub struct MovingRhs {
    pub cu: Vec<f64>,
    pub jac: Vec<f64>,
}

impl<'a> MovingSolver<'a> {
    pub fn new(sys: &'a LayerSystem, grid: &'a StructuredGrid, cfg: SchemeConfig, gamma: f64, monitor: Option<MonitorConfig>) -> Result<Self> {
        cfg.validate()?;
        check_gamma(sys, gamma)?;
        if let Some(m) = &monitor {
            m.validate(sys.layers())?;
        }
        for d in 0..grid.dims() {
            if grid.bc[d] == Boundary::Outflow && grid.n[d] < 2 * GHOSTS + 1 {
                return Err(Error::Config(format!("moving meshes need at least {} nodes per direction", 2 * GHOSTS + 1)));
            }
        }
        Ok(Self { sys, grid, cfg, gamma, monitor, alpha: coefficients(cfg.p)?, source: None })
    }

    pub fn with_source(mut self, source: &'a SourceFn) -> Self {
        self.source = Some(source);
        self
    }

    fn width(&self) -> usize {
        self.sys.width() + 1
    }

    /// State on the mesh `x` from nodal (U, b) samples; J from the coordinates.
    pub fn state_from(&self, x: [Vec<f64>; 2], u: impl Fn(f64, f64) -> (Vec<f64>, f64)) -> Result<MovingState> {
        let n = self.grid.len();
        let zero = vec![0.0; n];
        let met = metrics(self.grid, self.cfg.p, [&x[0], &x[1]], [&zero, &zero])?;
        let ne = self.width();
        let mut cu = vec![0.0; n * ne];
        let mut jac = vec![0.0; n];
        for j in 0..self.grid.n[1] {
            for i in 0..self.grid.n[0] {
                let k = self.grid.index(i, j);
                let jk = met.jac_at(i as isize, j as isize);
                let (uk, bk) = u(x[0][k], x[1][k]);
                if uk.len() != ne - 1 {
                    return Err(Error::Usage(format!("initial state has {} components, expected {}", uk.len(), ne - 1)));
                }
                for m in 0..self.sys.layers() {
                    if !(uk[3 * m] >= H_MIN) {
                        return Err(Error::Dry { node: k, layer: m + 1, h: uk[3 * m] });
                    }
                }
                for c in 0..ne - 1 {
                    cu[k * ne + c] = jk * uk[c];
                }
                cu[k * ne + ne - 1] = jk * bk;
                jac[k] = jk;
            }
        }
        Ok(MovingState { cu, jac, x, xdot: [zero.clone(), zero], t: 0.0, steps: 0, ledger: Vec::new() })
    }

    /// Adapts the mesh to the initial data `rounds` times before sampling it.
    pub fn initial_state(&self, u: impl Fn(f64, f64) -> (Vec<f64>, f64), rounds: usize) -> Result<MovingState> {
        let mut x = identity_mesh(self.grid);
        if let Some(mc) = &self.monitor {
            for _ in 0..rounds {
                let sigma: Vec<f64> = (0..self.grid.len())
                    .map(|k| {
                        let (uk, bk) = u(x[0][k], x[1][k]);
                        mc.sigma.eval(&uk, bk)
                    })
                    .collect();
                x = mesh_adapt(self.grid, &sigma, mc, [&x[0], &x[1]], self.cfg.p)?;
            }
        }
        self.state_from(x, u)
    }

    pub fn rhs(&self, cu: &[f64], jac: &[f64], x: [&[f64]; 2], xdot: [&[f64]; 2], t: f64) -> Result<MovingRhs> {
        let met = metrics(self.grid, self.cfg.p, x, xdot)?;
        self.rhs_with(cu, jac, &met, x, t)
    }

    fn rhs_with(&self, cu: &[f64], jac: &[f64], met: &Metrics, x: [&[f64]; 2], t: f64) -> Result<MovingRhs> {
        let ne = self.width();
        let n = self.grid.len();
        if cu.len() != n * ne || jac.len() != n {
            return Err(Error::Usage("moving state does not match the grid".into()));
        }
        let mut hat = cu.to_vec();
        for (k, (c, &j)) in hat.chunks_exact_mut(ne).zip(jac).enumerate() {
            if !(j > 0.0) {
                return Err(Error::Tangled { node: k, jac: j });
            }
            c.iter_mut().for_each(|v| *v /= j);
            for m in 0..self.sys.layers() {
                if !(c[3 * m] >= H_MIN) {
                    return Err(Error::Dry { node: k, layer: m + 1, h: c[3 * m] });
                }
            }
        }
        let mut out = MovingRhs { cu: vec![0.0; n * ne], jac: vec![0.0; n] };
        for dir in 0..self.grid.dims() {
            let lines = self.grid.n[1 - dir];
            let parts: Vec<(Vec<f64>, Vec<f64>)> =
                (0..lines).into_par_iter().map(|l| self.line_rhs(dir, l, &hat, met)).collect::<Result<_>>()?;
            for (l, (pu, pj)) in parts.iter().enumerate() {
                for i in 0..self.grid.n[dir] {
                    let k = line_node(self.grid, dir, l, i as isize);
                    for c in 0..ne {
                        out.cu[k * ne + c] += pu[i * ne + c];
                    }
                    out.jac[k] += pj[i];
                }
            }
        }
        if let Some(src) = self.source {
            let nw = ne - 1;
            out.cu.par_chunks_mut(ne).enumerate().for_each(|(k, o)| {
                let mut s = [0.0; MAX_WIDTH];
                src(x[0][k], x[1][k], t, &mut s[..nw]);
                for c in 0..nw {
                    o[c] += jac[k] * s[c];
                }
            });
        }
        if let Some(p) = out.cu.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: p / ne });
        }
        Ok(out)
    }

    fn line_rhs(&self, dir: usize, line: usize, hat: &[f64], met: &Metrics) -> Result<(Vec<f64>, Vec<f64>)> {
        let sys = self.sys;
        let (nw, nl) = (sys.width(), sys.layers());
        let ne = nw + 1;
        let n = self.grid.n[dir];
        let g = GHOSTS;
        let len = n + 2 * g;
        let mut eh = vec![0.0; len * ne];
        let mut ez = vec![0.0; len * nl];
        let mut em = vec![[0.0; 3]; len];
        for e in 0..len {
            let i = e as isize - g as isize;
            let k = line_node(self.grid, dir, line, i);
            let s = &hat[k * ne..(k + 1) * ne];
            eh[e * ne..(e + 1) * ne].copy_from_slice(s);
            fill_z(sys, &s[..nw], s[nw], &mut ez[e * nl..(e + 1) * nl]);
            let (a, c) = if dir == 0 { (i, line as isize) } else { (line as isize, i) };
            em[e] = [met.get(dir, 0, a, c), met.get(dir, 1, a, c), met.get(dir, 2, a, c)];
        }
        let mut flux = vec![0.0; (n + 1) * ne];
        // per interface and layer: source averages for x1 and x2 momentum
        let mut src = vec![0.0; (n + 1) * nl * 2];
        let mut mtf = vec![0.0; n + 1];
        let mut tmp = [0.0; MAX_WIDTH];
        let mut tmp0 = [0.0; MAX_WIDTH];
        let wall = self.grid.bc[dir] == Boundary::Outflow;
        let p = self.alpha.len();
        let first = g - 1;
        for j in (first + 1 - p)..(first + n + 1) {
            for (qi, &a) in self.alpha.iter().enumerate() {
                let q = qi + 1;
                let lo = j.max(first);
                let hi = (j + q - 1).min(first + n);
                if lo > hi {
                    continue;
                }
                let r = j + q;
                let (zl, zr) = (&ez[j * nl..(j + 1) * nl], &ez[r * nl..(r + 1) * nl]);
                let (ul, ur) = (&eh[j * ne..(j + 1) * ne], &eh[r * ne..(r + 1) * ne]);
                pair_flux(sys, ul, zl, ur, zr, em[j], em[r], &mut tmp);
                let m1 = mean(em[j][1], em[r][1]);
                let m2 = mean(em[j][2], em[r][2]);
                let mt = mean(em[j][0], em[r][0]);
                let touches_wall = wall && (lo == first || hi == first + n);
                if touches_wall {
                    let (mut ml, mut mr) = (em[j], em[r]);
                    ml[0] = 0.0;
                    mr[0] = 0.0;
                    pair_flux(sys, ul, zl, ur, zr, ml, mr, &mut tmp0);
                }
                for i in lo..=hi {
                    let f = i - first;
                    // the boundary does not move: no time-metric flux through it
                    let at_wall = touches_wall && (f == 0 || f == n);
                    let t = if at_wall { &tmp0 } else { &tmp };
                    for c in 0..ne {
                        flux[f * ne + c] += a * t[c];
                    }
                    for m in 0..nl {
                        let zb = 0.5 * (zl[m] + zr[m]);
                        src[(f * nl + m) * 2] += a * m1 * zb;
                        src[(f * nl + m) * 2 + 1] += a * m2 * zb;
                    }
                    if !at_wall {
                        mtf[f] += a * mt;
                    }
                }
            }
        }
        if self.cfg.dissipation {
            let mut evh = vec![0.0; len * ne];
            for e in 0..len {
                let s = &eh[e * ne..(e + 1) * ne];
                entropy_vars_ext_unchecked(sys, &s[..nw], s[nw], self.gamma, &mut evh[e * ne..(e + 1) * ne]);
            }
            let mut u6 = [0.0; 6 * MAX_WIDTH];
            let mut v6 = [0.0; 6 * MAX_WIDTH];
            let mut d = [0.0; MAX_WIDTH];
            let mut raw = [0.0; MAX_WIDTH];
            for f in 0..=n {
                let l = first + f - 2;
                for s in 0..6 {
                    u6[s * nw..(s + 1) * nw].copy_from_slice(&eh[(l + s) * ne..(l + s) * ne + nw]);
                    v6[s * nw..(s + 1) * nw].copy_from_slice(&evh[(l + s) * ne..(l + s) * ne + nw]);
                }
                let (a, b) = (em[first + f], em[first + f + 1]);
                let mut im = InterfaceMetrics { t: mean(a[0], b[0]), x1: mean(a[1], b[1]), x2: mean(a[2], b[2]) };
                if wall && (f == 0 || f == n) {
                    im.t = 0.0;
                }
                moving_mesh_d_hat(sys, dir, im, &u6[..6 * nw], &v6[..6 * nw], &mut d)?;
                for c in 0..nw {
                    flux[f * ne + c] -= d[c];
                }
                if im.t != 0.0 {
                    let (il, ir) = (first + f, first + f + 1);
                    for c in 0..ne {
                        raw[c] = evh[ir * ne + c] - evh[il * ne + c];
                    }
                    moving_mesh_d_ring(sys, im.t, &eh[l * ne..(l + 6) * ne], &raw[..ne], &mut d);
                    for c in 0..ne {
                        flux[f * ne + c] -= d[c];
                    }
                }
            }
        }
        let dxi = self.grid.spacing(dir);
        let gr = sys.g();
        let mut out = vec![0.0; n * ne];
        let mut oj = vec![0.0; n];
        for i in 0..n {
            let e = g + i;
            for c in 0..ne {
                out[i * ne + c] = -(flux[(i + 1) * ne + c] - flux[i * ne + c]) / dxi;
            }
            for m in 0..nl {
                let h = eh[e * ne + 3 * m];
                for k in 0..2 {
                    let ds = src[((i + 1) * nl + m) * 2 + k] - src[(i * nl + m) * 2 + k];
                    out[i * ne + 3 * m + 1 + k] -= gr * h * ds / dxi;
                }
            }
            oj[i] = -(mtf[i + 1] - mtf[i]) / dxi;
        }
        Ok((out, oj))
    }

    /// Σ J η̂(Û) Δξ in row-major order.
    pub fn total_energy(&self, st: &MovingState) -> f64 {
        let ne = self.width();
        let cell: f64 = (0..self.grid.dims()).map(|d| self.grid.spacing(d)).product();
        let g = self.sys.g();
        let terms = st.cu.chunks_exact(ne).zip(&st.jac).map(|(c, &j)| {
            let mut u = [0.0; MAX_WIDTH];
            for k in 0..ne - 1 {
                u[k] = c[k] / j;
            }
            let b = c[ne - 1] / j;
            j * (energy(self.sys, &u[..ne - 1], b) + self.gamma * g * b * b)
        });
        cell * compensated_sum(terms)
    }

    /// Semi-discrete rate of the modified energy, Σ (V̂ᵀ d𝓤/dt − φ̂ dJ/dt) Δξ,
    /// at the mesh velocity `st.xdot`.
    pub fn energy_rate(&self, st: &MovingState) -> Result<f64> {
        let ne = self.width();
        let nw = ne - 1;
        let r = self.rhs(&st.cu, &st.jac, [&st.x[0], &st.x[1]], [&st.xdot[0], &st.xdot[1]], st.t)?;
        let hat = st.hat(ne);
        let cell: f64 = (0..self.grid.dims()).map(|d| self.grid.spacing(d)).product();
        let mut v = [0.0; MAX_WIDTH];
        let terms: Vec<f64> = hat
            .chunks_exact(ne)
            .enumerate()
            .map(|(k, c)| {
                entropy_vars_ext_unchecked(self.sys, &c[..nw], c[nw], self.gamma, &mut v[..ne]);
                let dv: f64 = v[..ne].iter().zip(&r.cu[k * ne..(k + 1) * ne]).map(|(a, b)| a * b).sum();
                dv - phi_hat(self.sys, &c[..nw], c[nw], self.gamma) * r.jac[k]
            })
            .collect();
        Ok(cell * compensated_sum(terms))
    }

    /// Per direction: max over nodes of L̃ α(TU) / (J Δξ) on the current mesh.
    fn speed_terms(&self, hat: &[f64], met: &Metrics) -> Result<[f64; 2]> {
        let ne = self.width();
        let nw = ne - 1;
        let mut a = [0.0; 2];
        for (dir, ad) in a.iter_mut().enumerate().take(self.grid.dims()) {
            let vals: Vec<f64> = (0..self.grid.len())
                .into_par_iter()
                .map(|k| -> Result<f64> {
                    let (i, j) = ((k % self.grid.n[0]) as isize, (k / self.grid.n[0]) as isize);
                    let (m1, m2) = (met.get(dir, 1, i, j), met.get(dir, 2, i, j));
                    let rot = Rotation::from_angle(rotation_angle(dir, m1, m2)?);
                    let mut tu = [0.0; MAX_WIDTH];
                    rot.apply(&hat[k * ne..k * ne + nw], &mut tu[..nw]);
                    let l = (m1 * m1 + m2 * m2).sqrt();
                    Ok(l * max_wave_speed(self.sys, &tu[..nw], dir) / (met.jac_at(i, j) * self.grid.spacing(dir)))
                })
                .collect::<Result<_>>()?;
            *ad = vals.into_iter().fold(0.0, f64::max);
        }
        Ok(a)
    }

    /// Mesh displacement, its CFL share, and the time step. Sets `st.xdot`.
    pub fn prepare_step(&self, st: &mut MovingState, t_end: f64) -> Result<f64> {
        let ne = self.width();
        let n = self.grid.len();
        let zero = vec![0.0; n];
        let met = metrics(self.grid, self.cfg.p, [&st.x[0], &st.x[1]], [&zero, &zero])?;
        let hat = st.hat(ne);
        let mut delta = [zero.clone(), zero.clone()];
        let mut share = 0.0f64;
        if let Some(mc) = &self.monitor {
            let sigma: Vec<f64> = hat.chunks_exact(ne).map(|c| mc.sigma.eval(&c[..ne - 1], c[ne - 1])).collect();
            let nx = mesh_adapt(self.grid, &sigma, mc, [&st.x[0], &st.x[1]], self.cfg.p)?;
            for c in 0..2 {
                for k in 0..n {
                    delta[c][k] = nx[c][k] - st.x[c][k];
                }
            }
            for k in 0..n {
                let (i, j) = ((k % self.grid.n[0]) as isize, (k / self.grid.n[0]) as isize);
                let mut s = 0.0;
                for d in 0..self.grid.dims() {
                    let mv = met.get(d, 1, i, j) * delta[0][k] + met.get(d, 2, i, j) * delta[1][k];
                    s += mv.abs() / (met.jac_at(i, j) * self.grid.spacing(d));
                }
                share = share.max(s);
            }
            let cap = 0.5 * self.cfg.cfl;
            if share > cap {
                let f = cap / share;
                delta.iter_mut().for_each(|v| v.iter_mut().for_each(|x| *x *= f));
                share = cap;
            }
        }
        let dt = match self.cfg.dt_policy {
            DtPolicy::Standard => {
                let a = self.speed_terms(&hat, &met)?;
                let s = a[0] + a[1];
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Numeric(format!("wave speeds {a:?} give no admissible time step")));
                }
                (self.cfg.cfl - share) / s
            }
            DtPolicy::Accuracy => {
                let h = (0..self.grid.dims()).map(|d| self.grid.spacing(d)).fold(f64::INFINITY, f64::min);
                self.cfg.cfl * h.powf(5.0 / 3.0)
            }
        };
        for c in 0..2 {
            for k in 0..n {
                st.xdot[c][k] = delta[c][k] / dt;
            }
        }
        Ok(dt.min(t_end - st.t))
    }

    /// Coupled SSP-RK3 step with the mesh velocity held at `st.xdot`.
    pub fn step(&self, st: &mut MovingState, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Usage(format!("time step must be positive, got {dt}")));
        }
        let t = st.t;
        let xd = [&st.xdot[0][..], &st.xdot[1][..]];
        let lin = |a: &[f64], b: &[f64], w: f64, l: &[f64]| -> Vec<f64> {
            // a + w ((b - a) + dt l)
            a.iter().zip(b).zip(l).map(|((&a, &b), &l)| a + w * ((b - a) + dt * l)).collect()
        };
        let first = |a: &[f64], l: &[f64]| -> Vec<f64> { a.iter().zip(l).map(|(&a, &l)| a + dt * l).collect() };
        let x0 = [&st.x[0][..], &st.x[1][..]];
        let r0 = self.rhs(&st.cu, &st.jac, x0, xd, t)?;
        let cu1 = first(&st.cu, &r0.cu);
        let j1 = first(&st.jac, &r0.jac);
        let x1 = [first(x0[0], xd[0]), first(x0[1], xd[1])];
        let r1 = self.rhs(&cu1, &j1, [&x1[0], &x1[1]], xd, t + dt)?;
        let cu2 = lin(&st.cu, &cu1, 0.25, &r1.cu);
        let j2 = lin(&st.jac, &j1, 0.25, &r1.jac);
        let x2 = [lin(x0[0], &x1[0], 0.25, xd[0]), lin(x0[1], &x1[1], 0.25, xd[1])];
        let r2 = self.rhs(&cu2, &j2, [&x2[0], &x2[1]], xd, t + 0.5 * dt)?;
        let cu3 = lin(&st.cu, &cu2, 2.0 / 3.0, &r2.cu);
        let j3 = lin(&st.jac, &j2, 2.0 / 3.0, &r2.jac);
        let x3 = [lin(x0[0], &x2[0], 2.0 / 3.0, xd[0]), lin(x0[1], &x2[1], 2.0 / 3.0, xd[1])];
        if let Some(k) = j3.iter().position(|&j| !(j > 0.0)) {
            return Err(Error::Tangled { node: k, jac: j3[k] });
        }
        st.cu = cu3;
        st.jac = j3;
        st.x = x3;
        st.t = t + dt;
        st.steps += 1;
        Ok(())
    }

    pub fn advance(&self, st: &mut MovingState, t_end: f64, mut on_step: impl FnMut(&MovingState)) -> Result<()> {
        if st.ledger.is_empty() {
            let e = self.total_energy(st);
            st.ledger.push(EnergyRecord { t: st.t, dt: 0.0, energy: e });
        }
        while st.t < t_end * (1.0 - 1e-14) {
            let dt = self.prepare_step(st, t_end)?;
            self.step(st, dt)?;
            let e = self.total_energy(st);
            st.ledger.push(EnergyRecord { t: st.t, dt, energy: e });
            on_step(st);
        }
        Ok(())
    }

    /// J recomputed from the current coordinates.
    pub fn geometric_jacobian(&self, st: &MovingState) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.grid.len()];
        let met = metrics(self.grid, self.cfg.p, [&st.x[0], &st.x[1]], [&zero, &zero])?;
        Ok((0..self.grid.len())
            .map(|k| met.jac_at((k % self.grid.n[0]) as isize, (k / self.grid.n[0]) as isize))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::entropy_vars_ext;
    use crate::solver_fixed::{FixedSolver, SolverState};
    use std::f64::consts::PI;

    fn grid2(n: usize, bc: Boundary) -> StructuredGrid {
        StructuredGrid::new([n, n], [0.0, 0.0], [1.0, 1.0], [bc; 2]).unwrap()
    }

    fn wavy_mesh(grid: &StructuredGrid, amp: f64) -> [Vec<f64>; 2] {
        let mut x = identity_mesh(grid);
        for k in 0..grid.len() {
            let (a, b) = (x[0][k], x[1][k]);
            x[0][k] = a + amp * (2.0 * PI * a).sin() * (2.0 * PI * b).sin();
            x[1][k] = b + amp * (2.0 * PI * a).sin() * (4.0 * PI * b).sin();
        }
        x
    }

    #[test]
    fn identity_metrics() {
        let grid = grid2(12, Boundary::Outflow);
        let x = identity_mesh(&grid);
        let z = vec![0.0; grid.len()];
        let met = metrics(&grid, 3, [&x[0], &x[1]], [&z, &z]).unwrap();
        for k in 0..grid.len() {
            let (i, j) = ((k % 12) as isize, (k / 12) as isize);
            assert!((met.get(0, 1, i, j) - 1.0).abs() < 1e-13);
            assert!(met.get(0, 2, i, j).abs() < 1e-13);
            assert!((met.jac_at(i, j) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn translating_mesh_time_metric() {
        let grid = grid2(10, Boundary::Periodic);
        let x = identity_mesh(&grid);
        let v = vec![0.7; grid.len()];
        let z = vec![0.0; grid.len()];
        let met = metrics(&grid, 3, [&x[0], &x[1]], [&v, &z]).unwrap();
        assert!((met.get(0, 0, 3, 4) + 0.7).abs() < 1e-13);
        assert!(met.get(1, 0, 3, 4).abs() < 1e-13);
    }

    #[test]
    fn scl_holds_on_deformed_meshes() {
        for bc in [Boundary::Periodic, Boundary::Outflow] {
            let grid = grid2(24, bc);
            let x = wavy_mesh(&grid, 0.02);
            let z = vec![0.0; grid.len()];
            for p in 1..=3 {
                let met = metrics(&grid, p, [&x[0], &x[1]], [&z, &z]).unwrap();
                assert!(scl_residual(&grid, p, &met).unwrap() < 1e-13);
            }
        }
    }

    #[test]
    fn tangled_mesh_is_rejected() {
        let grid = grid2(10, Boundary::Outflow);
        let mut x = identity_mesh(&grid);
        x[0].swap(grid.index(4, 4), grid.index(6, 4));
        let z = vec![0.0; grid.len()];
        assert!(matches!(metrics(&grid, 1, [&x[0], &x[1]], [&z, &z]), Err(Error::Tangled { .. })));
    }

    #[test]
    fn monitor_cases() {
        let grid = StructuredGrid::line(40, 0.0, 1.0, Boundary::Outflow).unwrap();
        let x = identity_mesh(&grid);
        let flat = vec![1.0; 40];
        let cfg = MonitorConfig::new(100.0, Sigma::Depth(0));
        let nx = mesh_adapt(&grid, &flat, &cfg, [&x[0], &x[1]], 3).unwrap();
        assert_eq!(nx[0], x[0]);
        let step: Vec<f64> = x[0].iter().map(|&s| if s < 0.5 { 1.0 } else { 2.0 }).collect();
        assert!(monitor(&grid, &step, &MonitorConfig::new(0.0, Sigma::Depth(0))).iter().all(|&w| w == 1.0));
        let w = monitor(&grid, &step, &cfg);
        assert!(w.iter().all(|&v| v >= 1.0));
        let nx = mesh_adapt(&grid, &step, &cfg, [&x[0], &x[1]], 3).unwrap();
        let min_dx = nx[0].windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        assert!(min_dx < 0.5 * grid.spacing(0), "{min_dx}");
        assert_eq!(nx[0][0], 0.0);
        assert_eq!(nx[0][39], 1.0);
    }

    #[test]
    fn edges_slide_corners_stay() {
        let grid = grid2(16, Boundary::Outflow);
        let x = identity_mesh(&grid);
        let sigma: Vec<f64> = (0..grid.len()).map(|k| ((x[0][k] - 0.3).powi(2) + (x[1][k] - 0.4).powi(2) < 0.05) as i32 as f64).collect();
        let nx = mesh_adapt(&grid, &sigma, &MonitorConfig::new(50.0, Sigma::Depth(0)), [&x[0], &x[1]], 3).unwrap();
        for &(i, j) in &[(0, 0), (15, 0), (0, 15), (15, 15)] {
            let k = grid.index(i, j);
            assert_eq!((nx[0][k], nx[1][k]), (x[0][k], x[1][k]));
        }
        for j in 0..16 {
            assert_eq!(nx[0][grid.index(0, j)], 0.0);
            assert_eq!(nx[0][grid.index(15, j)], 1.0);
        }
        let moved = (0..16).any(|j| {
            let k = grid.index(0, j);
            (nx[1][k] - x[1][k]).abs() > 1e-6
        });
        assert!(moved);
    }

    #[test]
    fn curvilinear_flux_reduces_and_is_consistent() {
        let sys = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let ul = [1.2, 0.3, -0.1, 2.0, 0.2, 0.5, 0.4];
        let ur = [0.9, -0.2, 0.3, 2.5, 0.1, -0.4, 0.1];
        let mut a = [0.0; 7];
        curvilinear_ec_flux(&sys, &ul, &ur, [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], &mut a);
        let mut f = [0.0; 6];
        crate::ecflux::ec_flux(&sys, 0, &ul[..6], ul[6], &ur[..6], ur[6], &mut f);
        assert_eq!(&a[..6], &f[..]);
        assert_eq!(a[6], 0.0);
        // Ũ condition: ΔV̂ᵀŨ = Δφ̂
        let gamma = 1.3;
        let mut vl = [0.0; 7];
        let mut vr = [0.0; 7];
        entropy_vars_ext(&sys, &ul[..6], ul[6], gamma, &mut vl).unwrap();
        entropy_vars_ext(&sys, &ur[..6], ur[6], gamma, &mut vr).unwrap();
        let mut ut = [0.0; 7];
        curvilinear_ec_flux(&sys, &ul, &ur, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], &mut ut);
        let lhs: f64 = (0..7).map(|k| (vr[k] - vl[k]) * ut[k]).sum();
        let rhs = phi_hat(&sys, &ur[..6], ur[6], gamma) - phi_hat(&sys, &ul[..6], ul[6], gamma);
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} {rhs}");
    }

    fn prescribed(grid: &StructuredGrid, t: f64) -> [Vec<f64>; 2] {
        let x = identity_mesh(grid);
        let mut out = x.clone();
        let s = 0.03 * (2.0 * PI * t).sin();
        for k in 0..grid.len() {
            out[0][k] = x[0][k] + s * (2.0 * PI * x[0][k]).sin() * (2.0 * PI * x[1][k]).cos();
            out[1][k] = x[1][k] + s * (2.0 * PI * x[0][k]).cos() * (2.0 * PI * x[1][k]).sin();
        }
        out
    }

    #[test]
    fn energy_rate_on_moving_mesh() {
        let sys = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let grid = StructuredGrid::line(60, 0.0, 1.0, Boundary::Periodic).unwrap();
        let init = |x: f64, _: f64| {
            let s = (2.0 * PI * x).sin();
            (vec![1.0 + 0.2 * s, 0.3 * s, 0.0, 2.0 - 0.1 * s, -0.2 * s, 0.0], 0.3 * (2.0 * PI * x).cos())
        };
        for diss in [false, true] {
            let cfg = SchemeConfig { dissipation: diss, ..SchemeConfig::default() };
            let s = MovingSolver::new(&sys, &grid, cfg, 1.0, None).unwrap();
            let x = prescribed(&grid, 0.1);
            let mut st = s.state_from(x, init).unwrap();
            for k in 0..grid.len() {
                st.xdot[0][k] = 0.4 * (2.0 * PI * st.x[0][k]).cos();
            }
            let rate = s.energy_rate(&st).unwrap();
            if diss {
                assert!(rate < 0.0, "{rate}");
            } else {
                assert!(rate.abs() < 1e-12, "{rate}");
            }
        }
    }

    #[test]
    fn outflow_walls_do_not_leak() {
        let sys = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let grid = StructuredGrid::line(60, 0.0, 1.0, Boundary::Outflow).unwrap();
        let cfg = SchemeConfig { dissipation: false, ..SchemeConfig::default() };
        let s = MovingSolver::new(&sys, &grid, cfg, 1.0, None).unwrap();
        let mut st = s.state_from(identity_mesh(&grid), |x, _| (vec![1.0 + 0.1 * x, 0.0, 0.0, 2.0 - 0.1 * x, 0.0, 0.0], 0.0)).unwrap();
        for k in 0..grid.len() {
            st.xdot[0][k] = 0.3 * (PI * st.x[0][k]).sin();
        }
        let r = s.rhs(&st.cu, &st.jac, [&st.x[0], &st.x[1]], [&st.xdot[0], &st.xdot[1]], 0.0).unwrap();
        assert!(r.jac.iter().sum::<f64>().abs() < 1e-12);
        assert!(s.energy_rate(&st).unwrap().abs() < 1e-12);
    }

    #[test]
    fn free_stream_is_preserved() {
        let sys = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let grid = grid2(16, Boundary::Periodic);
        let s = MovingSolver::new(&sys, &grid, SchemeConfig::default(), 1.0, None).unwrap();
        let c = [1.0, 0.3, -0.2, 2.0, 0.1, 0.4];
        let mut st = s.state_from(prescribed(&grid, 0.0), |_, _| (c.to_vec(), 0.3)).unwrap();
        let dt = 0.01;
        for n in 0..20 {
            let target = prescribed(&grid, (n + 1) as f64 * dt);
            for d in 0..2 {
                for k in 0..grid.len() {
                    st.xdot[d][k] = (target[d][k] - st.x[d][k]) / dt;
                }
            }
            s.step(&mut st, dt).unwrap();
        }
        let hat = st.hat(7);
        let mut worst = 0.0f64;
        for node in hat.chunks_exact(7) {
            for (k, &v) in node[..6].iter().enumerate() {
                worst = worst.max((v - c[k]).abs());
            }
            worst = worst.max((node[6] - 0.3).abs());
        }
        assert!(worst < 1e-12, "{worst:e}");
    }

    #[test]
    fn static_identity_mesh_matches_fixed_solver() {
        let sys = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let grid = StructuredGrid::line(40, 0.0, 2.0, Boundary::Periodic).unwrap();
        let init = |x: f64, _: f64| {
            let s = (PI * x).sin();
            (vec![1.0 + 0.2 * s, 0.3 * s, 0.0, 2.0 - 0.1 * s, -0.2 * s, 0.0], 0.3 * (PI * x).cos())
        };
        let ms = MovingSolver::new(&sys, &grid, SchemeConfig::default(), 1.0, None).unwrap();
        let mut mst = ms.state_from(identity_mesh(&grid), init).unwrap();
        let field = ConservedField::from_primitive(
            &sys,
            &grid,
            |x, y| crate::model::to_primitive(&init(x, y).0, 0.0).unwrap(),
            |x, y| init(x, y).1,
        )
        .unwrap();
        let fs = FixedSolver::new(&sys, &grid, SchemeConfig::default()).unwrap();
        let mut fst = SolverState::new(&field);
        for _ in 0..5 {
            ms.step(&mut mst, 0.005).unwrap();
            fs.step(&mut fst, 0.005).unwrap();
        }
        let f = mst.field(&sys);
        let g = fst.field(&sys);
        for c in 0..6 {
            for k in 0..grid.len() {
                assert!((f.comps[c][k] - g.comps[c][k]).abs() < 1e-13);
            }
        }
        assert!(mst.jac.iter().all(|j| (j - 1.0).abs() < 1e-13));
    }

    #[test]
    fn lake_at_rest_on_moving_mesh() {
        let sys = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let grid = StructuredGrid::line(50, 0.0, 20.0, Boundary::Outflow).unwrap();
        let bath = |x: f64| if (9.0..=13.0).contains(&x) { 2.0 } else { 0.0 };
        let mc = MonitorConfig::new(100.0, Sigma::Depth(1));
        let s = MovingSolver::new(&sys, &grid, SchemeConfig::default(), 1.0, Some(mc)).unwrap();
        let mut st = s.initial_state(|x, _| (vec![2.0, 0.0, 0.0, 4.0 - bath(x), 0.0, 0.0], bath(x)), 3).unwrap();
        for _ in 0..50 {
            let dt = s.prepare_step(&mut st, 10.0).unwrap();
            s.step(&mut st, dt).unwrap();
        }
        let f = st.field(&sys);
        let mut worst = 0.0f64;
        for k in 0..grid.len() {
            let e = f.elevations(k);
            worst = worst.max((e[0] - 6.0).abs()).max((e[1] - 4.0).abs());
            worst = worst.max(f.comps[1][k].abs()).max(f.comps[4][k].abs());
        }
        assert!(worst < 1e-11, "{worst:e}");
        let moved = st.x[0].iter().zip(identity_mesh(&grid)[0].iter()).any(|(a, b)| (a - b).abs() > 1e-3);
        assert!(moved);
    }

    #[test]
    fn evolved_jacobian_tracks_geometry() {
        let sys = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let grid = grid2(20, Boundary::Periodic);
        let s = MovingSolver::new(&sys, &grid, SchemeConfig::default(), 1.0, None).unwrap();
        let c = [1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        let mut st = s.state_from(prescribed(&grid, 0.0), |_, _| (c.to_vec(), 0.0)).unwrap();
        let dt = 0.005;
        for n in 0..20 {
            let target = prescribed(&grid, (n + 1) as f64 * dt);
            for d in 0..2 {
                for k in 0..grid.len() {
                    st.xdot[d][k] = (target[d][k] - st.x[d][k]) / dt;
                }
            }
            s.step(&mut st, dt).unwrap();
        }
        let jg = s.geometric_jacobian(&st).unwrap();
        let diff = st.jac.iter().zip(&jg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff:e}");
    }

    #[test]
    fn gamma_is_checked() {
        let sys = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let grid = StructuredGrid::line(20, 0.0, 1.0, Boundary::Outflow).unwrap();
        assert!(MovingSolver::new(&sys, &grid, SchemeConfig::default(), 0.4, None).is_err());
    }
}
