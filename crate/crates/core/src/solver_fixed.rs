//! Semi-discrete high-order scheme on a fixed uniform mesh and its SSP-RK3
//! time stepping.
//!
//! States are stored node-major (`u[k * 3M + c]`). Each direction is swept line
//! by line; a line is padded with `GHOSTS` nodes on each side (wrapped for
//! periodic, clamped for outflow).

use rayon::prelude::*;

use crate::dissipation::fixed_mesh_d;
use crate::ecflux::{coefficients, ec_flux_z};
use crate::energy::{energy, entropy_vars};
use crate::error::{Error, Result};
use crate::model::{fill_z, ConservedField, LayerSystem, StructuredGrid, H_MIN, MAX_WIDTH};
use crate::wavespeed::max_wave_speed;

pub const GHOSTS: usize = 3;
pub const DEFAULT_CFL: f64 = 0.4;

/// Manufactured source S(x1, x2, t) written into a 3M-vector.
pub type SourceFn = dyn Fn(f64, f64, f64, &mut [f64]) + Send + Sync;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DtPolicy {
    /// cfl / Σ max α/Δx
    Standard,
    /// cfl · (min Δx)^{5/3}
    Accuracy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeConfig {
    pub p: usize,
    pub cfl: f64,
    pub dissipation: bool,
    pub dt_policy: DtPolicy,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self { p: 3, cfl: DEFAULT_CFL, dissipation: true, dt_policy: DtPolicy::Standard }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        coefficients(self.p)?;
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    pub dt: f64,
    pub energy: f64,
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
    pub steps: usize,
    /// Max wave speed per direction from the last `cfl_dt`.
    pub alpha: [f64; 2],
    pub ledger: Vec<EnergyRecord>,
}

impl SolverState {
    pub fn new(field: &ConservedField) -> Self {
        Self { u: field.to_node_major(), b: field.b.clone(), t: 0.0, steps: 0, alpha: [0.0; 2], ledger: Vec::new() }
    }

    pub fn field(&self, sys: &LayerSystem) -> ConservedField {
        ConservedField::from_node_major(sys.layers(), &self.u, self.b.clone())
    }
}

/// Node index of lattice position `i` on line `line` along `dir`.
#[inline]
pub(crate) fn line_node(grid: &StructuredGrid, dir: usize, line: usize, i: isize) -> usize {
    let k = grid.ghost_index(dir, i);
    if dir == 0 {
        grid.index(k, line)
    } else {
        grid.index(line, k)
    }
}

/// Neumaier-compensated sum in iteration order.
pub fn compensated_sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

pub struct FixedSolver<'a> {
    pub sys: &'a LayerSystem,
    pub grid: &'a StructuredGrid,
    pub cfg: SchemeConfig,
    alpha: &'static [f64],
    source: Option<&'a SourceFn>,
}

impl<'a> FixedSolver<'a> {
    pub fn new(sys: &'a LayerSystem, grid: &'a StructuredGrid, cfg: SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let alpha = coefficients(cfg.p)?;
        Ok(Self { sys, grid, cfg, alpha, source: None })
    }

    pub fn with_source(mut self, source: &'a SourceFn) -> Self {
        self.source = Some(source);
        self
    }

    fn check_len(&self, u: &[f64], b: &[f64]) -> Result<()> {
        let n = self.grid.len();
        if u.len() != n * self.sys.width() || b.len() != n {
            return Err(Error::Usage(format!("field size {} / {} does not match the grid ({n} nodes)", u.len(), b.len())));
        }
        Ok(())
    }

    /// Tendency dU/dt at time t.
    pub fn rhs(&self, u: &[f64], b: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.check_len(u, b)?;
        let nw = self.sys.width();
        out.iter_mut().for_each(|o| *o = 0.0);
        for dir in 0..self.grid.dims() {
            let lines = self.grid.n[1 - dir];
            let parts: Vec<Vec<f64>> = (0..lines)
                .into_par_iter()
                .map(|l| self.line_rhs(dir, l, u, b))
                .collect::<Result<_>>()?;
            for (l, part) in parts.iter().enumerate() {
                for i in 0..self.grid.n[dir] {
                    let k = line_node(self.grid, dir, l, i as isize);
                    for c in 0..nw {
                        out[k * nw + c] += part[i * nw + c];
                    }
                }
            }
        }
        if let Some(src) = self.source {
            let grid = self.grid;
            out.par_chunks_mut(nw).enumerate().for_each(|(k, o)| {
                let mut s = [0.0; MAX_WIDTH];
                let (i, j) = (k % grid.n[0], k / grid.n[0]);
                src(grid.coord(0, i), grid.coord(1, j), t, &mut s[..nw]);
                for c in 0..nw {
                    o[c] += s[c];
                }
            });
        }
        if let Some(p) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: p / nw });
        }
        Ok(())
    }

    fn line_rhs(&self, dir: usize, line: usize, u: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let sys = self.sys;
        let (nw, nl) = (sys.width(), sys.layers());
        let n = self.grid.n[dir];
        let ne = n + 2 * GHOSTS;
        let mut eu = vec![0.0; ne * nw];
        let mut ez = vec![0.0; ne * nl];
        for e in 0..ne {
            let k = line_node(self.grid, dir, line, e as isize - GHOSTS as isize);
            let s = &u[k * nw..(k + 1) * nw];
            for m in 0..nl {
                if !(s[3 * m] >= H_MIN) {
                    return Err(Error::Dry { node: k, layer: m + 1, h: s[3 * m] });
                }
            }
            eu[e * nw..(e + 1) * nw].copy_from_slice(s);
            fill_z(sys, s, b[k], &mut ez[e * nl..(e + 1) * nl]);
        }
        // interface f sits between ext nodes GHOSTS-1+f and GHOSTS+f, f = 0..=n
        let mut flux = vec![0.0; (n + 1) * nw];
        let mut zs = vec![0.0; (n + 1) * nl];
        let mut tmp = [0.0; MAX_WIDTH];
        let p = self.alpha.len();
        let first = GHOSTS - 1;
        for j in (first + 1 - p)..(first + n + 1) {
            for (qi, &a) in self.alpha.iter().enumerate() {
                let q = qi + 1;
                // pair (j, j+q) feeds interfaces j .. j+q-1 (by left node)
                let lo = j.max(first);
                let hi = (j + q - 1).min(first + n);
                if lo > hi {
                    continue;
                }
                let (ul, ur) = (&eu[j * nw..(j + 1) * nw], &eu[(j + q) * nw..(j + q + 1) * nw]);
                let (zl, zr) = (&ez[j * nl..(j + 1) * nl], &ez[(j + q) * nl..(j + q + 1) * nl]);
                ec_flux_z(sys, dir, ul, zl, ur, zr, &mut tmp);
                for i in lo..=hi {
                    let f = i - first;
                    for c in 0..nw {
                        flux[f * nw + c] += a * tmp[c];
                    }
                    for m in 0..nl {
                        zs[f * nl + m] += a * 0.5 * (zl[m] + zr[m]);
                    }
                }
            }
        }
        if self.cfg.dissipation {
            let mut ev = vec![0.0; ne * nw];
            for e in 0..ne {
                let k = line_node(self.grid, dir, line, e as isize - GHOSTS as isize);
                entropy_vars(sys, &eu[e * nw..(e + 1) * nw], b[k], &mut ev[e * nw..(e + 1) * nw]);
            }
            let mut d = [0.0; MAX_WIDTH];
            for f in 0..=n {
                let l = first + f - 2;
                fixed_mesh_d(sys, dir, &eu[l * nw..(l + 6) * nw], &ev[l * nw..(l + 6) * nw], &mut d);
                for c in 0..nw {
                    flux[f * nw + c] -= d[c];
                }
            }
        }
        let dx = self.grid.spacing(dir);
        let g = sys.g();
        let mut out = vec![0.0; n * nw];
        for i in 0..n {
            let e = GHOSTS + i;
            for c in 0..nw {
                out[i * nw + c] = -(flux[(i + 1) * nw + c] - flux[i * nw + c]) / dx;
            }
            for m in 0..nl {
                let h = eu[e * nw + 3 * m];
                out[i * nw + 3 * m + 1 + dir] -= g * h * (zs[(i + 1) * nl + m] - zs[i * nl + m]) / dx;
            }
        }
        Ok(out)
    }

    /// Max wave speed per direction.
    pub fn max_speeds(&self, u: &[f64]) -> [f64; 2] {
        let nw = self.sys.width();
        let mut a = [0.0; 2];
        for (dir, ad) in a.iter_mut().enumerate().take(self.grid.dims()) {
            *ad = u
                .par_chunks(nw)
                .map(|s| max_wave_speed(self.sys, s, dir))
                .reduce(|| 0.0, f64::max);
        }
        a
    }

    /// Time step from the configured policy; also caches the speeds in `state`.
    pub fn cfl_dt(&self, state: &mut SolverState) -> Result<f64> {
        let a = self.max_speeds(&state.u);
        state.alpha = a;
        match self.cfg.dt_policy {
            DtPolicy::Standard => {
                let mut s = 0.0;
                for d in 0..self.grid.dims() {
                    s += a[d] / self.grid.spacing(d);
                }
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Numeric(format!("wave speeds {a:?} give no admissible time step")));
                }
                Ok(self.cfg.cfl / s)
            }
            DtPolicy::Accuracy => {
                let h = (0..self.grid.dims()).map(|d| self.grid.spacing(d)).fold(f64::INFINITY, f64::min);
                Ok(self.cfg.cfl * h.powf(5.0 / 3.0))
            }
        }
    }

    /// One SSP-RK3 step, written in increment form so a vanishing tendency
    /// leaves the state bitwise unchanged.
    pub fn step(&self, state: &mut SolverState, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Usage(format!("time step must be positive, got {dt}")));
        }
        let t = state.t;
        let u0 = &state.u;
        let b = &state.b;
        let n = u0.len();
        let mut l = vec![0.0; n];
        self.rhs(u0, b, t, &mut l)?;
        let u1: Vec<f64> = (0..n).map(|k| u0[k] + dt * l[k]).collect();
        self.rhs(&u1, b, t + dt, &mut l)?;
        let u2: Vec<f64> = (0..n).map(|k| u0[k] + 0.25 * ((u1[k] - u0[k]) + dt * l[k])).collect();
        self.rhs(&u2, b, t + 0.5 * dt, &mut l)?;
        let u3: Vec<f64> = (0..n).map(|k| u0[k] + 2.0 / 3.0 * ((u2[k] - u0[k]) + dt * l[k])).collect();
        state.u = u3;
        state.t = t + dt;
        state.steps += 1;
        Ok(())
    }

    /// Σ η ΔV over nodes in row-major order.
    pub fn total_energy(&self, u: &[f64], b: &[f64]) -> f64 {
        let nw = self.sys.width();
        let cell: f64 = (0..self.grid.dims()).map(|d| self.grid.spacing(d)).product();
        cell * compensated_sum(u.chunks_exact(nw).zip(b).map(|(s, &bk)| energy(self.sys, s, bk)))
    }

    /// Semi-discrete energy rate Σ Vᵀ dU/dt ΔV.
    pub fn energy_rate(&self, u: &[f64], b: &[f64], t: f64) -> Result<f64> {
        let nw = self.sys.width();
        let mut l = vec![0.0; u.len()];
        self.rhs(u, b, t, &mut l)?;
        let cell: f64 = (0..self.grid.dims()).map(|d| self.grid.spacing(d)).product();
        let mut v = [0.0; MAX_WIDTH];
        let terms = u.chunks_exact(nw).zip(b).zip(l.chunks_exact(nw)).map(|((s, &bk), lk)| {
            entropy_vars(self.sys, s, bk, &mut v[..nw]);
            v[..nw].iter().zip(lk).map(|(a, c)| a * c).sum::<f64>()
        });
        Ok(cell * compensated_sum(terms.collect::<Vec<_>>()))
    }

    /// Steps until `t_end`, recording the energy after every step. `on_step` is
    /// called after each step.
    pub fn advance(&self, state: &mut SolverState, t_end: f64, mut on_step: impl FnMut(&SolverState)) -> Result<()> {
        if state.ledger.is_empty() {
            let e = self.total_energy(&state.u, &state.b);
            state.ledger.push(EnergyRecord { t: state.t, dt: 0.0, energy: e });
        }
        while state.t < t_end * (1.0 - 1e-14) {
            let dt = self.cfl_dt(state)?.min(t_end - state.t);
            self.step(state, dt)?;
            let e = self.total_energy(&state.u, &state.b);
            state.ledger.push(EnergyRecord { t: state.t, dt, energy: e });
            on_step(state);
        }
        Ok(())
    }
}

/// True if the energy series never rises by more than `rel` of its first value.
pub fn energy_non_increasing(ledger: &[EnergyRecord], rel: f64) -> bool {
    let Some(first) = ledger.first() else { return true };
    let tol = rel * first.energy.abs().max(1e-300);
    ledger.windows(2).all(|w| w[1].energy <= w[0].energy + tol)
}
