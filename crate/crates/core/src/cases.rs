//! Benchmark catalogue: initial data, bathymetries, layer systems, domains,
//! monitor settings and manufactured sources, plus a small run driver and a
//! text cache for fine-grid reference solutions.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{fill_z, to_conserved, Boundary, ConservedField, LayerSystem, StructuredGrid, MAX_WIDTH};
use crate::movingmesh::{MonitorConfig, MovingSolver, Sigma};
use crate::solver_fixed::{EnergyRecord, FixedSolver, SchemeConfig, SolverState, SourceFn};

/// Mesh-adaptation passes applied to the analytic initial data.
pub const INITIAL_ROUNDS: usize = 5;

/// Step of the finite-difference residual generator.
const ORACLE_STEP: f64 = 5e-3;
const D8: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

type PrimFn = Arc<dyn Fn(f64, f64, f64) -> Vec<f64> + Send + Sync>;
type BathFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseKind {
    /// Manufactured or exact smooth solution; convergence is measured.
    Accuracy,
    /// Lake at rest; surface levels must stay put.
    WellBalanced,
    /// Free evolution; energy decay and references.
    Evolution,
}

#[derive(Clone)]
pub struct CaseSpec {
    pub name: &'static str,
    pub kind: CaseKind,
    pub rho: Vec<f64>,
    pub g: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub bc: [Boundary; 2],
    /// 1 or 2
    pub dims: usize,
    pub end_time: f64,
    /// Output instants; the last one equals `end_time`.
    pub snapshots: Vec<f64>,
    pub default_n: [usize; 2],
    pub monitor: MonitorConfig,
    /// Layer-top elevations of the resting state (WB cases).
    pub levels: Option<Vec<f64>>,
    /// Nodes of the self-generated reference run.
    pub reference_n: usize,
    prim: PrimFn,
    bath: BathFn,
    exact: bool,
    printed_source: bool,
}

impl std::fmt::Debug for CaseSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CaseSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("rho", &self.rho)
            .field("g", &self.g)
            .field("dims", &self.dims)
            .field("end_time", &self.end_time)
            .finish()
    }
}

impl CaseSpec {
    pub fn layers(&self) -> usize {
        self.rho.len()
    }

    pub fn system(&self) -> Result<LayerSystem> {
        LayerSystem::new(self.rho.clone(), self.g)
    }

    /// Grid with `n1` (and `n2` in 2D) nodes per direction; `n2` is ignored in 1D.
    pub fn grid(&self, n1: usize, n2: Option<usize>) -> Result<StructuredGrid> {
        if self.dims == 1 {
            StructuredGrid::line(n1, self.lo[0], self.hi[0], self.bc[0])
        } else {
            StructuredGrid::new([n1, n2.unwrap_or(n1)], self.lo, self.hi, self.bc)
        }
    }

    pub fn bathymetry(&self, x1: f64, x2: f64) -> f64 {
        (self.bath)(x1, x2)
    }

    /// Primitive `[h, u, v]` per layer at time `t` (only the exact cases depend on t).
    pub fn primitive(&self, x1: f64, x2: f64, t: f64) -> Vec<f64> {
        (self.prim)(x1, x2, t)
    }

    /// Conserved state and bathymetry at t = 0.
    pub fn initial(&self, x1: f64, x2: f64) -> (Vec<f64>, f64) {
        (to_conserved(&self.primitive(x1, x2, 0.0)), self.bathymetry(x1, x2))
    }

    pub fn has_exact(&self) -> bool {
        self.exact
    }

    pub fn exact(&self, x1: f64, x2: f64, t: f64) -> Option<Vec<f64>> {
        self.exact.then(|| to_conserved(&self.primitive(x1, x2, t)))
    }

    pub fn field(&self, sys: &LayerSystem, grid: &StructuredGrid) -> Result<ConservedField> {
        if let Some(lv) = &self.levels {
            let bath = self.bath.clone();
            return ConservedField::lake_at_rest(sys, grid, move |a, b| bath(a, b), lv);
        }
        ConservedField::from_primitive(sys, grid, |a, b| self.primitive(a, b, 0.0), |a, b| self.bathymetry(a, b))
    }

    /// Manufactured source, if the case has an exact solution.
    pub fn source(&self) -> Option<Box<SourceFn>> {
        if !self.exact {
            return None;
        }
        // the printed expressions hold only for the catalogued parameters
        if self.printed_source && self.g == 1.0 && self.rho[0] / self.rho[1] == 0.7 {
            return Some(Box::new(|x: f64, _x2: f64, t: f64, out: &mut [f64]| {
                let [s2, s4] = printed_source_1d(x, t);
                out.iter_mut().for_each(|v| *v = 0.0);
                out[1] = s2;
                out[4] = s4;
            }));
        }
        let sys = self.system().ok()?;
        let me = self.clone();
        Some(Box::new(move |x1: f64, x2: f64, t: f64, out: &mut [f64]| {
            residual_source(&sys, &me, x1, x2, t, out);
        }))
    }
}

/// Sources printed for the two-layer 1D manufactured case, mapped to the two
/// x-momentum slots.
pub fn printed_source_1d(x: f64, t: f64) -> [f64; 2] {
    let r = 0.7;
    let (ct, st) = ((PI * t).cos(), (PI * t).sin());
    let (cx, sx) = ((PI * x).cos(), (PI * x).sin());
    let a = ct * cx + 6.0;
    let c = ct * cx + 4.0;
    let s2 = PI * cx * a + PI * ct * sx - 1.5 * PI * ct * sx * a - PI * ct * sx * (0.5 * ct * cx + 3.0)
        + PI * ct * st * st * sx.powi(3) / (a * a)
        + 2.0 * PI * cx * st * st * sx / a;
    let s4 = PI * cx * c + PI * ct * sx - 0.5 * PI * ct * sx * c - PI * ct * sx * (0.5 * ct * cx + 2.0)
        - PI * r * ct * sx * c
        + PI * ct * st * st * sx.powi(3) / (c * c)
        + 2.0 * PI * cx * st * st * sx / c;
    [s2, s4]
}

fn physical_flux(sys: &LayerSystem, u: &[f64], dir: usize, out: &mut [f64]) {
    let g = sys.g();
    for m in 0..sys.layers() {
        let (h, qx, qy) = (u[3 * m], u[3 * m + 1], u[3 * m + 2]);
        let q = if dir == 0 { qx } else { qy };
        let p = 0.5 * g * h * h;
        out[3 * m] = q;
        out[3 * m + 1] = qx * q / h + if dir == 0 { p } else { 0.0 };
        out[3 * m + 2] = qy * q / h + if dir == 1 { p } else { 0.0 };
    }
}

/// S = U_t + Σ_d (F_d)_{x_d} + g h_m ∇z_m, by 8th-order central differences of
/// the exact solution.
pub fn residual_source(sys: &LayerSystem, case: &CaseSpec, x1: f64, x2: f64, t: f64, out: &mut [f64]) {
    let nw = sys.width();
    let nl = sys.layers();
    let eps = ORACLE_STEP;
    let state = |a: f64, c: f64, s: f64| to_conserved(&case.primitive(a, c, s));
    out[..nw].iter_mut().for_each(|v| *v = 0.0);
    let mut fp = [0.0; MAX_WIDTH];
    let mut fm = [0.0; MAX_WIDTH];
    let mut zp = [0.0; MAX_WIDTH];
    let mut zm = [0.0; MAX_WIDTH];
    for (s, w) in D8.iter().enumerate() {
        let d = (s + 1) as f64 * eps;
        let (up, um) = (state(x1, x2, t + d), state(x1, x2, t - d));
        for c in 0..nw {
            out[c] += w * (up[c] - um[c]) / eps;
        }
    }
    let u0 = state(x1, x2, t);
    for dir in 0..case.dims {
        let mut grad_z = [0.0; MAX_WIDTH];
        for (s, w) in D8.iter().enumerate() {
            let d = (s + 1) as f64 * eps;
            let (pa, pb) = if dir == 0 { ((x1 + d, x2), (x1 - d, x2)) } else { ((x1, x2 + d), (x1, x2 - d)) };
            let up = state(pa.0, pa.1, t);
            let um = state(pb.0, pb.1, t);
            physical_flux(sys, &up, dir, &mut fp);
            physical_flux(sys, &um, dir, &mut fm);
            fill_z(sys, &up, case.bathymetry(pa.0, pa.1), &mut zp);
            fill_z(sys, &um, case.bathymetry(pb.0, pb.1), &mut zm);
            for c in 0..nw {
                out[c] += w * (fp[c] - fm[c]) / eps;
            }
            for m in 0..nl {
                grad_z[m] += w * (zp[m] - zm[m]) / eps;
            }
        }
        for m in 0..nl {
            out[3 * m + 1 + dir] += sys.g() * u0[3 * m] * grad_z[m];
        }
    }
}

fn monitor(theta: f64, sigma: Sigma) -> MonitorConfig {
    MonitorConfig::new(theta, sigma)
}

fn line(lo: f64, hi: f64, bc: Boundary) -> ([f64; 2], [f64; 2], [Boundary; 2]) {
    ([lo, 0.0], [hi, 0.0], [bc, Boundary::Periodic])
}

fn rest(h: &[f64]) -> Vec<f64> {
    h.iter().flat_map(|&h| [h, 0.0, 0.0]).collect()
}

fn in_omega(x1: f64, x2: f64) -> bool {
    (x1 < -0.5 && x2 < 0.0) || (x1 < 0.0 && x2 < -0.5) || (x1 + 0.5).powi(2) + (x2 + 0.5).powi(2) < 0.25
}

#[allow(clippy::too_many_arguments)]
fn case_spec(
    name: &'static str,
    kind: CaseKind,
    rho: &[f64],
    g: f64,
    dom: ([f64; 2], [f64; 2], [Boundary; 2]),
    dims: usize,
    end_time: f64,
    default_n: [usize; 2],
    monitor: MonitorConfig,
    prim: PrimFn,
    bath: BathFn,
) -> CaseSpec {
    CaseSpec {
        name,
        kind,
        rho: rho.to_vec(),
        g,
        lo: dom.0,
        hi: dom.1,
        bc: dom.2,
        dims,
        end_time,
        snapshots: vec![end_time],
        default_n,
        monitor,
        levels: None,
        reference_n: if dims == 1 { 3000 } else { 400 },
        prim,
        bath,
        exact: kind == CaseKind::Accuracy,
        printed_source: false,
    }
}

fn accuracy_1d(levels: &'static [f64], rho: &[f64], name: &'static str) -> CaseSpec {
    let prim: PrimFn = Arc::new(move |x, _, t| {
        let c = (PI * t).cos() * (PI * x).cos();
        let q = (PI * t).sin() * (PI * x).sin();
        levels.iter().flat_map(|&l| [c + l, q / (c + l), 0.0]).collect()
    });
    let bath: BathFn = Arc::new(|x, _| (PI * x).sin() + 1.5);
    let mut s = case_spec(
        name,
        CaseKind::Accuracy,
        rho,
        1.0,
        line(0.0, 2.0, Boundary::Periodic),
        1,
        0.1,
        [100, 1],
        monitor(1.0, Sigma::DepthPlusBottom(1)),
        prim,
        bath,
    );
    s.printed_source = levels.len() == 2;
    s
}

fn accuracy_2d(levels: &'static [f64], rho: &[f64], name: &'static str) -> CaseSpec {
    let prim: PrimFn = Arc::new(move |x1, x2, t| {
        let c = (PI * t).cos() * ((PI * x1).cos() + (PI * x2).cos());
        let (qx, qy) = ((PI * t).sin() * (PI * x1).sin(), (PI * t).sin() * (PI * x2).sin());
        levels.iter().flat_map(|&l| [c + l, qx / (c + l), qy / (c + l)]).collect()
    });
    let bath: BathFn = Arc::new(|x1, x2| (PI * x1).sin() + (PI * x2).sin() + 1.5);
    case_spec(
        name,
        CaseKind::Accuracy,
        rho,
        1.0,
        ([0.0; 2], [2.0; 2], [Boundary::Periodic; 2]),
        2,
        0.1,
        [40, 40],
        monitor(1.0, Sigma::DepthPlusBottom(1)),
        prim,
        bath,
    )
}

fn vortex_2d() -> CaseSpec {
    let (umax, g) = (0.2, 1.0);
    let prim: PrimFn = Arc::new(move |x1, x2, t| {
        let (a, c) = (x1 - t, x2 - t);
        let r2 = a * a + c * c;
        let h2 = 1.0 - umax * umax * (1.0 - r2).exp() / (2.0 * g);
        let e = umax * (0.5 * (1.0 - r2)).exp();
        vec![5.0, 0.0, 0.0, h2, 1.0 - e * c, 1.0 + e * a]
    });
    let mut mc = monitor(10.0, Sigma::DepthPlusBottom(1));
    mc.laplacian = 10.0;
    case_spec(
        "vortex-2d",
        CaseKind::Accuracy,
        &[0.7, 1.0],
        g,
        ([-5.0; 2], [5.0; 2], [Boundary::Periodic; 2]),
        2,
        0.5,
        [80, 80],
        mc,
        prim,
        Arc::new(|_, _| 0.0),
    )
}

fn well_balanced(name: &'static str, dims: usize, levels: &[f64], rho: &[f64], bath: BathFn) -> CaseSpec {
    let nl = levels.len();
    let lv = levels.to_vec();
    let b2 = bath.clone();
    let prim: PrimFn = Arc::new(move |x1, x2, _| {
        let b = b2(x1, x2);
        let h: Vec<f64> = (0..nl).map(|m| if m + 1 < nl { lv[m] - lv[m + 1] } else { lv[m] - b }).collect();
        rest(&h)
    });
    let (dom, end, n) = if dims == 1 {
        (line(0.0, 20.0, Boundary::Outflow), 0.2, [50, 1])
    } else {
        (([0.0; 2], [1.0; 2], [Boundary::Outflow; 2]), 0.1, [100, 100])
    };
    let mut s = case_spec(
        name,
        CaseKind::WellBalanced,
        rho,
        1.0,
        dom,
        dims,
        end,
        n,
        monitor(100.0, Sigma::Depth(nl - 1)),
        prim,
        bath,
    );
    s.levels = Some(levels.to_vec());
    s
}

fn smooth_1d() -> BathFn {
    Arc::new(|x, _| 2.0 * (-(x - 9.0).powi(2) / 2.0).exp() + 3.0 * (-(x - 11.5).powi(2)).exp())
}

fn step_1d() -> BathFn {
    Arc::new(|x, _| if (9.0..=13.0).contains(&x) { 2.0 } else { 0.0 })
}

fn smooth_2d() -> BathFn {
    Arc::new(|x1, x2| 1.2 * (-50.0 * ((x1 - 0.5).powi(2) + (x2 - 0.5).powi(2))).exp())
}

fn step_2d() -> BathFn {
    Arc::new(|x1, x2| {
        let inside = |a: f64, c: f64, lo: f64, hi: f64| (lo..=hi).contains(&a) && (lo..=hi).contains(&c);
        if inside(x1, x2, 0.4, 0.5) {
            1.0
        } else if inside(x1, x2, 0.4, 0.6) || inside(x1, x2, 0.3, 0.5) {
            0.5
        } else {
            0.0
        }
    })
}

fn dambreak_1d(three: bool) -> CaseSpec {
    let prim: PrimFn = Arc::new(move |x, _, _| {
        let low = if x <= 5.0 { 0.6 } else { 0.4 };
        if three {
            rest(&[1.0, 1.0 - low, low])
        } else {
            rest(&[1.0 - low, low])
        }
    });
    let (name, rho, end): (_, &[f64], _) =
        if three { ("dambreak-1d-3layer", &[0.64, 0.8, 1.0], 0.8) } else { ("dambreak-1d", &[0.8, 1.0], 1.25) };
    case_spec(
        name,
        CaseKind::Evolution,
        rho,
        9.812,
        line(0.0, 10.0, Boundary::Outflow),
        1,
        end,
        [400, 1],
        monitor(100.0, Sigma::TotalSurface),
        prim,
        Arc::new(|_, _| 0.0),
    )
}

fn hump_1d(x: f64) -> f64 {
    if (0.4..=0.6).contains(&x) {
        0.25 * ((10.0 * PI * (x - 0.5)).cos() + 1.0) - 2.0
    } else {
        -2.0
    }
}

fn perturb_1d(three: bool) -> CaseSpec {
    let prim: PrimFn = Arc::new(move |x, _, _| {
        let p = if (0.1..=0.2).contains(&x) { 1.00001 } else { 1.0 };
        let b = hump_1d(x);
        if three {
            rest(&[1.0, p, -1.0 - b])
        } else {
            rest(&[p, -1.0 - b])
        }
    });
    let (name, rho, end): (_, &[f64], _) =
        if three { ("perturb-1d-3layer", &[0.97, 0.98, 1.0], 0.1) } else { ("perturb-1d", &[0.98, 1.0], 0.15) };
    case_spec(
        name,
        CaseKind::Evolution,
        rho,
        9.812,
        line(-1.0, 1.0, Boundary::Outflow),
        1,
        end,
        [400, 1],
        monitor(100.0, Sigma::TotalSurface),
        prim,
        Arc::new(|x, _| hump_1d(x)),
    )
}

fn interface_2d(three: bool) -> CaseSpec {
    let bath: BathFn = Arc::new(|x1, x2| 0.05 * (-100.0 * (x1 * x1 + x2 * x2)).exp() - 1.0);
    let b2 = bath.clone();
    let prim: PrimFn = Arc::new(move |x1, x2, _| {
        let b = b2(x1, x2);
        let top = if in_omega(x1, x2) { 0.5 } else { 0.45 };
        let mut v = Vec::new();
        if three {
            v.extend([1.0, 0.0, 0.0]);
        }
        v.extend([top, 2.5, 2.5, -top - b, 2.5, 2.5]);
        v
    });
    let (name, rho, sigma): (_, &[f64], _) = if three {
        ("interface-2d-3layer", &[0.98, 1.0, 1.1], Sigma::Depth(1))
    } else {
        ("interface-2d", &[0.98, 1.0], Sigma::Depth(0))
    };
    case_spec(
        name,
        CaseKind::Evolution,
        rho,
        10.0,
        ([-1.0; 2], [1.0; 2], [Boundary::Outflow; 2]),
        2,
        0.1,
        [100, 100],
        monitor(300.0, sigma),
        prim,
        bath,
    )
}

fn circledam_2d() -> CaseSpec {
    let bath: BathFn = Arc::new(|x1, x2| 0.5 * (-5.0 * (x1 * x1 + x2 * x2)).exp() - 2.0);
    let prim: PrimFn = Arc::new(|x1, x2, _| {
        let r2 = x1 * x1 + x2 * x2;
        let e = 0.5 * (-5.0 * r2).exp();
        if r2 >= 1.0 {
            rest(&[1.8, 0.2 - e])
        } else {
            rest(&[0.2, 1.8 - e])
        }
    });
    case_spec(
        "circledam-2d",
        CaseKind::Evolution,
        &[0.98, 1.0],
        9.812,
        ([-2.0; 2], [2.0; 2], [Boundary::Outflow; 2]),
        2,
        1.0,
        [150, 150],
        monitor(100.0, Sigma::DepthPlusBottom(1)),
        prim,
        bath,
    )
}

fn perturb_2d() -> CaseSpec {
    let bath: BathFn = Arc::new(|x1, x2| 0.8 * (-5.0 * (x1 - 0.9).powi(2) - 50.0 * (x2 - 0.5).powi(2)).exp());
    let b2 = bath.clone();
    let prim: PrimFn = Arc::new(move |x1, x2, _| {
        let b = b2(x1, x2);
        let h2 = if (0.05..=0.15).contains(&x1) { 1.01 - b } else { 1.0 - b };
        rest(&[2.0 - h2 - b, h2])
    });
    let mut s = case_spec(
        "perturb-2d",
        CaseKind::Evolution,
        &[0.85, 1.0],
        9.812,
        ([0.0, 0.0], [2.0, 1.0], [Boundary::Outflow; 2]),
        2,
        2.0,
        [200, 100],
        monitor(100.0, Sigma::DepthPlusBottom(1)),
        prim,
        bath,
    );
    s.snapshots = vec![0.9, 1.3, 1.7, 2.0];
    s
}

pub fn case_catalog() -> Vec<CaseSpec> {
    let two = [0.8, 1.0];
    let three = [0.8, 1.0, 1.2];
    vec![
        accuracy_1d(&[6.0, 4.0], &[0.7, 1.0], "accuracy-1d-2layer"),
        accuracy_1d(&[8.0, 6.0, 4.0], &[0.7, 1.0, 1.3], "accuracy-1d-3layer"),
        well_balanced("wb-1d-smooth", 1, &[6.0, 4.0], &two, smooth_1d()),
        well_balanced("wb-1d-step", 1, &[6.0, 4.0], &two, step_1d()),
        well_balanced("wb-1d-smooth-3layer", 1, &[8.0, 6.0, 4.0], &three, smooth_1d()),
        well_balanced("wb-1d-step-3layer", 1, &[8.0, 6.0, 4.0], &three, step_1d()),
        dambreak_1d(false),
        dambreak_1d(true),
        perturb_1d(false),
        perturb_1d(true),
        accuracy_2d(&[6.0, 4.0], &[0.7, 1.0], "accuracy-2d"),
        accuracy_2d(&[8.0, 6.0, 4.0], &[0.7, 1.0, 1.3], "accuracy-2d-3layer"),
        vortex_2d(),
        well_balanced("wb-2d-smooth", 2, &[2.2, 2.0], &two, smooth_2d()),
        well_balanced("wb-2d-step", 2, &[2.2, 2.0], &two, step_2d()),
        well_balanced("wb-2d-smooth-3layer", 2, &[2.4, 2.2, 2.0], &three, smooth_2d()),
        well_balanced("wb-2d-step-3layer", 2, &[2.4, 2.2, 2.0], &three, step_2d()),
        interface_2d(false),
        interface_2d(true),
        circledam_2d(),
        perturb_2d(),
    ]
}

pub fn find_case(name: &str) -> Result<CaseSpec> {
    let all = case_catalog();
    let names: Vec<&str> = all.iter().map(|c| c.name).collect();
    all.iter()
        .find(|c| c.name == name)
        .cloned()
        .ok_or_else(|| Error::Usage(format!("unknown case '{name}'; available: {}", names.join(", "))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshMode {
    Fixed,
    Moving,
}

impl MeshMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeshMode::Fixed => "fixed",
            MeshMode::Moving => "moving",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub n: [usize; 2],
    pub mesh: MeshMode,
    pub scheme: SchemeConfig,
    /// None selects ρ_M.
    pub gamma: Option<f64>,
    pub monitor: Option<MonitorConfig>,
    pub end_time: Option<f64>,
    /// Extra snapshot every this many steps.
    pub snapshot_every: Option<usize>,
}

impl RunOptions {
    pub fn new(n: [usize; 2], mesh: MeshMode) -> Self {
        Self { n, mesh, scheme: SchemeConfig::default(), gamma: None, monitor: None, end_time: None, snapshot_every: None }
    }
}

/// Final state of a run on the physical nodes.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub grid: StructuredGrid,
    pub field: ConservedField,
    pub x: [Vec<f64>; 2],
    pub jac: Vec<f64>,
    pub t: f64,
    pub steps: usize,
    pub ledger: Vec<EnergyRecord>,
    /// (t, field, x) at each requested output instant, in time order.
    pub snapshots: Vec<(f64, ConservedField, [Vec<f64>; 2])>,
}

impl RunOutcome {
    /// Quadrature weight J Δξ per node.
    pub fn weights(&self) -> Vec<f64> {
        let cell: f64 = (0..self.grid.dims()).map(|d| self.grid.spacing(d)).product();
        self.jac.iter().map(|j| j * cell).collect()
    }
}

/// Runs a case on a fixed or moving mesh up to its end time, stopping at each
/// snapshot instant on the way.
pub fn simulate(case: &CaseSpec, opt: &RunOptions) -> Result<RunOutcome> {
    let sys = case.system()?;
    let grid = case.grid(opt.n[0], (case.dims == 2).then_some(opt.n[1]))?;
    let end = opt.end_time.unwrap_or(case.end_time);
    let mut stops: Vec<f64> = case.snapshots.iter().copied().filter(|&s| s < end).collect();
    stops.push(end);
    let src = case.source();
    let mut snaps = Vec::new();
    let every = opt.snapshot_every.filter(|&k| k > 0);
    match opt.mesh {
        MeshMode::Fixed => {
            let mut solver = FixedSolver::new(&sys, &grid, opt.scheme)?;
            if let Some(s) = src.as_deref() {
                solver = solver.with_source(s);
            }
            let mut st = SolverState::new(&case.field(&sys, &grid)?);
            for &s in &stops {
                solver.advance(&mut st, s, |st| {
                    if every.is_some_and(|k| st.steps % k == 0) {
                        snaps.push((st.t, st.field(&sys), identity(&grid)));
                    }
                })?;
                if snaps.last().map_or(true, |l: &(f64, _, _)| l.0 != st.t) {
                    snaps.push((st.t, st.field(&sys), identity(&grid)));
                }
            }
            let field = st.field(&sys);
            Ok(RunOutcome {
                x: identity(&grid),
                jac: vec![1.0; grid.len()],
                grid,
                field,
                t: st.t,
                steps: st.steps,
                ledger: st.ledger,
                snapshots: snaps,
            })
        }
        MeshMode::Moving => {
            let gamma = opt.gamma.unwrap_or(*case.rho.last().unwrap_or(&1.0));
            let mc = opt.monitor.unwrap_or(case.monitor);
            let mut solver = MovingSolver::new(&sys, &grid, opt.scheme, gamma, Some(mc))?;
            if let Some(s) = src.as_deref() {
                solver = solver.with_source(s);
            }
            let mut st = if let Some(lv) = &case.levels {
                // adapt to the bottom, then sample the resting state exactly
                let lv = lv.clone();
                let nl = lv.len();
                solver.initial_state(
                    |a, b| {
                        let bb = case.bathymetry(a, b);
                        let h: Vec<f64> = (0..nl).map(|m| if m + 1 < nl { lv[m] - lv[m + 1] } else { lv[m] - bb }).collect();
                        (to_conserved(&rest(&h)), bb)
                    },
                    INITIAL_ROUNDS,
                )?
            } else {
                solver.initial_state(|a, b| case.initial(a, b), INITIAL_ROUNDS)?
            };
            for &s in &stops {
                solver.advance(&mut st, s, |st| {
                    if every.is_some_and(|k| st.steps % k == 0) {
                        snaps.push((st.t, st.field(&sys), st.x.clone()));
                    }
                })?;
                if snaps.last().map_or(true, |l: &(f64, _, _)| l.0 != st.t) {
                    snaps.push((st.t, st.field(&sys), st.x.clone()));
                }
            }
            let field = st.field(&sys);
            Ok(RunOutcome {
                grid,
                field,
                x: st.x,
                jac: st.jac,
                t: st.t,
                steps: st.steps,
                ledger: st.ledger,
                snapshots: snaps,
            })
        }
    }
}

fn identity(grid: &StructuredGrid) -> [Vec<f64>; 2] {
    crate::movingmesh::identity_mesh(grid)
}

/// ℓ¹ (J Δξ weighted) and ℓ∞ errors of each layer-top elevation against its resting level.
pub fn level_errors(out: &RunOutcome, levels: &[f64]) -> Vec<(f64, f64)> {
    let w = out.weights();
    levels
        .iter()
        .enumerate()
        .map(|(k, &lv)| {
            let e = level(&out.field, k);
            e.iter().zip(&w).fold((0.0, 0.0f64), |(l1, li), (v, wk)| (l1 + (v - lv).abs() * wk, li.max((v - lv).abs())))
        })
        .collect()
}

/// Sum of the ℓ¹ errors and max of the ℓ∞ errors over all levels.
pub fn surface_errors(out: &RunOutcome, levels: &[f64]) -> (f64, f64) {
    level_errors(out, levels).iter().fold((0.0, 0.0f64), |(a, b), &(l1, li)| (a + l1, b.max(li)))
}

/// Elevation of the top of layer `m` at every node.
pub fn level(field: &ConservedField, m: usize) -> Vec<f64> {
    (0..field.nodes()).map(|k| field.elevations(k)[m]).collect()
}

pub fn max_velocity(field: &ConservedField) -> f64 {
    let mut v = 0.0f64;
    for m in 0..field.layers {
        for k in 0..field.nodes() {
            let h = field.comps[3 * m][k];
            v = v.max((field.comps[3 * m + 1][k] / h).abs()).max((field.comps[3 * m + 2][k] / h).abs());
        }
    }
    v
}

/// ℓ¹ error of the x-velocity of layer `m` against the exact solution.
pub fn velocity_l1_error(case: &CaseSpec, out: &RunOutcome, m: usize) -> Result<f64> {
    if !case.has_exact() {
        return Err(Error::Usage(format!("{} has no exact solution", case.name)));
    }
    let w = out.weights();
    let mut e = 0.0;
    for k in 0..out.field.nodes() {
        let ex = to_primitive_layer(&case.exact(out.x[0][k], out.x[1][k], out.t).unwrap_or_default(), m);
        let h = out.field.comps[3 * m][k];
        e += (out.field.comps[3 * m + 1][k] / h - ex).abs() * w[k];
    }
    Ok(e)
}

fn to_primitive_layer(u: &[f64], m: usize) -> f64 {
    u[3 * m + 1] / u[3 * m]
}

/// Observed orders from errors on successively refined grids with node counts `n`.
pub fn observed_orders(n: &[usize], err: &[f64]) -> Vec<f64> {
    n.windows(2)
        .zip(err.windows(2))
        .map(|(nn, e)| {
            let ratio = if nn[1] == 2 * nn[0] { 2f64 } else { nn[1] as f64 / nn[0] as f64 };
            (e[0] / e[1]).ln() / ratio.ln()
        })
        .collect()
}

/// A 1D profile (coordinates and values) written as delimited text.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl Profile {
    /// Piecewise linear interpolation; constant beyond the ends.
    pub fn at(&self, x: f64) -> f64 {
        let n = self.x.len();
        if n == 0 {
            return f64::NAN;
        }
        if x <= self.x[0] {
            return self.v[0];
        }
        if x >= self.x[n - 1] {
            return self.v[n - 1];
        }
        let i = self.x.partition_point(|&a| a <= x) - 1;
        let s = (x - self.x[i]) / (self.x[i + 1] - self.x[i]);
        self.v[i] + s * (self.v[i + 1] - self.v[i])
    }

    /// Σ |v(x_k) - ref(x_k)| w_k
    pub fn l1_distance(&self, reference: &Profile, weights: &[f64]) -> f64 {
        self.x.iter().zip(&self.v).zip(weights).map(|((&x, &v), w)| (v - reference.at(x)).abs() * w).sum()
    }
}

/// Total-surface profile of a 1D run.
pub fn surface_profile(out: &RunOutcome) -> Profile {
    Profile { x: out.x[0].clone(), v: level(&out.field, 0) }
}

/// Disk cache of fine-grid reference profiles keyed by case, resolution and mesh.
pub struct ReferenceCache {
    pub dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self { dir: dir.as_ref().to_path_buf() }
    }

    pub fn path(&self, case: &str, n: usize, mesh: MeshMode) -> PathBuf {
        self.dir.join(format!("{case}_{n}_{}.txt", mesh.as_str()))
    }

    pub fn load(&self, case: &str, n: usize, mesh: MeshMode) -> Result<Option<Profile>> {
        let p = self.path(case, n, mesh);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p)?;
        let mut prof = Profile { x: Vec::new(), v: Vec::new() };
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(v))) => {
                    prof.x.push(x);
                    prof.v.push(v);
                }
                _ => return Err(Error::Numeric(format!("malformed reference line in {}: {line}", p.display()))),
            }
        }
        Ok(Some(prof))
    }

    pub fn store(&self, case: &str, n: usize, mesh: MeshMode, t: f64, prof: &Profile) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut s = format!("# case={case} n={n} mesh={} t={t:e}\n", mesh.as_str());
        for (x, v) in prof.x.iter().zip(&prof.v) {
            let _ = writeln!(s, "{x:.17e} {v:.17e}");
        }
        fs::write(self.path(case, n, mesh), s)?;
        let manifest = self.dir.join("manifest.txt");
        let mut m = fs::read_to_string(&manifest).unwrap_or_default();
        let _ = writeln!(m, "{case} {n} {} t={t:e}", mesh.as_str());
        fs::write(manifest, m)?;
        Ok(())
    }

    /// Cached surface profile, computed with the fixed mesh if missing.
    pub fn get_or_compute(&self, case: &CaseSpec, n: usize) -> Result<Profile> {
        if let Some(p) = self.load(case.name, n, MeshMode::Fixed)? {
            return Ok(p);
        }
        if case.dims != 1 {
            return Err(Error::Usage(format!("references are one-dimensional; {} is 2D", case.name)));
        }
        let out = simulate(case, &RunOptions::new([n, 1], MeshMode::Fixed))?;
        let prof = surface_profile(&out);
        self.store(case.name, n, MeshMode::Fixed, out.t, &prof)?;
        Ok(prof)
    }
}
