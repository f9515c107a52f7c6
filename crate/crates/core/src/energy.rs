//! Energy, energy fluxes, entropy variables, potentials, the Hessian of the
//! energy and its scaling factor R, and the modified energy used on moving meshes.
//!
//! All node states are conserved vectors `[h1, h1 u1, h1 v1, ...]` with the
//! bathymetry passed separately.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{fill_z, LayerSystem, MAX_LAYERS};

#[inline]
fn vel(u: &[f64], m: usize) -> (f64, f64, f64) {
    let h = u[3 * m];
    (h, u[3 * m + 1] / h, u[3 * m + 2] / h)
}

/// Physical flux F_dir (dir 0 → x1, 1 → x2).
pub fn physical_flux(sys: &LayerSystem, u: &[f64], dir: usize, out: &mut [f64]) {
    let g = sys.g();
    for m in 0..sys.layers() {
        let (h, a, c) = vel(u, m);
        let o = &mut out[3 * m..3 * m + 3];
        if dir == 0 {
            o[0] = h * a;
            o[1] = h * a * a + 0.5 * g * h * h;
            o[2] = h * a * c;
        } else {
            o[0] = h * c;
            o[1] = h * a * c;
            o[2] = h * c * c + 0.5 * g * h * h;
        }
    }
}

pub fn energy(sys: &LayerSystem, u: &[f64], b: f64) -> f64 {
    let g = sys.g();
    let rho = sys.rho();
    let mut eta = 0.0;
    for m in 0..sys.layers() {
        let (h, a, c) = vel(u, m);
        eta += 0.5 * rho[m] * (h * a * a + h * c * c + g * h * h);
        eta += g * rho[m] * h * b;
        for k in 0..m {
            eta += g * rho[k] * u[3 * k] * h;
        }
    }
    eta
}

/// (q1, q2).
pub fn energy_flux(sys: &LayerSystem, u: &[f64], b: f64) -> (f64, f64) {
    let g = sys.g();
    let rho = sys.rho();
    let mut z = [0.0; MAX_LAYERS];
    fill_z(sys, u, b, &mut z);
    let (mut q1, mut q2) = (0.0, 0.0);
    for m in 0..sys.layers() {
        let (h, a, c) = vel(u, m);
        let ke = 0.5 * rho[m] * (h * a * a + h * c * c);
        let pe = g * rho[m] * h * h + g * rho[m] * h * z[m];
        q1 += ke * a + pe * a;
        q2 += ke * c + pe * c;
    }
    (q1, q2)
}

/// Entropy variables V (3M entries).
pub fn entropy_vars(sys: &LayerSystem, u: &[f64], b: f64, out: &mut [f64]) {
    let g = sys.g();
    let rho = sys.rho();
    let mut z = [0.0; MAX_LAYERS];
    fill_z(sys, u, b, &mut z);
    for m in 0..sys.layers() {
        let (h, a, c) = vel(u, m);
        out[3 * m] = g * rho[m] * (h + z[m]) - 0.5 * rho[m] * (a * a + c * c);
        out[3 * m + 1] = rho[m] * a;
        out[3 * m + 2] = rho[m] * c;
    }
}

pub fn check_gamma(sys: &LayerSystem, gamma: f64) -> Result<()> {
    let rm = sys.rho()[sys.layers() - 1];
    if !(gamma > 0.5 * rm) || !gamma.is_finite() {
        return Err(Error::Config(format!(
            "gamma must exceed half the bottom density ({}), got {gamma}",
            0.5 * rm
        )));
    }
    Ok(())
}

/// Default modified-energy constant: the bottom-layer density.
pub fn default_gamma(sys: &LayerSystem) -> f64 {
    sys.rho()[sys.layers() - 1]
}

/// Extended entropy variables V̂ (3M + 1 entries) for the state (U, b).
pub fn entropy_vars_ext(sys: &LayerSystem, u: &[f64], b: f64, gamma: f64, out: &mut [f64]) -> Result<()> {
    check_gamma(sys, gamma)?;
    entropy_vars_ext_unchecked(sys, u, b, gamma, out);
    Ok(())
}

#[inline]
pub(crate) fn entropy_vars_ext_unchecked(sys: &LayerSystem, u: &[f64], b: f64, gamma: f64, out: &mut [f64]) {
    let nw = sys.width();
    entropy_vars(sys, u, b, &mut out[..nw]);
    let g = sys.g();
    let mut s = 0.0;
    for m in 0..sys.layers() {
        s += sys.rho()[m] * u[3 * m];
    }
    out[nw] = g * s + 2.0 * gamma * g * b;
}

/// η̂ = η + γ g b².
pub fn modified_energy(sys: &LayerSystem, u: &[f64], b: f64, gamma: f64) -> Result<f64> {
    check_gamma(sys, gamma)?;
    Ok(energy(sys, u, b) + gamma * sys.g() * b * b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Potentials {
    pub phi: f64,
    pub psi1: f64,
    pub psi2: f64,
}

pub fn potentials(sys: &LayerSystem, u: &[f64]) -> Potentials {
    let g = sys.g();
    let rho = sys.rho();
    let nl = sys.layers();
    let mut phi = 0.0;
    let (mut psi1, mut psi2) = (0.0, 0.0);
    let mut below = 0.0;
    for m in (0..nl).rev() {
        let (h, a, c) = vel(u, m);
        phi += 0.5 * g * rho[m] * h * (h + 2.0 * below);
        psi1 += 0.5 * g * rho[m] * h * h * a;
        psi2 += 0.5 * g * rho[m] * h * h * c;
        below += h;
    }
    Potentials { phi, psi1, psi2 }
}

/// φ̂ = V̂ᵀÛ − η̂ evaluated through the identity.
pub fn phi_hat(sys: &LayerSystem, u: &[f64], b: f64, gamma: f64) -> f64 {
    let nw = sys.width();
    let mut v = [0.0; 3 * MAX_LAYERS + 1];
    entropy_vars_ext_unchecked(sys, u, b, gamma, &mut v);
    let mut s = v[nw] * b;
    for i in 0..nw {
        s += v[i] * u[i];
    }
    s - (energy(sys, u, b) + gamma * sys.g() * b * b)
}

fn a2_block(rho: f64, g: f64, h: f64, a: f64, c: f64) -> [[f64; 3]; 3] {
    [
        [rho * (a * a + c * c + g * h) / h, -rho * a / h, -rho * c / h],
        [-rho * a / h, rho / h, 0.0],
        [-rho * c / h, 0.0, rho / h],
    ]
}

/// Hessian ∂²η/∂U², grown one layer at a time: each new layer adds the
/// depth couplings gρ_k to the earlier layers and its own diagonal block.
pub fn hessian(sys: &LayerSystem, u: &[f64]) -> DMatrix<f64> {
    let g = sys.g();
    let rho = sys.rho();
    let nl = sys.layers();
    let mut mat = DMatrix::<f64>::zeros(0, 0);
    for n in 0..nl {
        let old = 3 * n;
        let mut next = DMatrix::<f64>::zeros(old + 3, old + 3);
        next.view_mut((0, 0), (old, old)).copy_from(&mat);
        for k in 0..n {
            next[(3 * k, old)] = g * rho[k];
            next[(old, 3 * k)] = g * rho[k];
        }
        let (h, a, c) = vel(u, n);
        let blk = a2_block(rho[n], g, h, a, c);
        for r in 0..3 {
            for s in 0..3 {
                next[(old + r, old + s)] = blk[r][s];
            }
        }
        mat = next;
    }
    mat
}

/// Hessian of η̂ with respect to (U, b).
pub fn hessian_ext(sys: &LayerSystem, u: &[f64], gamma: f64) -> Result<DMatrix<f64>> {
    check_gamma(sys, gamma)?;
    let nw = sys.width();
    let g = sys.g();
    let inner = hessian(sys, u);
    let mut m = DMatrix::<f64>::zeros(nw + 1, nw + 1);
    m.view_mut((0, 0), (nw, nw)).copy_from(&inner);
    for k in 0..sys.layers() {
        m[(3 * k, nw)] = g * sys.rho()[k];
        m[(nw, 3 * k)] = g * sys.rho()[k];
    }
    m[(nw, nw)] = 2.0 * gamma * g;
    Ok(m)
}

/// Closed-form determinant g^M ρ₁³ Π_{m≥2} ρ_m²(ρ_m − ρ_{m−1}) / Π h_m².
pub fn hessian_det_formula(sys: &LayerSystem, u: &[f64]) -> f64 {
    let g = sys.g();
    let rho = sys.rho();
    let mut d = g.powi(sys.layers() as i32) * rho[0].powi(3);
    for m in 1..sys.layers() {
        d *= rho[m] * rho[m] * (rho[m] - rho[m - 1]);
    }
    for m in 0..sys.layers() {
        d /= u[3 * m] * u[3 * m];
    }
    d
}

/// Determinant of the extended Hessian: the fixed-mesh value times g(2γ − ρ_M).
pub fn hessian_ext_det_formula(sys: &LayerSystem, u: &[f64], gamma: f64) -> f64 {
    let rm = sys.rho()[sys.layers() - 1];
    hessian_det_formula(sys, u) * sys.g() * (2.0 * gamma - rm)
}

/// βᵀ𝓜β in closed form as a sum of squares.
pub fn quadratic_form(sys: &LayerSystem, u: &[f64], beta: &[f64]) -> f64 {
    let g = sys.g();
    let rho = sys.rho();
    let nl = sys.layers();
    // tail[m] = Σ_{l≥m} β_{depth, l}
    let mut tail = [0.0; MAX_LAYERS + 1];
    for m in (0..nl).rev() {
        tail[m] = tail[m + 1] + beta[3 * m];
    }
    let mut q = g * rho[0] * tail[0] * tail[0];
    for m in 1..nl {
        q += g * (rho[m] - rho[m - 1]) * tail[m] * tail[m];
    }
    for m in 0..nl {
        let (h, a, c) = vel(u, m);
        let e1 = a * beta[3 * m] - beta[3 * m + 1];
        let e2 = c * beta[3 * m] - beta[3 * m + 2];
        q += rho[m] / h * (e1 * e1 + e2 * e2);
    }
    q
}

/// Per-layer entries of R: (c_m, d_m) couple layer m to m+1; the last layer
/// uses 1/√(gρ_M); velocity slots get √(h_m/ρ_m).
#[derive(Clone, Copy, Debug)]
pub struct RFactors {
    pub c: [f64; MAX_LAYERS],
    pub d: [f64; MAX_LAYERS],
    pub s: [f64; MAX_LAYERS],
    pub e: f64,
}

pub fn r_factors(sys: &LayerSystem, h: impl Fn(usize) -> f64) -> RFactors {
    let g = sys.g();
    let rho = sys.rho();
    let nl = sys.layers();
    let mut f = RFactors { c: [0.0; MAX_LAYERS], d: [0.0; MAX_LAYERS], s: [0.0; MAX_LAYERS], e: 0.0 };
    for m in 0..nl {
        if m + 1 < nl {
            let dr = rho[m + 1] - rho[m];
            f.c[m] = (rho[m + 1] / (g * dr * rho[m])).sqrt();
            f.d[m] = (rho[m] / (g * dr * rho[m + 1])).sqrt();
        }
        f.s[m] = (h(m) / rho[m]).sqrt();
    }
    f.e = 1.0 / (g * rho[nl - 1]).sqrt();
    f
}

/// Dense scaling matrix R with R Rᵀ = 𝓜⁻¹.
pub fn scaling_r(sys: &LayerSystem, u: &[f64]) -> DMatrix<f64> {
    let nw = sys.width();
    let nl = sys.layers();
    let f = r_factors(sys, |m| u[3 * m]);
    let mut r = DMatrix::<f64>::zeros(nw, nw);
    for m in 0..nl {
        let (_, a, c) = vel(u, m);
        r[(3 * m + 1, 3 * m + 1)] = f.s[m];
        r[(3 * m + 2, 3 * m + 2)] = f.s[m];
        let col = 3 * m;
        if m + 1 < nl {
            r[(3 * m, col)] = f.c[m];
            r[(3 * m + 1, col)] = f.c[m] * a;
            r[(3 * m + 2, col)] = f.c[m] * c;
            let (_, a2, c2) = vel(u, m + 1);
            r[(3 * m + 3, col)] = -f.d[m];
            r[(3 * m + 4, col)] = -f.d[m] * a2;
            r[(3 * m + 5, col)] = -f.d[m] * c2;
        } else {
            r[(3 * m, col)] = f.e;
            r[(3 * m + 1, col)] = f.e * a;
            r[(3 * m + 2, col)] = f.e * c;
        }
    }
    r
}

/// Sparse R evaluated at a conserved node state; applies R and Rᵀ without
/// forming the matrix.
#[derive(Clone, Copy, Debug)]
pub struct ScalingR {
    f: RFactors,
    vel: [(f64, f64); MAX_LAYERS],
    nl: usize,
}

impl ScalingR {
    pub fn at(sys: &LayerSystem, u: &[f64]) -> Self {
        let nl = sys.layers();
        let f = r_factors(sys, |m| u[3 * m]);
        let mut v = [(0.0, 0.0); MAX_LAYERS];
        for m in 0..nl {
            let (_, a, c) = vel(u, m);
            v[m] = (a, c);
        }
        Self { f, vel: v, nl }
    }

    /// out = R y
    #[inline]
    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        let nl = self.nl;
        for m in 0..nl {
            out[3 * m] = 0.0;
            out[3 * m + 1] = self.f.s[m] * y[3 * m + 1];
            out[3 * m + 2] = self.f.s[m] * y[3 * m + 2];
        }
        for m in 0..nl {
            let w = y[3 * m];
            let (a, c) = self.vel[m];
            if m + 1 < nl {
                let p = self.f.c[m] * w;
                out[3 * m] += p;
                out[3 * m + 1] += p * a;
                out[3 * m + 2] += p * c;
                let q = self.f.d[m] * w;
                let (a2, c2) = self.vel[m + 1];
                out[3 * m + 3] -= q;
                out[3 * m + 4] -= q * a2;
                out[3 * m + 5] -= q * c2;
            } else {
                let p = self.f.e * w;
                out[3 * m] += p;
                out[3 * m + 1] += p * a;
                out[3 * m + 2] += p * c;
            }
        }
    }

    /// out = Rᵀ w
    #[inline]
    pub fn apply_t(&self, w: &[f64], out: &mut [f64]) {
        let nl = self.nl;
        for m in 0..nl {
            let (a, c) = self.vel[m];
            let own = w[3 * m] + a * w[3 * m + 1] + c * w[3 * m + 2];
            out[3 * m] = if m + 1 < nl {
                let (a2, c2) = self.vel[m + 1];
                let next = w[3 * m + 3] + a2 * w[3 * m + 4] + c2 * w[3 * m + 5];
                self.f.c[m] * own - self.f.d[m] * next
            } else {
                self.f.e * own
            };
            out[3 * m + 1] = self.f.s[m] * w[3 * m + 1];
            out[3 * m + 2] = self.f.s[m] * w[3 * m + 2];
        }
    }
}

/// Quasi-linear matrix ∂F_dir/∂U + N_dir, where N_dir carries g h_m ∂z_m/∂U in
/// the momentum row of layer m.
pub fn quasi_linear(sys: &LayerSystem, u: &[f64], dir: usize) -> DMatrix<f64> {
    let g = sys.g();
    let nl = sys.layers();
    let nw = sys.width();
    let mut a = DMatrix::<f64>::zeros(nw, nw);
    for m in 0..nl {
        let (h, uu, vv) = vel(u, m);
        let o = 3 * m;
        if dir == 0 {
            a[(o, o + 1)] = 1.0;
            a[(o + 1, o)] = -uu * uu + g * h;
            a[(o + 1, o + 1)] = 2.0 * uu;
            a[(o + 2, o)] = -uu * vv;
            a[(o + 2, o + 1)] = vv;
            a[(o + 2, o + 2)] = uu;
        } else {
            a[(o, o + 2)] = 1.0;
            a[(o + 1, o)] = -uu * vv;
            a[(o + 1, o + 1)] = vv;
            a[(o + 1, o + 2)] = uu;
            a[(o + 2, o)] = -vv * vv + g * h;
            a[(o + 2, o + 2)] = 2.0 * vv;
        }
        let row = o + 1 + dir;
        for k in 0..nl {
            if k > m {
                a[(row, 3 * k)] += g * h;
            } else if k < m {
                a[(row, 3 * k)] += g * h * sys.ratio(k, m);
            }
        }
    }
    a
}
