//! Two-point energy-conservative fluxes, compatible source averages, and their
//! high-order linear combinations.

use crate::error::{Error, Result};
use crate::model::{fill_z, LayerSystem, MAX_LAYERS, MAX_WIDTH};

const A1: [f64; 1] = [1.0];
const A2: [f64; 2] = [4.0 / 3.0, -1.0 / 6.0];
const A3: [f64; 3] = [1.5, -0.3, 1.0 / 30.0];

/// Combination weights α_{p,q}, q = 1..p, for a scheme of order 2p.
pub fn coefficients(p: usize) -> Result<&'static [f64]> {
    match p {
        1 => Ok(&A1),
        2 => Ok(&A2),
        3 => Ok(&A3),
        _ => Err(Error::Config(format!("order parameter p must be 1, 2 or 3, got {p}"))),
    }
}

#[inline]
pub(crate) fn mean(a: f64, b: f64) -> f64 {
    0.5 * (a + b)
}

/// Two-point flux with precomputed z on both sides.
#[inline]
pub(crate) fn ec_flux_z(sys: &LayerSystem, dir: usize, ul: &[f64], zl: &[f64], ur: &[f64], zr: &[f64], out: &mut [f64]) {
    let g = sys.g();
    for m in 0..sys.layers() {
        let o = 3 * m;
        let (hl, hr) = (ul[o], ur[o]);
        let h = mean(hl, hr);
        let a = mean(ul[o + 1] / hl, ur[o + 1] / hr);
        let c = mean(ul[o + 2] / hl, ur[o + 2] / hr);
        let h2 = mean(hl * hl, hr * hr);
        let hz = mean(hl * zl[m], hr * zr[m]);
        let p = 0.5 * g * h2 + g * (hz - h * mean(zl[m], zr[m]));
        if dir == 0 {
            out[o] = h * a;
            out[o + 1] = h * a * a + p;
            out[o + 2] = h * a * c;
        } else {
            out[o] = h * c;
            out[o + 1] = h * a * c;
            out[o + 2] = h * c * c + p;
        }
    }
}

pub fn ec_flux(sys: &LayerSystem, dir: usize, ul: &[f64], bl: f64, ur: &[f64], br: f64, out: &mut [f64]) {
    let mut zl = [0.0; MAX_LAYERS];
    let mut zr = [0.0; MAX_LAYERS];
    fill_z(sys, ul, bl, &mut zl);
    fill_z(sys, ur, br, &mut zr);
    ec_flux_z(sys, dir, ul, &zl, ur, &zr, out);
}

/// Per-layer signed defects of the sufficient energy-conservation condition:
/// ΔV_mᵀF̃_m − [ψ_m] − ρ_m g [h z u]_m + (ρ_m/2) g [h u]_m (z_L + z_R).
pub fn ec_layer_defects(sys: &LayerSystem, dir: usize, ul: &[f64], bl: f64, ur: &[f64], br: f64, flux: &[f64]) -> Vec<f64> {
    let g = sys.g();
    let rho = sys.rho();
    let mut zl = [0.0; MAX_LAYERS];
    let mut zr = [0.0; MAX_LAYERS];
    fill_z(sys, ul, bl, &mut zl);
    fill_z(sys, ur, br, &mut zr);
    let mut vl = [0.0; MAX_WIDTH];
    let mut vr = [0.0; MAX_WIDTH];
    crate::energy::entropy_vars(sys, ul, bl, &mut vl);
    crate::energy::entropy_vars(sys, ur, br, &mut vr);
    (0..sys.layers())
        .map(|m| {
            let o = 3 * m;
            let dv: f64 = (0..3).map(|i| (vr[o + i] - vl[o + i]) * flux[o + i]).sum();
            let (hl, hr) = (ul[o], ur[o]);
            let (wl, wr) = (ul[o + 1 + dir] / hl, ur[o + 1 + dir] / hr);
            let dpsi = 0.5 * g * rho[m] * (hr * hr * wr - hl * hl * wl);
            let dhzu = hr * zr[m] * wr - hl * zl[m] * wl;
            let dhu = hr * wr - hl * wl;
            dv - dpsi - rho[m] * g * dhzu + 0.5 * rho[m] * g * dhu * (zl[m] + zr[m])
        })
        .collect()
}

/// Signed defect of the full condition, evaluated with whole-vector sums.
pub fn ec_condition_defect(sys: &LayerSystem, dir: usize, ul: &[f64], bl: f64, ur: &[f64], br: f64, flux: &[f64]) -> f64 {
    let g = sys.g();
    let rho = sys.rho();
    let nw = sys.width();
    let mut zl = [0.0; MAX_LAYERS];
    let mut zr = [0.0; MAX_LAYERS];
    fill_z(sys, ul, bl, &mut zl);
    fill_z(sys, ur, br, &mut zr);
    let mut vl = [0.0; MAX_WIDTH];
    let mut vr = [0.0; MAX_WIDTH];
    crate::energy::entropy_vars(sys, ul, bl, &mut vl);
    crate::energy::entropy_vars(sys, ur, br, &mut vr);
    let dv: f64 = (0..nw).map(|i| (vr[i] - vl[i]) * flux[i]).sum();
    let pl = crate::energy::potentials(sys, ul);
    let pr = crate::energy::potentials(sys, ur);
    let dpsi = if dir == 0 { pr.psi1 - pl.psi1 } else { pr.psi2 - pl.psi2 };
    let mut hzu = 0.0;
    let mut hu = 0.0;
    for m in 0..sys.layers() {
        let o = 3 * m;
        let (hl, hr) = (ul[o], ur[o]);
        let (wl, wr) = (ul[o + 1 + dir] / hl, ur[o + 1 + dir] / hr);
        hzu += rho[m] * g * (hr * zr[m] * wr - hl * zl[m] * wl);
        hu += 0.5 * rho[m] * g * (hr * wr - hl * wl) * (zl[m] + zr[m]);
    }
    dv - dpsi - hzu + hu
}

pub fn ec_condition_residual(sys: &LayerSystem, dir: usize, ul: &[f64], bl: f64, ur: &[f64], br: f64, flux: &[f64]) -> f64 {
    ec_condition_defect(sys, dir, ul, bl, ur, br, flux).abs()
}

/// Mean of the source vectors B_{dir,m}: z_m averaged, placed in the
/// dir-momentum slot of layer m.
pub fn source_two_point(sys: &LayerSystem, dir: usize, m: usize, ul: &[f64], bl: f64, ur: &[f64], br: f64) -> Result<Vec<f64>> {
    let zl = crate::model::layer_z(sys, ul, bl, m)?;
    let zr = crate::model::layer_z(sys, ur, br, m)?;
    let mut out = vec![0.0; sys.width()];
    out[3 * m + 1 + dir] = mean(zl, zr);
    Ok(out)
}

fn check_stencil(alpha: &[f64], n: usize, nb: usize) -> Result<()> {
    if n != 2 * alpha.len() || nb != n {
        return Err(Error::Usage(format!(
            "stencil of {} states for order {} (need {})",
            n,
            2 * alpha.len(),
            2 * alpha.len()
        )));
    }
    Ok(())
}

/// Σ_q α_q Σ_{s<q} F̃(U_{i−s}, U_{i−s+q}) on the stencil i−p+1..i+p.
pub fn high_order_flux(sys: &LayerSystem, dir: usize, alpha: &[f64], states: &[&[f64]], bs: &[f64], out: &mut [f64]) -> Result<()> {
    check_stencil(alpha, states.len(), bs.len())?;
    let p = alpha.len();
    let nw = sys.width();
    let mut tmp = [0.0; MAX_WIDTH];
    out[..nw].iter_mut().for_each(|o| *o = 0.0);
    for (qi, &a) in alpha.iter().enumerate() {
        let q = qi + 1;
        for s in 0..q {
            let l = p - 1 - s;
            ec_flux(sys, dir, states[l], bs[l], states[l + q], bs[l + q], &mut tmp);
            for k in 0..nw {
                out[k] += a * tmp[k];
            }
        }
    }
    Ok(())
}

/// High-order combination of the z averages, one per layer.
pub fn high_order_source(sys: &LayerSystem, alpha: &[f64], states: &[&[f64]], bs: &[f64]) -> Result<Vec<f64>> {
    check_stencil(alpha, states.len(), bs.len())?;
    let p = alpha.len();
    let nl = sys.layers();
    let zs: Vec<Vec<f64>> = states
        .iter()
        .zip(bs)
        .map(|(u, &b)| {
            let mut z = vec![0.0; nl];
            fill_z(sys, u, b, &mut z);
            z
        })
        .collect();
    let mut out = vec![0.0; nl];
    for (qi, &a) in alpha.iter().enumerate() {
        let q = qi + 1;
        for s in 0..q {
            let l = p - 1 - s;
            for m in 0..nl {
                out[m] += a * mean(zs[l][m], zs[l + q][m]);
            }
        }
    }
    Ok(out)
}
