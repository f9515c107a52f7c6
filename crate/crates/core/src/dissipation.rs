//! WENO-Z reconstructed jumps of scaled entropy variables, the sign matrix Y,
//! and the dissipation operators for fixed and moving meshes.
//!
//! An interface i+1/2 sees six nodes i−2..i+3 (local 0..6, interface between
//! local 2 and 3).

use crate::energy::ScalingR;
use crate::error::{Error, Result};
use crate::model::{LayerSystem, MAX_WIDTH};
use crate::wavespeed::max_wave_speed;

pub const WENO_EPS: f64 = 1e-12;
const D: [f64; 3] = [0.1, 0.6, 0.3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Left limit at i+1/2 from v_{i−2..i+2}.
    Left,
    /// Right limit at i+1/2 from v_{i−1..i+3}.
    Right,
}

/// Nonlinear weights of the left-biased reconstruction from v_{i−2..i+2}.
#[inline]
pub fn weno_z5_weights(v: &[f64; 5]) -> [f64; 3] {
    let b0 = 13.0 / 12.0 * (v[0] - 2.0 * v[1] + v[2]).powi(2) + 0.25 * (v[0] - 4.0 * v[1] + 3.0 * v[2]).powi(2);
    let b1 = 13.0 / 12.0 * (v[1] - 2.0 * v[2] + v[3]).powi(2) + 0.25 * (v[1] - v[3]).powi(2);
    let b2 = 13.0 / 12.0 * (v[2] - 2.0 * v[3] + v[4]).powi(2) + 0.25 * (3.0 * v[2] - 4.0 * v[3] + v[4]).powi(2);
    let tau = (b0 - b2).abs();
    let a0 = D[0] * (1.0 + (tau / (b0 + WENO_EPS)).powi(2));
    let a1 = D[1] * (1.0 + (tau / (b1 + WENO_EPS)).powi(2));
    let a2 = D[2] * (1.0 + (tau / (b2 + WENO_EPS)).powi(2));
    let s = a0 + a1 + a2;
    [a0 / s, a1 / s, a2 / s]
}

#[inline]
pub fn weno_z5_eval(v: &[f64; 5], w: &[f64; 3]) -> f64 {
    let q0 = (2.0 * v[0] - 7.0 * v[1] + 11.0 * v[2]) / 6.0;
    let q1 = (-v[1] + 5.0 * v[2] + 2.0 * v[3]) / 6.0;
    let q2 = (2.0 * v[2] + 5.0 * v[3] - v[4]) / 6.0;
    w[0] * q0 + w[1] * q1 + w[2] * q2
}

#[inline]
fn mirror(v: &[f64; 5]) -> [f64; 5] {
    [v[4], v[3], v[2], v[1], v[0]]
}

/// Fifth-order WENO-Z interface value.
#[inline]
pub fn weno_z5(v: &[f64; 5], side: Side) -> f64 {
    let s = match side {
        Side::Left => *v,
        Side::Right => mirror(v),
    };
    weno_z5_eval(&s, &weno_z5_weights(&s))
}

/// (right − left, s[3] − s[2]) from six values at nodes i−2..i+3.
#[inline]
pub fn weno_jump(s: &[f64; 6]) -> (f64, f64) {
    let l = weno_z5(&[s[0], s[1], s[2], s[3], s[4]], Side::Left);
    let r = weno_z5(&[s[1], s[2], s[3], s[4], s[5]], Side::Right);
    (r - l, s[3] - s[2])
}

/// Y entry: kept iff the reconstructed and raw jumps do not disagree in sign.
#[inline]
pub fn sign_flag(weno: f64, raw: f64) -> bool {
    sign(weno) * sign(raw) >= 0.0
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Velocity rotation by φ applied to every layer's momentum pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    pub cos: f64,
    pub sin: f64,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { cos: 1.0, sin: 0.0 };

    pub fn from_angle(phi: f64) -> Self {
        Self { cos: phi.cos(), sin: phi.sin() }
    }

    /// T x
    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.chunks_exact_mut(3).zip(x.chunks_exact(3)) {
            o[0] = c[0];
            o[1] = self.cos * c[1] + self.sin * c[2];
            o[2] = -self.sin * c[1] + self.cos * c[2];
        }
    }

    /// T⁻¹ x = Tᵀ x
    #[inline]
    pub fn apply_inv(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.chunks_exact_mut(3).zip(x.chunks_exact(3)) {
            o[0] = c[0];
            o[1] = self.cos * c[1] - self.sin * c[2];
            o[2] = self.sin * c[1] + self.cos * c[2];
        }
    }
}

/// Rotation angle for an interface normal to ξ_dir from the averaged metrics
/// (Jξ/∂x1, Jξ/∂x2): the rotated velocity component along `dir` becomes the
/// normal one.
pub fn rotation_angle(dir: usize, m1: f64, m2: f64) -> Result<f64> {
    if !(m1.is_finite() && m2.is_finite()) || (m1 == 0.0 && m2 == 0.0) {
        return Err(Error::Numeric(format!("degenerate metrics ({m1}, {m2})")));
    }
    Ok(if dir == 0 { m2.atan2(m1) } else { (-m1).atan2(m2) })
}

/// Output of a scaled-jump evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ScaledJump {
    pub r: ScalingR,
    pub weno: [f64; MAX_WIDTH],
    pub raw: [f64; MAX_WIDTH],
}

/// Ṽ_r = Rᵀ(Ū) T V_r at the six nodes, WENO-Z jumps and raw jumps.
/// `u6`, `v6` hold six conserved and entropy vectors back to back.
pub fn scaled_jump(sys: &LayerSystem, u6: &[f64], v6: &[f64], rot: Rotation) -> ScaledJump {
    let nw = sys.width();
    let mut ubar = [0.0; MAX_WIDTH];
    for k in 0..nw {
        ubar[k] = 0.5 * (u6[2 * nw + k] + u6[3 * nw + k]);
    }
    let mut tu = [0.0; MAX_WIDTH];
    rot.apply(&ubar[..nw], &mut tu[..nw]);
    let r = ScalingR::at(sys, &tu[..nw]);
    let mut vt = [[0.0; MAX_WIDTH]; 6];
    let mut tv = [0.0; MAX_WIDTH];
    for n in 0..6 {
        rot.apply(&v6[n * nw..(n + 1) * nw], &mut tv[..nw]);
        r.apply_t(&tv[..nw], &mut vt[n][..nw]);
    }
    let mut out = ScaledJump { r, weno: [0.0; MAX_WIDTH], raw: [0.0; MAX_WIDTH] };
    for k in 0..nw {
        let s = [vt[0][k], vt[1][k], vt[2][k], vt[3][k], vt[4][k], vt[5][k]];
        let (w, d) = weno_jump(&s);
        out.weno[k] = w;
        out.raw[k] = d;
    }
    out
}

/// D = ½ α R Y ⟪Ṽ⟫ (moving meshes: rotated back with T⁻¹). Returns the
/// entropy production ½ α ⟦Ṽ⟧ᵀ Y ⟪Ṽ⟫ ≥ 0.
pub fn apply_dissipation(sys: &LayerSystem, alpha: f64, sj: &ScaledJump, rot: Rotation, out: &mut [f64]) -> f64 {
    let nw = sys.width();
    let mut y = [0.0; MAX_WIDTH];
    let mut prod = 0.0;
    for k in 0..nw {
        if sign_flag(sj.weno[k], sj.raw[k]) {
            y[k] = sj.weno[k];
            prod += sj.raw[k] * sj.weno[k];
        }
    }
    let mut ry = [0.0; MAX_WIDTH];
    sj.r.apply(&y[..nw], &mut ry[..nw]);
    let mut t = [0.0; MAX_WIDTH];
    rot.apply_inv(&ry[..nw], &mut t[..nw]);
    for k in 0..nw {
        out[k] = 0.5 * alpha * t[k];
    }
    0.5 * alpha * prod
}

/// Interface wave speed: max over both neighbours and their mean, each
/// rotated by `rot`, along `dir`.
pub fn interface_speed(sys: &LayerSystem, u6: &[f64], dir: usize, rot: Rotation) -> f64 {
    let nw = sys.width();
    let (ul, ur) = (&u6[2 * nw..3 * nw], &u6[3 * nw..4 * nw]);
    let mut m = [0.0; MAX_WIDTH];
    for k in 0..nw {
        m[k] = 0.5 * (ul[k] + ur[k]);
    }
    let mut t = [0.0; MAX_WIDTH];
    let mut a = 0.0f64;
    for s in [ul, ur, &m[..nw]] {
        rot.apply(s, &mut t[..nw]);
        a = a.max(max_wave_speed(sys, &t[..nw], dir));
    }
    a
}

/// Fixed-mesh dissipation at one interface along `dir`. Returns the entropy
/// production.
pub fn fixed_mesh_d(sys: &LayerSystem, dir: usize, u6: &[f64], v6: &[f64], out: &mut [f64]) -> f64 {
    let alpha = interface_speed(sys, u6, dir, Rotation::IDENTITY);
    let sj = scaled_jump(sys, u6, v6, Rotation::IDENTITY);
    apply_dissipation(sys, alpha, &sj, Rotation::IDENTITY, out)
}

/// Interface metrics for ξ_dir: averaged Jξ/∂t and Jξ/∂x_k.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceMetrics {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
}

impl InterfaceMetrics {
    pub fn length(&self) -> f64 {
        (self.x1 * self.x1 + self.x2 * self.x2).sqrt()
    }
}

/// D̂ = ½ α̂ T⁻¹ R(TŪ) Y ⟪Ṽ⟫ with α̂ = |Jξ/∂t + L̃ α(TU)|. Returns the production.
pub fn moving_mesh_d_hat(
    sys: &LayerSystem,
    dir: usize,
    met: InterfaceMetrics,
    u6: &[f64],
    v6: &[f64],
    out: &mut [f64],
) -> Result<f64> {
    let phi = rotation_angle(dir, met.x1, met.x2)?;
    let rot = if phi == 0.0 { Rotation::IDENTITY } else { Rotation::from_angle(phi) };
    let a = interface_speed(sys, u6, dir, rot);
    let alpha = (met.t + met.length() * a).abs();
    let sj = scaled_jump(sys, u6, v6, rot);
    Ok(apply_dissipation(sys, alpha, &sj, rot, out))
}

/// D̊ = ½ |Jξ/∂t| Y̊ ⟪Û⟫ on the extended state (U, b), with shared WENO
/// weights for h_M and b (taken from h_M) and one flag for that pair.
/// `uh6` holds six extended states (3M + 1 each), `vh_raw` the raw jump of V̂.
pub fn moving_mesh_d_ring(sys: &LayerSystem, mt: f64, uh6: &[f64], vh_raw: &[f64], out: &mut [f64]) -> f64 {
    let nw = sys.width();
    let ne = nw + 1;
    let c = 0.5 * mt.abs();
    if c == 0.0 {
        out[..ne].iter_mut().for_each(|o| *o = 0.0);
        return 0.0;
    }
    let col = |k: usize| -> [f64; 6] { std::array::from_fn(|n| uh6[n * ne + k]) };
    let hm = nw - 3;
    let mut jump = [0.0; MAX_WIDTH];
    for k in 0..nw {
        if k == hm {
            continue;
        }
        jump[k] = weno_jump(&col(k)).0;
    }
    // paired slots h_M and b
    let (sh, sb) = (col(hm), col(nw));
    let l5 = |s: &[f64; 6]| [s[0], s[1], s[2], s[3], s[4]];
    let r5 = |s: &[f64; 6]| mirror(&[s[1], s[2], s[3], s[4], s[5]]);
    let wl = weno_z5_weights(&l5(&sh));
    let wr = weno_z5_weights(&r5(&sh));
    jump[hm] = weno_z5_eval(&r5(&sh), &wr) - weno_z5_eval(&l5(&sh), &wl);
    jump[nw] = weno_z5_eval(&r5(&sb), &wr) - weno_z5_eval(&l5(&sb), &wl);
    let pair = sign_flag(jump[hm], vh_raw[hm]) && sign_flag(jump[nw], vh_raw[nw]);
    let mut prod = 0.0;
    for k in 0..ne {
        let keep = if k == hm || k == nw { pair } else { sign_flag(jump[k], vh_raw[k]) };
        out[k] = if keep { c * jump[k] } else { 0.0 };
        prod += vh_raw[k] * out[k];
    }
    prod
}
