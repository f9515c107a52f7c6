//! Maximal wave speed estimates: reduced characteristic polynomials for two and
//! three layers bounded with the Lagrange rule, and an eigenvalue fallback.

use crate::energy::quasi_linear;
use crate::error::{Error, Result};
use crate::model::LayerSystem;

/// Coefficients c1..c4 of the monic quartic λ⁴ + c1λ³ + c2λ² + c3λ + c4.
pub fn charpoly_m2(h1: f64, h2: f64, u1: f64, u2: f64, r12: f64, g: f64) -> [f64; 4] {
    let s = u1 + u2;
    [
        -2.0 * s,
        s * s + 2.0 * u1 * u2 - g * (h1 + h2),
        -2.0 * u1 * u1 * u2 - 2.0 * u1 * u2 * u2 + 2.0 * g * h2 * u1 + 2.0 * g * h1 * u2,
        u1 * u1 * u2 * u2 - g * h1 * u2 * u2 - g * h2 * u1 * u1 + g * g * h1 * h2 - g * g * h1 * h2 * r12,
    ]
}

/// Coefficients c1..c6 of the monic sextic for three layers.
///
/// `r = [r12, r13, r23]`.
pub fn charpoly_m3(h: [f64; 3], u: [f64; 3], r: [f64; 3], g: f64) -> [f64; 6] {
    let [h1, h2, h3] = h;
    let [u1, u2, u3] = u;
    let [r12, r13, r23] = r;
    let (g2, g3) = (g * g, g * g * g);
    let c1 = -2.0 * (u1 + u2 + u3);
    let c2 = u1 * u1 + u2 * u2 + u3 * u3 + 4.0 * (u1 * u2 + u1 * u3 + u2 * u3) - g * (h1 + h2 + h3);
    let c3 = 2.0 * g * (h1 * (u2 + u3) + h2 * (u1 + u3) + h3 * (u1 + u2))
        - 2.0 * (u1 * u1 * (u2 + u3) + u1 * (u2 * u2 + 4.0 * u2 * u3 + u3 * u3) + u2 * u3 * (u2 + u3));
    let c4 = g2 * (h1 * h2 * (1.0 - r12) + h1 * h3 * (1.0 - r13) + h2 * h3 * (1.0 - r23))
        - g * (h1 * (u2 * u2 + 4.0 * u2 * u3 + u3 * u3)
            + h2 * (u1 * u1 + 4.0 * u1 * u3 + u3 * u3)
            + h3 * (u1 * u1 + 4.0 * u1 * u2 + u2 * u2))
        + u1 * u1 * (u2 * u2 + 4.0 * u2 * u3 + u3 * u3)
        + 4.0 * u1 * u2 * u3 * (u2 + u3)
        + u2 * u2 * u3 * u3;
    let c5 = 2.0
        * (g2 * (h1 * h2 * (r12 - 1.0) * u3 + h1 * h3 * (r13 - 1.0) * u2 + h2 * h3 * (r23 - 1.0) * u1)
            + g * (h1 * u2 * u3 * (u2 + u3) + h2 * u1 * u3 * (u1 + u3) + h3 * u1 * u2 * (u1 + u2))
            - u1 * u2 * u3 * (u1 * (u2 + u3) + u2 * u3));
    let c6 = g3 * h1 * h2 * h3 * (r12 + r23 - r12 * r23 - 1.0)
        + g2 * (-h1 * h2 * (r12 - 1.0) * u3 * u3 - h1 * h3 * (r13 - 1.0) * u2 * u2 - h2 * h3 * (r23 - 1.0) * u1 * u1)
        - g * (u3 * u3 * (h1 * u2 * u2 + h2 * u1 * u1) + h3 * u1 * u1 * u2 * u2)
        + u1 * u1 * u2 * u2 * u3 * u3;
    [c1, c2, c3, c4, c5, c6]
}

fn upper_rule(c: &[f64]) -> f64 {
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for (j, &cj) in c.iter().enumerate() {
        if cj < 0.0 {
            let v = ((-cj).ln() / (j + 1) as f64).exp();
            if v > a {
                b = a;
                a = v;
            } else if v > b {
                b = v;
            }
        }
    }
    a + b
}

/// Lagrange bounds (λ_min, λ_max) on the real roots of a monic polynomial with
/// coefficients c1..cn.
pub fn lagrange_bounds(c: &[f64]) -> (f64, f64) {
    let mut d = [0.0; 16];
    let n = c.len().min(16);
    for j in 0..n {
        d[j] = if (j + 1) % 2 == 0 { c[j] } else { -c[j] };
    }
    (-upper_rule(&d[..n]), upper_rule(c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaveSpeedMethod {
    /// Closed forms for one layer, Lagrange bounds for two and three layers,
    /// eigenvalues otherwise.
    Auto,
    Eigen,
}

/// Speed from the eigenvalues of the quasi-linear matrix; the flag is false
/// when complex eigenvalues were found (then |Re| + |Im| is used).
pub fn eigen_wave_speed(sys: &LayerSystem, u: &[f64], dir: usize) -> (f64, bool) {
    let a = quasi_linear(sys, u, dir);
    let ev = a.complex_eigenvalues();
    let scale = ev.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut real = true;
    let mut s = 0.0f64;
    for z in ev.iter() {
        if z.im.abs() > 1e-10 * scale {
            real = false;
        }
        s = s.max(z.re.abs() + z.im.abs());
    }
    (s, real)
}

/// Maximal wave speed α in direction `dir`.
pub fn max_wave_speed(sys: &LayerSystem, u: &[f64], dir: usize) -> f64 {
    let g = sys.g();
    let nl = sys.layers();
    let w = |m: usize| u[3 * m + 1 + dir] / u[3 * m];
    match nl {
        1 => w(0).abs() + (g * u[0]).sqrt(),
        2 | 3 => {
            let mut buf = [0.0; 6];
            let c: &[f64] = if nl == 2 {
                buf[..4].copy_from_slice(&charpoly_m2(u[0], u[3], w(0), w(1), sys.ratio(0, 1), g));
                &buf[..4]
            } else {
                buf = charpoly_m3(
                    [u[0], u[3], u[6]],
                    [w(0), w(1), w(2)],
                    [sys.ratio(0, 1), sys.ratio(0, 2), sys.ratio(1, 2)],
                    g,
                );
                &buf
            };
            let (lo, hi) = lagrange_bounds(c);
            let mut a = hi.max(-lo);
            for m in 0..nl {
                a = a.max(w(m).abs());
            }
            a
        }
        _ => eigen_wave_speed(sys, u, dir).0,
    }
}

pub fn wave_speed(sys: &LayerSystem, u: &[f64], dir: usize, method: WaveSpeedMethod) -> Result<f64> {
    let a = match method {
        WaveSpeedMethod::Auto => max_wave_speed(sys, u, dir),
        WaveSpeedMethod::Eigen => eigen_wave_speed(sys, u, dir).0,
    };
    if !a.is_finite() {
        return Err(Error::Numeric(format!("non-finite wave speed {a}")));
    }
    Ok(a)
}
