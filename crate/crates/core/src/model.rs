//! Layer configuration, grids, and conserved-state containers.

use crate::error::{Error, Result};

/// Depths below this floor are treated as dry and abort the run.
pub const H_MIN: f64 = 1e-10;

/// Upper limit on the layer count; keeps per-node scratch on the stack.
pub const MAX_LAYERS: usize = 16;

/// Stack scratch length for node vectors of any supported layer count (3M + 1).
pub const MAX_WIDTH: usize = 3 * MAX_LAYERS + 1;

/// Densities (top to bottom) and gravity.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSystem {
    rho: Vec<f64>,
    g: f64,
}

impl LayerSystem {
    pub fn new(rho: Vec<f64>, g: f64) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if rho.len() > MAX_LAYERS {
            return Err(Error::Config(format!("at most {MAX_LAYERS} layers are supported")));
        }
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::Config(format!("gravity must be positive, got {g}")));
        }
        if !(rho[0] > 0.0) {
            return Err(Error::Config("densities must be positive".into()));
        }
        for w in rho.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config(format!(
                    "densities must increase strictly downwards, got {:?}",
                    rho
                )));
            }
        }
        Ok(Self { rho, g })
    }

    pub fn layers(&self) -> usize {
        self.rho.len()
    }

    /// Length of a node state vector, 3M.
    pub fn width(&self) -> usize {
        3 * self.rho.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    /// r_km = ρ_k / ρ_m (0-based layer indices).
    pub fn ratio(&self, k: usize, m: usize) -> f64 {
        self.rho[k] / self.rho[m]
    }
}

/// z_m for layer `m` (0-based) of a node state `u` with bathymetry `b`.
pub fn layer_z(sys: &LayerSystem, u: &[f64], b: f64, m: usize) -> Result<f64> {
    if m >= sys.layers() {
        return Err(Error::Usage(format!(
            "layer index {} out of range 1..={}",
            m + 1,
            sys.layers()
        )));
    }
    Ok(z_of(sys, u, b, m))
}

#[inline]
pub(crate) fn z_of(sys: &LayerSystem, u: &[f64], b: f64, m: usize) -> f64 {
    let rho = sys.rho();
    let mut z = b;
    for k in (m + 1)..rho.len() {
        z += u[3 * k];
    }
    for k in 0..m {
        z += rho[k] / rho[m] * u[3 * k];
    }
    z
}

/// All z_m of a node at once.
#[inline]
pub fn fill_z(sys: &LayerSystem, u: &[f64], b: f64, z: &mut [f64]) {
    let rho = sys.rho();
    let nl = rho.len();
    // below[m] = Σ_{k>m} h_k, built from the bottom up
    let mut below = 0.0;
    for m in (0..nl).rev() {
        z[m] = b + below;
        below += u[3 * m];
    }
    for m in 1..nl {
        let mut s = 0.0;
        for k in 0..m {
            s += rho[k] * u[3 * k];
        }
        z[m] += s / rho[m];
    }
}

/// Conserved node vector to primitive `[h, u, v]` per layer.
pub fn to_primitive(u: &[f64], h_min: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; u.len()];
    for (m, c) in u.chunks_exact(3).enumerate() {
        let h = c[0];
        if !(h >= h_min) {
            return Err(Error::Dry { node: 0, layer: m + 1, h });
        }
        out[3 * m] = h;
        out[3 * m + 1] = c[1] / h;
        out[3 * m + 2] = c[2] / h;
    }
    Ok(out)
}

pub fn to_conserved(prim: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; prim.len()];
    for (m, p) in prim.chunks_exact(3).enumerate() {
        out[3 * m] = p[0];
        out[3 * m + 1] = p[0] * p[1];
        out[3 * m + 2] = p[0] * p[2];
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Outflow,
}

/// Uniform node lattice. `n[1] == 1` marks a 1D run.
///
/// Periodic directions store `n` nodes with spacing L/n (the node at the right
/// end is the image of the first); outflow directions put nodes on both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGrid {
    pub n: [usize; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub bc: [Boundary; 2],
}

impl StructuredGrid {
    pub fn new(n: [usize; 2], lo: [f64; 2], hi: [f64; 2], bc: [Boundary; 2]) -> Result<Self> {
        for d in 0..2 {
            if n[d] == 0 {
                return Err(Error::Config("node count must be positive".into()));
            }
            if n[d] > 1 && !(hi[d] > lo[d]) {
                return Err(Error::Config(format!("empty extent in direction {}", d + 1)));
            }
        }
        if n[0] < 2 {
            return Err(Error::Config("at least two nodes are needed in x1".into()));
        }
        Ok(Self { n, lo, hi, bc })
    }

    pub fn line(n: usize, lo: f64, hi: f64, bc: Boundary) -> Result<Self> {
        Self::new([n, 1], [lo, 0.0], [hi, 0.0], [bc, Boundary::Periodic])
    }

    pub fn is_1d(&self) -> bool {
        self.n[1] == 1
    }

    pub fn dims(&self) -> usize {
        if self.is_1d() {
            1
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, d: usize) -> f64 {
        if self.n[d] == 1 {
            return 1.0;
        }
        let l = self.hi[d] - self.lo[d];
        match self.bc[d] {
            Boundary::Periodic => l / self.n[d] as f64,
            Boundary::Outflow => l / (self.n[d] - 1) as f64,
        }
    }

    pub fn period(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }

    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if self.n[d] == 1 {
            return self.lo[d];
        }
        self.lo[d] + i as f64 * self.spacing(d)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    /// Node index of a possibly out-of-range lattice position `i` in direction `d`:
    /// wrapped for periodic, clamped for outflow.
    #[inline]
    pub fn ghost_index(&self, d: usize, i: isize) -> usize {
        let n = self.n[d] as isize;
        match self.bc[d] {
            Boundary::Periodic => i.rem_euclid(n) as usize,
            Boundary::Outflow => i.clamp(0, n - 1) as usize,
        }
    }
}

/// Structure-of-arrays conserved field: one contiguous array per component,
/// plus the bathymetry.
#[derive(Clone, Debug, PartialEq)]
pub struct ConservedField {
    pub layers: usize,
    pub comps: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ConservedField {
    pub fn zeros(layers: usize, nodes: usize) -> Self {
        Self {
            layers,
            comps: vec![vec![0.0; nodes]; 3 * layers],
            b: vec![0.0; nodes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.b.len()
    }

    #[inline]
    pub fn node(&self, k: usize, out: &mut [f64]) {
        for (c, o) in self.comps.iter().zip(out.iter_mut()) {
            *o = c[k];
        }
    }

    #[inline]
    pub fn set_node(&mut self, k: usize, val: &[f64]) {
        for (c, v) in self.comps.iter_mut().zip(val) {
            c[k] = *v;
        }
    }

    /// Node-major copy: node k occupies `[k * 3M, (k + 1) * 3M)`.
    pub fn to_node_major(&self) -> Vec<f64> {
        let nw = 3 * self.layers;
        let mut out = vec![0.0; nw * self.nodes()];
        for (k, o) in out.chunks_exact_mut(nw).enumerate() {
            self.node(k, o);
        }
        out
    }

    pub fn from_node_major(layers: usize, data: &[f64], b: Vec<f64>) -> Self {
        let mut f = Self::zeros(layers, b.len());
        for (k, c) in data.chunks_exact(3 * layers).enumerate() {
            f.set_node(k, c);
        }
        f.b = b;
        f
    }

    /// Build a field from a primitive initializer returning `[h, u, v]` per layer
    /// and a bathymetry function.
    pub fn from_primitive<F, B>(sys: &LayerSystem, grid: &StructuredGrid, prim: F, bath: B) -> Result<Self>
    where
        F: Fn(f64, f64) -> Vec<f64>,
        B: Fn(f64, f64) -> f64,
    {
        let mut f = Self::zeros(sys.layers(), grid.len());
        for j in 0..grid.n[1] {
            for i in 0..grid.n[0] {
                let (x1, x2) = (grid.coord(0, i), grid.coord(1, j));
                let k = grid.index(i, j);
                let p = prim(x1, x2);
                let c = to_conserved(&p);
                f.set_node(k, &c);
                f.b[k] = bath(x1, x2);
            }
        }
        f.check_admissible(H_MIN)?;
        Ok(f)
    }

    /// Lake at rest from the layer-top elevations `levels` (top to bottom):
    /// h_M = levels[M-1] - b, h_m = levels[m] - levels[m+1] for m < M.
    pub fn lake_at_rest<B>(sys: &LayerSystem, grid: &StructuredGrid, bath: B, levels: &[f64]) -> Result<Self>
    where
        B: Fn(f64, f64) -> f64,
    {
        let nl = sys.layers();
        if levels.len() != nl {
            return Err(Error::Usage(format!("expected {} surface levels, got {}", nl, levels.len())));
        }
        let mut f = Self::zeros(nl, grid.len());
        for j in 0..grid.n[1] {
            for i in 0..grid.n[0] {
                let k = grid.index(i, j);
                let b = bath(grid.coord(0, i), grid.coord(1, j));
                f.b[k] = b;
                for m in 0..nl {
                    let h = if m + 1 < nl { levels[m] - levels[m + 1] } else { levels[m] - b };
                    if !(h > 0.0) {
                        return Err(Error::Infeasible(format!(
                            "lake at rest gives h{} = {h} at node {k}",
                            m + 1
                        )));
                    }
                    f.comps[3 * m][k] = h;
                }
            }
        }
        Ok(f)
    }

    pub fn check_admissible(&self, h_min: f64) -> Result<()> {
        for m in 0..self.layers {
            for (k, &h) in self.comps[3 * m].iter().enumerate() {
                if !(h >= h_min) {
                    return Err(Error::Dry { node: k, layer: m + 1, h });
                }
            }
        }
        for c in &self.comps {
            if let Some(k) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { node: k });
            }
        }
        Ok(())
    }

    /// Generalized surface levels h_m + z_m at node k.
    pub fn surface_levels(&self, sys: &LayerSystem, k: usize) -> Vec<f64> {
        let mut u = vec![0.0; 3 * self.layers];
        self.node(k, &mut u);
        let mut z = vec![0.0; self.layers];
        fill_z(sys, &u, self.b[k], &mut z);
        (0..self.layers).map(|m| u[3 * m] + z[m]).collect()
    }

    /// Layer-top elevations Σ_{k≥m} h_k + b at node k.
    pub fn elevations(&self, k: usize) -> Vec<f64> {
        let nl = self.layers;
        let mut out = vec![0.0; nl];
        let mut acc = self.b[k];
        for m in (0..nl).rev() {
            acc += self.comps[3 * m][k];
            out[m] = acc;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(rho: &[f64]) -> LayerSystem {
        LayerSystem::new(rho.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn z_two_layers() {
        let s = sys(&[1.0, 2.0]);
        let u = [3.0, 0.0, 0.0, 5.0, 0.0, 0.0];
        assert_eq!(layer_z(&s, &u, 1.0, 0).unwrap(), 6.0);
        assert_eq!(layer_z(&s, &u, 1.0, 1).unwrap(), 2.5);
        assert!(matches!(layer_z(&s, &u, 1.0, 2), Err(Error::Usage(_))));
    }

    #[test]
    fn z_three_layers_middle() {
        let s = sys(&[7.0, 10.0, 13.0]);
        let u = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!((layer_z(&s, &u, 0.0, 1).unwrap() - 1.7).abs() < 1e-15);
        let mut z = [0.0; 3];
        fill_z(&s, &u, 0.0, &mut z);
        for m in 0..3 {
            assert_eq!(z[m], layer_z(&s, &u, 0.0, m).unwrap());
        }
    }

    #[test]
    fn single_layer_z_is_b() {
        let s = sys(&[1.0]);
        assert_eq!(layer_z(&s, &[2.0, 1.0, 0.0], 0.7, 0).unwrap(), 0.7);
    }

    #[test]
    fn rejects_bad_densities() {
        assert!(LayerSystem::new(vec![1.0, 1.0], 1.0).is_err());
        assert!(LayerSystem::new(vec![2.0, 1.0], 1.0).is_err());
        assert!(LayerSystem::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn primitive_roundtrip() {
        let p = to_primitive(&[2.0, 4.0, -2.0], H_MIN).unwrap();
        assert_eq!(p, vec![2.0, 2.0, -1.0]);
        assert_eq!(to_conserved(&p), vec![2.0, 4.0, -2.0]);
        assert_eq!(to_primitive(&[1.0, 0.0, 0.0], H_MIN).unwrap()[1], 0.0);
        assert!(matches!(to_primitive(&[1e-13, 0.0, 0.0], H_MIN), Err(Error::Dry { .. })));
    }

    #[test]
    fn lake_at_rest_levels() {
        let s = LayerSystem::new(vec![0.8, 1.0], 1.0).unwrap();
        let g = StructuredGrid::line(50, 0.0, 20.0, Boundary::Outflow).unwrap();
        let bath = |x: f64, _| 2.0 * (-(x - 9.0).powi(2) / 2.0).exp() + 3.0 * (-(x - 11.5).powi(2)).exp();
        let f = ConservedField::lake_at_rest(&s, &g, bath, &[6.0, 4.0]).unwrap();
        let c = f.surface_levels(&s, 0);
        for k in 0..g.len() {
            let e = f.elevations(k);
            assert!((e[0] - 6.0).abs() < 1e-14 && (e[1] - 4.0).abs() < 1e-14);
            let l = f.surface_levels(&s, k);
            for m in 0..2 {
                assert!((l[m] - c[m]).abs() <= 1e-14 * 6.0);
            }
        }
        let flat = ConservedField::lake_at_rest(&s, &g, |_, _| 0.0, &[2.0, 1.0]).unwrap();
        assert!(flat.comps[0].iter().chain(&flat.comps[3]).all(|&h| h == 1.0));
        assert!(matches!(
            ConservedField::lake_at_rest(&s, &g, |_, _| 5.0, &[6.0, 4.0]),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn grid_spacing_and_ghosts() {
        let p = StructuredGrid::line(10, 0.0, 2.0, Boundary::Periodic).unwrap();
        assert!((p.spacing(0) - 0.2).abs() < 1e-15);
        assert_eq!(p.ghost_index(0, -1), 9);
        assert_eq!(p.ghost_index(0, 11), 1);
        let o = StructuredGrid::line(11, 0.0, 2.0, Boundary::Outflow).unwrap();
        assert!((o.spacing(0) - 0.2).abs() < 1e-15);
        assert_eq!(o.ghost_index(0, -3), 0);
        assert_eq!(o.ghost_index(0, 14), 10);
    }
}
