use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mlswe::cases::RunOutcome;
use mlswe::solver_fixed::EnergyRecord;
use mlswe::{ConservedField, Result};

/// One row per node: x1 x2 b J, then h u v per layer.
pub fn snapshot_text(header: &str, t: f64, field: &ConservedField, x: &[Vec<f64>; 2], jac: Option<&[f64]>) -> String {
    let nl = field.layers;
    let mut s = format!("# {header} t={t:.17e}\n# x1 x2 b J");
    for m in 1..=nl {
        let _ = write!(s, " h{m} u{m} v{m}");
    }
    s.push('\n');
    for k in 0..field.nodes() {
        let j = jac.map_or(1.0, |j| j[k]);
        let _ = write!(s, "{:.17e} {:.17e} {:.17e} {:.17e}", x[0][k], x[1][k], field.b[k], j);
        for m in 0..nl {
            let h = field.comps[3 * m][k];
            let _ = write!(s, " {:.17e} {:.17e} {:.17e}", h, field.comps[3 * m + 1][k] / h, field.comps[3 * m + 2][k] / h);
        }
        s.push('\n');
    }
    s
}

pub fn energy_text(header: &str, ledger: &[EnergyRecord]) -> String {
    let mut s = format!("# {header}\n# t dt energy\n");
    for r in ledger {
        let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", r.t, r.dt, r.energy);
    }
    s
}

pub fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, text)?;
    Ok(p)
}

/// Snapshot files for a run; J is only known for the final state.
pub fn write_snapshots(dir: &Path, header: &str, name: &str, out: &RunOutcome) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let last = out.snapshots.len().saturating_sub(1);
    for (i, (t, f, x)) in out.snapshots.iter().enumerate() {
        let jac = (i == last).then_some(out.jac.as_slice());
        let text = snapshot_text(header, *t, f, x, jac);
        paths.push(write(dir, &format!("{name}_snapshot_{i:04}.txt"), &text)?);
    }
    Ok(paths)
}

/// Convergence table: N, error, observed order against the previous row.
pub fn convergence_text(header: &str, ns: &[usize], errs: &[f64], orders: &[f64]) -> String {
    let mut s = format!("# {header}\n# n error order\n");
    for (i, (n, e)) in ns.iter().zip(errs).enumerate() {
        match i.checked_sub(1).and_then(|k| orders.get(k)) {
            Some(o) => _ = writeln!(s, "{n} {e:.6e} {o:.4}"),
            None => _ = writeln!(s, "{n} {e:.6e} -"),
        }
    }
    s
}
