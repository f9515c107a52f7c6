mod config;
mod output;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use config::{Mesh, RunArgs, RunConfig};
use mlswe::cases::{
    case_catalog, find_case, level, level_errors, max_velocity, observed_orders, simulate, surface_profile,
    velocity_l1_error, CaseKind, MeshMode, ReferenceCache, RunOptions, RunOutcome,
};
use mlswe::solver_fixed::energy_non_increasing;
use mlswe::{Error, Result};

const ENERGY_SLACK: f64 = 1e-8;
const WB_TOL_FIXED: f64 = 1e-12;
const WB_TOL_MOVING: f64 = 1e-11;

#[derive(Parser, Debug)]
#[command(name = "mlswe", version, about = "Multi-layer shallow water solver on fixed and moving meshes")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one case and write snapshots, the energy series and reports
    Run(RunArgs),
    /// Error table and observed orders over a sequence of resolutions
    Convergence(ConvergenceArgs),
    /// Distance of coarse runs to a cached fine-grid reference (1D cases)
    Reference(ReferenceArgs),
    /// List the available cases
    List,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Resolutions, comma separated
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200")]
    ns: Vec<usize>,
    /// Layer whose x-velocity error is measured (counted from 1)
    #[arg(long, default_value_t = 2)]
    layer: usize,
    /// Fail when the order between the two finest grids is below this
    #[arg(long)]
    min_order: Option<f64>,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    #[arg(long)]
    case: String,
    /// Nodes of the reference run (default: the case's reference resolution)
    #[arg(long)]
    n: Option<usize>,
    /// Coarse resolutions to compare, comma separated
    #[arg(long, value_delimiter = ',', default_value = "100,200,400")]
    compare: Vec<usize>,
    #[arg(long, value_enum, default_value = "fixed")]
    mesh: Mesh,
    /// Cache directory for reference profiles
    #[arg(long, default_value = "references")]
    cache: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Run(a) => run(a),
        Command::Convergence(a) => convergence(a),
        Command::Reference(a) => reference(a),
        Command::List => {
            for c in case_catalog() {
                println!("{:<22} {}D  M={}  t_end={}", c.name, c.dims, c.layers(), c.end_time);
            }
            Ok(true)
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn options(cfg: &RunConfig) -> RunOptions {
    RunOptions {
        n: cfg.n,
        mesh: cfg.mesh,
        scheme: cfg.scheme,
        gamma: Some(cfg.gamma),
        monitor: Some(cfg.monitor),
        end_time: cfg.end_time,
        snapshot_every: cfg.snapshot_stride,
    }
}

fn run(args: RunArgs) -> Result<bool> {
    let cfg = args.merge_file()?.resolve()?;
    let header = cfg.to_string();
    let name = cfg.case.name;
    let out = simulate(&cfg.case, &options(&cfg))?;
    output::write_snapshots(&cfg.out, &header, name, &out)?;
    output::write(&cfg.out, &format!("{name}_energy.txt"), &output::energy_text(&header, &out.ledger))?;
    let monotone = energy_non_increasing(&out.ledger, ENERGY_SLACK);
    let (max_err, pass) = match cfg.case.kind {
        CaseKind::WellBalanced => {
            let levels = cfg.case.levels.clone().unwrap_or_default();
            let tol = if cfg.mesh == MeshMode::Moving { WB_TOL_MOVING } else { WB_TOL_FIXED };
            let mut rep = format!("# {header}\n# level l1 linf\n");
            let mut worst = 0.0f64;
            for (k, &(l1, linf)) in level_errors(&out, &levels).iter().enumerate() {
                worst = worst.max(l1).max(linf);
                let _ = writeln!(rep, "{} {l1:.6e} {linf:.6e}", k + 1);
            }
            let v = max_velocity(&out.field);
            let _ = writeln!(rep, "# max_velocity {v:.6e}");
            output::write(&cfg.out, &format!("{name}_wb_report.txt"), &rep)?;
            (Some(worst), worst <= tol && v <= tol)
        }
        CaseKind::Accuracy => {
            let (rep, surf) = accuracy_report(&cfg, &header, &out)?;
            output::write(&cfg.out, &format!("{name}_errors.txt"), &rep)?;
            (Some(surf), true)
        }
        CaseKind::Evolution => (None, !cfg.scheme.dissipation || monotone),
    };
    let err = max_err.map_or("na".to_string(), |e| format!("{e:.3e}"));
    println!(
        "case={name} status={} max_surface_err={err} energy_monotone={monotone}",
        if pass { "ok" } else { "fail" }
    );
    Ok(pass)
}

/// ℓ¹/ℓ∞ errors of h and u per layer, and the max total-surface error.
fn accuracy_report(cfg: &RunConfig, header: &str, out: &RunOutcome) -> Result<(String, f64)> {
    let case = &cfg.case;
    let w = out.weights();
    let nl = case.layers();
    let mut rep = format!("# {header}\n# quantity l1 linf\n");
    let surf = level(&out.field, 0);
    let mut surf_err = 0.0f64;
    let mut e_h = vec![(0.0, 0.0f64); nl];
    let mut e_u = vec![(0.0, 0.0f64); nl];
    for k in 0..out.field.nodes() {
        let (x1, x2) = (out.x[0][k], out.x[1][k]);
        let ex = case.exact(x1, x2, out.t).ok_or_else(|| Error::Usage(format!("{} has no exact solution", case.name)))?;
        let b = case.bathymetry(x1, x2);
        let es: f64 = b + (0..nl).map(|m| ex[3 * m]).sum::<f64>();
        surf_err = surf_err.max((surf[k] - es).abs());
        for m in 0..nl {
            let h = out.field.comps[3 * m][k];
            let dh = (h - ex[3 * m]).abs();
            let du = (out.field.comps[3 * m + 1][k] / h - ex[3 * m + 1] / ex[3 * m]).abs();
            e_h[m].0 += dh * w[k];
            e_h[m].1 = e_h[m].1.max(dh);
            e_u[m].0 += du * w[k];
            e_u[m].1 = e_u[m].1.max(du);
        }
    }
    for m in 0..nl {
        let _ = writeln!(rep, "h{} {:.6e} {:.6e}", m + 1, e_h[m].0, e_h[m].1);
        let _ = writeln!(rep, "u{} {:.6e} {:.6e}", m + 1, e_u[m].0, e_u[m].1);
    }
    Ok((rep, surf_err))
}

fn convergence(args: ConvergenceArgs) -> Result<bool> {
    if args.ns.len() < 2 {
        return Err(Error::Usage("convergence needs at least two resolutions".into()));
    }
    let base = args.run.merge_file()?;
    let case = base.resolve()?.case;
    if !case.has_exact() {
        return Err(Error::Usage(format!("{} has no exact solution", case.name)));
    }
    if args.layer == 0 || args.layer > case.layers() {
        return Err(Error::Usage(format!("layer {} out of range 1..={}", args.layer, case.layers())));
    }
    let mut errs = Vec::new();
    let mut header = String::new();
    for &n in &args.ns {
        let mut a = base.clone();
        a.n1 = Some(n);
        a.n2 = Some(n);
        let cfg = a.resolve()?;
        header = cfg.to_string();
        let out = simulate(&cfg.case, &options(&cfg))?;
        let e = velocity_l1_error(&cfg.case, &out, args.layer - 1)?;
        println!("n={n} l1_error_u{}={e:.6e}", args.layer);
        errs.push(e);
    }
    let orders = observed_orders(&args.ns, &errs);
    let out_dir = base.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let text = output::convergence_text(&header, &args.ns, &errs, &orders);
    output::write(&out_dir, &format!("{}_convergence.txt", case.name), &text)?;
    let last = *orders.last().unwrap_or(&f64::NAN);
    let pass = args.min_order.map_or(true, |m| last >= m);
    println!("case={} status={} final_order={last:.3}", case.name, if pass { "ok" } else { "fail" });
    Ok(pass)
}

fn reference(args: ReferenceArgs) -> Result<bool> {
    let case = find_case(&args.case)?;
    if case.dims != 1 {
        return Err(Error::Usage(format!("references are one-dimensional; {} is 2D", case.name)));
    }
    let n = args.n.unwrap_or(case.reference_n);
    let reference = ReferenceCache::new(&args.cache).get_or_compute(&case, n)?;
    let mesh = match args.mesh {
        Mesh::Fixed => MeshMode::Fixed,
        Mesh::Moving => MeshMode::Moving,
    };
    let mut dist = Vec::new();
    for &m in &args.compare {
        let out = simulate(&case, &RunOptions::new([m, 1], mesh))?;
        let d = surface_profile(&out).l1_distance(&reference, &out.weights());
        println!("n={m} mesh={} l1_distance={d:.6e}", mesh.as_str());
        dist.push(d);
    }
    let pass = dist.windows(2).all(|w| w[1] < w[0]);
    println!("case={} status={} reference_n={n}", case.name, if pass { "ok" } else { "fail" });
    Ok(pass)
}
