use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mlswe::cases::{find_case, CaseSpec, MeshMode};
use mlswe::energy::check_gamma;
use mlswe::movingmesh::{MonitorConfig, Sigma};
use mlswe::solver_fixed::{DtPolicy, SchemeConfig};
use mlswe::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mesh {
    Fixed,
    Moving,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Standard,
    Accuracy,
}

/// Options shared by `run` and `convergence`. Every field can also come from
/// a `key = value` file; flags win.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Case name (see `mlswe list`)
    #[arg(long)]
    pub case: Option<String>,
    /// Nodes in x1
    #[arg(long)]
    pub n1: Option<usize>,
    /// Nodes in x2 (2D cases)
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long, value_enum)]
    pub mesh: Option<Mesh>,
    #[arg(long)]
    pub cfl: Option<f64>,
    /// Order parameter of the flux (1..=3)
    #[arg(long)]
    pub p: Option<usize>,
    /// Bottom energy weight; must exceed ρ_M/2 (default ρ_M)
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub dissipation: Option<Switch>,
    #[arg(long, value_enum)]
    pub dt_policy: Option<Policy>,
    #[arg(long)]
    pub end_time: Option<f64>,
    /// Densities, comma separated, top layer first
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    #[arg(long)]
    pub g: Option<f64>,
    /// Monitor gradient weight
    #[arg(long)]
    pub theta: Option<f64>,
    /// Monitor field: total, depth:<m> or depth-bottom:<m> (layers counted from 1)
    #[arg(long)]
    pub sigma: Option<String>,
    /// Extra snapshot every this many steps
    #[arg(long)]
    pub snapshot_stride: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key = value file with any of the options above
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const KEYS: [&str; 16] = [
    "case",
    "n1",
    "n2",
    "mesh",
    "cfl",
    "p",
    "gamma",
    "dissipation",
    "dt-policy",
    "end-time",
    "rho",
    "g",
    "theta",
    "sigma",
    "snapshot-stride",
    "out",
];

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key = value", no + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Usage(format!("config line {}: unknown key '{}'", no + 1, k.trim())));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Usage(format!("invalid value '{v}' for {key}")))
}

fn parse_enum<T: ValueEnum>(key: &str, v: &str) -> Result<T> {
    T::from_str(v, true).map_err(|_| Error::Usage(format!("invalid value '{v}' for {key}")))
}

pub fn parse_sigma(v: &str) -> Result<Sigma> {
    let bad = || Error::Usage(format!("invalid monitor field '{v}'"));
    if v == "total" {
        return Ok(Sigma::TotalSurface);
    }
    let (kind, m) = v.split_once(':').ok_or_else(bad)?;
    let m: usize = m.parse().map_err(|_| bad())?;
    if m == 0 {
        return Err(bad());
    }
    match kind {
        "depth" => Ok(Sigma::Depth(m - 1)),
        "depth-bottom" => Ok(Sigma::DepthPlusBottom(m - 1)),
        _ => Err(bad()),
    }
}

fn sigma_name(s: Sigma) -> String {
    match s {
        Sigma::TotalSurface => "total".into(),
        Sigma::Depth(m) => format!("depth:{}", m + 1),
        Sigma::DepthPlusBottom(m) => format!("depth-bottom:{}", m + 1),
    }
}

impl RunArgs {
    /// Fills unset fields from the config file, if any.
    pub fn merge_file(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let map = read_config_file(&path)?;
        self.merge_map(&map)?;
        Ok(self)
    }

    pub fn merge_map(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in map {
            match k.as_str() {
                "case" => _ = self.case.get_or_insert_with(|| v.clone()),
                "n1" if self.n1.is_none() => self.n1 = Some(parse(k, v)?),
                "n2" if self.n2.is_none() => self.n2 = Some(parse(k, v)?),
                "mesh" if self.mesh.is_none() => self.mesh = Some(parse_enum(k, v)?),
                "cfl" if self.cfl.is_none() => self.cfl = Some(parse(k, v)?),
                "p" if self.p.is_none() => self.p = Some(parse(k, v)?),
                "gamma" if self.gamma.is_none() => self.gamma = Some(parse(k, v)?),
                "dissipation" if self.dissipation.is_none() => self.dissipation = Some(parse_enum(k, v)?),
                "dt-policy" if self.dt_policy.is_none() => self.dt_policy = Some(parse_enum(k, v)?),
                "end-time" if self.end_time.is_none() => self.end_time = Some(parse(k, v)?),
                "rho" if self.rho.is_none() => {
                    self.rho = Some(v.split(',').map(|s| parse(k, s.trim())).collect::<Result<_>>()?)
                }
                "g" if self.g.is_none() => self.g = Some(parse(k, v)?),
                "theta" if self.theta.is_none() => self.theta = Some(parse(k, v)?),
                "sigma" if self.sigma.is_none() => self.sigma = Some(v.clone()),
                "snapshot-stride" if self.snapshot_stride.is_none() => self.snapshot_stride = Some(parse(k, v)?),
                "out" if self.out.is_none() => self.out = Some(PathBuf::from(v)),
                _ => {}
            }
        }
        Ok(())
    }

    /// Validated configuration; nothing is allocated for the run yet.
    pub fn resolve(&self) -> Result<RunConfig> {
        let name = self.case.as_deref().ok_or_else(|| Error::Usage("--case is required".into()))?;
        let mut case = find_case(name)?;
        if let Some(rho) = &self.rho {
            if rho.len() != case.layers() {
                return Err(Error::Usage(format!("{name} has {} layers, got {} densities", case.layers(), rho.len())));
            }
            case.rho = rho.clone();
        }
        if let Some(g) = self.g {
            case.g = g;
        }
        let sys = case.system()?;
        let scheme = SchemeConfig {
            p: self.p.unwrap_or(3),
            cfl: self.cfl.unwrap_or(mlswe::solver_fixed::DEFAULT_CFL),
            dissipation: self.dissipation.map_or(true, |s| s == Switch::On),
            dt_policy: match self.dt_policy.unwrap_or(Policy::Standard) {
                Policy::Standard => DtPolicy::Standard,
                Policy::Accuracy => DtPolicy::Accuracy,
            },
        };
        scheme.validate().map_err(|e| Error::Usage(e.to_string()))?;
        let gamma = self.gamma.unwrap_or(*case.rho.last().unwrap_or(&1.0));
        check_gamma(&sys, gamma).map_err(|e| Error::Usage(e.to_string()))?;
        let mut monitor = case.monitor;
        if let Some(t) = self.theta {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Usage(format!("theta must be non-negative, got {t}")));
            }
            monitor.theta = t;
        }
        if let Some(s) = &self.sigma {
            monitor.sigma = parse_sigma(s)?;
        }
        monitor.validate(case.layers()).map_err(|e| Error::Usage(e.to_string()))?;
        let n1 = self.n1.unwrap_or(case.default_n[0]);
        let n2 = if case.dims == 2 { self.n2.unwrap_or(case.default_n[1]) } else { 1 };
        if n1 < 2 || n2 < 1 {
            return Err(Error::Usage(format!("grid {n1}x{n2} is too small")));
        }
        if let Some(t) = self.end_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Usage(format!("end time must be positive, got {t}")));
            }
        }
        Ok(RunConfig {
            case,
            n: [n1, n2],
            mesh: match self.mesh.unwrap_or(Mesh::Fixed) {
                Mesh::Fixed => MeshMode::Fixed,
                Mesh::Moving => MeshMode::Moving,
            },
            scheme,
            gamma,
            monitor,
            end_time: self.end_time,
            snapshot_stride: self.snapshot_stride,
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub case: CaseSpec,
    pub n: [usize; 2],
    pub mesh: MeshMode,
    pub scheme: SchemeConfig,
    pub gamma: f64,
    pub monitor: MonitorConfig,
    pub end_time: Option<f64>,
    pub snapshot_stride: Option<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn end(&self) -> f64 {
        self.end_time.unwrap_or(self.case.end_time)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rho: Vec<String> = self.case.rho.iter().map(|r| r.to_string()).collect();
        write!(
            f,
            "case={} n1={} n2={} mesh={} p={} cfl={} dissipation={} dt-policy={} gamma={} rho={} g={} theta={} sigma={} end-time={}",
            self.case.name,
            self.n[0],
            self.n[1],
            self.mesh.as_str(),
            self.scheme.p,
            self.scheme.cfl,
            if self.scheme.dissipation { "on" } else { "off" },
            match self.scheme.dt_policy {
                DtPolicy::Standard => "standard",
                DtPolicy::Accuracy => "accuracy",
            },
            self.gamma,
            rho.join(","),
            self.case.g,
            self.monitor.theta,
            sigma_name(self.monitor.sigma),
            self.end(),
        )
    }
}
