//! Command-line front end for czkit: argument and config handling, report
//! emission and the subcommand drivers.

pub mod commands;
pub mod config;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use czkit::geometry::Aabb;
use czkit::kernels::Kernel;
use czkit::SignedMeasure;

use config::{read_measure, ExperimentConfig};

/// Failures, by exit code: checks 1, input 2, everything else 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("check failed: {0}")]
    Check(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<czkit::Error> for CliError {
    fn from(e: czkit::Error) -> Self {
        use czkit::Error as E;
        match e {
            E::InvalidParameter(_) | E::DimensionMismatch { .. } | E::EmptySchedule | E::ZeroVolume | E::Format(_) => {
                CliError::Parse(e.to_string())
            }
            E::Hypothesis(_) | E::Precondition(_) | E::Domain(_) => CliError::Check(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<plot::PlotError> for CliError {
    fn from(e: plot::PlotError) -> Self {
        CliError::Parse(format!("plot: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "czkit", version, about = "Calderon-Zygmund decompositions and Laplacian identities for measures")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// Measure file (JSON).
    #[arg(long, global = true)]
    pub measure: Option<PathBuf>,
    /// riesz, E, gradE or gradE<axis>.
    #[arg(long, global = true)]
    pub kernel: Option<String>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub height: Option<f64>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Cells per axis; a comma-separated list where several are used.
    #[arg(long, global = true, value_delimiter = ',')]
    pub res: Vec<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Working box: `lo,hi` for a cube or `lo_1,hi_1,...,lo_N,hi_N`.
    #[arg(long = "box", global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub bounds: Vec<f64>,
    /// JSON report path (stdout when absent).
    #[arg(long, alias = "report", global = true)]
    pub out: Option<PathBuf>,
    /// CSV path for the command's curve.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// SVG path for the command's curve.
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
    /// TOML experiment config; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoeffKind {
    Dipole,
    Composite,
    Lp,
    Uniformize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calderon-Zygmund decomposition at one height, with its invariants.
    Czd,
    /// K * mu at the cell centers of the working grid.
    Convolve,
    /// Lipschitz coefficients, checked on sampled pairs.
    Coeff {
        #[arg(value_enum)]
        kind: CoeffKind,
        /// Dipole cube center.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        center: Vec<f64>,
        /// Dipole cube side.
        #[arg(long)]
        side: Option<f64>,
        /// Exponent for the lp coefficient.
        #[arg(long)]
        p: Option<f64>,
        /// Dyadic heights for uniformize.
        #[arg(long, value_delimiter = ',')]
        heights: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Weak-Lp quasinorm and norm of a field, and the differentiability
    /// quotient of K * mu at a point.
    Norms {
        /// Grid field file (JSON); otherwise K * mu on the working grid.
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Vec<f64>,
    },
    /// Whitney cover of a closed set: nonzero cells of a field, {M mu <= t},
    /// or a random set.
    Whitney {
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Maximal function and its superlevel sets.
    Maximal {
        #[arg(long, value_delimiter = ',')]
        heights: Vec<f64>,
    },
    /// Dirichlet problem -Δu = mu on the box at each resolution.
    Poisson {
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Tr(ap D²u) = -f on a fixture across resolutions.
    VerifyMain {
        /// dirac, smooth or mixed; ignored when a measure is given.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Band means of |(Δu)_a| over level bands of u or of grad u.
    LevelSet {
        /// plateau, or a measure to solve for.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
        /// Level of grad u instead of u.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        gradient: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
        /// Fail unless the band mean drops by this factor.
        #[arg(long)]
        min_drop: Option<f64>,
    },
    /// Level-band fractions for Δu >= theta_min.
    FrankLieb {
        /// paraboloid, tilted or kink.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        theta_min: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
    },
    /// Recomputes the calibration constants.
    Calibrate,
    /// Runs the acceptance criteria.
    Acceptance {
        #[arg(long)]
        criterion: Vec<u8>,
    },
}

/// What a subcommand produced.
#[derive(Debug)]
pub struct Report {
    pub passed: bool,
    pub body: serde_json::Value,
    /// CSV curve, when the command has one.
    pub curve: Option<Curve>,
    /// Lines for stdout in addition to the report.
    pub lines: Vec<String>,
}

#[derive(Debug)]
pub struct Curve {
    pub csv: String,
    pub title: String,
    pub loglog: bool,
}

impl Report {
    pub fn new(passed: bool, body: impl Serialize) -> Self {
        Report {
            passed,
            body: serde_json::to_value(body).expect("reports serialize"),
            curve: None,
            lines: Vec::new(),
        }
    }

    pub fn with_curve(mut self, csv: String, title: &str, loglog: bool) -> Self {
        self.curve = Some(Curve {
            csv,
            title: title.into(),
            loglog,
        });
        self
    }
}

/// Flags merged with the optional config.
pub struct Inputs {
    pub common: Common,
    pub config: Option<ExperimentConfig>,
}

pub const DEFAULT_CELLS: usize = 64;

impl Inputs {
    pub fn new(common: Common) -> Result<Self, CliError> {
        let config = common.config.as_deref().map(ExperimentConfig::load).transpose()?;
        Ok(Inputs { common, config })
    }

    pub fn seed(&self) -> u64 {
        self.common.seed.or(self.config.as_ref().and_then(|c| c.seed)).unwrap_or(0)
    }

    pub fn measure(&self) -> Result<Option<SignedMeasure>, CliError> {
        if let Some(p) = &self.common.measure {
            return read_measure(p).map(Some);
        }
        match &self.config {
            Some(c) => c.measure(),
            None => Ok(None),
        }
    }

    pub fn require_measure(&self) -> Result<SignedMeasure, CliError> {
        self.measure()?
            .ok_or_else(|| CliError::Parse("a measure is required (--measure or config)".into()))
    }

    pub fn dim(&self, mu: Option<&SignedMeasure>) -> usize {
        mu.map(|m| m.dim())
            .or(self.common.dim)
            .or(self.config.as_ref().and_then(|c| c.dimension))
            .unwrap_or(2)
    }

    pub fn kernel(&self, dim: usize) -> Result<Kernel, CliError> {
        let name = self
            .common
            .kernel
            .clone()
            .or(self.config.as_ref().and_then(|c| c.kernel.clone()))
            .unwrap_or_else(|| "riesz".into());
        Ok(Kernel::from_name(&name, dim)?)
    }

    pub fn height(&self) -> Result<f64, CliError> {
        self.common
            .height
            .or(self.config.as_ref().and_then(|c| c.heights.first().copied()))
            .ok_or_else(|| CliError::Parse("a height is required (--height)".into()))
    }

    pub fn theta(&self) -> f64 {
        self.common.theta.or(self.config.as_ref().and_then(|c| c.theta)).unwrap_or(2.0)
    }

    pub fn resolutions(&self, default: &[usize]) -> Vec<usize> {
        if !self.common.res.is_empty() {
            return self.common.res.clone();
        }
        match &self.config {
            Some(c) if !c.resolutions.is_empty() => c.resolutions.clone(),
            _ => default.to_vec(),
        }
    }

    pub fn cells(&self) -> usize {
        self.resolutions(&[DEFAULT_CELLS])[0]
    }

    /// `--box`, the config box, the measure's density box, then `[-1, 1]^N`.
    pub fn bounds(&self, dim: usize, mu: Option<&SignedMeasure>) -> Result<Aabb, CliError> {
        let b = &self.common.bounds;
        if !b.is_empty() {
            return Ok(if b.len() == 2 {
                Aabb::cube(dim, b[0], b[1] - b[0])?
            } else if b.len() == 2 * dim {
                let lo: Vec<f64> = b.chunks(2).map(|c| c[0]).collect();
                let hi: Vec<f64> = b.chunks(2).map(|c| c[1]).collect();
                Aabb::from_slices(&lo, &hi)?
            } else {
                return Err(CliError::Parse(format!("--box needs 2 or {} numbers", 2 * dim)));
            });
        }
        if let Some(c) = self.config.as_ref().and_then(|c| c.bounds.as_ref()) {
            return Ok(Aabb::from_slices(&c.lo, &c.hi)?);
        }
        if let Some(f) = mu.and_then(|m| m.density()) {
            return Ok(*f.grid().bounds());
        }
        Ok(Aabb::cube(dim, -1.0, 2.0)?)
    }

    pub fn out_path(&self) -> Option<PathBuf> {
        self.common
            .out
            .clone()
            .or(self.config.as_ref().and_then(|c| c.output.report.clone()))
    }

    pub fn csv_path(&self) -> Option<PathBuf> {
        self.common.csv.clone().or(self.config.as_ref().and_then(|c| c.output.csv.clone()))
    }

    pub fn plot_path(&self) -> Option<PathBuf> {
        self.common.plot.clone().or(self.config.as_ref().and_then(|c| c.output.plot.clone()))
    }

    pub fn list(&self, flag: &[f64], pick: fn(&ExperimentConfig) -> &Vec<f64>, default: &[f64]) -> Vec<f64> {
        if !flag.is_empty() {
            return flag.to_vec();
        }
        match &self.config {
            Some(c) if !pick(c).is_empty() => pick(c).clone(),
            _ => default.to_vec(),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

/// Runs a parsed command line and writes its artifacts.
pub fn run(cli: Cli) -> Result<bool, CliError> {
    let name = command_name(&cli.command);
    let inputs = Inputs::new(cli.common)?;
    let report = commands::dispatch(&cli.command, &inputs)?;
    let envelope = serde_json::json!({
        "command": name,
        "seed": inputs.seed(),
        "passed": report.passed,
        "result": report.body,
    });
    let text = serde_json::to_string_pretty(&envelope).map_err(|e| CliError::Internal(e.to_string()))? + "\n";
    for l in &report.lines {
        println!("{l}");
    }
    match inputs.out_path() {
        Some(p) => write_file(&p, &text)?,
        None if report.lines.is_empty() => print!("{text}"),
        None => {}
    }
    if let Some(curve) = &report.curve {
        if let Some(p) = inputs.csv_path() {
            write_file(&p, &curve.csv)?;
        }
        if let Some(p) = inputs.plot_path() {
            let style = plot::PlotStyle {
                title: curve.title.clone(),
                loglog: curve.loglog,
            };
            write_file(&p, &plot::emit_plot(&curve.csv, &style)?)?;
        }
    }
    Ok(report.passed)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Czd => "czd",
        Command::Convolve => "convolve",
        Command::Coeff { .. } => "coeff",
        Command::Norms { .. } => "norms",
        Command::Whitney { .. } => "whitney",
        Command::Maximal { .. } => "maximal",
        Command::Poisson { .. } => "poisson",
        Command::VerifyMain { .. } => "verify-main",
        Command::LevelSet { .. } => "level-set",
        Command::FrankLieb { .. } => "frank-lieb",
        Command::Calibrate => "calibrate",
        Command::Acceptance { .. } => "acceptance",
    }
}
