//! Run configuration: flat key-value file plus command-line overrides.

use crate::CliError;
use spateq::model::{parse_f64, parse_kv};
use spateq::tracker::TrackerConfig;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Enumerate,
    Elasticity,
    Maclaurin,
    Nested,
    Sweep,
    Bifurcate,
    Oracle,
}

impl FromStr for Mode {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s.trim() {
            "enumerate" => Mode::Enumerate,
            "elasticity" => Mode::Elasticity,
            "maclaurin" => Mode::Maclaurin,
            "nested" => Mode::Nested,
            "sweep" => Mode::Sweep,
            "bifurcate" => Mode::Bifurcate,
            "oracle" => Mode::Oracle,
            other => return Err(CliError::Config(format!("unknown mode {other}"))),
        })
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Enumerate => "enumerate",
            Mode::Elasticity => "elasticity",
            Mode::Maclaurin => "maclaurin",
            Mode::Nested => "nested",
            Mode::Sweep => "sweep",
            Mode::Bifurcate => "bifurcate",
            Mode::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    TotalDegree,
    AmenityHomotopy,
}

impl FromStr for Solver {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "total-degree" => Ok(Solver::TotalDegree),
            "amenity-homotopy" => Ok(Solver::AmenityHomotopy),
            other => Err(CliError::Config(format!("unknown solver {other}"))),
        }
    }
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::TotalDegree => "total-degree",
            Solver::AmenityHomotopy => "amenity-homotopy",
        }
    }
}

/// Values given on the command line win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trace: bool,
    pub budget: Option<u128>,
    pub solver: Option<String>,
    pub eta: Option<String>,
    pub quiet: bool,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: Mode,
    pub solver: Solver,
    pub seed: u64,
    pub out: PathBuf,
    pub budget: Option<u128>,
    pub etas: Vec<f64>,
    pub trace: bool,
    pub quiet: bool,
    pub tracker: TrackerConfig,
    /// Every key of the file, including the model keys.
    pub kv: BTreeMap<String, String>,
    /// Canonical text the config hash is taken over.
    pub canonical: String,
}

pub fn parse_eta_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| parse_f64(x).map_err(|_| CliError::Config(format!("bad eta value {x}"))))
        .collect()
}

impl RunConfig {
    pub fn from_text(text: &str, ov: &Overrides) -> Result<RunConfig, CliError> {
        let mut kv = parse_kv(text)?;
        if let Some(m) = &ov.mode {
            kv.insert("mode".into(), m.clone());
        }
        if let Some(s) = &ov.solver {
            kv.insert("solver".into(), s.clone());
        }
        if let Some(s) = ov.seed {
            kv.insert("seed".into(), s.to_string());
        }
        if let Some(b) = ov.budget {
            kv.insert("budget".into(), b.to_string());
        }
        if let Some(e) = &ov.eta {
            kv.insert("eta_targets".into(), e.clone());
        }
        let mode: Mode = kv
            .get("mode")
            .ok_or_else(|| CliError::Config("missing key mode".into()))?
            .parse()?;
        let solver: Solver = kv
            .get("solver")
            .map(|s| s.parse())
            .transpose()?
            .unwrap_or(Solver::TotalDegree);
        let int = |k: &str| -> Result<Option<u128>, CliError> {
            kv.get(k)
                .map(|s| {
                    s.trim()
                        .parse::<u128>()
                        .map_err(|_| CliError::Config(format!("{k} must be a nonnegative integer")))
                })
                .transpose()
        };
        let seed = int("seed")?.unwrap_or(0) as u64;
        let budget = int("budget")?;
        let etas = kv
            .get("eta_targets")
            .map(|s| parse_eta_list(s))
            .transpose()?
            .unwrap_or_default();
        let mut tracker = TrackerConfig::default();
        for (key, slot) in [
            ("step_init", &mut tracker.step_init),
            ("step_min", &mut tracker.step_min),
            ("step_max", &mut tracker.step_max),
            ("newton_tol", &mut tracker.newton_tol),
            ("endgame_radius", &mut tracker.endgame_radius),
            ("max_step_move", &mut tracker.max_step_move),
        ] {
            if let Some(v) = kv.get(key) {
                *slot =
                    parse_f64(v).map_err(|_| CliError::Config(format!("bad number for {key}")))?;
            }
        }
        if let Some(v) = int("newton_max_iters")? {
            tracker.newton_max_iters = v as usize;
        }
        tracker.trace = ov.trace || kv.get("trace").is_some_and(|v| v.trim() == "true");
        let out = ov
            .out
            .clone()
            .or_else(|| kv.get("out").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        let canonical: String = kv
            .iter()
            .filter(|(k, _)| k.as_str() != "out")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        Ok(RunConfig {
            mode,
            solver,
            seed,
            out,
            budget,
            etas,
            trace: tracker.trace,
            quiet: ov.quiet,
            tracker,
            kv,
            canonical,
        })
    }

    pub fn get(&self, k: &str) -> Option<&str> {
        self.kv.get(k).map(|s| s.trim())
    }

    pub fn f64_or(&self, k: &str, default: f64) -> Result<f64, CliError> {
        match self.get(k) {
            Some(v) => {
                parse_f64(v).map_err(|_| CliError::Config(format!("bad number for {k}: {v}")))
            }
            None => Ok(default),
        }
    }

    pub fn usize_or(&self, k: &str, default: usize) -> Result<usize, CliError> {
        match self.get(k) {
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{k} must be an integer"))),
            None => Ok(default),
        }
    }

    pub fn list(&self, k: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(k).map(parse_eta_list).transpose()
    }
}
