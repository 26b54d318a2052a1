//! CSV, JSON and manifest writers.

use crate::config::RunConfig;
use crate::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use spateq::model::{fmt_f64, Equilibrium};
use std::fs;
use std::path::Path;

/// γ-trick constant as (re, im).
pub type Gamma = Option<(f64, f64)>;

pub fn equilibria_csv(j: usize, eqs: &[Equilibrium]) -> String {
    let mut s = String::from("eq_id,status,residual");
    for name in ["x", "q", "psi"] {
        for k in 1..=j {
            s.push_str(&format!(",{name}_{k}"));
        }
    }
    s.push('\n');
    for (i, e) in eqs.iter().enumerate() {
        let mut row = vec![i.to_string(), e.status.to_string(), fmt_f64(e.residual)];
        row.extend(
            e.x.iter()
                .chain(&e.qprice)
                .chain(&e.psi)
                .map(|v| fmt_f64(*v)),
        );
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn config_hash(text: &str) -> String {
    let d = Sha256::digest(text.as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    mode: &'a str,
    config_hash: String,
    seed: u64,
    gamma_trick: Gamma,
}

pub fn write(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<(), CliError> {
    write(
        dir,
        name,
        &serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?,
    )
}

pub fn write_manifest(
    dir: &Path,
    cfg: &RunConfig,
    seed: u64,
    gamma: Gamma,
) -> Result<(), CliError> {
    write_json(
        dir,
        "manifest.json",
        &Manifest {
            tool: "spateq",
            version: env!("CARGO_PKG_VERSION"),
            mode: cfg.mode.name(),
            config_hash: config_hash(&cfg.canonical),
            seed,
            gamma_trick: gamma,
        },
    )
}
