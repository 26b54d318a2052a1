//! Grid sweeps over random cities with per-cell checkpoints.

use crate::commands::{solve_config, solve_static, Outcome};
use crate::config::{RunConfig, Solver};
use crate::output::{equilibria_csv, write, write_manifest};
use crate::CliError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spateq::homotopies::{default_rational, solve_elasticity_all, PathStats};
use spateq::model::{fmt_f64, City, Equilibrium};
use spateq::polysys::rational_approx;
use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub j: Vec<usize>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub xi: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Finite elasticities solved in addition to η = ∞.
    pub etas: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub replicate: usize,
    pub seed: u64,
    pub j: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub xi: f64,
    pub sigma: f64,
}

impl SweepSpec {
    pub fn from_config(cfg: &RunConfig) -> Result<SweepSpec, CliError> {
        let list = |k: &str, d: &[f64]| -> Result<Vec<f64>, CliError> {
            Ok(cfg.list(k)?.unwrap_or_else(|| d.to_vec()))
        };
        let j = list("J", &[3.0])?;
        if j.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(CliError::Config(
                "J entries must be positive integers".into(),
            ));
        }
        let spec = SweepSpec {
            j: j.iter().map(|v| *v as usize).collect(),
            gamma1: list("gamma1", &[2.0])?,
            gamma2: list("gamma2", &[0.0])?,
            xi: list("xi", &[1.0])?,
            sigma: list("sigma", &[0.0])?,
            etas: cfg.etas.clone(),
            replicates: cfg.usize_or("replicates", 1)?,
            seed: cfg.seed,
        };
        if spec.replicates == 0 {
            return Err(CliError::Config("replicates must be at least 1".into()));
        }
        let all = spec
            .gamma1
            .iter()
            .chain(&spec.gamma2)
            .chain(&spec.xi)
            .chain(&spec.sigma)
            .chain(&spec.etas);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(CliError::Config("sweep grid values must be finite".into()));
        }
        Ok(spec)
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &j in &self.j {
            for &gamma1 in &self.gamma1 {
                for &gamma2 in &self.gamma2 {
                    for &xi in &self.xi {
                        for &sigma in &self.sigma {
                            for replicate in 0..self.replicates {
                                let index = out.len();
                                let seed = self.seed ^ index as u64;
                                out.push(Cell {
                                    index,
                                    replicate,
                                    seed,
                                    j,
                                    gamma1,
                                    gamma2,
                                    xi,
                                    sigma,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Line city with lognormal amenities; 80/20 population split.
pub fn cell_city(c: &Cell) -> City {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let a: Vec<f64> = (0..c.j)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (c.sigma * z).exp()
        })
        .collect();
    let mut city = City::line(c.j, c.gamma1, c.xi)
        .with_amenities(a)
        .with_populations(0.8 * c.j as f64, 0.2 * c.j as f64);
    city.gamma[1] = c.gamma2;
    city
}

/// Counts for one cell: proper at η = ∞, per finite η, path stats.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub count_inf: usize,
    pub counts_eta: Vec<usize>,
    pub stats: PathStats,
}

pub fn run_cell(cfg: &RunConfig, cell: &Cell, dir: &Path) -> Result<CellResult, CliError> {
    let city = cell_city(cell);
    let text = format!(
        "mode = enumerate\nsolver = {}\nseed = {}\n{}",
        cfg.solver.name(),
        cell.seed,
        city.to_kv()
    );
    let mut ccfg = RunConfig::from_text(&text, &Default::default())?;
    ccfg.tracker = cfg.tracker.clone();
    ccfg.budget = cfg.budget;
    let rat = default_rational(city.gamma[0])
        .or_else(|_| rational_approx(city.gamma[0], 1e-9, 1_000_000))?;
    let scfg = solve_config(&ccfg);
    let sol = solve_static(&city, rat, ccfg.solver, &scfg)?;
    let starts: Vec<Equilibrium> = sol.proper().into_iter().cloned().collect();
    write(
        dir,
        "equilibria.csv",
        &equilibria_csv(city.j, &sol.equilibria),
    )?;
    write(dir, "config.txt", &text)?;
    write_manifest(dir, &ccfg, cell.seed, sol.gamma_trick.map(|g| (g.re, g.im)))?;
    let mut counts_eta = Vec::new();
    for &eta in &cfg.etas {
        let (_, eqs, _) = solve_elasticity_all(&city.clone().with_eta(eta), &starts, &scfg);
        counts_eta.push(eqs.iter().filter(|e| e.is_proper()).count());
    }
    Ok(CellResult {
        count_inf: starts.len(),
        counts_eta,
        stats: sol.stats,
    })
}

fn header(etas: &[f64]) -> String {
    let mut s = String::from("cell,replicate,seed,J,gamma1,gamma2,xi,sigma,count_inf");
    for e in etas {
        s.push_str(&format!(",count_eta_{}", fmt_f64(*e)));
    }
    s.push_str(",paths,converged,diverged,singular,step_failure\n");
    s
}

fn row(cell: &Cell, r: &CellResult) -> String {
    let mut s = format!(
        "{},{},{},{},{},{},{},{},{}",
        cell.index,
        cell.replicate,
        cell.seed,
        cell.j,
        fmt_f64(cell.gamma1),
        fmt_f64(cell.gamma2),
        fmt_f64(cell.xi),
        fmt_f64(cell.sigma),
        r.count_inf
    );
    for c in &r.counts_eta {
        s.push_str(&format!(",{c}"));
    }
    let st = &r.stats;
    s.push_str(&format!(
        ",{},{},{},{},{}\n",
        st.total, st.converged, st.diverged, st.singular, st.step_failure
    ));
    s
}

fn parse_row(line: &str, n_eta: usize) -> Option<(f64, usize, Vec<usize>)> {
    let f: Vec<&str> = line.trim().split(',').collect();
    if f.len() != 9 + n_eta + 5 {
        return None;
    }
    let g: f64 = f[4].parse().ok()?;
    let inf: usize = f[8].parse().ok()?;
    let etas: Option<Vec<usize>> = f[9..9 + n_eta].iter().map(|v| v.parse().ok()).collect();
    Some((g, inf, etas?))
}

fn read_checkpoint(path: &Path) -> BTreeSet<usize> {
    fs::read_to_string(path)
        .map(|s| s.lines().filter_map(|l| l.trim().parse().ok()).collect())
        .unwrap_or_default()
}

/// Mean proper count per γ¹, at η = ∞ and each finite η.
pub fn gamma_summary(etas: &[f64], rows: &[String]) -> String {
    let mut s = String::from("gamma1,cells,mean_count_inf");
    for e in etas {
        s.push_str(&format!(",mean_count_eta_{}", fmt_f64(*e)));
    }
    s.push('\n');
    let parsed: Vec<_> = rows
        .iter()
        .filter_map(|r| parse_row(r, etas.len()))
        .collect();
    let mut gammas: Vec<f64> = parsed.iter().map(|p| p.0).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    for g in gammas {
        let group: Vec<_> = parsed.iter().filter(|p| p.0 == g).collect();
        let n = group.len() as f64;
        s.push_str(&format!(
            "{},{},{}",
            fmt_f64(g),
            group.len(),
            fmt_f64(group.iter().map(|p| p.1 as f64).sum::<f64>() / n)
        ));
        for k in 0..etas.len() {
            s.push_str(&format!(
                ",{}",
                fmt_f64(group.iter().map(|p| p.2[k] as f64).sum::<f64>() / n)
            ));
        }
        s.push('\n');
    }
    s
}

/// Runs every cell not listed in the checkpoint, then rebuilds the summaries.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    // total degree needs (p+q)^J paths; the sweep defaults to H_A
    let mut cfg = cfg.clone();
    if cfg.get("solver").is_none() {
        cfg.solver = Solver::AmenityHomotopy;
    }
    let cfg = &cfg;
    let spec = SweepSpec::from_config(cfg)?;
    let cells = spec.cells();
    fs::create_dir_all(&cfg.out)?;
    let ckpt = cfg.out.join("checkpoint.txt");
    let done = read_checkpoint(&ckpt);
    let mut ck = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&ckpt)?;
    let mut failed = 0;
    for cell in &cells {
        if done.contains(&cell.index) {
            continue;
        }
        let dir = cfg
            .out
            .join("cells")
            .join(format!("cell_{:05}", cell.index));
        match run_cell(cfg, cell, &dir) {
            Ok(r) => {
                write(&dir, "row.csv", &row(cell, &r))?;
                writeln!(ck, "{}", cell.index)?;
                ck.flush()?;
            }
            Err(CliError::Io(e)) => return Err(CliError::Io(e)),
            Err(e) => {
                failed += 1;
                if !cfg.quiet {
                    eprintln!("cell {}: {e}", cell.index);
                }
            }
        }
    }
    let mut rows = Vec::new();
    for cell in &cells {
        let p = cfg
            .out
            .join("cells")
            .join(format!("cell_{:05}", cell.index))
            .join("row.csv");
        if let Ok(r) = fs::read_to_string(p) {
            rows.push(r);
        }
    }
    let mut summary = header(&spec.etas);
    rows.iter().for_each(|r| summary.push_str(r));
    write(&cfg.out, "summary.csv", &summary)?;
    write(
        &cfg.out,
        "gamma_summary.csv",
        &gamma_summary(&spec.etas, &rows),
    )?;
    write_manifest(&cfg.out, cfg, cfg.seed, None)?;
    if rows.is_empty() && !cells.is_empty() {
        return Err(CliError::Numerical("no sweep cell completed".into()));
    }
    Ok(Outcome {
        summary: format!(
            "{} of {} cells complete, {failed} failed",
            rows.len(),
            cells.len()
        ),
    })
}
