//! One function per mode.

use crate::config::{RunConfig, Solver};
use crate::output::{equilibria_csv, write, write_json, write_manifest, Gamma};
use crate::CliError;
use serde::Serialize;
use spateq::bifurcation::{
    enumerate_branches, locate_singular, BifurcationConfig, BranchSet, SingularPoint,
};
use spateq::homotopies::{
    default_rational, solve_amenity_homotopy, solve_elasticity_all, solve_maclaurin,
    solve_total_degree, AmenityH, Coords, ParamPath, PathStats, Solution, SolveConfig,
};
use spateq::model::{fmt_f64, weights, City, Equilibrium, Tolerances};
use spateq::nested::{
    all_menus, citywide_elasticity_homotopy, combination_count, parse_neighborhoods,
    region_fixed_point, selections, synthetic_city, CitywideState, MenuEntry, NestedCity,
    RegionEquilibrium,
};
use spateq::oracle::{brute_force_equilibria, GridSpec};
use spateq::par;
use spateq::polysys::{rational_approx, Rational, PATH_BUDGET};
use spateq::tracker::{track, PathStatus};
use std::time::Instant;

/// Short human-readable result of a run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub summary: String,
}

pub fn solve_config(cfg: &RunConfig) -> SolveConfig {
    SolveConfig {
        tracker: cfg.tracker.clone(),
        seed: cfg.seed,
        budget: cfg.budget.unwrap_or(PATH_BUDGET),
        ..SolveConfig::default()
    }
}

pub fn city_of(cfg: &RunConfig) -> Result<City, CliError> {
    Ok(City::from_kv(&cfg.kv)?)
}

pub fn rational_of(cfg: &RunConfig, city: &City) -> Result<Rational, CliError> {
    match (cfg.get("p"), cfg.get("q")) {
        (Some(p), Some(q)) => {
            let p = p
                .parse()
                .map_err(|_| CliError::Config("p must be an integer".into()))?;
            let q = q
                .parse()
                .map_err(|_| CliError::Config("q must be an integer".into()))?;
            Ok(Rational { p, q })
        }
        _ => {
            let eps = cfg.f64_or("rational_eps", 1e-9)?;
            let den = cfg.usize_or("rational_max_den", 12)? as u64;
            Ok(rational_approx(city.gamma[0], eps, den)
                .or_else(|_| default_rational(city.gamma[0]))?)
        }
    }
}

pub fn solve_static(
    city: &City,
    rat: Rational,
    solver: Solver,
    scfg: &SolveConfig,
) -> Result<Solution, CliError> {
    Ok(match solver {
        Solver::TotalDegree => solve_total_degree(city, rat, scfg)?,
        Solver::AmenityHomotopy => solve_amenity_homotopy(city, rat, scfg)?,
    })
}

fn gamma_pair(sol: &Solution) -> Gamma {
    sol.gamma_trick.map(|g| (g.re, g.im))
}

#[derive(Serialize)]
struct Metadata {
    mode: String,
    solver: String,
    seed: u64,
    gamma_trick: Gamma,
    rational: Option<(i64, i64)>,
    tolerances: Tolerances,
    stats: PathStats,
    proper: usize,
    elapsed_seconds: f64,
}

fn check_paths(stats: &PathStats) -> Result<(), CliError> {
    if stats.total > 0 && stats.converged == 0 {
        return Err(CliError::Numerical("every path failed".into()));
    }
    Ok(())
}

pub fn cmd_enumerate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let t0 = Instant::now();
    let city = city_of(cfg)?;
    let rat = rational_of(cfg, &city)?;
    let scfg = solve_config(cfg);
    let sol = solve_static(&city, rat, cfg.solver, &scfg)?;
    check_paths(&sol.stats)?;
    write(
        &cfg.out,
        "equilibria.csv",
        &equilibria_csv(city.j, &sol.equilibria),
    )?;
    if let Some(tr) = &sol.trace_csv {
        write(&cfg.out, "trace.csv", tr)?;
    }
    let proper = sol.proper().len();
    write_json(
        &cfg.out,
        "metadata.json",
        &Metadata {
            mode: cfg.mode.name().into(),
            solver: cfg.solver.name().into(),
            seed: cfg.seed,
            gamma_trick: gamma_pair(&sol),
            rational: Some((rat.p, rat.q)),
            tolerances: scfg.tol,
            stats: sol.stats.clone(),
            proper,
            elapsed_seconds: t0.elapsed().as_secs_f64(),
        },
    )?;
    write_manifest(&cfg.out, cfg, cfg.seed, gamma_pair(&sol))?;
    Ok(Outcome {
        summary: format!("{proper} proper equilibria ({} paths)", sol.stats.total),
    })
}

/// Equilibria at η = ∞, then H_η toward every target elasticity.
pub fn cmd_elasticity(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let t0 = Instant::now();
    let city = city_of(cfg)?;
    let mut base = city.clone();
    base.eta = f64::INFINITY;
    let rat = rational_of(cfg, &base)?;
    let scfg = solve_config(cfg);
    let sol = solve_static(&base, rat, cfg.solver, &scfg)?;
    check_paths(&sol.stats)?;
    let targets = if cfg.etas.is_empty() {
        vec![city.eta]
    } else {
        cfg.etas.clone()
    };
    write(
        &cfg.out,
        "equilibria_eta_inf.csv",
        &equilibria_csv(city.j, &sol.equilibria),
    )?;
    let starts: Vec<Equilibrium> = sol.proper().into_iter().cloned().collect();
    let mut counts = Vec::new();
    for &eta in &targets {
        let target = base.clone().with_eta(eta);
        let (_, eqs, stats) = solve_elasticity_all(&target, &starts, &scfg);
        write(
            &cfg.out,
            &format!("equilibria_eta_{eta}.csv"),
            &equilibria_csv(city.j, &eqs),
        )?;
        counts.push((eta, eqs.iter().filter(|e| e.is_proper()).count(), stats));
    }
    #[derive(Serialize)]
    struct Meta {
        seed: u64,
        gamma_trick: Gamma,
        proper_at_infinity: usize,
        targets: Vec<(f64, usize, PathStats)>,
        elapsed_seconds: f64,
    }
    write_json(
        &cfg.out,
        "metadata.json",
        &Meta {
            seed: cfg.seed,
            gamma_trick: gamma_pair(&sol),
            proper_at_infinity: starts.len(),
            targets: counts.clone(),
            elapsed_seconds: t0.elapsed().as_secs_f64(),
        },
    )?;
    write_manifest(&cfg.out, cfg, cfg.seed, gamma_pair(&sol))?;
    let parts: Vec<String> = counts
        .iter()
        .map(|(e, c, _)| format!("eta={e}: {c}"))
        .collect();
    Ok(Outcome {
        summary: format!("{} at eta=inf; {}", starts.len(), parts.join(", ")),
    })
}

pub fn cmd_maclaurin(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let t0 = Instant::now();
    let city = city_of(cfg)?;
    let n = cfg.usize_or("order", 8)?;
    let scfg = solve_config(cfg);
    let sol = solve_maclaurin(&city, n, &scfg)?;
    check_paths(&sol.stats)?;
    let proper: Vec<Equilibrium> = sol.proper().into_iter().cloned().collect();
    write(&cfg.out, "equilibria.csv", &equilibria_csv(city.j, &proper))?;
    write_json(
        &cfg.out,
        "metadata.json",
        &Metadata {
            mode: cfg.mode.name().into(),
            solver: "total-degree".into(),
            seed: cfg.seed,
            gamma_trick: gamma_pair(&sol),
            rational: None,
            tolerances: scfg.tol,
            stats: sol.stats.clone(),
            proper: proper.len(),
            elapsed_seconds: t0.elapsed().as_secs_f64(),
        },
    )?;
    write_manifest(&cfg.out, cfg, cfg.seed, gamma_pair(&sol))?;
    Ok(Outcome {
        summary: format!(
            "{} proper equilibria ({} paths)",
            proper.len(),
            sol.stats.total
        ),
    })
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let city = city_of(cfg)?;
    let spec = GridSpec {
        resolution: cfg.usize_or("resolution", 16)?,
        ..GridSpec::default()
    };
    let eqs = brute_force_equilibria(&city, &spec, par::Exec::default());
    write(&cfg.out, "equilibria.csv", &equilibria_csv(city.j, &eqs))?;
    write_manifest(&cfg.out, cfg, cfg.seed, None)?;
    Ok(Outcome {
        summary: format!("{} proper equilibria", eqs.len()),
    })
}

/// Per-start outcome of a bifurcation scan.
#[derive(Serialize)]
struct ScanEntry {
    start_x: Vec<f64>,
    status: String,
    t_final: f64,
    singular: Option<SingularPoint>,
    branches: Option<BranchSet>,
    error: Option<String>,
}

/// Amenity of one location varies along t; H_A family from a fixed city.
pub fn amenity_family(city: &City, k: usize, gamma: f64) -> AmenityH {
    let d = weights(city);
    let mut a0 = city.a.clone();
    let mut a1 = city.a.clone();
    a0[k] = 0.0;
    a1[k] = 1.0;
    AmenityH {
        path: ParamPath {
            a0,
            a1,
            mc0: city.mc.clone(),
            mc1: city.mc.clone(),
            d0: d.clone(),
            d1: d,
            alpha: city.alpha,
        },
        coords: Coords::Psi { gamma },
    }
}

pub fn cmd_bifurcate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut city = city_of(cfg)?;
    let k = cfg.usize_or("vary", 1)?;
    if k == 0 || k > city.j {
        return Err(CliError::Config(format!("vary must be in 1..={}", city.j)));
    }
    let k = k - 1;
    let t_from = cfg.f64_or("t_from", city.a[k])?;
    let t_to = cfg.f64_or("t_to", 2.0 * t_from)?;
    city.a[k] = t_from;
    let rat = rational_of(cfg, &city)?;
    let scfg = solve_config(cfg);
    let sol = solve_static(&city, rat, cfg.solver, &scfg)?;
    let h = amenity_family(&city, k, city.gamma[0]);
    let dt_mag = cfg.f64_or("dt", 1e-4)?.abs();
    let dt = if t_to > t_from { -dt_mag } else { dt_mag };
    let bcfg = BifurcationConfig {
        solve: scfg.clone(),
        ..BifurcationConfig::default()
    };
    let proper: Vec<Equilibrium> = sol.proper().into_iter().cloned().collect();
    let entries: Vec<ScanEntry> = par::map(scfg.exec, &proper, |e| {
        let mut entry = ScanEntry {
            start_x: e.x.clone(),
            status: String::new(),
            t_final: t_from,
            singular: None,
            branches: None,
            error: None,
        };
        match track(&h, &e.psi, t_from, t_to, &scfg.tracker) {
            Err(err) => entry.error = Some(err.to_string()),
            Ok(p) => {
                entry.status = format!("{:?}", p.status).to_lowercase();
                entry.t_final = p.t_final;
                if p.status == PathStatus::Singular {
                    match locate_singular(&h, &p.endpoint, p.t_final, &bcfg) {
                        Err(err) => entry.error = Some(err.to_string()),
                        Ok(sp) => {
                            match enumerate_branches(&h, &sp, dt, &bcfg) {
                                Ok(bs) => entry.branches = Some(bs),
                                Err(err) => entry.error = Some(err.to_string()),
                            }
                            entry.singular = Some(sp);
                        }
                    }
                }
            }
        }
        entry
    });
    let n_sing = entries.iter().filter(|e| e.singular.is_some()).count();
    write_json(&cfg.out, "bifurcation.json", &entries)?;
    write_manifest(&cfg.out, cfg, cfg.seed, gamma_pair(&sol))?;
    Ok(Outcome {
        summary: format!("{} starts, {n_sing} singular points", entries.len()),
    })
}

pub fn nested_city(cfg: &RunConfig) -> Result<NestedCity, CliError> {
    let total = [cfg.f64_or("Lw", 1.0)?, cfg.f64_or("Lb", 1.0)?];
    let mut nc = match (cfg.get("neighborhoods"), cfg.get("synthetic")) {
        (Some(path), _) => parse_neighborhoods(&std::fs::read_to_string(path)?, total)?,
        (None, Some(spec)) => {
            let v: Vec<usize> = spec
                .split('/')
                .map(|s| s.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| {
                    CliError::Config("synthetic must read neighborhoods/communities/regions".into())
                })?;
            if v.len() != 3 || v[2] == 0 || v[1] < v[2] || v[0] < v[1] || v[0] > 9 * v[1] {
                return Err(CliError::Config("synthetic sizes are inconsistent".into()));
            }
            let seed = cfg.usize_or("synthetic_seed", 2024)? as u64;
            let mut nc = synthetic_city(seed, v[2], v[1], v[0]);
            let n = nc.n_neighborhoods() as f64;
            for r in 0..nc.regions.len() {
                let count: usize = nc.regions[r]
                    .communities
                    .iter()
                    .map(|&c| nc.communities[c].members.len())
                    .sum();
                nc.regions[r].population =
                    [total[0] * count as f64 / n, total[1] * count as f64 / n];
            }
            nc
        }
        _ => {
            return Err(CliError::Config(
                "nested mode needs neighborhoods or synthetic".into(),
            ))
        }
    };
    nc.gamma = [
        cfg.f64_or("gamma_w", nc.gamma[0])?,
        cfg.f64_or("gamma_b", nc.gamma[1])?,
    ];
    nc.theta = cfg.f64_or("theta", nc.theta)?;
    nc.xi = cfg.f64_or("xi", nc.xi)?;
    nc.alpha = cfg.f64_or("alpha", nc.alpha)?;
    nc.validate()?;
    Ok(nc)
}

fn menus_csv(nc: &NestedCity, menus: &[Vec<MenuEntry>]) -> String {
    let mut s =
        String::from("community_id,entry,neighborhood_id,share,psi,welfare_w,welfare_b,residual\n");
    for (i, menu) in menus.iter().enumerate() {
        for (e, entry) in menu.iter().enumerate() {
            for (k, &j) in nc.communities[i].members.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    nc.communities[i].id,
                    e,
                    nc.neighborhoods[j].id,
                    fmt_f64(entry.shares[k]),
                    fmt_f64(entry.psi[k]),
                    fmt_f64(entry.welfare[0]),
                    fmt_f64(entry.welfare[1]),
                    fmt_f64(entry.residual)
                ));
            }
        }
    }
    s
}

pub fn cmd_nested(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let t0 = Instant::now();
    let nc = nested_city(cfg)?;
    let scfg = solve_config(cfg);
    let stages = cfg.get("stages").unwrap_or("menus,regions");
    let menus: Vec<Vec<MenuEntry>> = all_menus(&nc, &scfg)
        .into_iter()
        .collect::<Result<_, _>>()?;
    if menus.iter().any(|m| m.is_empty()) {
        return Err(CliError::Numerical(
            "a community has no proper equilibrium".into(),
        ));
    }
    write(&cfg.out, "menus.csv", &menus_csv(&nc, &menus))?;
    let sizes: Vec<usize> = menus.iter().map(Vec::len).collect();
    let budget = cfg.budget.unwrap_or(10_000) as usize;
    let mut region_counts = Vec::new();
    let mut first_regions: Vec<Option<RegionEquilibrium>> = vec![None; nc.regions.len()];
    if stages.contains("regions") || stages.contains("citywide") {
        let mut s = String::from("region_id,selection,eq,community_id,psi_c,L_w,L_b\n");
        for (r, reg) in nc.regions.iter().enumerate() {
            let rs: Vec<usize> = reg.communities.iter().map(|&i| sizes[i]).collect();
            let sels = if stages.contains("regions") {
                selections(&rs, budget, cfg.seed ^ r as u64)
            } else {
                vec![vec![0; rs.len()]]
            };
            let results = par::map(scfg.exec, &sels, |sel| {
                let w: Vec<[f64; 2]> = reg
                    .communities
                    .iter()
                    .zip(sel)
                    .map(|(&i, &e)| menus[i][e].welfare)
                    .collect();
                region_fixed_point(&nc, r, &w, &scfg)
            });
            let mut count = 0;
            for (sel, res) in sels.iter().zip(results) {
                let eqs = res?;
                if sel.iter().all(|&e| e == 0) {
                    first_regions[r] = eqs.first().cloned();
                }
                let tag = sel
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join("-");
                for (q, eq) in eqs.iter().enumerate() {
                    for (k, &i) in reg.communities.iter().enumerate() {
                        s.push_str(&format!(
                            "{},{},{},{},{},{},{}\n",
                            reg.id,
                            tag,
                            q,
                            nc.communities[i].id,
                            fmt_f64(eq.psi_c[k]),
                            fmt_f64(eq.population[0][k]),
                            fmt_f64(eq.population[1][k])
                        ));
                    }
                }
                count += eqs.len();
            }
            region_counts.push(count);
        }
        write(&cfg.out, "regions.csv", &s)?;
    }
    let mut citywide = None;
    if let (true, Some(z)) = (stages.contains("citywide"), cfg.get("zeta_to")) {
        let zeta_to: f64 =
            spateq::model::parse_f64(z).map_err(|_| CliError::Config("bad zeta_to".into()))?;
        let entries: Vec<&MenuEntry> = menus.iter().map(|m| &m[0]).collect();
        let regs: Vec<&RegionEquilibrium> = first_regions
            .iter()
            .map(|r| {
                r.as_ref()
                    .ok_or_else(|| CliError::Numerical("region without equilibrium".into()))
            })
            .collect::<Result<_, _>>()?;
        let s0 = CitywideState::assemble(&nc, &entries, &regs);
        let path = citywide_elasticity_homotopy(&nc, &s0, zeta_to, &scfg)?;
        write(&cfg.out, "citywide_trace.csv", &path.trace_csv())?;
        citywide = Some((format!("{:?}", path.status).to_lowercase(), path.residuals));
    }
    #[derive(Serialize)]
    struct Summary {
        neighborhoods: usize,
        communities: usize,
        regions: usize,
        menu_sizes: Vec<usize>,
        combinations: String,
        region_equilibria: Vec<usize>,
        citywide: Option<(String, [f64; 3])>,
        elapsed_seconds: f64,
    }
    write_json(
        &cfg.out,
        "summary.json",
        &Summary {
            neighborhoods: nc.n_neighborhoods(),
            communities: nc.n_communities(),
            regions: nc.regions.len(),
            menu_sizes: sizes.clone(),
            combinations: combination_count(&sizes).to_string(),
            region_equilibria: region_counts,
            citywide,
            elapsed_seconds: t0.elapsed().as_secs_f64(),
        },
    )?;
    write_manifest(&cfg.out, cfg, cfg.seed, None)?;
    Ok(Outcome {
        summary: format!(
            "{} community menus, {} selections in the product",
            menus.len(),
            combination_count(&sizes)
        ),
    })
}
