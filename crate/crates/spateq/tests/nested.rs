use spateq::homotopies::{solve_elasticity_homotopy, SolveConfig};
use spateq::model::{City, Equilibrium, Status};
use spateq::nested::*;
use spateq::tracker::PathStatus;
use std::time::Instant;

fn row(n: &str, c: &str, r: &str, x: f64, y: f64, a: f64) -> NeighborhoodRow {
    NeighborhoodRow {
        neighborhood_id: n.into(),
        community_id: c.into(),
        region_id: r.into(),
        centroid_x: x,
        centroid_y: y,
        log_amenity: a,
        mc: 1.0,
        c: 1.0,
    }
}

fn four() -> NestedCity {
    let mut nc = NestedCity::from_rows(
        &[
            row("a", "c1", "r", 0.0, 0.0, 0.1),
            row("b", "c1", "r", 0.7, 0.1, -0.2),
            row("c", "c2", "r", 3.0, 0.0, 0.05),
            row("d", "c2", "r", 3.6, 0.5, 0.3),
        ],
        [1.0, 0.6],
    )
    .unwrap();
    nc.gamma = [2.5, 0.5];
    nc
}

fn start(nc: &NestedCity, cfg: &SolveConfig) -> CitywideState {
    let menus: Vec<Vec<MenuEntry>> = (0..nc.n_communities())
        .map(|i| community_equilibria(nc, i, cfg).unwrap())
        .collect();
    let sel: Vec<&MenuEntry> = menus.iter().map(|m| &m[0]).collect();
    let regs: Vec<RegionEquilibrium> = (0..nc.regions.len())
        .map(|r| {
            let w: Vec<[f64; 2]> = nc.regions[r]
                .communities
                .iter()
                .map(|&i| sel[i].welfare)
                .collect();
            region_fixed_point(nc, r, &w, cfg).unwrap().remove(0)
        })
        .collect();
    let rr: Vec<&RegionEquilibrium> = regs.iter().collect();
    CitywideState::assemble(nc, &sel, &rr)
}

#[test]
fn citywide_path() {
    let nc = four();
    let cfg = SolveConfig::default();
    let s0 = start(&nc, &cfg);
    let t = Instant::now();
    let p = citywide_elasticity_homotopy(&nc, &s0, 1.0, &cfg).unwrap();
    println!(
        "{:?} {:?} steps={} {:?}",
        p.status,
        p.residuals,
        p.steps.len(),
        t.elapsed()
    );
    println!("{}", p.trace_csv().lines().last().unwrap());
    assert_eq!(p.status, PathStatus::Converged);
    assert!(p.residuals.iter().all(|&r| r < 1e-8));
    assert!(p.steps.iter().all(|s| s.residual < 1e-8 && s.min_eig > 0.0));
    let lw: f64 = p.end.lw.iter().sum();
    let lb: f64 = p.end.lb.iter().sum();
    assert!((lw - 1.0).abs() < 1e-10 && (lb - 0.6).abs() < 1e-10);
    println!("q0 {:?} q1 {:?}", s0.q_n, p.end.q_n);
    println!("L0 {:?} L1 {:?}", s0.lw, p.end.lw);
}

#[test]
fn degenerate_matches_single_city() {
    let mut nc = NestedCity::from_rows(&[row("a", "c", "r", 0.0, 0.0, 0.3)], [1.3, 0.4]).unwrap();
    nc.gamma = [2.5, 0.0];
    let cfg = SolveConfig::default();
    let s0 = start(&nc, &cfg);
    let p = citywide_elasticity_homotopy(&nc, &s0, 1.0, &cfg).unwrap();
    let mut city = City::line(1, 2.5, 2.0)
        .with_amenities(vec![0.3f64.exp()])
        .with_populations(1.3, 0.4)
        .with_eta(1.0);
    city.alpha = 0.3;
    let e0 = Equilibrium {
        psi: vec![1.0],
        x: vec![1.0],
        qprice: vec![1.0],
        status: Status::Proper,
        residual: 0.0,
        imag: 0.0,
    };
    let run = solve_elasticity_homotopy(&city, &e0, &cfg).unwrap();
    println!("{:?} {:?}", p.end.q_n, run.equilibrium.qprice);
    assert!((p.end.q_n[0] - run.equilibrium.qprice[0]).abs() < 1e-10);
}

#[test]
fn welfare_is_homogeneous() {
    let nc = synthetic_city(7, 1, 1, 5);
    let cfg = SolveConfig::default();
    let menu = community_equilibria(&nc, 0, &cfg).unwrap();
    assert!(!menu.is_empty());
    let q: Vec<f64> = nc.neighborhoods.iter().map(|n| n.mc).collect();
    for e in &menu {
        let u1 = welfare(&nc, 0, &near_levels(&nc, 0, &e.shares), &q, nc.gamma[0]);
        for lam in [0.5, 2.0, 10.0] {
            let lv: Vec<f64> = e.shares.iter().map(|s| lam * s).collect();
            let ul = welfare(&nc, 0, &near_levels(&nc, 0, &lv), &q, nc.gamma[0]);
            assert!((ul / (lam.powf(nc.gamma[0]) * u1) - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn far_interactions_factor_out() {
    let nc = synthetic_city(11, 1, 3, 11);
    let cfg = SolveConfig::default();
    let s = start(&nc, &cfg);
    let cs = &nc.regions[0].communities;
    let psi_n: Vec<Vec<f64>> = cs
        .iter()
        .map(|&i| {
            nc.communities[i]
                .members
                .iter()
                .map(|&j| s.psi_n[j])
                .collect()
        })
        .collect();
    let q: Vec<Vec<f64>> = cs
        .iter()
        .map(|&i| {
            nc.communities[i]
                .members
                .iter()
                .map(|&j| s.q_n[j])
                .collect()
        })
        .collect();
    let psi_c: Vec<f64> = cs.iter().map(|&i| s.psi_c[i]).collect();
    for g in nc.gamma {
        let d = choice_probabilities_direct(&nc, 0, &psi_c, &psi_n, &q, g);
        let f = choice_probabilities_factorized(&nc, 0, &psi_c, &psi_n, &q, g);
        for (a, b) in d.iter().flatten().zip(f.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn synthetic_menus() {
    let nc = synthetic_city(2024, 9, 77, 353);
    assert_eq!(
        (nc.n_neighborhoods(), nc.n_communities(), nc.regions.len()),
        (353, 77, 9)
    );
    let t = Instant::now();
    let menus = all_menus(&nc, &SolveConfig::default());
    let sizes: Vec<usize> = menus.iter().map(|m| m.as_ref().unwrap().len()).collect();
    println!("{:?} {:?}", t.elapsed(), sizes);
    assert!(menus
        .iter()
        .all(|m| m.as_ref().unwrap().iter().all(|e| e.residual < 1e-10)));
    assert!(sizes.iter().all(|&s| s >= 1));
}
