use nalgebra::DMatrix;
use proptest::prelude::*;
use spateq::homotopies::{
    run_total_degree, solve_elasticity_homotopy, solve_total_degree, AmenityH, Coords, ParamPath,
    SolveConfig,
};
use spateq::model::{psi_from_x, social_residual, weights, x_from_psi, City, Equilibrium, Status};
use spateq::nested::combination_count;
use spateq::polysys::{build_static_system, hexfloat, parse_hexfloat, Rational};
use spateq::tracker::{dist_inf, Homotopy, PathStatus};

fn city_from(a: Vec<f64>, xi: f64, gamma: f64) -> City {
    City::line(a.len(), gamma, xi).with_amenities(a)
}

fn permute(city: &City, p: &[usize]) -> City {
    let mut c = city.clone();
    c.a = p.iter().map(|&i| city.a[i]).collect();
    c.mc = p.iter().map(|&i| city.mc[i]).collect();
    c.c = p.iter().map(|&i| city.c[i]).collect();
    c.surface = p.iter().map(|&i| city.surface[i]).collect();
    c.dist = p
        .iter()
        .map(|&r| p.iter().map(|&k| city.dist[r][k]).collect())
        .collect();
    c
}

fn arb_perm(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn social_residual_is_permutation_equivariant(
        (a, psi, q, p) in (2usize..6).prop_flat_map(|n| (
            prop::collection::vec(0.2f64..3.0, n),
            prop::collection::vec(0.05f64..1.0, n),
            prop::collection::vec(0.5f64..2.0, n),
            arb_perm(n),
        )),
        xi in 0.5f64..4.0,
        gamma in 0.5f64..4.0,
    ) {
        let city = city_from(a, xi, gamma);
        let r = social_residual(&city, &psi, &q).unwrap();
        let pc = permute(&city, &p);
        let ppsi: Vec<f64> = p.iter().map(|&i| psi[i]).collect();
        let pq: Vec<f64> = p.iter().map(|&i| q[i]).collect();
        let pr = social_residual(&pc, &ppsi, &pq).unwrap();
        for (k, &i) in p.iter().enumerate() {
            prop_assert!((pr[k] - r[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn psi_round_trip(x in prop::collection::vec(0.01f64..1.0, 2..7), xi in 0.5f64..5.0) {
        let city = City::line(x.len(), 2.0, xi);
        let back = x_from_psi(&city, &psi_from_x(&city, &x)).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn uniform_point_of_symmetric_city_is_exact(n in 2usize..7, d in 0.1f64..3.0, gamma in 0.5f64..5.0) {
        let mut city = City::line(n, gamma, 1.0);
        city.dist = (0..n).map(|r| (0..n).map(|c| if r == c { 0.0 } else { d }).collect()).collect();
        let psi = psi_from_x(&city, &vec![1.0 / n as f64; n]);
        let r = social_residual(&city, &psi, &city.mc).unwrap();
        prop_assert!(r.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn hexfloat_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(parse_hexfloat(&hexfloat(v)).map(f64::to_bits), Some(v.to_bits()));
    }

    #[test]
    fn combination_count_is_multiplicative(
        a in prop::collection::vec(1usize..12, 0..8),
        b in prop::collection::vec(1usize..12, 0..8),
    ) {
        let mut ab = a.clone();
        ab.extend(&b);
        prop_assert_eq!(combination_count(&ab), combination_count(&a) * combination_count(&b));
        let mut rev = ab.clone();
        rev.reverse();
        prop_assert_eq!(combination_count(&rev), combination_count(&ab));
    }

    #[test]
    fn amenity_jacobians_match_differences(
        (x, a1) in (2usize..5).prop_flat_map(|n| (
            prop::collection::vec(0.1f64..1.0, n),
            prop::collection::vec(0.3f64..3.0, n),
        )),
        t in 0.05f64..0.95,
        gamma in 1.2f64..3.5,
    ) {
        let n = x.len();
        let city = city_from(a1, 1.0, gamma);
        let h = AmenityH::decoupled(&city, gamma);
        let jx = h.jac_x(&x, t);
        let jt = h.jac_t(&x, t);
        for k in 0..n {
            let e = 1e-6 * x[k].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += e;
            xm[k] -= e;
            let (fp, fm) = (h.eval(&xp, t), h.eval(&xm, t));
            for i in 0..n {
                prop_assert!((jx[(i, k)] - (fp[i] - fm[i]) / (2.0 * e)).abs() < 1e-5);
            }
        }
        let e = 1e-6;
        let (fp, fm) = (h.eval(&x, t + e), h.eval(&x, t - e));
        for i in 0..n {
            prop_assert!((jt[i] - (fp[i] - fm[i]) / (2.0 * e)).abs() < 1e-5);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn endpoints_are_conjugate_closed(seed in any::<u64>()) {
        let city = City::line(2, 2.5, 1.0);
        let target = build_static_system(&city, Rational { p: 5, q: 2 });
        let cfg = SolveConfig { seed, ..SolveConfig::default() };
        let (res, _, stats) = run_total_degree(&target, &cfg).unwrap();
        prop_assert_eq!(res.len(), 49);
        prop_assert_eq!(stats.total, 49);
        // z = 0 is a multiple root of the cleared system; only isolated roots pair up
        let pts: Vec<_> = res
            .iter()
            .filter(|r| r.status == PathStatus::Converged && r.endpoint.iter().any(|z| z.norm() > 1e-2))
            .map(|r| r.endpoint.clone())
            .collect();
        prop_assert!(!pts.is_empty());
        for p in &pts {
            let c: Vec<_> = p.iter().map(|z| z.conj()).collect();
            let hit = pts.iter().any(|q| q.iter().zip(&c).all(|(a, b)| (a - b).norm() < 1e-6 * a.norm().max(1.0)));
            prop_assert!(hit);
        }
    }

    #[test]
    fn homogeneous_line_is_reversal_closed(j in 2usize..4, gamma in prop::sample::select(vec![1.5, 2.0, 2.5, 3.0]), xi in 0.5f64..4.0) {
        let city = City::line(j, gamma, xi);
        let rat = spateq::homotopies::default_rational(gamma).unwrap();
        let sol = solve_total_degree(&city, rat, &SolveConfig::default()).unwrap();
        let eqs = sol.proper();
        for e in &eqs {
            let r: Vec<f64> = e.x.iter().rev().copied().collect();
            prop_assert!(eqs.iter().any(|f| dist_inf(&f.x, &r) < 1e-6));
            prop_assert!((e.x.iter().sum::<f64>() - 1.0).abs() < j as f64 * 1e-6);
        }
    }
}

#[test]
fn weights_are_exponential_decay() {
    let city = City::line(3, 2.0, 1.5);
    let d: DMatrix<f64> = weights(&city);
    assert!((d[(0, 2)] - (-3.0f64).exp()).abs() < 1e-15);
}

#[test]
fn prices_stay_at_cost_for_small_zeta() {
    let city = City::line(3, 2.5, 1.0).with_populations(2.4, 0.6);
    let sol = solve_total_degree(&city, Rational { p: 5, q: 2 }, &SolveConfig::default()).unwrap();
    for e in sol.proper() {
        let run =
            solve_elasticity_homotopy(&city.clone().with_eta(1e6), e, &SolveConfig::default())
                .unwrap();
        assert!(dist_inf(&run.equilibrium.qprice, &city.mc) < 1e-4);
    }
}

#[test]
fn nonpositive_start_is_rejected() {
    let city = City::line(2, 2.5, 1.0).with_eta(1.0);
    let e = Equilibrium {
        psi: vec![-1.0, 1.0],
        x: vec![0.5, 0.5],
        qprice: vec![1.0; 2],
        status: Status::Proper,
        residual: 0.0,
        imag: 0.0,
    };
    assert!(solve_elasticity_homotopy(&city, &e, &SolveConfig::default()).is_err());
}

#[test]
fn amenity_path_coords_map_to_psi() {
    let d = weights(&City::line(2, 2.0, 1.0));
    let h = AmenityH {
        path: ParamPath {
            a0: vec![1.0; 2],
            a1: vec![1.0; 2],
            mc0: vec![1.0; 2],
            mc1: vec![1.0; 2],
            d0: d.clone(),
            d1: d,
            alpha: 0.3,
        },
        coords: Coords::Z { p: 5, q: 2 },
    };
    assert_eq!(h.to_psi(&[2.0, 3.0]), vec![4.0, 9.0]);
}
