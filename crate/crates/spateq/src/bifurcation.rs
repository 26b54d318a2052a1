//! Singular points on real paths and the branches leaving them.

use crate::error::{Error, Result};
use crate::homotopies::{run_total_degree, SolveConfig};
use crate::linalg::{adjugate, max_abs, solve, sv_extremes};
use crate::polysys::{PolyMeta, PolySystem, Term};
use crate::tracker::{
    ad_hessians, dedup_groups, newton_polish, track, Homotopy, PathResult, PathStatus, Residual,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct BifurcationConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// σ_min above which the located point is not singular.
    pub alarm: f64,
    pub solve: SolveConfig,
}

impl Default for BifurcationConfig {
    fn default() -> Self {
        BifurcationConfig {
            max_iters: 60,
            tol: 1e-11,
            alarm: 0.5,
            solve: SolveConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularPoint {
    pub x: Vec<f64>,
    pub t: f64,
    /// Unit right singular vector of the smallest singular value.
    pub kernel: Vec<f64>,
    pub min_sv: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub dz: Vec<f64>,
    /// Point on the branch at t* + dt after Newton correction.
    pub x: Vec<f64>,
    pub t: f64,
    /// |⟨dz, kernel⟩| / ‖dz‖.
    pub alignment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSet {
    pub point: SingularPoint,
    pub dt: f64,
    pub branches: Vec<Branch>,
    pub rejected: usize,
}

impl BranchSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("branch set serializes")
    }
}

fn kernel_of(j: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let n = j.ncols();
    let svd = j.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let (imin, smin) =
        svd.singular_values
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |(bi, bs), (i, &s)| if s < bs { (i, s) } else { (bi, bs) },
            );
    ((0..n).map(|k| vt[(imin, k)]).collect(), smin)
}

/// Newton on {H(x,t) = 0, det H_x(x,t) = 0} in (x, t).
pub fn locate_singular<H>(
    h: &H,
    x0: &[f64],
    t0: f64,
    cfg: &BifurcationConfig,
) -> Result<SingularPoint>
where
    H: Homotopy<f64> + Residual<f64>,
{
    let n = x0.len();
    let mut y: Vec<f64> = x0.iter().copied().chain([t0]).collect();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let (x, t) = (&y[..n], y[n]);
        let hv = Homotopy::eval(h, x, t);
        let jx = h.jac_x(x, t);
        let det = jx.determinant();
        let adj = adjugate(&jx);
        let hess = ad_hessians(h, x, t);
        let jt = h.jac_t(x, t);
        let mut big = DMatrix::from_fn(n + 1, n + 1, |i, k| match (i < n, k < n) {
            (true, true) => jx[(i, k)],
            (true, false) => jt[i],
            _ => 0.0,
        });
        // d det / dy_k = tr(adj(J) ∂J/∂y_k), ∂J_ij/∂y_k = ∂²H_i/∂x_j∂y_k
        for k in 0..=n {
            let dj = DMatrix::from_fn(n, n, |i, jj| hess[i][(jj, k)]);
            big[(n, k)] = (&adj * dj).trace();
        }
        let rhs: Vec<f64> = hv.iter().map(|v| -v).chain([-det]).collect();
        let Some(step) = solve(&big, &rhs) else { break };
        let mut lambda = 1.0;
        let norm0 = max_abs(&hv).max(det.abs());
        let mut accepted = false;
        while lambda > 1.0 / 64.0 {
            let cand: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + lambda * b).collect();
            if h.in_domain(&cand[..n]) {
                let hc = Homotopy::eval(h, &cand[..n], cand[n]);
                let dc = h.jac_x(&cand[..n], cand[n]).determinant();
                if max_abs(&hc).max(dc.abs()) < norm0 || lambda <= 1.0 / 32.0 {
                    y = cand;
                    accepted = true;
                    break;
                }
            }
            lambda /= 2.0;
        }
        if !accepted {
            break;
        }
        let scale = 1.0 + max_abs(&y);
        if max_abs(&step) * lambda <= cfg.tol * scale {
            converged = true;
            break;
        }
    }
    let (x, t) = (y[..n].to_vec(), y[n]);
    let residual = max_abs(&Homotopy::eval(h, &x, t));
    if !converged || !residual.is_finite() || residual > 1e-8 {
        return Err(Error::NoConvergence(cfg.max_iters));
    }
    let (kernel, min_sv) = kernel_of(&h.jac_x(&x, t));
    if min_sv > cfg.alarm {
        return Err(Error::NotSingular(min_sv));
    }
    Ok(SingularPoint {
        x,
        t,
        kernel,
        min_sv,
        residual,
    })
}

/// Second-order Taylor expansion of H around the singular point at fixed dt, in dz.
pub fn second_order_system<H>(h: &H, sp: &SingularPoint, dt: f64) -> PolySystem
where
    H: Homotopy<f64> + Residual<f64>,
{
    let n = sp.x.len();
    let hv = Homotopy::eval(h, &sp.x, sp.t);
    let jx = h.jac_x(&sp.x, sp.t);
    let jt = h.jac_t(&sp.x, sp.t);
    let hess = ad_hessians(h, &sp.x, sp.t);
    let unit = |k: Option<usize>, e: u32| {
        let mut v = vec![0u32; n];
        if let Some(k) = k {
            v[k] += e;
        }
        v
    };
    let c = |v: f64| Complex64::new(v, 0.0);
    let equations = (0..n)
        .map(|i| {
            let hs = &hess[i];
            let mut eq = vec![Term {
                coeff: c(hv[i] + jt[i] * dt + 0.5 * hs[(n, n)] * dt * dt),
                exps: unit(None, 0),
            }];
            for k in 0..n {
                eq.push(Term {
                    coeff: c(jx[(i, k)] + hs[(k, n)] * dt),
                    exps: unit(Some(k), 1),
                });
                eq.push(Term {
                    coeff: c(0.5 * hs[(k, k)]),
                    exps: unit(Some(k), 2),
                });
                for l in k + 1..n {
                    let mut e = unit(Some(k), 1);
                    e[l] += 1;
                    eq.push(Term {
                        coeff: c(hs[(k, l)]),
                        exps: e,
                    });
                }
            }
            eq
        })
        .collect();
    let mut meta = PolyMeta {
        source: "taylor2".into(),
        ..PolyMeta::default()
    };
    meta.bindings.insert("t".into(), format!("{:e}", sp.t));
    meta.bindings.insert("dt".into(), format!("{dt:e}"));
    PolySystem::from_equations(n, equations, meta)
}

/// Real branches through the singular point at parameter t* + dt.
pub fn enumerate_branches<H>(
    h: &H,
    sp: &SingularPoint,
    dt: f64,
    cfg: &BifurcationConfig,
) -> Result<BranchSet>
where
    H: Homotopy<f64> + Residual<f64>,
{
    let sys = second_order_system(h, sp, dt);
    let (results, _, _) = run_total_degree(&sys, &cfg.solve)?;
    let tol_k = (10.0 * dt.abs().sqrt()).min(0.5);
    let mut rejected = 0;
    let mut cands: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in results.iter().filter(|r| r.status == PathStatus::Converged) {
        let scale = 1.0 + r.endpoint.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        if r.endpoint.iter().any(|z| z.im.abs() > 1e-8 * scale) {
            continue;
        }
        let dz: Vec<f64> = r.endpoint.iter().map(|z| z.re).collect();
        let norm = dz.iter().map(|v| v * v).sum::<f64>().sqrt();
        let along: f64 = dz.iter().zip(&sp.kernel).map(|(a, b)| a * b).sum();
        let perp = dz
            .iter()
            .zip(&sp.kernel)
            .map(|(a, b)| (a - along * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || perp > tol_k * norm {
            rejected += 1;
            continue;
        }
        cands.push((dz, along.abs() / norm.max(f64::MIN_POSITIVE)));
    }
    let t = sp.t + dt;
    let mut branches = Vec::new();
    for (dz, alignment) in cands {
        let guess: Vec<f64> = sp.x.iter().zip(&dz).map(|(a, b)| a + b).collect();
        match newton_polish(h, &guess, t, &cfg.solve.tracker) {
            Some(x) if h.in_domain(&x) => branches.push(Branch {
                dz,
                x,
                t,
                alignment,
            }),
            _ => rejected += 1,
        }
    }
    let pts: Vec<Vec<f64>> = branches.iter().map(|b| b.x.clone()).collect();
    let keep: Vec<usize> = dedup_groups(&pts, cfg.solve.tol.dedup)
        .into_iter()
        .map(|g| g[0])
        .collect();
    rejected += branches.len() - keep.len();
    let branches: Vec<Branch> = keep.into_iter().map(|i| branches[i].clone()).collect();
    if branches.is_empty() {
        return Err(Error::NoBranches);
    }
    Ok(BranchSet {
        point: sp.clone(),
        dt,
        branches,
        rejected,
    })
}

/// Follows a branch away from the singular point.
pub fn continue_branch<H>(
    h: &H,
    b: &Branch,
    t_to: f64,
    cfg: &SolveConfig,
) -> Result<PathResult<f64>>
where
    H: Homotopy<f64>,
{
    track(h, &b.x, b.t, t_to, &cfg.tracker)
}

/// Smallest singular value of H_x along a sampled segment, for diagnostics.
pub fn min_sv_at<H: Homotopy<f64>>(h: &H, x: &[f64], t: f64) -> f64 {
    sv_extremes(&h.jac_x(x, t)).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Scalar;

    /// x² − t: fold at (0, 0).
    struct Fold;
    impl Residual<f64> for Fold {
        fn dim(&self) -> usize {
            1
        }
        fn residual<S: Scalar<Base = f64>>(&self, x: &[S], t: S) -> Vec<S> {
            vec![x[0] * x[0] - t]
        }
    }
    impl Homotopy<f64> for Fold {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
            vec![x[0] * x[0] - t]
        }
        fn jac_x(&self, x: &[f64], _t: f64) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0 * x[0])
        }
        fn jac_t(&self, _x: &[f64], _t: f64) -> Vec<f64> {
            vec![-1.0]
        }
    }

    #[test]
    fn fold_is_found() {
        let sp = locate_singular(&Fold, &[0.1], 0.02, &BifurcationConfig::default()).unwrap();
        assert!(sp.x[0].abs() < 1e-8 && sp.t.abs() < 1e-12);
        let bs = enumerate_branches(&Fold, &sp, 1e-4, &BifurcationConfig::default()).unwrap();
        assert_eq!(bs.branches.len(), 2);
        for b in &bs.branches {
            assert!((b.x[0].abs() - 1e-2).abs() < 1e-12);
        }
        assert!(matches!(
            enumerate_branches(&Fold, &sp, -1e-4, &BifurcationConfig::default()),
            Err(Error::NoBranches)
        ));
    }

    struct Line;
    impl Residual<f64> for Line {
        fn dim(&self) -> usize {
            1
        }
        fn residual<S: Scalar<Base = f64>>(&self, x: &[S], t: S) -> Vec<S> {
            vec![x[0] - t]
        }
    }
    impl Homotopy<f64> for Line {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
            vec![x[0] - t]
        }
        fn jac_x(&self, _x: &[f64], _t: f64) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 1.0)
        }
        fn jac_t(&self, _x: &[f64], _t: f64) -> Vec<f64> {
            vec![-1.0]
        }
    }

    #[test]
    fn regular_path_has_no_singular_point() {
        assert!(locate_singular(&Line, &[0.3], 0.3, &BifurcationConfig::default()).is_err());
    }
}
