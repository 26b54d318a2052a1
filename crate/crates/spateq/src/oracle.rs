//! Brute-force equilibrium search on a simplex grid.
//!
//! Works on the share fixed point x = P(Δx) in log coordinates with
//! finite-difference Newton, so it shares no algebra with the polynomial path.

use crate::linalg::solve;
use crate::model::{classify_real, weights, City, Equilibrium, Tolerances};
use crate::par::{self, Exec};
use crate::tracker::{dedup_groups, lex_cmp};
use nalgebra::DMatrix;

#[derive(Clone, Debug)]
pub struct GridSpec {
    /// Grid points per simplex edge.
    pub resolution: usize,
    /// Replacement for zero coordinates.
    pub corner: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            resolution: 16,
            corner: 1e-8,
            max_iters: 200,
            tol: 1e-13,
        }
    }
}

/// All compositions of `r` into `j` nonnegative parts, scaled to the simplex.
pub fn simplex_grid(j: usize, r: usize, corner: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; j];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur[i] = k;
            rec(i + 1, left - k, cur, out);
        }
    }
    let mut raw = Vec::new();
    if j > 0 {
        rec(0, r, &mut cur, &mut raw);
    }
    for c in raw {
        let mut x: Vec<f64> = c
            .iter()
            .map(|&k| (k as f64 / r as f64).max(corner))
            .collect();
        let s: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= s);
        out.push(x);
    }
    out
}

struct Problem<'a> {
    city: &'a City,
    delta: DMatrix<f64>,
    elastic: bool,
}

impl Problem<'_> {
    fn unpack(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let j = self.city.j;
        let x: Vec<f64> = y[..j].iter().map(|u| u.exp()).collect();
        let q = if self.elastic {
            self.city.mc.clone()
        } else {
            y[j..].iter().map(|v| v.exp()).collect()
        };
        (x, q)
    }

    /// log x − log P(Δx, q), and log supply − log demand when prices adjust.
    fn residual(&self, y: &[f64]) -> Option<Vec<f64>> {
        let c = self.city;
        let j = c.j;
        let (x, q) = self.unpack(y);
        let psi: Vec<f64> = (0..j)
            .map(|r| (0..j).map(|k| self.delta[(r, k)] * x[k]).sum())
            .collect();
        if psi.iter().any(|&p| !(p > 0.0)) {
            return None;
        }
        let logit = |g: f64| -> Vec<f64> {
            let v: Vec<f64> = (0..j)
                .map(|k| c.a[k].ln() - c.alpha * q[k].ln() + g * psi[k].ln())
                .collect();
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
            v.iter().map(|a| a - lse).collect()
        };
        let lp1 = logit(c.gamma[0]);
        let mut out: Vec<f64> = (0..j).map(|k| y[k] - lp1[k]).collect();
        if !self.elastic {
            let lp2 = logit(c.gamma[1]);
            for k in 0..j {
                let demand = c.l[0] * lp1[k].exp() + c.l[1] * lp2[k].exp();
                let supply = c.c[k] * (q[k] / c.mc[k]).powf(c.eta) * q[k].powf(c.alpha);
                out.push(supply.ln() - demand.ln());
            }
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    fn newton(&self, y0: Vec<f64>, spec: &GridSpec) -> Option<Vec<f64>> {
        let n = y0.len();
        let mut y = y0;
        let mut r = self.residual(&y)?;
        let norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        for _ in 0..spec.max_iters {
            if norm(&r) <= spec.tol {
                return Some(y);
            }
            let mut jac = DMatrix::zeros(n, n);
            for k in 0..n {
                let h = 1e-7 * (1.0 + y[k].abs());
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[k] += h;
                ym[k] -= h;
                let (rp, rm) = (self.residual(&yp)?, self.residual(&ym)?);
                for i in 0..n {
                    jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let step = solve(&jac, &r.iter().map(|v| -v).collect::<Vec<_>>())?;
            let mut lambda = 1.0;
            loop {
                let cand: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + lambda * b).collect();
                if let Some(rc) = self.residual(&cand) {
                    if norm(&rc) < norm(&r) || lambda < 1e-3 {
                        y = cand;
                        r = rc;
                        break;
                    }
                }
                lambda /= 2.0;
                if lambda < 1e-4 {
                    return None;
                }
            }
        }
        (norm(&r) <= 1e3 * spec.tol).then_some(y)
    }
}

/// Distinct proper equilibria reached from every grid start.
pub fn brute_force_equilibria(city: &City, spec: &GridSpec, exec: Exec) -> Vec<Equilibrium> {
    let prob = Problem {
        city,
        delta: weights(city),
        elastic: city.is_elastic(),
    };
    let starts = simplex_grid(city.j, spec.resolution.max(1), spec.corner);
    let found: Vec<Option<Vec<f64>>> = par::map(exec, &starts, |x| {
        let mut y: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        if !prob.elastic {
            y.extend(city.mc.iter().map(|m| m.ln()));
        }
        prob.newton(y, spec)
    });
    let pts: Vec<Vec<f64>> = found.into_iter().flatten().collect();
    let tol = Tolerances::default();
    let mut out: Vec<Equilibrium> = dedup_groups(&pts, tol.dedup)
        .into_iter()
        .map(|g| {
            let (x, q) = prob.unpack(&pts[g[0]]);
            let psi: Vec<f64> = (0..city.j)
                .map(|r| (0..city.j).map(|k| prob.delta[(r, k)] * x[k]).sum())
                .collect();
            classify_real(city, &psi, &q, &tol)
        })
        .filter(|e| e.is_proper())
        .collect();
    out.sort_by(|a, b| lex_cmp(&a.x, &b.x));
    out
}
