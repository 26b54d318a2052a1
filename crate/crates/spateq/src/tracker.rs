//! Predictor-corrector path following.

use crate::ad::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::linalg::{log_det, max_abs, solve, sv_extremes, Field};
use crate::par::{self, Exec};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Homotopy H(x, t) with Jacobians.
pub trait Homotopy<T: Field>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[T], t: f64) -> Vec<T>;
    fn jac_x(&self, x: &[T], t: f64) -> DMatrix<T>;
    fn jac_t(&self, x: &[T], t: f64) -> Vec<T>;

    /// dx/dt = −J_x⁻¹ J_t.
    fn tangent(&self, x: &[T], t: f64) -> Option<Vec<T>> {
        let jt: Vec<T> = self.jac_t(x, t).into_iter().map(|v| -v).collect();
        solve(&self.jac_x(x, t), &jt)
    }

    /// Points where the residual is defined.
    fn in_domain(&self, _x: &[T]) -> bool {
        true
    }
}

/// Residual written once over any scalar, differentiated by dual numbers.
pub trait Residual<T: Field>: Sync {
    fn dim(&self) -> usize;
    fn residual<S: Scalar<Base = T>>(&self, x: &[S], t: S) -> Vec<S>;
}

pub fn ad_jac_x<T: Field, R: Residual<T>>(r: &R, x: &[T], t: f64) -> DMatrix<T> {
    let n = x.len();
    let td = Dual::constant(<T as Scalar>::from_f64(t));
    let mut xd: Vec<Dual<T>> = x.iter().map(|&v| Dual::constant(v)).collect();
    let mut m = DMatrix::zeros(r.dim(), n);
    for k in 0..n {
        xd[k].d = <T as Scalar>::one();
        for (i, o) in r.residual(&xd, td).into_iter().enumerate() {
            m[(i, k)] = o.d;
        }
        xd[k].d = <T as Scalar>::zero();
    }
    m
}

pub fn ad_jac_t<T: Field, R: Residual<T>>(r: &R, x: &[T], t: f64) -> Vec<T> {
    let xd: Vec<Dual<T>> = x.iter().map(|&v| Dual::constant(v)).collect();
    r.residual(&xd, Dual::variable(<T as Scalar>::from_f64(t)))
        .into_iter()
        .map(|o| o.d)
        .collect()
}

/// Second partials of every equation in the joint variable (x, t).
///
/// Entry `[i][(k, l)]` is ∂²H_i/∂y_k∂y_l with y = (x_1..x_n, t).
pub fn ad_hessians<T: Field, R: Residual<T>>(r: &R, x: &[T], t: f64) -> Vec<DMatrix<T>> {
    let n = x.len();
    let m = r.dim();
    let mut y: Vec<T> = x.to_vec();
    y.push(<T as Scalar>::from_f64(t));
    let mut out = vec![DMatrix::zeros(n + 1, n + 1); m];
    for k in 0..=n {
        for l in k..=n {
            let yd: Vec<Dual<Dual<T>>> = y
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let inner = Dual::new(
                        v,
                        if i == l {
                            <T as Scalar>::one()
                        } else {
                            <T as Scalar>::zero()
                        },
                    );
                    let outer_d = if i == k {
                        Dual::constant(<T as Scalar>::one())
                    } else {
                        Dual::constant(<T as Scalar>::zero())
                    };
                    Dual::new(inner, outer_d)
                })
                .collect();
            let res = r.residual(&yd[..n], yd[n]);
            for (i, o) in res.into_iter().enumerate() {
                out[i][(k, l)] = o.d.d;
                out[i][(l, k)] = o.d.d;
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrackerConfig {
    pub step_init: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Largest first Newton correction accepted during tracking, relative to 1 + ‖x‖∞.
    pub max_correction: f64,
    /// Largest change of x in one accepted step, relative to 1 + ‖x‖∞.
    pub max_step_move: f64,
    pub diverge_cap: f64,
    pub singular_eig_tol: f64,
    /// Relative σ_min below which a step failure counts as a singular point.
    pub singular_alarm: f64,
    pub endgame_radius: f64,
    /// Distance to t_to where the geometric endgame hands over to Newton.
    pub endgame_floor: f64,
    pub max_steps: usize,
    pub trace: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            step_init: 1e-3,
            step_min: 1e-8,
            step_max: 1e-1,
            newton_tol: 1e-10,
            newton_max_iters: 10,
            max_correction: 0.1,
            max_step_move: 0.1,
            diverge_cap: 1e10,
            singular_eig_tol: 1e-8,
            singular_alarm: 1e-3,
            endgame_radius: 1e-2,
            endgame_floor: 1e-8,
            max_steps: 1_000_000,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathStatus {
    Converged,
    Diverged,
    Singular,
    StepFailure,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub step: f64,
    pub x: Vec<Complex64>,
    pub min_sv: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathResult<T> {
    pub endpoint: Vec<T>,
    pub status: PathStatus,
    pub t_final: f64,
    /// Smallest singular value of J_x seen at accepted points.
    pub min_abs_eig_seen: f64,
    pub steps_taken: usize,
    pub trace: Option<Vec<TracePoint>>,
}

fn residual_norm<T: Field, H: Homotopy<T> + ?Sized>(h: &H, x: &[T], t: f64) -> f64 {
    max_abs(&h.eval(x, t))
}

fn axpy<T: Field>(x: &[T], a: f64, v: &[T]) -> Vec<T> {
    x.iter()
        .zip(v)
        .map(|(&xi, &vi)| xi + vi * <T as Scalar>::from_f64(a))
        .collect()
}

fn finite<T: Field>(x: &[T]) -> bool {
    x.iter().all(|v| v.modulus().is_finite())
}

enum Newton<T> {
    Ok(Vec<T>),
    Fail,
}

/// Newton with step damping and a contraction test against path jumping.
fn correct<T: Field, H: Homotopy<T> + ?Sized>(
    h: &H,
    x0: &[T],
    t: f64,
    cfg: &TrackerConfig,
    max_iters: usize,
    guard: bool,
) -> Newton<T> {
    let mut x = x0.to_vec();
    let mut prev = f64::INFINITY;
    for it in 0..max_iters {
        if !h.in_domain(&x) {
            return Newton::Fail;
        }
        let f = h.eval(&x, t);
        let fnorm = max_abs(&f);
        if !fnorm.is_finite() {
            return Newton::Fail;
        }
        let Some(dx) = solve(&h.jac_x(&x, t), &f) else {
            return Newton::Fail;
        };
        let dn = max_abs(&dx);
        let scale = 1.0 + max_abs(&x);
        if guard
            && (dn > cfg.max_correction * scale
                || (it > 0 && dn > 0.5 * prev && dn > cfg.newton_tol * scale))
        {
            return Newton::Fail;
        }
        let mut lambda = 1.0;
        let mut next = axpy(&x, -lambda, &dx);
        while lambda > 1.0 / 64.0
            && (!h.in_domain(&next)
                || !(residual_norm(h, &next, t) <= fnorm.max(f64::MIN_POSITIVE)))
        {
            lambda *= 0.5;
            next = axpy(&x, -lambda, &dx);
        }
        if !h.in_domain(&next) || !finite(&next) {
            return Newton::Fail;
        }
        x = next;
        if dn <= cfg.newton_tol * scale || fnorm <= cfg.newton_tol * 1e-3 {
            return Newton::Ok(x);
        }
        prev = dn;
    }
    Newton::Fail
}

/// Polishes `x` onto H(·, t) = 0.
pub fn newton_polish<T: Field, H: Homotopy<T> + ?Sized>(
    h: &H,
    x: &[T],
    t: f64,
    cfg: &TrackerConfig,
) -> Option<Vec<T>> {
    match correct(h, x, t, cfg, 3 * cfg.newton_max_iters, false) {
        Newton::Ok(x) => Some(x),
        Newton::Fail => None,
    }
}

fn rk4<T: Field, H: Homotopy<T> + ?Sized>(h: &H, x: &[T], t: f64, dt: f64) -> Option<Vec<T>> {
    let k1 = h.tangent(x, t)?;
    let x2 = axpy(x, dt / 2.0, &k1);
    if !h.in_domain(&x2) {
        return None;
    }
    let k2 = h.tangent(&x2, t + dt / 2.0)?;
    let x3 = axpy(x, dt / 2.0, &k2);
    if !h.in_domain(&x3) {
        return None;
    }
    let k3 = h.tangent(&x3, t + dt / 2.0)?;
    let x4 = axpy(x, dt, &k3);
    if !h.in_domain(&x4) {
        return None;
    }
    let k4 = h.tangent(&x4, t + dt)?;
    let two = <T as Scalar>::from_f64(2.0);
    let sixth = <T as Scalar>::from_f64(dt / 6.0);
    let out: Vec<T> = (0..x.len())
        .map(|i| x[i] + (k1[i] + k2[i] * two + k3[i] * two + k4[i]) * sixth)
        .collect();
    (finite(&out) && h.in_domain(&out)).then_some(out)
}

/// Follows the solution path of `h` from (x0, t_from) to t_to.
pub fn track<T: Field, H: Homotopy<T> + ?Sized>(
    h: &H,
    x0: &[T],
    t_from: f64,
    t_to: f64,
    cfg: &TrackerConfig,
) -> Result<PathResult<T>> {
    let r0 = residual_norm(h, x0, t_from);
    if !(r0 <= 1e-8 * (1.0 + max_abs(x0))) {
        return Err(Error::BadStart(r0));
    }
    let dir = if t_to >= t_from { 1.0 } else { -1.0 };
    let mut x = x0.to_vec();
    let mut t = t_from;
    let mut step = cfg.step_init;
    let mut successes = 0usize;
    let mut steps = 0usize;
    let mut trace = cfg.trace.then(Vec::new);
    let (s0, smax0) = sv_extremes(&h.jac_x(&x, t));
    let mut min_sv = s0;
    let mut last_rel = s0 / smax0.max(f64::MIN_POSITIVE);
    let record = |trace: &mut Option<Vec<TracePoint>>, t: f64, step: f64, x: &[T], sv: f64| {
        if let Some(tr) = trace.as_mut() {
            tr.push(TracePoint {
                t,
                step,
                x: x.iter().map(|v| v.to_c64()).collect(),
                min_sv: sv,
            });
        }
    };
    record(&mut trace, t, 0.0, &x, s0);
    let finish = |status, x: Vec<T>, t, min_sv, steps, trace| {
        Ok(PathResult {
            endpoint: x,
            status,
            t_final: t,
            min_abs_eig_seen: min_sv,
            steps_taken: steps,
            trace,
        })
    };

    loop {
        let remaining = (t_to - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        let in_endgame = remaining < cfg.endgame_radius;
        if in_endgame && remaining <= cfg.endgame_floor {
            break;
        }
        if steps >= cfg.max_steps {
            return finish(PathStatus::StepFailure, x, t, min_sv, steps, trace);
        }
        let mut dt = step.min(remaining);
        if in_endgame {
            dt = dt.min(0.3 * remaining);
        }
        let t_new = if dt >= remaining { t_to } else { t + dir * dt };
        let accepted = rk4(h, &x, t, t_new - t).and_then(|pred| {
            match correct(h, &pred, t_new, cfg, cfg.newton_max_iters, true) {
                Newton::Ok(v) => Some(v),
                Newton::Fail => None,
            }
        });
        // a large move in one step usually means the corrector landed on another path
        let accepted = accepted.filter(|xn| {
            max_abs(&xn.iter().zip(&x).map(|(&a, &b)| a - b).collect::<Vec<T>>())
                <= cfg.max_step_move * (1.0 + max_abs(&x))
        });
        match accepted {
            Some(xn) => {
                x = xn;
                t = t_new;
                steps += 1;
                successes += 1;
                if successes >= 3 {
                    step = (step * 1.5).min(cfg.step_max);
                    successes = 0;
                }
                if max_abs(&x) > cfg.diverge_cap {
                    return finish(PathStatus::Diverged, x, t, min_sv, steps, trace);
                }
                let (s, smax) = sv_extremes(&h.jac_x(&x, t));
                min_sv = min_sv.min(s);
                last_rel = s / smax.max(f64::MIN_POSITIVE);
                record(&mut trace, t, dt, &x, s);
                if !in_endgame && last_rel < cfg.singular_eig_tol {
                    return finish(PathStatus::Singular, x, t, min_sv, steps, trace);
                }
            }
            None => {
                successes = 0;
                step *= 0.5;
                if step < cfg.step_min {
                    let status = if in_endgame {
                        endgame_status(&x, cfg)
                    } else if last_rel < cfg.singular_alarm {
                        PathStatus::Singular
                    } else {
                        PathStatus::StepFailure
                    };
                    return finish(status, x, t, min_sv, steps, trace);
                }
            }
        }
    }

    if t == t_to && residual_norm(h, &x, t) <= cfg.newton_tol {
        return finish(PathStatus::Converged, x, t, min_sv, steps, trace);
    }
    match newton_polish(h, &x, t_to, cfg) {
        Some(xf)
            if residual_norm(h, &xf, t_to) <= cfg.newton_tol && max_abs(&xf) <= cfg.diverge_cap =>
        {
            record(&mut trace, t_to, (t_to - t).abs(), &xf, f64::NAN);
            finish(PathStatus::Converged, xf, t_to, min_sv, steps, trace)
        }
        _ => finish(endgame_status(&x, cfg), x, t, min_sv, steps, trace),
    }
}

fn endgame_status<T: Field>(x: &[T], cfg: &TrackerConfig) -> PathStatus {
    if max_abs(x) > cfg.diverge_cap.sqrt() {
        PathStatus::Diverged
    } else {
        PathStatus::Singular
    }
}

/// Tracks every start; output order equals input order.
pub fn track_all<T: Field, H: Homotopy<T>>(
    h: &H,
    starts: &[Vec<T>],
    t_from: f64,
    t_to: f64,
    cfg: &TrackerConfig,
) -> Vec<PathResult<T>> {
    track_all_with(Exec::default(), h, starts, t_from, t_to, cfg)
}

pub fn track_all_with<T: Field, H: Homotopy<T>>(
    exec: Exec,
    h: &H,
    starts: &[Vec<T>],
    t_from: f64,
    t_to: f64,
    cfg: &TrackerConfig,
) -> Vec<PathResult<T>> {
    par::map(exec, starts, |x0| {
        track(h, x0, t_from, t_to, cfg).unwrap_or_else(|_| PathResult {
            endpoint: x0.clone(),
            status: PathStatus::StepFailure,
            t_final: t_from,
            min_abs_eig_seen: f64::NAN,
            steps_taken: 0,
            trace: None,
        })
    })
}

/// Clusters points within `tol` (max norm); returns component-wise medians, sorted.
pub fn dedup(points: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    dedup_groups(points, tol)
        .into_iter()
        .map(|g| median(&g.iter().map(|&i| &points[i][..]).collect::<Vec<_>>()))
        .collect()
}

/// Cluster membership (indices into `points`), ordered like the sorted representatives.
pub fn dedup_groups(points: &[Vec<f64>], tol: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let hit = groups
            .iter_mut()
            .find(|g| g.iter().any(|&k| dist_inf(&points[k], p) <= tol));
        match hit {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    let mut keyed: Vec<(Vec<f64>, Vec<usize>)> = groups
        .into_iter()
        .map(|g| {
            (
                median(&g.iter().map(|&i| &points[i][..]).collect::<Vec<_>>()),
                g,
            )
        })
        .collect();
    keyed.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    keyed.into_iter().map(|(_, g)| g).collect()
}

/// Complex variant: clusters on (re, im) pairs.
pub fn dedup_complex(points: &[Vec<Complex64>], tol: f64) -> Vec<Vec<Complex64>> {
    let flat: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().flat_map(|z| [z.re, z.im]).collect())
        .collect();
    dedup(&flat, tol)
        .into_iter()
        .map(|v| v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
        .collect()
}

pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn median(group: &[&[f64]]) -> Vec<f64> {
    let n = group[0].len();
    (0..n)
        .map(|c| {
            let mut v: Vec<f64> = group.iter().map(|p| p[c]).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            let m = v.len();
            if m % 2 == 1 {
                v[m / 2]
            } else {
                0.5 * (v[m / 2 - 1] + v[m / 2])
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianDiagnostics {
    pub smallest_singular_value: f64,
    pub condition_number: f64,
    pub log_abs_det: f64,
    pub det_phase: Complex64,
}

impl JacobianDiagnostics {
    pub fn determinant(&self) -> Complex64 {
        self.det_phase * self.log_abs_det.exp()
    }
}

pub fn jacobian_diagnostics<T: Field, H: Homotopy<T> + ?Sized>(
    h: &H,
    x: &[T],
    t: f64,
) -> JacobianDiagnostics {
    let j = h.jac_x(x, t);
    let (smin, smax) = sv_extremes(&j);
    let (det_phase, log_abs_det) = log_det(&j);
    JacobianDiagnostics {
        smallest_singular_value: smin,
        condition_number: if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        },
        log_abs_det,
        det_phase,
    }
}

/// CSV rows `path_id,t,step,re_1,im_1,…,min_sv` for a traced batch.
pub fn trace_csv<T>(results: &[PathResult<T>], dim: usize) -> String {
    use crate::model::fmt_f64;
    let mut s = String::from("path_id,t,step");
    for i in 1..=dim {
        s.push_str(&format!(",re_{i},im_{i}"));
    }
    s.push_str(",min_sv\n");
    for (id, r) in results.iter().enumerate() {
        for p in r.trace.iter().flatten() {
            s.push_str(&format!("{},{},{}", id, fmt_f64(p.t), fmt_f64(p.step)));
            for z in &p.x {
                s.push_str(&format!(",{},{}", fmt_f64(z.re), fmt_f64(z.im)));
            }
            s.push_str(&format!(",{}\n", fmt_f64(p.min_sv)));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    /// (1−t)(z² − 1) + t(z² − 4)
    struct Scalar2;
    impl Residual<f64> for Scalar2 {
        fn dim(&self) -> usize {
            1
        }
        fn residual<S: Scalar<Base = f64>>(&self, x: &[S], t: S) -> Vec<S> {
            let z2 = x[0] * x[0];
            vec![(S::one() - t) * (z2 - S::one()) + t * (z2 - S::from_f64(4.0))]
        }
    }
    impl Homotopy<f64> for Scalar2 {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
            self.residual(x, t)
        }
        fn jac_x(&self, x: &[f64], t: f64) -> DMatrix<f64> {
            ad_jac_x(self, x, t)
        }
        fn jac_t(&self, x: &[f64], t: f64) -> Vec<f64> {
            ad_jac_t(self, x, t)
        }
    }

    #[test]
    fn scalar_path() {
        let r = track(&Scalar2, &[1.0], 0.0, 1.0, &TrackerConfig::default()).unwrap();
        assert_eq!(r.status, PathStatus::Converged);
        assert!((r.endpoint[0] - 2.0).abs() < 1e-12);
        let back = track(&Scalar2, &[2.0], 1.0, 0.0, &TrackerConfig::default()).unwrap();
        assert!((back.endpoint[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_start() {
        assert!(matches!(
            track(&Scalar2, &[1.5], 0.0, 1.0, &TrackerConfig::default()),
            Err(Error::BadStart(_))
        ));
    }

    #[test]
    fn zero_length_path() {
        let r = track(&Scalar2, &[1.0], 0.3, 0.3, &TrackerConfig::default());
        // z² = 1 + 3·0.3 at t = 0.3, so 1.0 is not a start there
        assert!(r.is_err());
        let z = (1.9f64).sqrt();
        let r = track(&Scalar2, &[z], 0.3, 0.3, &TrackerConfig::default()).unwrap();
        assert_eq!(r.endpoint, vec![z]);
    }

    #[test]
    fn hessians_of_scalar() {
        let hs = ad_hessians(&Scalar2, &[0.7], 0.2);
        // H = z² − 1 − 3t: H_zz = 2, H_zt = 0, H_tt = 0
        assert!((hs[0][(0, 0)] - 2.0).abs() < 1e-14);
        assert_eq!(hs[0][(0, 1)], 0.0);
        assert_eq!(hs[0][(1, 1)], 0.0);
    }

    #[test]
    fn dedup_examples() {
        let pts = vec![vec![1.0000001], vec![0.9999999], vec![5.0]];
        assert_eq!(dedup(&pts, 1e-5), vec![vec![1.0], vec![5.0]]);
        assert!(dedup(&[], 1e-6).is_empty());
    }

    #[test]
    fn identity_diagnostics() {
        struct Id;
        impl Homotopy<f64> for Id {
            fn dim(&self) -> usize {
                3
            }
            fn eval(&self, x: &[f64], _t: f64) -> Vec<f64> {
                x.to_vec()
            }
            fn jac_x(&self, _x: &[f64], _t: f64) -> DMatrix<f64> {
                DMatrix::identity(3, 3)
            }
            fn jac_t(&self, _x: &[f64], _t: f64) -> Vec<f64> {
                vec![0.0; 3]
            }
        }
        let d = jacobian_diagnostics(&Id, &[0.0; 3], 0.0);
        assert_eq!((d.smallest_singular_value, d.condition_number), (1.0, 1.0));
        assert!((d.determinant() - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }
}
