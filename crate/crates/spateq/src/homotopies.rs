//! Total-degree, amenity (H_A), elasticity (H_η) and MacLaurin homotopies.

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::linalg::{solve, sv_extremes};
use crate::model::{classify_parts, classify_real, weights, City, Equilibrium, Status, Tolerances};
use crate::par::{self, Exec};
use crate::polysys::{
    build_maclaurin_system, build_static_system, homogeneous_level, rational_approx,
    start_homogeneous, start_total_degree, truncated_exp, PolySystem, Rational, StartKind,
    PATH_BUDGET,
};
use crate::tracker::{
    ad_jac_t, ad_jac_x, dedup_groups, trace_csv, track, track_all_with, Homotopy, PathResult,
    PathStatus, Residual, TrackerConfig,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Knobs shared by the solvers.
#[derive(Clone, Debug)]
pub struct SolveConfig {
    pub tracker: TrackerConfig,
    pub tol: Tolerances,
    pub seed: u64,
    pub budget: u128,
    pub exec: Exec,
    pub start_kind: StartKind,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tracker: TrackerConfig::default(),
            tol: Tolerances::default(),
            seed: 0,
            budget: PATH_BUDGET,
            exec: Exec::default(),
            start_kind: StartKind::Decoupled,
        }
    }
}

/// Rational exponent used for γ¹ unless the caller supplies one.
pub fn default_rational(gamma: f64) -> Result<Rational> {
    rational_approx(gamma, 1e-9, 12)
}

/// Per-status path counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStats {
    pub total: usize,
    pub converged: usize,
    pub diverged: usize,
    pub singular: usize,
    pub step_failure: usize,
    pub complex: usize,
    pub nonpositive: usize,
    pub skipped: usize,
}

impl PathStats {
    fn count<T>(&mut self, results: &[PathResult<T>]) {
        for r in results {
            self.total += 1;
            match r.status {
                PathStatus::Converged => self.converged += 1,
                PathStatus::Diverged => self.diverged += 1,
                PathStatus::Singular => self.singular += 1,
                PathStatus::StepFailure => self.step_failure += 1,
            }
        }
    }
}

/// Output of a solver run.
#[derive(Clone, Debug)]
pub struct Solution {
    pub equilibria: Vec<Equilibrium>,
    pub stats: PathStats,
    pub gamma_trick: Option<Complex64>,
    pub trace_csv: Option<String>,
    /// Endpoints of paths that stopped at a singular point: (x, t).
    pub singular_points: Vec<(Vec<f64>, f64)>,
}

impl Solution {
    pub fn proper(&self) -> Vec<&Equilibrium> {
        self.equilibria.iter().filter(|e| e.is_proper()).collect()
    }
}

/// Seeded random unit complex number.
pub fn gamma_trick(seed: u64) -> Complex64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))
}

/// H(z,t) = γ t G(z) + (1−t) P(z).
pub struct TotalDegreeH {
    pub target: PolySystem,
    pub start: PolySystem,
    pub gamma: Complex64,
}

impl Homotopy<Complex64> for TotalDegreeH {
    fn dim(&self) -> usize {
        self.target.nvars
    }
    fn eval(&self, z: &[Complex64], t: f64) -> Vec<Complex64> {
        let p = self.target.eval(z);
        let g = self.start.eval(z);
        p.iter()
            .zip(&g)
            .map(|(p, g)| self.gamma * t * g + (1.0 - t) * p)
            .collect()
    }
    fn jac_x(&self, z: &[Complex64], t: f64) -> DMatrix<Complex64> {
        let (_, jp) = self.target.eval_jac(z);
        let (_, jg) = self.start.eval_jac(z);
        jg * (self.gamma * t) + jp * Complex64::new(1.0 - t, 0.0)
    }
    fn jac_t(&self, z: &[Complex64], _t: f64) -> Vec<Complex64> {
        let p = self.target.eval(z);
        let g = self.start.eval(z);
        p.iter().zip(&g).map(|(p, g)| self.gamma * g - p).collect()
    }
    fn tangent(&self, z: &[Complex64], t: f64) -> Option<Vec<Complex64>> {
        let (p, jp) = self.target.eval_jac(z);
        let (g, jg) = self.start.eval_jac(z);
        let jx = jg * (self.gamma * t) + jp * Complex64::new(1.0 - t, 0.0);
        let rhs: Vec<Complex64> = p.iter().zip(&g).map(|(p, g)| p - self.gamma * g).collect();
        solve(&jx, &rhs)
    }
}

/// Tracks all Π d_j paths of a target system from t = 1 to t = 0.
pub fn run_total_degree(
    target: &PolySystem,
    cfg: &SolveConfig,
) -> Result<(Vec<PathResult<Complex64>>, Complex64, PathStats)> {
    let (start, starts) = start_total_degree(&target.degrees(), cfg.budget)?;
    let gamma = gamma_trick(cfg.seed);
    let h = TotalDegreeH {
        target: target.clone(),
        start,
        gamma,
    };
    let mut results = track_all_with(cfg.exec, &h, &starts.points, 1.0, 0.0, &cfg.tracker);
    retrack_crossings(&h, &starts.points, &mut results, cfg);
    let mut stats = PathStats::default();
    stats.count(&results);
    Ok((results, gamma, stats))
}

/// Paths sharing a nonsingular endpoint; at most one of them followed its own path.
fn crossing_paths<H: Homotopy<Complex64>>(
    h: &H,
    results: &[PathResult<Complex64>],
    tol: f64,
) -> Vec<usize> {
    let conv: Vec<usize> = (0..results.len())
        .filter(|&i| results[i].status == PathStatus::Converged)
        .collect();
    let pts: Vec<Vec<f64>> = conv
        .iter()
        .map(|&i| {
            results[i]
                .endpoint
                .iter()
                .flat_map(|z| [z.re, z.im])
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for g in dedup_groups(&pts, tol).into_iter().filter(|g| g.len() > 1) {
        let (smin, smax) = sv_extremes(&h.jac_x(&results[conv[g[0]]].endpoint, 0.0));
        if smin > 1e-8 * smax {
            out.extend(g.iter().map(|&k| conv[k]));
        }
    }
    out
}

/// Re-tracks crossing paths with shorter steps and a tighter corrector.
fn retrack_crossings<H: Homotopy<Complex64>>(
    h: &H,
    starts: &[Vec<Complex64>],
    results: &mut [PathResult<Complex64>],
    cfg: &SolveConfig,
) {
    let mut tcfg = cfg.tracker.clone();
    for _ in 0..3 {
        let idx = crossing_paths(h, results, cfg.tol.dedup);
        if idx.is_empty() {
            return;
        }
        tcfg.step_max /= 8.0;
        tcfg.step_init = tcfg.step_init.min(tcfg.step_max);
        tcfg.max_correction /= 4.0;
        tcfg.max_step_move /= 4.0;
        let redo = par::map(cfg.exec, &idx, |&i| track(h, &starts[i], 1.0, 0.0, &tcfg));
        for (i, r) in idx.into_iter().zip(redo) {
            if let Ok(r) = r {
                results[i] = r;
            }
        }
    }
}

/// Real, strictly positive converged endpoints (real parts), deduplicated.
fn positive_real_endpoints(
    results: &[PathResult<Complex64>],
    tol: &Tolerances,
    stats: &mut PathStats,
) -> Vec<Vec<f64>> {
    let mut reals = Vec::new();
    for r in results.iter().filter(|r| r.status == PathStatus::Converged) {
        let scale = r.endpoint.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
        if r.endpoint.iter().any(|z| z.im.abs() > tol.boxed * scale) {
            stats.complex += 1;
        } else if r.endpoint.iter().any(|z| !(z.re > 0.0)) {
            stats.nonpositive += 1;
        } else {
            reals.push(r.endpoint.iter().map(|z| z.re).collect::<Vec<f64>>());
        }
    }
    representatives(&reals, tol.dedup)
}

fn representatives(points: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    // The first member of each cluster is a genuine Newton-polished endpoint.
    dedup_groups(points, tol)
        .into_iter()
        .map(|g| points[g[0]].clone())
        .collect()
}

fn sort_equilibria(eqs: &mut [Equilibrium]) {
    eqs.sort_by(|a, b| crate::tracker::lex_cmp(&a.x, &b.x));
}

/// All nonsingular equilibria of an elastic city by total-degree homotopy.
pub fn solve_total_degree(city: &City, rat: Rational, cfg: &SolveConfig) -> Result<Solution> {
    let target = build_static_system(city, rat);
    let (results, gamma, mut stats) = run_total_degree(&target, cfg)?;
    let reals = positive_real_endpoints(&results, &cfg.tol, &mut stats);
    let mut equilibria: Vec<Equilibrium> = reals
        .iter()
        .map(|z| {
            let psi: Vec<f64> = z.iter().map(|v| v.powi(rat.q as i32)).collect();
            classify_real(city, &psi, &city.mc, &cfg.tol)
        })
        .collect();
    sort_equilibria(&mut equilibria);
    Ok(Solution {
        equilibria,
        stats,
        gamma_trick: Some(gamma),
        trace_csv: cfg.tracker.trace.then(|| trace_csv(&results, city.j)),
        singular_points: Vec::new(),
    })
}

/// Linear parameter path A(t), mc(t), Δ(t).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPath {
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub mc0: Vec<f64>,
    pub mc1: Vec<f64>,
    pub d0: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub alpha: f64,
}

impl ParamPath {
    fn lerp(a: f64, b: f64, t: f64) -> f64 {
        (1.0 - t) * a + t * b
    }

    /// w(t) = A(t) mc(t)^{−α} and dw/dt.
    pub fn weights_at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.a0.len();
        let mut w = vec![0.0; n];
        let mut dw = vec![0.0; n];
        for i in 0..n {
            let a = Self::lerp(self.a0[i], self.a1[i], t);
            let m = Self::lerp(self.mc0[i], self.mc1[i], t);
            let mp = m.powf(-self.alpha);
            w[i] = a * mp;
            dw[i] = (self.a1[i] - self.a0[i]) * mp
                - self.alpha * a * mp / m * (self.mc1[i] - self.mc0[i]);
        }
        (w, dw)
    }

    pub fn delta_at(&self, t: f64) -> DMatrix<f64> {
        &self.d0 * (1.0 - t) + &self.d1 * t
    }

    fn weights_generic<S: Scalar<Base = f64>>(&self, t: S) -> Vec<S> {
        let one = S::one();
        (0..self.a0.len())
            .map(|i| {
                let a = S::from_f64(self.a0[i]) * (one - t) + S::from_f64(self.a1[i]) * t;
                let m = S::from_f64(self.mc0[i]) * (one - t) + S::from_f64(self.mc1[i]) * t;
                a * m.powf(-self.alpha)
            })
            .collect()
    }
}

/// Coordinates of an amenity path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coords {
    /// Unknown is Ψ, interaction term Ψ^γ.
    Psi { gamma: f64 },
    /// Unknown is z = Ψ^{1/q}, equation z_j^q Σ w z^p − Δ w z^p.
    Z { p: i32, q: i32 },
}

/// H_A: a_j(x) Σ_l w_l(t) b(x_l) − Σ_k Δ(t)_jk w_k(t) b(x_k).
#[derive(Clone, Debug)]
pub struct AmenityH {
    pub path: ParamPath,
    pub coords: Coords,
}

impl AmenityH {
    fn ab<S: Scalar<Base = f64>>(&self, x: S) -> (S, S) {
        match self.coords {
            Coords::Psi { gamma } => (x, x.powf(gamma)),
            Coords::Z { p, q } => (x.powi(q), x.powi(p)),
        }
    }

    fn ab_d(&self, x: f64) -> (f64, f64, f64, f64) {
        match self.coords {
            Coords::Psi { gamma } => {
                let b = if x == 0.0 { 0.0 } else { x.powf(gamma) };
                let db = if x == 0.0 && gamma > 1.0 {
                    0.0
                } else {
                    gamma * x.powf(gamma - 1.0)
                };
                (x, 1.0, b, db)
            }
            Coords::Z { p, q } => {
                let dq = if q == 0 {
                    0.0
                } else {
                    q as f64 * x.powi(q - 1)
                };
                let dp = if p == 0 {
                    0.0
                } else {
                    p as f64 * x.powi(p - 1)
                };
                (x.powi(q), dq, x.powi(p), dp)
            }
        }
    }

    /// Decoupled start (Δ = I, A = mc = 1) toward `city`.
    pub fn decoupled(city: &City, gamma: f64) -> AmenityH {
        let n = city.j;
        AmenityH {
            path: ParamPath {
                a0: vec![1.0; n],
                a1: city.a.clone(),
                mc0: vec![1.0; n],
                mc1: city.mc.clone(),
                d0: DMatrix::identity(n, n),
                d1: weights(city),
                alpha: city.alpha,
            },
            coords: Coords::Psi { gamma },
        }
    }

    /// Homogeneous city Δ = c·ones toward `city`, in z coordinates.
    pub fn homogeneous(city: &City, rat: Rational, kind: StartKind) -> AmenityH {
        let n = city.j;
        AmenityH {
            path: ParamPath {
                a0: vec![1.0; n],
                a1: city.a.clone(),
                mc0: vec![1.0; n],
                mc1: city.mc.clone(),
                d0: DMatrix::from_element(n, n, homogeneous_level(kind, n)),
                d1: weights(city),
                alpha: city.alpha,
            },
            coords: Coords::Z {
                p: rat.p as i32,
                q: rat.q as i32,
            },
        }
    }

    /// Maps an endpoint to Ψ.
    pub fn to_psi(&self, x: &[f64]) -> Vec<f64> {
        match self.coords {
            Coords::Psi { .. } => x.to_vec(),
            Coords::Z { q, .. } => x.iter().map(|v| v.powi(q)).collect(),
        }
    }
}

impl Residual<f64> for AmenityH {
    fn dim(&self) -> usize {
        self.path.a0.len()
    }
    fn residual<S: Scalar<Base = f64>>(&self, x: &[S], t: S) -> Vec<S> {
        let n = x.len();
        let w = self.path.weights_generic(t);
        let one = S::one();
        let ab: Vec<(S, S)> = x.iter().map(|&v| self.ab(v)).collect();
        let u: Vec<S> = (0..n).map(|l| w[l] * ab[l].1).collect();
        let mut s = S::zero();
        for v in &u {
            s += *v;
        }
        (0..n)
            .map(|j| {
                let mut r = ab[j].0 * s;
                for k in 0..n {
                    let d = S::from_f64(self.path.d0[(j, k)]) * (one - t)
                        + S::from_f64(self.path.d1[(j, k)]) * t;
                    r -= d * u[k];
                }
                r
            })
            .collect()
    }
}

impl Homotopy<f64> for AmenityH {
    fn dim(&self) -> usize {
        self.path.a0.len()
    }
    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        let n = x.len();
        let (w, _) = self.path.weights_at(t);
        let d = self.path.delta_at(t);
        let ab: Vec<(f64, f64, f64, f64)> = x.iter().map(|&v| self.ab_d(v)).collect();
        let u: Vec<f64> = (0..n).map(|l| w[l] * ab[l].2).collect();
        let s: f64 = u.iter().sum();
        (0..n)
            .map(|j| ab[j].0 * s - (0..n).map(|k| d[(j, k)] * u[k]).sum::<f64>())
            .collect()
    }
    fn jac_x(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        let n = x.len();
        let (w, _) = self.path.weights_at(t);
        let d = self.path.delta_at(t);
        let ab: Vec<(f64, f64, f64, f64)> = x.iter().map(|&v| self.ab_d(v)).collect();
        let s: f64 = (0..n).map(|l| w[l] * ab[l].2).sum();
        DMatrix::from_fn(n, n, |j, m| {
            let du = w[m] * ab[m].3;
            let diag = if j == m { ab[j].1 * s } else { 0.0 };
            diag + ab[j].0 * du - d[(j, m)] * du
        })
    }
    fn jac_t(&self, x: &[f64], t: f64) -> Vec<f64> {
        let n = x.len();
        let (w, dw) = self.path.weights_at(t);
        let d = self.path.delta_at(t);
        let dd = &self.path.d1 - &self.path.d0;
        let b: Vec<f64> = x.iter().map(|&v| self.ab_d(v).2).collect();
        let a: Vec<f64> = x.iter().map(|&v| self.ab_d(v).0).collect();
        let ds: f64 = (0..n).map(|l| dw[l] * b[l]).sum();
        (0..n)
            .map(|j| {
                a[j] * ds
                    - (0..n)
                        .map(|k| dd[(j, k)] * w[k] * b[k] + d[(j, k)] * dw[k] * b[k])
                        .sum::<f64>()
            })
            .collect()
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        match self.coords {
            Coords::Psi { .. } => x.iter().all(|&v| v >= 0.0),
            Coords::Z { .. } => x.iter().all(|v| v.is_finite()),
        }
    }
}

/// Uniform-on-support starts 1_S/|S| of the decoupled city.
pub fn decoupled_starts(j: usize, gamma: f64) -> Vec<Vec<f64>> {
    if gamma <= 1.0 || j > 24 {
        return vec![vec![1.0 / j as f64; j]];
    }
    (1..(1u64 << j))
        .map(|mask| {
            let k = mask.count_ones() as f64;
            (0..j)
                .map(|i| if mask >> i & 1 == 1 { 1.0 / k } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Equilibria reachable from the homogeneous start set by H_A.
pub fn solve_amenity_homotopy(city: &City, rat: Rational, cfg: &SolveConfig) -> Result<Solution> {
    let (h, starts): (AmenityH, Vec<Vec<f64>>) = match cfg.start_kind {
        StartKind::Homogeneous | StartKind::HomogeneousRowSum => {
            let (_, s) = start_homogeneous(city, rat, cfg.start_kind);
            let pts = s
                .points
                .iter()
                .map(|p| p.iter().map(|z| z.re).collect())
                .collect();
            (AmenityH::homogeneous(city, rat, cfg.start_kind), pts)
        }
        _ => {
            let g = rat.value();
            (AmenityH::decoupled(city, g), decoupled_starts(city.j, g))
        }
    };
    let results = track_all_with(cfg.exec, &h, &starts, 0.0, 1.0, &cfg.tracker);
    let mut stats = PathStats::default();
    stats.count(&results);
    let mut psis = Vec::new();
    let mut singular_points = Vec::new();
    for r in &results {
        match r.status {
            PathStatus::Converged => {
                let psi = h.to_psi(&r.endpoint);
                if psi.iter().all(|&v| v > 0.0) {
                    psis.push(psi);
                } else {
                    stats.nonpositive += 1;
                }
            }
            PathStatus::Singular => singular_points.push((r.endpoint.clone(), r.t_final)),
            _ => {}
        }
    }
    let mut equilibria: Vec<Equilibrium> = representatives(&psis, cfg.tol.dedup)
        .iter()
        .map(|psi| classify_real(city, psi, &city.mc, &cfg.tol))
        .collect();
    sort_equilibria(&mut equilibria);
    Ok(Solution {
        equilibria,
        stats,
        gamma_trick: None,
        trace_csv: cfg.tracker.trace.then(|| trace_csv(&results, city.j)),
        singular_points,
    })
}

/// H_η in (log z, log q); t is the path parameter and ζ_j(t) = t·zeta_scale_j.
#[derive(Clone, Debug)]
pub struct ElasticityH {
    pub city: City,
    pub rat: Rational,
    pub delta: DMatrix<f64>,
    pub zeta_scale: Vec<f64>,
}

impl ElasticityH {
    pub fn new(city: &City, rat: Rational) -> ElasticityH {
        ElasticityH {
            city: city.clone(),
            rat,
            delta: weights(city),
            zeta_scale: vec![1.0; city.j],
        }
    }

    /// Per-location elasticities reached at t = 1.
    pub fn with_targets(city: &City, rat: Rational, zeta_to: &[f64]) -> ElasticityH {
        ElasticityH {
            zeta_scale: zeta_to.to_vec(),
            ..ElasticityH::new(city, rat)
        }
    }

    fn split(
        &self,
        y: &[f64],
        t: f64,
    ) -> (
        DMatrix<f64>,
        DMatrix<f64>,
        DMatrix<f64>,
        Vec<f64>,
        DMatrix<f64>,
    ) {
        let n = self.city.j;
        let jac = ad_jac_x(self, y, t);
        let jt = ad_jac_t(self, y, t);
        let fu = jac.view((0, 0), (n, n)).into_owned();
        let fv = jac.view((0, n), (n, n)).into_owned();
        let qu = jac.view((n, 0), (n, n)).into_owned();
        let qv_minus_i = jac.view((n, n), (n, n)).into_owned();
        (fu, fv, qu, jt[n..].to_vec(), qv_minus_i)
    }

    /// σ_min of (I − ∂Q/∂log q) and of the Schur complement.
    pub fn certificates(&self, y: &[f64], t: f64) -> (f64, f64) {
        let (fu, fv, qu, _, qv_minus_i) = self.split(y, t);
        let m = -qv_minus_i;
        let c1 = sv_extremes(&m).0;
        let c2 = match m.clone().lu().solve(&qu) {
            Some(mq) => sv_extremes(&(fu + fv * mq)).0,
            None => 0.0,
        };
        (c1, c2)
    }

    pub fn state_from(&self, psi: &[f64], qprice: &[f64]) -> Vec<f64> {
        let q = self.rat.q as f64;
        psi.iter()
            .map(|p| p.ln() / q)
            .chain(qprice.iter().map(|v| v.ln()))
            .collect()
    }

    pub fn psi_q(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.city.j;
        let q = self.rat.q as f64;
        (
            y[..n].iter().map(|u| (q * u).exp()).collect(),
            y[n..].iter().map(|v| v.exp()).collect(),
        )
    }
}

impl Residual<f64> for ElasticityH {
    fn dim(&self) -> usize {
        2 * self.city.j
    }
    fn residual<S: Scalar<Base = f64>>(&self, y: &[S], t: S) -> Vec<S> {
        let c = &self.city;
        let n = c.j;
        let (p, q) = (self.rat.p as f64, self.rat.q as f64);
        let u = &y[..n];
        let v = &y[n..];
        let w: Vec<S> = (0..n)
            .map(|l| (v[l].scale(-c.alpha)).exp().scale(c.a[l]))
            .collect();
        let zp: Vec<S> = u.iter().map(|&ul| ul.scale(p).exp()).collect();
        let wz: Vec<S> = (0..n).map(|l| w[l] * zp[l]).collect();
        let mut s1 = S::zero();
        for v in &wz {
            s1 += *v;
        }
        let mut out = Vec::with_capacity(2 * n);
        for j in 0..n {
            let mut f = u[j].scale(q).exp() * s1;
            for k in 0..n {
                f -= wz[k].scale(self.delta[(j, k)]);
            }
            out.push(f);
        }
        // demand of group g at j: L_g A_j Ψ_j^{γ_g} / Σ_k w_k Ψ_k^{γ_g}
        let mut dem: Vec<S> = vec![S::zero(); n];
        for g in 0..2 {
            if c.l[g] == 0.0 {
                continue;
            }
            let e = if g == 0 { p } else { q * c.gamma[1] };
            let pw: Vec<S> = u.iter().map(|&ul| ul.scale(e).exp()).collect();
            let mut s = S::zero();
            for k in 0..n {
                s += w[k] * pw[k];
            }
            for j in 0..n {
                dem[j] += pw[j].scale(c.l[g] * c.a[j]) / s;
            }
        }
        for j in 0..n {
            let zeta = t.scale(self.zeta_scale[j]);
            let num = S::from_f64(c.mc[j].ln()) + zeta * (dem[j].scale(1.0 / c.c[j])).ln();
            let qj = num / (zeta.scale(c.alpha) + S::one());
            out.push(qj - v[j]);
        }
        out
    }
}

impl Homotopy<f64> for ElasticityH {
    fn dim(&self) -> usize {
        2 * self.city.j
    }
    fn eval(&self, y: &[f64], t: f64) -> Vec<f64> {
        self.residual(y, t)
    }
    fn jac_x(&self, y: &[f64], t: f64) -> DMatrix<f64> {
        ad_jac_x(self, y, t)
    }
    fn jac_t(&self, y: &[f64], t: f64) -> Vec<f64> {
        ad_jac_t(self, y, t)
    }
    /// Blockwise: dv = (I − Q_v)⁻¹(Q_u du + Q_t), S du = −F_v (I − Q_v)⁻¹ Q_t.
    fn tangent(&self, y: &[f64], t: f64) -> Option<Vec<f64>> {
        let (fu, fv, qu, qt, qv_minus_i) = self.split(y, t);
        let m = (-qv_minus_i).lu();
        let mq = m.solve(&qu)?;
        let mqt = m.solve(&nalgebra::DVector::from_vec(qt))?;
        let schur = fu + &fv * &mq;
        let rhs = -(&fv * &mqt);
        let du = schur.lu().solve(&rhs)?;
        let dv = &mq * &du + mqt;
        let out: Vec<f64> = du.iter().chain(dv.iter()).copied().collect();
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

/// Result of one H_η run.
#[derive(Clone, Debug)]
pub struct ElasticityRun {
    pub path: PathResult<f64>,
    pub equilibrium: Equilibrium,
    /// Smallest certificates seen at the endpoint: (I − Q_v, Schur).
    pub certificates: (f64, f64),
}

/// Deforms an η = ∞ equilibrium into the city's finite η.
pub fn solve_elasticity_homotopy(
    city: &City,
    eq0: &Equilibrium,
    cfg: &SolveConfig,
) -> Result<ElasticityRun> {
    let zeta_to = 1.0 / city.eta;
    let rat = default_rational(city.gamma[0])
        .or_else(|_| rational_approx(city.gamma[0], 1e-9, 1_000_000))?;
    if eq0.psi.iter().any(|&v| !(v > 0.0)) || eq0.imag > 1e-8 {
        return Err(Error::Domain("start has nonpositive or complex psi".into()));
    }
    let h = ElasticityH::new(city, rat);
    let y0 = h.state_from(&eq0.psi, &city.mc);
    let mut tcfg = cfg.tracker.clone();
    tcfg.endgame_radius = 0.0;
    let path = track(&h, &y0, 0.0, zeta_to, &tcfg)?;
    let (psi, qp) = h.psi_q(&path.endpoint);
    let certificates = h.certificates(&path.endpoint, path.t_final);
    let equilibrium = if path.status == PathStatus::Converged {
        classify_real(city, &psi, &qp, &cfg.tol)
    } else {
        let mut e = classify_real(city, &psi, &qp, &cfg.tol);
        e.status = Status::SingularEndpoint;
        e
    };
    Ok(ElasticityRun {
        path,
        equilibrium,
        certificates,
    })
}

/// H_η from every admissible start; returns runs and distinct endpoint equilibria.
pub fn solve_elasticity_all(
    city: &City,
    starts: &[Equilibrium],
    cfg: &SolveConfig,
) -> (Vec<Result<ElasticityRun>>, Vec<Equilibrium>, PathStats) {
    let runs = par::map(cfg.exec, starts, |e| {
        solve_elasticity_homotopy(city, e, cfg)
    });
    let mut stats = PathStats::default();
    let mut pts = Vec::new();
    let mut eqs = Vec::new();
    for r in &runs {
        match r {
            Err(_) => stats.skipped += 1,
            Ok(run) => {
                stats.count(std::slice::from_ref(&run.path));
                if run.equilibrium.is_equilibrium() {
                    let key: Vec<f64> = run
                        .equilibrium
                        .psi
                        .iter()
                        .chain(&run.equilibrium.qprice)
                        .copied()
                        .collect();
                    pts.push(key);
                    eqs.push(run.equilibrium.clone());
                }
            }
        }
    }
    let mut out: Vec<Equilibrium> = dedup_groups(&pts, cfg.tol.dedup)
        .into_iter()
        .map(|g| eqs[g[0]].clone())
        .collect();
    sort_equilibria(&mut out);
    (runs, out, stats)
}

/// Ψ_j − Σ_k Δ_jk (N¹/s_k) T_n(A_k + γΨ_k) / Σ_ℓ T_n(A_ℓ + γΨ_ℓ).
pub fn maclaurin_residual(city: &City, n: usize, psi: &[f64]) -> Vec<f64> {
    let d = weights(city);
    let tn: Vec<f64> = (0..city.j)
        .map(|k| truncated_exp(city.a[k] + city.gamma[0] * psi[k], n))
        .collect();
    let s: f64 = tn.iter().sum();
    (0..city.j)
        .map(|j| {
            psi[j]
                - (0..city.j)
                    .map(|k| d[(j, k)] * city.l[0] / city.surface[k] * tn[k])
                    .sum::<f64>()
                    / s
        })
        .collect()
}

/// Total-degree homotopy on the order-n MacLaurin system of the additive-utility city.
pub fn solve_maclaurin(city: &City, n: usize, cfg: &SolveConfig) -> Result<Solution> {
    let target = build_maclaurin_system(city, n)?;
    let (results, gamma, mut stats) = run_total_degree(&target, cfg)?;
    let reals = positive_real_endpoints(&results, &cfg.tol, &mut stats);
    let d = weights(city);
    let mut equilibria = Vec::new();
    for psi in reals {
        let Ok(x) = crate::model::solve_weights(&d, &psi) else {
            continue;
        };
        let residual = maclaurin_residual(city, n, &psi)
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let shares: Vec<f64> = x
            .iter()
            .zip(&city.surface)
            .map(|(x, s)| x * s / city.l[0])
            .collect();
        let mut e = classify_parts(shares, psi, city.mc.clone(), residual, &cfg.tol);
        e.x = x;
        equilibria.push(e);
    }
    sort_equilibria(&mut equilibria);
    Ok(Solution {
        equilibria,
        stats,
        gamma_trick: Some(gamma),
        trace_csv: cfg.tracker.trace.then(|| trace_csv(&results, city.j)),
        singular_points: Vec::new(),
    })
}
