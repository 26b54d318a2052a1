//! City parameterization, equilibrium conditions and classification.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Classification thresholds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    pub resid: f64,
    pub boxed: f64,
    pub diverge_cap: f64,
    pub dedup: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            resid: 1e-10,
            boxed: 1e-6,
            diverge_cap: 1e10,
            dedup: 1e-6,
        }
    }
}

/// Static city with two groups.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct City {
    pub j: usize,
    /// Aggregate population of groups 1 and 2.
    pub l: [f64; 2],
    pub a: Vec<f64>,
    pub dist: Vec<Vec<f64>>,
    pub xi: f64,
    pub c: Vec<f64>,
    pub mc: Vec<f64>,
    /// Supply elasticity; `f64::INFINITY` for perfectly elastic supply.
    pub eta: f64,
    pub gamma: [f64; 2],
    pub alpha: f64,
    pub theta: f64,
    /// Location surfaces, only used by the additive-utility expansion.
    pub surface: Vec<f64>,
}

/// `|j - k|` distances on a line of `j` points.
pub fn line_dist(j: usize) -> Vec<Vec<f64>> {
    (0..j)
        .map(|r| (0..j).map(|c| (r as f64 - c as f64).abs()).collect())
        .collect()
}

impl City {
    /// Unit city on a line: A = c = mc = 1, eta = inf.
    pub fn line(j: usize, gamma1: f64, xi: f64) -> City {
        City {
            j,
            l: [1.0, 0.0],
            a: vec![1.0; j],
            dist: line_dist(j),
            xi,
            c: vec![1.0; j],
            mc: vec![1.0; j],
            eta: f64::INFINITY,
            gamma: [gamma1, 0.0],
            alpha: 0.3,
            theta: 1.0,
            surface: vec![1.0; j],
        }
    }

    pub fn with_amenities(mut self, a: Vec<f64>) -> City {
        self.a = a;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> City {
        self.eta = eta;
        self
    }

    pub fn with_populations(mut self, l1: f64, l2: f64) -> City {
        self.l = [l1, l2];
        self
    }

    /// Hard checks; returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let j = self.j;
        if j == 0 {
            return Err(Error::Config("J must be at least 1".into()));
        }
        for (name, v) in [
            ("A", &self.a),
            ("c", &self.c),
            ("mc", &self.mc),
            ("s", &self.surface),
        ] {
            if v.len() != j {
                return Err(Error::Config(format!(
                    "{name} has length {}, expected {j}",
                    v.len()
                )));
            }
            if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!("{name} must be strictly positive")));
            }
        }
        if self.dist.len() != j || self.dist.iter().any(|r| r.len() != j) {
            return Err(Error::Config(format!("dist must be {j}x{j}")));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::Config("xi must be nonnegative".into()));
        }
        if self.l.iter().any(|&x| !(x >= 0.0)) || self.l[0] <= 0.0 {
            return Err(Error::Config(
                "L1 must be positive and L2 nonnegative".into(),
            ));
        }
        let mut warnings = Vec::new();
        let w = weights(self);
        for r in 0..j {
            let off: f64 = (0..j).filter(|&c| c != r).map(|c| w[(r, c)]).sum();
            if w[(r, r)] <= off {
                warnings.push(format!(
                    "weight matrix is not strictly diagonally dominant at row {}",
                    r + 1
                ));
                break;
            }
        }
        for r in 0..j {
            for c in 0..j {
                if (self.dist[r][c] - self.dist[c][r]).abs() > 1e-12 {
                    warnings.push("dist is not symmetric".into());
                    return Ok(warnings);
                }
            }
        }
        Ok(warnings)
    }

    pub fn is_elastic(&self) -> bool {
        self.eta.is_infinite()
    }

    /// Weights w_l = A_l q_l^{-alpha}.
    pub fn utility_weights(&self, q: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(q)
            .map(|(a, q)| a * q.powf(-self.alpha))
            .collect()
    }

    /// Parses the flat key-value format.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<City> {
        let get = |k: &str| kv.get(k).map(|s| s.trim().to_string());
        let j: usize = get("J")
            .ok_or_else(|| Error::Config("missing key J".into()))?
            .parse()
            .map_err(|_| Error::Config("J must be an integer".into()))?;
        let scalar = |k: &str, default: Option<f64>| -> Result<f64> {
            match get(k) {
                Some(s) => {
                    parse_f64(&s).map_err(|_| Error::Config(format!("bad number for {k}: {s}")))
                }
                None => default.ok_or_else(|| Error::Config(format!("missing key {k}"))),
            }
        };
        let vector = |k: &str, default: Option<f64>| -> Result<Vec<f64>> {
            match get(k) {
                Some(s) => {
                    let v = parse_list(&s)
                        .map_err(|_| Error::Config(format!("bad vector for {k}: {s}")))?;
                    if v.len() == 1 {
                        Ok(vec![v[0]; j])
                    } else if v.len() == j {
                        Ok(v)
                    } else {
                        Err(Error::Config(format!(
                            "{k} has {} entries, expected {j}",
                            v.len()
                        )))
                    }
                }
                None => default
                    .map(|d| vec![d; j])
                    .ok_or_else(|| Error::Config(format!("missing key {k}"))),
            }
        };
        let dist = match get("dist").as_deref() {
            None | Some("line") => line_dist(j),
            Some(s) => {
                let rows: Vec<&str> = s
                    .split(';')
                    .map(str::trim)
                    .filter(|r| !r.is_empty())
                    .collect();
                let m: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|r| parse_list(r))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad dist matrix: {s}")))?;
                if m.len() != j || m.iter().any(|r| r.len() != j) {
                    return Err(Error::Config(format!("dist must be {j}x{j}")));
                }
                m
            }
        };
        let l1 = scalar("L1", None)?;
        let l2 = match get("L2") {
            Some(_) => scalar("L2", None)?,
            None => scalar("L", Some(l1))? - l1,
        };
        let city = City {
            j,
            l: [l1, l2],
            a: vector("A", Some(1.0))?,
            dist,
            xi: scalar("xi", None)?,
            c: vector("c", Some(1.0))?,
            mc: vector("mc", Some(1.0))?,
            eta: scalar("eta", Some(f64::INFINITY))?,
            gamma: [scalar("gamma1", None)?, scalar("gamma2", Some(0.0))?],
            alpha: scalar("alpha", Some(0.3))?,
            theta: scalar("theta", Some(1.0))?,
            surface: vector("s", Some(1.0))?,
        };
        city.validate()?;
        Ok(city)
    }

    /// Renders the city in the flat key-value format.
    pub fn to_kv(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let dist = if self.dist == line_dist(self.j) {
            "line".to_string()
        } else {
            self.dist
                .iter()
                .map(|r| list(r))
                .collect::<Vec<_>>()
                .join("; ")
        };
        format!(
            "J = {}\nL1 = {}\nL2 = {}\nA = {}\ndist = {}\nxi = {}\nc = {}\nmc = {}\neta = {}\ngamma1 = {}\ngamma2 = {}\nalpha = {}\ntheta = {}\ns = {}\n",
            self.j,
            fmt_f64(self.l[0]),
            fmt_f64(self.l[1]),
            list(&self.a),
            dist,
            fmt_f64(self.xi),
            list(&self.c),
            list(&self.mc),
            fmt_f64(self.eta),
            fmt_f64(self.gamma[0]),
            fmt_f64(self.gamma[1]),
            fmt_f64(self.alpha),
            fmt_f64(self.theta),
            list(&self.surface),
        )
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn parse_f64(s: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    match s.trim() {
        "inf" | "Inf" | "infinity" => Ok(f64::INFINITY),
        t => t.parse(),
    }
}

pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(',').map(parse_f64).collect()
}

/// Float rendering used in every output file: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v.is_nan() {
        return "nan".into();
    }
    format!("{:.16e}", v)
}

/// Δ[j][k] = exp(−ξ·d_jk).
pub fn weights(city: &City) -> DMatrix<f64> {
    DMatrix::from_fn(city.j, city.j, |r, c| (-city.xi * city.dist[r][c]).exp())
}

/// Ψ = Δx.
pub fn psi_from_x(city: &City, x: &[f64]) -> Vec<f64> {
    (weights(city) * DVector::from_column_slice(x))
        .iter()
        .copied()
        .collect()
}

/// Solves Δx = Ψ.
pub fn x_from_psi(city: &City, psi: &[f64]) -> Result<Vec<f64>> {
    solve_weights(&weights(city), psi)
}

pub(crate) fn solve_weights(delta: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let sv = delta.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(cond <= 1e14) {
        return Err(Error::SingularWeights(cond));
    }
    delta
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(rhs))
        .map(|v| v.iter().copied().collect())
        .ok_or(Error::SingularWeights(cond))
}

fn check_positive(psi: &[f64], q: &[f64]) -> Result<()> {
    if let Some(v) = psi.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("psi component {v} is not positive")));
    }
    if let Some(v) = q.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("price {v} is not positive")));
    }
    Ok(())
}

/// Ψ_j − Σ_k Δ_jk w_k Ψ_k^γ / Σ_l w_l Ψ_l^γ with w = A q^{−α}.
pub fn social_residual(city: &City, psi: &[f64], qprice: &[f64]) -> Result<Vec<f64>> {
    check_positive(psi, qprice)?;
    let g = city.gamma[0];
    let u: Vec<f64> = city
        .utility_weights(qprice)
        .iter()
        .zip(psi)
        .map(|(w, p)| w * p.powf(g))
        .collect();
    let s: f64 = u.iter().sum();
    let delta = weights(city);
    Ok((0..city.j)
        .map(|r| psi[r] - (0..city.j).map(|c| delta[(r, c)] * u[c]).sum::<f64>() / s)
        .collect())
}

/// (c/mc^η) q^{α+η} − Σ_g L_g A Ψ^{γ_g} / Σ_k A_k q_k^{−α} Ψ_k^{γ_g}.
pub fn market_residual(city: &City, psi: &[f64], qprice: &[f64]) -> Result<Vec<f64>> {
    if city.is_elastic() {
        return Err(Error::EtaInfinite);
    }
    check_positive(psi, qprice)?;
    let eta = city.eta;
    let w = city.utility_weights(qprice);
    let mut out: Vec<f64> = (0..city.j)
        .map(|j| city.c[j] * (qprice[j] / city.mc[j]).powf(eta) * qprice[j].powf(city.alpha))
        .collect();
    for g in 0..2 {
        if city.l[g] == 0.0 {
            continue;
        }
        let gg = city.gamma[g];
        let s: f64 = (0..city.j).map(|k| w[k] * psi[k].powf(gg)).sum();
        for j in 0..city.j {
            out[j] -= city.l[g] * city.a[j] * psi[j].powf(gg) / s;
        }
    }
    Ok(out)
}

/// Social and market residuals side by side.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ResidualReport {
    pub social: Vec<f64>,
    pub market: Vec<f64>,
}

impl ResidualReport {
    pub fn max_norm(&self) -> f64 {
        self.social
            .iter()
            .chain(&self.market)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Both residual blocks; the market block is empty when η = ∞.
pub fn residuals(city: &City, psi: &[f64], qprice: &[f64]) -> Result<ResidualReport> {
    let social = social_residual(city, psi, qprice)?;
    let market = if city.is_elastic() {
        Vec::new()
    } else {
        market_residual(city, psi, qprice)?
    };
    Ok(ResidualReport { social, market })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Proper,
    Improper,
    Complex,
    Divergent,
    SingularEndpoint,
    /// Real point that fails the residual test or leaves the Ψ > 0 domain.
    Spurious,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Proper => "proper",
            Status::Improper => "improper",
            Status::Complex => "complex",
            Status::Divergent => "divergent",
            Status::SingularEndpoint => "singular-endpoint",
            Status::Spurious => "spurious",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Equilibrium {
    pub psi: Vec<f64>,
    pub x: Vec<f64>,
    pub qprice: Vec<f64>,
    pub status: Status,
    pub residual: f64,
    /// Largest imaginary part seen on Ψ (zero for real inputs).
    pub imag: f64,
}

impl Equilibrium {
    pub fn is_proper(&self) -> bool {
        self.status == Status::Proper
    }
    pub fn is_equilibrium(&self) -> bool {
        matches!(self.status, Status::Proper | Status::Improper)
    }
}

/// Applies the box and residual tests to already computed parts.
pub fn classify_parts(
    x: Vec<f64>,
    psi: Vec<f64>,
    qprice: Vec<f64>,
    residual: f64,
    tol: &Tolerances,
) -> Equilibrium {
    let j = x.len() as f64;
    let status = if !(residual <= tol.resid) {
        Status::Spurious
    } else {
        let in_box = x.iter().all(|&v| v >= -tol.boxed && v <= 1.0 + tol.boxed);
        let sum: f64 = x.iter().sum();
        if in_box && (sum - 1.0).abs() <= j * tol.boxed {
            Status::Proper
        } else {
            Status::Improper
        }
    };
    Equilibrium {
        psi,
        x,
        qprice,
        status,
        residual,
        imag: 0.0,
    }
}

/// Classifies a (possibly complex) Ψ with prices q.
pub fn classify(city: &City, psi: &[Complex64], qprice: &[f64], tol: &Tolerances) -> Equilibrium {
    let re: Vec<f64> = psi.iter().map(|z| z.re).collect();
    let imag = psi.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    let big = psi.iter().any(|z| !(z.norm() <= tol.diverge_cap))
        || qprice.iter().any(|q| !(q.abs() <= tol.diverge_cap));
    let shell = |status| Equilibrium {
        psi: re.clone(),
        x: vec![f64::NAN; re.len()],
        qprice: qprice.to_vec(),
        status,
        residual: f64::INFINITY,
        imag,
    };
    if big {
        return shell(Status::Divergent);
    }
    if imag > tol.boxed {
        return shell(Status::Complex);
    }
    let x = match x_from_psi(city, &re) {
        Ok(x) => x,
        Err(_) => return shell(Status::SingularEndpoint),
    };
    let residual = match residuals(city, &re, qprice) {
        Ok(r) => r.max_norm(),
        Err(_) => f64::INFINITY,
    };
    let mut e = classify_parts(x, re, qprice.to_vec(), residual, tol);
    e.imag = imag;
    e
}

/// Classifies a real Ψ.
pub fn classify_real(city: &City, psi: &[f64], qprice: &[f64], tol: &Tolerances) -> Equilibrium {
    let z: Vec<Complex64> = psi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    classify(city, &z, qprice, tol)
}
