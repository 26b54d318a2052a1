//! Polynomial systems built from equilibrium conditions, and start systems.

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::model::{weights, City};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{E, PI};
use std::fmt::Write as _;

/// Default cap on the number of paths of a total-degree run.
pub const PATH_BUDGET: u128 = 10_000_000;

/// Reduced fraction p/q.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub p: i64,
    pub q: i64,
}

impl Rational {
    pub fn value(&self) -> f64 {
        self.p as f64 / self.q as f64
    }
}

/// Best rational approximation by continued-fraction convergents.
pub fn rational_approx(gamma: f64, eps: f64, max_den: u64) -> Result<Rational> {
    let infeasible = Error::ApproximationInfeasible {
        gamma,
        eps,
        max_den,
    };
    if !(gamma >= 0.0) || !(eps > 0.0) || max_den < 1 || !gamma.is_finite() {
        return Err(infeasible);
    }
    let (mut h0, mut h1) = (1i128, gamma.floor() as i128);
    let (mut k0, mut k1) = (0i128, 1i128);
    let mut frac = gamma - gamma.floor();
    loop {
        if (gamma - h1 as f64 / k1 as f64).abs() < eps {
            return Ok(Rational {
                p: h1 as i64,
                q: k1 as i64,
            });
        }
        if frac < 1e-15 {
            return Err(infeasible);
        }
        let x = 1.0 / frac;
        let a = x.floor();
        frac = x - a;
        let a = a as i128;
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > max_den as i128 {
            return Err(infeasible);
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
    }
}

/// One monomial: coefficient and exponent vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: Complex64,
    pub exps: Vec<u32>,
}

impl Term {
    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }
}

/// Where a system came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolyMeta {
    pub p: Option<i64>,
    pub q: Option<i64>,
    pub source: String,
    pub bindings: BTreeMap<String, String>,
}

/// Sparse system of `nvars` polynomial equations in `nvars` unknowns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySystem {
    pub nvars: usize,
    pub equations: Vec<Vec<Term>>,
    pub meta: PolyMeta,
}

impl PolySystem {
    /// Merges like monomials and drops exact zeros.
    pub fn from_equations(nvars: usize, equations: Vec<Vec<Term>>, meta: PolyMeta) -> PolySystem {
        let equations = equations
            .into_iter()
            .map(|eq| {
                let mut acc: BTreeMap<Vec<u32>, Complex64> = BTreeMap::new();
                let mut order: Vec<Vec<u32>> = Vec::new();
                for t in eq {
                    debug_assert_eq!(t.exps.len(), nvars);
                    if !acc.contains_key(&t.exps) {
                        order.push(t.exps.clone());
                    }
                    *acc.entry(t.exps).or_insert(Complex64::new(0.0, 0.0)) += t.coeff;
                }
                order
                    .into_iter()
                    .filter_map(|e| {
                        let c = acc[&e];
                        (c != Complex64::new(0.0, 0.0)).then_some(Term { coeff: c, exps: e })
                    })
                    .collect()
            })
            .collect();
        PolySystem {
            nvars,
            equations,
            meta,
        }
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.equations
            .iter()
            .map(|eq| eq.iter().map(Term::degree).max().unwrap_or(0))
            .collect()
    }

    fn max_exp(&self) -> usize {
        self.equations
            .iter()
            .flatten()
            .flat_map(|t| t.exps.iter())
            .copied()
            .max()
            .unwrap_or(0) as usize
    }

    /// Generic evaluation, used with dual numbers.
    pub fn eval_generic<S: Scalar<Base = Complex64>>(&self, z: &[S]) -> Vec<S> {
        self.equations
            .iter()
            .map(|eq| {
                let mut acc = S::zero();
                for t in eq {
                    let mut m = S::from_base(t.coeff);
                    for (zi, &e) in z.iter().zip(&t.exps) {
                        if e > 0 {
                            m *= zi.powi(e as i32);
                        }
                    }
                    acc += m;
                }
                acc
            })
            .collect()
    }

    fn power_table(&self, z: &[Complex64]) -> Vec<Vec<Complex64>> {
        let m = self.max_exp();
        z.iter()
            .map(|&zi| {
                let mut row = Vec::with_capacity(m + 1);
                let mut p = Complex64::new(1.0, 0.0);
                for _ in 0..=m {
                    row.push(p);
                    p *= zi;
                }
                row
            })
            .collect()
    }

    pub fn eval(&self, z: &[Complex64]) -> Vec<Complex64> {
        let pw = self.power_table(z);
        self.equations
            .iter()
            .map(|eq| {
                eq.iter()
                    .map(|t| {
                        t.exps
                            .iter()
                            .enumerate()
                            .fold(t.coeff, |m, (i, &e)| m * pw[i][e as usize])
                    })
                    .sum()
            })
            .collect()
    }

    /// Values and Jacobian in one pass.
    pub fn eval_jac(&self, z: &[Complex64]) -> (Vec<Complex64>, DMatrix<Complex64>) {
        let n = self.nvars;
        let pw = self.power_table(z);
        let mut f = vec![Complex64::new(0.0, 0.0); self.equations.len()];
        let mut jac = DMatrix::zeros(self.equations.len(), n);
        for (r, eq) in self.equations.iter().enumerate() {
            for t in eq {
                f[r] += t
                    .exps
                    .iter()
                    .enumerate()
                    .fold(t.coeff, |m, (i, &e)| m * pw[i][e as usize]);
                for k in 0..n {
                    let ek = t.exps[k];
                    if ek == 0 {
                        continue;
                    }
                    let mut d = t.coeff * ek as f64 * pw[k][ek as usize - 1];
                    for (i, &e) in t.exps.iter().enumerate() {
                        if i != k {
                            d *= pw[i][e as usize];
                        }
                    }
                    jac[(r, k)] += d;
                }
            }
        }
        (f, jac)
    }

    /// Plain-text form: `eqIndex reCoeff imCoeff e1 … eJ`, hex floats.
    pub fn to_text(&self) -> String {
        let mut s = format!("# nvars {}\n", self.nvars);
        if let (Some(p), Some(q)) = (self.meta.p, self.meta.q) {
            let _ = writeln!(s, "# rational {p} {q}");
        }
        for (r, eq) in self.equations.iter().enumerate() {
            for t in eq {
                let _ = write!(s, "{} {} {}", r, hexfloat(t.coeff.re), hexfloat(t.coeff.im));
                for e in &t.exps {
                    let _ = write!(s, " {e}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<PolySystem> {
        let mut nvars: Option<usize> = None;
        let mut meta = PolyMeta::default();
        let mut equations: Vec<Vec<Term>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let f: Vec<&str> = rest.split_whitespace().collect();
                match f.as_slice() {
                    ["nvars", n] => nvars = n.parse().ok(),
                    ["rational", p, q] => {
                        meta.p = p.parse().ok();
                        meta.q = q.parse().ok();
                    }
                    _ => {}
                }
                continue;
            }
            let bad = |msg: &str| Error::Schema {
                row: i + 1,
                column: String::new(),
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 3 {
                return Err(bad("expected eqIndex reCoeff imCoeff exponents"));
            }
            let n = *nvars.get_or_insert(f.len() - 3);
            if f.len() != n + 3 {
                return Err(bad("exponent count differs from nvars"));
            }
            let r: usize = f[0].parse().map_err(|_| bad("bad equation index"))?;
            let re = parse_hexfloat(f[1]).ok_or_else(|| bad("bad real coefficient"))?;
            let im = parse_hexfloat(f[2]).ok_or_else(|| bad("bad imaginary coefficient"))?;
            let exps = f[3..]
                .iter()
                .map(|e| e.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad exponent"))?;
            if equations.len() <= r {
                equations.resize(r + 1, Vec::new());
            }
            equations[r].push(Term {
                coeff: Complex64::new(re, im),
                exps,
            });
        }
        let nvars = nvars.unwrap_or(equations.len());
        Ok(PolySystem {
            nvars,
            equations,
            meta,
        })
    }
}

/// Exact hexadecimal rendering of a binary64 value.
pub fn hexfloat(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 {
        (0, -1022)
    } else {
        (1, exp - 1023)
    };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() {
        String::new()
    } else {
        format!(".{digits}")
    };
    format!("{sign}0x{lead}{frac}p{e:+}")
}

/// Inverse of [`hexfloat`]; plain decimals are accepted too.
pub fn parse_hexfloat(s: &str) -> Option<f64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let apply = |v: f64| if neg { -v } else { v };
    let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) else {
        return match body {
            "inf" => Some(apply(f64::INFINITY)),
            "nan" => Some(f64::NAN),
            _ => body.parse::<f64>().ok().map(apply),
        };
    };
    let (m, e) = hex.split_once(['p', 'P'])?;
    let e: i64 = e.parse().ok()?;
    let (lead, frac) = m.split_once('.').unwrap_or((m, ""));
    if frac.len() > 13 {
        return None;
    }
    let lead = u64::from_str_radix(lead, 16).ok()?;
    let mant = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let bits = match lead {
        0 if mant == 0 => 0,
        0 if e == -1022 => mant,
        1 => {
            let be = e + 1023;
            if !(1..=2046).contains(&be) {
                return None;
            }
            ((be as u64) << 52) | mant
        }
        _ => return None,
    };
    Some(apply(f64::from_bits(bits)))
}

fn real(c: f64) -> Complex64 {
    Complex64::new(c, 0.0)
}

fn monomial(n: usize, pairs: &[(usize, u32)]) -> Vec<u32> {
    let mut e = vec![0; n];
    for &(i, k) in pairs {
        e[i] += k;
    }
    e
}

/// Σ_l w_l z_l^p z_j^q − Σ_k Δ_jk w_k z_k^p with w = A mc^{−α}.
pub fn build_static_system(city: &City, rat: Rational) -> PolySystem {
    let w: Vec<f64> = city.utility_weights(&city.mc);
    static_system_from(&weights(city), &w, rat, "static city")
}

pub(crate) fn static_system_from(
    delta: &DMatrix<f64>,
    w: &[f64],
    rat: Rational,
    source: &str,
) -> PolySystem {
    let n = w.len();
    let (p, q) = (rat.p as u32, rat.q as u32);
    let equations = (0..n)
        .map(|j| {
            let mut eq: Vec<Term> = (0..n)
                .map(|l| Term {
                    coeff: real(w[l]),
                    exps: monomial(n, &[(l, p), (j, q)]),
                })
                .collect();
            eq.extend((0..n).map(|k| Term {
                coeff: real(-delta[(j, k)] * w[k]),
                exps: monomial(n, &[(k, p)]),
            }));
            eq
        })
        .collect();
    PolySystem::from_equations(
        n,
        equations,
        PolyMeta {
            p: Some(rat.p),
            q: Some(rat.q),
            source: source.into(),
            bindings: BTreeMap::new(),
        },
    )
}

/// Kind of start set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    UnitCircle,
    /// Sign patterns of the homogeneous city with Δ = e·ones.
    Homogeneous,
    /// Same, with Δ = (J e⁻¹)·ones.
    HomogeneousRowSum,
    /// Uniform-on-support points of the decoupled city (Δ = I).
    Decoupled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StartSet {
    pub points: Vec<Vec<Complex64>>,
    pub kind: StartKind,
}

/// z_j^{d_j} − 1 and all Π d_j roots.
pub fn start_total_degree(degrees: &[u32], budget: u128) -> Result<(PolySystem, StartSet)> {
    let n = degrees.len();
    let needed: u128 = degrees.iter().map(|&d| d as u128).product();
    if needed > budget {
        return Err(Error::PathBudgetExceeded { needed, budget });
    }
    let equations = degrees
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            vec![
                Term {
                    coeff: real(1.0),
                    exps: monomial(n, &[(j, d)]),
                },
                Term {
                    coeff: real(-1.0),
                    exps: vec![0; n],
                },
            ]
        })
        .collect();
    let g = PolySystem::from_equations(
        n,
        equations,
        PolyMeta {
            source: "total degree start".into(),
            ..Default::default()
        },
    );
    let roots: Vec<Vec<Complex64>> = degrees
        .iter()
        .map(|&d| {
            (0..d)
                .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / d as f64))
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(needed as usize);
    let mut idx = vec![0usize; n];
    if n > 0 && degrees.iter().all(|&d| d > 0) {
        loop {
            points.push((0..n).map(|j| roots[j][idx[j]]).collect());
            let mut k = n;
            loop {
                if k == 0 {
                    return Ok((
                        g,
                        StartSet {
                            points,
                            kind: StartKind::UnitCircle,
                        },
                    ));
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < degrees[k] as usize {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
    Ok((
        g,
        StartSet {
            points,
            kind: StartKind::UnitCircle,
        },
    ))
}

/// Constant c of the homogeneous city Δ = c·ones for the given start kind.
pub fn homogeneous_level(kind: StartKind, j: usize) -> f64 {
    match kind {
        StartKind::HomogeneousRowSum => j as f64 * (-1.0f64).exp(),
        _ => E,
    }
}

/// Homogeneous-city system and its residual-verified sign-pattern roots.
pub fn start_homogeneous(city: &City, rat: Rational, kind: StartKind) -> (PolySystem, StartSet) {
    let n = city.j;
    let level = homogeneous_level(kind, n);
    let delta = DMatrix::from_element(n, n, level);
    let sys = static_system_from(&delta, &vec![1.0; n], rat, "homogeneous city");
    let r = level.powf(1.0 / rat.q as f64);
    let mut points = Vec::new();
    for mask in 0..(1u64 << n) {
        let z: Vec<Complex64> = (0..n)
            .map(|i| real(if mask >> i & 1 == 1 { -r } else { r }))
            .collect();
        let f = sys.eval(&z);
        let scale = 1.0 + level * n as f64 * r.powi(rat.p as i32);
        if f.iter().all(|v| v.norm() <= 1e-10 * scale) {
            points.push(z);
        }
    }
    (sys, StartSet { points, kind })
}

/// Σ_{p=0}^{n} y^p / p!.
pub fn truncated_exp<S: Scalar>(y: S, n: usize) -> S {
    let mut acc = S::one();
    let mut term = S::one();
    for p in 1..=n {
        term = term * y.scale(1.0 / p as f64);
        acc += term;
    }
    acc
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficients c_m of T_n(a + γΨ) = Σ_m c_m Ψ^m.
pub fn maclaurin_coefficients(a: f64, gamma: f64, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n + 1];
    let mut fact = 1.0;
    for p in 0..=n {
        if p > 0 {
            fact *= p as f64;
        }
        for m in 0..=p {
            c[m] += binomial(p, m) * a.powi((p - m) as i32) * gamma.powi(m as i32) / fact;
        }
    }
    c
}

/// Σ_ℓ T_n(A_ℓ + γΨ_ℓ) Ψ_j − Σ_k Δ_jk (N¹/s_k) T_n(A_k + γΨ_k).
pub fn build_maclaurin_system(city: &City, n: usize) -> Result<PolySystem> {
    if n > 20 {
        return Err(Error::OverflowRisk(n));
    }
    if n == 0 {
        return Err(Error::Domain("expansion order must be at least 1".into()));
    }
    let j = city.j;
    let delta = weights(city);
    let coeffs: Vec<Vec<f64>> = city
        .a
        .iter()
        .map(|&a| maclaurin_coefficients(a, city.gamma[0], n))
        .collect();
    let equations = (0..j)
        .map(|r| {
            let mut eq = Vec::new();
            for l in 0..j {
                for (m, &c) in coeffs[l].iter().enumerate() {
                    eq.push(Term {
                        coeff: real(c),
                        exps: monomial(j, &[(l, m as u32), (r, 1)]),
                    });
                }
            }
            for k in 0..j {
                let wk = delta[(r, k)] * city.l[0] / city.surface[k];
                for (m, &c) in coeffs[k].iter().enumerate() {
                    eq.push(Term {
                        coeff: real(-wk * c),
                        exps: monomial(j, &[(k, m as u32)]),
                    });
                }
            }
            eq
        })
        .collect();
    let mut bindings = BTreeMap::new();
    bindings.insert("order".into(), n.to_string());
    Ok(PolySystem::from_equations(
        j,
        equations,
        PolyMeta {
            source: "maclaurin".into(),
            bindings,
            ..Default::default()
        },
    ))
}
