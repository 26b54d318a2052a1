//! Neighborhoods nested in communities nested in closed regions.

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::homotopies::{solve_amenity_homotopy, SolveConfig};
use crate::linalg::{log_det, max_abs};
use crate::model::{fmt_f64, City};
use crate::par;
use crate::polysys::rational_approx;
use crate::tracker::{ad_jac_t, ad_jac_x, dedup_groups, track, Homotopy, PathStatus, Residual};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub id: String,
    pub community: usize,
    pub centroid: [f64; 2],
    pub amenity: f64,
    pub mc: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub id: String,
    pub region: usize,
    /// Indices into `NestedCity::neighborhoods`.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub communities: Vec<usize>,
    /// Group populations (w, b).
    pub population: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedCity {
    pub neighborhoods: Vec<Neighborhood>,
    pub communities: Vec<Community>,
    pub regions: Vec<Region>,
    pub theta: f64,
    /// (γ^w, γ^b).
    pub gamma: [f64; 2],
    pub xi: f64,
    pub alpha: f64,
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl NestedCity {
    /// Builds the hierarchy from flat rows; regions get populations by neighborhood count.
    pub fn from_rows(rows: &[NeighborhoodRow], total: [f64; 2]) -> Result<NestedCity> {
        let mut comm_idx: BTreeMap<String, usize> = BTreeMap::new();
        let mut region_idx: BTreeMap<String, usize> = BTreeMap::new();
        let mut communities: Vec<Community> = Vec::new();
        let mut regions: Vec<Region> = Vec::new();
        let mut neighborhoods = Vec::new();
        for (k, r) in rows.iter().enumerate() {
            if r.community_id.trim().is_empty() || r.region_id.trim().is_empty() {
                return Err(Error::Hierarchy(format!(
                    "neighborhood {} has no community or region",
                    r.neighborhood_id
                )));
            }
            let reg = *region_idx.entry(r.region_id.clone()).or_insert_with(|| {
                regions.push(Region {
                    id: r.region_id.clone(),
                    communities: vec![],
                    population: [0.0; 2],
                });
                regions.len() - 1
            });
            let ci = *comm_idx.entry(r.community_id.clone()).or_insert_with(|| {
                communities.push(Community {
                    id: r.community_id.clone(),
                    region: reg,
                    members: vec![],
                });
                regions[reg].communities.push(communities.len() - 1);
                communities.len() - 1
            });
            if communities[ci].region != reg {
                return Err(Error::Hierarchy(format!(
                    "community {} appears in regions {} and {}",
                    r.community_id, regions[communities[ci].region].id, r.region_id
                )));
            }
            communities[ci].members.push(k);
            neighborhoods.push(Neighborhood {
                id: r.neighborhood_id.clone(),
                community: ci,
                centroid: [r.centroid_x, r.centroid_y],
                amenity: r.log_amenity.exp(),
                mc: r.mc,
                c: r.c,
            });
        }
        let n = neighborhoods.len() as f64;
        for reg in regions.iter_mut() {
            let count: usize = reg
                .communities
                .iter()
                .map(|&c| communities[c].members.len())
                .sum();
            reg.population = [total[0] * count as f64 / n, total[1] * count as f64 / n];
        }
        let nc = NestedCity {
            neighborhoods,
            communities,
            regions,
            theta: 1.0,
            gamma: [2.003, 0.0],
            xi: 2.0,
            alpha: 0.3,
        };
        nc.validate()?;
        Ok(nc)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![0usize; self.neighborhoods.len()];
        for (ci, c) in self.communities.iter().enumerate() {
            if c.members.is_empty() {
                return Err(Error::Hierarchy(format!("community {} is empty", c.id)));
            }
            for &m in &c.members {
                if self.neighborhoods.get(m).map(|n| n.community) != Some(ci) {
                    return Err(Error::Hierarchy(format!(
                        "neighborhood {m} not in community {}",
                        c.id
                    )));
                }
                seen[m] += 1;
            }
            if !self
                .regions
                .get(c.region)
                .is_some_and(|r| r.communities.contains(&ci))
            {
                return Err(Error::Hierarchy(format!(
                    "community {} has no region",
                    c.id
                )));
            }
        }
        if let Some(k) = seen.iter().position(|&s| s != 1) {
            return Err(Error::Hierarchy(format!(
                "neighborhood {} is orphaned",
                self.neighborhoods[k].id
            )));
        }
        if !(self.theta > 0.0) {
            return Err(Error::Domain("theta must be positive".into()));
        }
        Ok(())
    }

    pub fn n_neighborhoods(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn n_communities(&self) -> usize {
        self.communities.len()
    }

    /// D: neighborhoods × communities, one 1 per row.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_neighborhoods(), self.n_communities(), |j, i| {
            if self.neighborhoods[j].community == i {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn community_centroid(&self, i: usize) -> [f64; 2] {
        let m = &self.communities[i].members;
        let k = m.len() as f64;
        let s = m.iter().fold([0.0, 0.0], |a, &j| {
            let c = self.neighborhoods[j].centroid;
            [a[0] + c[0], a[1] + c[1]]
        });
        [s[0] / k, s[1] / k]
    }

    /// Distances between the member neighborhoods of community `i`.
    pub fn neighborhood_distances(&self, i: usize) -> Vec<Vec<f64>> {
        let m = &self.communities[i].members;
        m.iter()
            .map(|&a| {
                m.iter()
                    .map(|&b| {
                        euclid(
                            self.neighborhoods[a].centroid,
                            self.neighborhoods[b].centroid,
                        )
                    })
                    .collect()
            })
            .collect()
    }

    /// Distances between the communities of region `r`.
    pub fn community_distances(&self, r: usize) -> Vec<Vec<f64>> {
        let cs = &self.regions[r].communities;
        let cent: Vec<[f64; 2]> = cs.iter().map(|&c| self.community_centroid(c)).collect();
        cent.iter()
            .map(|&a| cent.iter().map(|&b| euclid(a, b)).collect())
            .collect()
    }

    /// Within-community city at η = ∞ with θ folded into amenity, price and interaction exponents.
    pub fn community_city(&self, i: usize) -> City {
        let m = &self.communities[i].members;
        let th = self.theta;
        let mut city = City::line(m.len(), self.gamma[0] * th, self.xi);
        city.dist = self.neighborhood_distances(i);
        city.a = m
            .iter()
            .map(|&j| self.neighborhoods[j].amenity.powf(th))
            .collect();
        city.mc = m.iter().map(|&j| self.neighborhoods[j].mc).collect();
        city.c = m.iter().map(|&j| self.neighborhoods[j].c).collect();
        city.alpha = self.alpha * th;
        city.gamma = [self.gamma[0] * th, self.gamma[1] * th];
        city
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "neighborhood_id,community_id,region_id,centroid_x,centroid_y,log_amenity,mc,c\n",
        );
        for n in &self.neighborhoods {
            let c = &self.communities[n.community];
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                n.id,
                c.id,
                self.regions[c.region].id,
                fmt_f64(n.centroid[0]),
                fmt_f64(n.centroid[1]),
                fmt_f64(n.amenity.ln()),
                fmt_f64(n.mc),
                fmt_f64(n.c)
            ));
        }
        s
    }
}

/// One input row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodRow {
    pub neighborhood_id: String,
    pub community_id: String,
    pub region_id: String,
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub log_amenity: f64,
    pub mc: f64,
    pub c: f64,
}

const COLUMNS: [&str; 8] = [
    "neighborhood_id",
    "community_id",
    "region_id",
    "centroid_x",
    "centroid_y",
    "log_amenity",
    "mc",
    "c",
];

pub fn parse_neighborhoods(text: &str, total: [f64; 2]) -> Result<NestedCity> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema {
            row: 0,
            column: String::new(),
            msg: e.to_string(),
        })?
        .clone();
    for col in COLUMNS {
        if !header.iter().any(|h| h == col) {
            return Err(Error::Schema {
                row: 0,
                column: col.into(),
                msg: "missing column".into(),
            });
        }
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.deserialize::<NeighborhoodRow>().enumerate() {
        let row = rec.map_err(|e| {
            let column = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err
                    .field()
                    .and_then(|f| header.get(f as usize))
                    .unwrap_or_default()
                    .to_string(),
                _ => String::new(),
            };
            Error::Schema {
                row: k + 1,
                column,
                msg: e.to_string(),
            }
        })?;
        for (name, v) in [("mc", row.mc), ("c", row.c)] {
            if !(v > 0.0) {
                return Err(Error::Schema {
                    row: k + 1,
                    column: name.into(),
                    msg: "must be positive".into(),
                });
            }
        }
        rows.push(row);
    }
    NestedCity::from_rows(&rows, total)
}

/// Reads the neighborhood CSV; city totals default to one per group.
pub fn ingest_neighborhoods(path: &Path) -> Result<NestedCity> {
    parse_neighborhoods(&std::fs::read_to_string(path)?, [1.0, 1.0])
}

/// Seeded synthetic city with the given hierarchy sizes.
pub fn synthetic_city(
    seed: u64,
    n_regions: usize,
    n_communities: usize,
    n_neighborhoods: usize,
) -> NestedCity {
    assert!(n_regions >= 1 && n_communities >= n_regions && n_neighborhoods >= n_communities);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.5).expect("valid sd");
    let mut sizes = vec![1usize; n_communities];
    let cap = 9;
    assert!(n_neighborhoods <= cap * n_communities);
    let mut left = n_neighborhoods - n_communities;
    while left > 0 {
        let k = rng.gen_range(0..n_communities);
        if sizes[k] < cap {
            sizes[k] += 1;
            left -= 1;
        }
    }
    let per_region: Vec<usize> = (0..n_regions)
        .map(|r| n_communities / n_regions + usize::from(r < n_communities % n_regions))
        .collect();
    let side = (n_regions as f64).sqrt().ceil() as usize;
    let mut rows = Vec::new();
    let mut ci = 0;
    for (r, &nr) in per_region.iter().enumerate() {
        let origin = [(r % side) as f64 * 12.0, (r / side) as f64 * 12.0];
        let cside = (nr as f64).sqrt().ceil() as usize;
        for k in 0..nr {
            let cc = [
                origin[0] + (k % cside) as f64 * 3.0 + rng.gen_range(-0.3..0.3),
                origin[1] + (k / cside) as f64 * 3.0 + rng.gen_range(-0.3..0.3),
            ];
            let mut offsets: Vec<(usize, usize)> =
                (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).collect();
            offsets.shuffle(&mut rng);
            for (m, &(a, b)) in offsets.iter().take(sizes[ci]).enumerate() {
                rows.push(NeighborhoodRow {
                    neighborhood_id: format!("n{ci:03}_{m}"),
                    community_id: format!("c{ci:03}"),
                    region_id: format!("r{r}"),
                    centroid_x: cc[0] + a as f64 * 0.8 + rng.gen_range(-0.1..0.1),
                    centroid_y: cc[1] + b as f64 * 0.8 + rng.gen_range(-0.1..0.1),
                    log_amenity: normal.sample(&mut rng),
                    mc: 1.0,
                    c: 1.0,
                });
            }
            ci += 1;
        }
    }
    NestedCity::from_rows(&rows, [1.0, 1.0]).expect("generated hierarchy is valid")
}

/// One within-community equilibrium at η = ∞.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MenuEntry {
    /// Near interactions Ψ_ij.
    pub psi: Vec<f64>,
    /// Group-w shares P^w_{j|i}.
    pub shares: Vec<f64>,
    /// U^w_i(1) and U^b_i(1).
    pub welfare: [f64; 2],
    pub residual: f64,
}

/// [Σ_j (A q^{−α} Ψ^γ)^θ]^{1/θ}.
pub fn welfare(nc: &NestedCity, i: usize, psi: &[f64], q: &[f64], gamma: f64) -> f64 {
    let th = nc.theta;
    let m = &nc.communities[i].members;
    m.iter()
        .enumerate()
        .map(|(k, &j)| {
            (nc.neighborhoods[j].amenity * q[k].powf(-nc.alpha) * psi[k].powf(gamma)).powf(th)
        })
        .sum::<f64>()
        .powf(1.0 / th)
}

/// Near interactions in levels, Ψ_ij = Σ_k e^{−ξ d_jk} L_ik.
pub fn near_levels(nc: &NestedCity, i: usize, levels: &[f64]) -> Vec<f64> {
    let d = nc.neighborhood_distances(i);
    (0..levels.len())
        .map(|j| {
            (0..levels.len())
                .map(|k| (-nc.xi * d[j][k]).exp() * levels[k])
                .sum()
        })
        .collect()
}

/// P_{j|i} for one group.
pub fn conditional_shares(
    nc: &NestedCity,
    i: usize,
    psi: &[f64],
    q: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let m = &nc.communities[i].members;
    let v: Vec<f64> = m
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            (nc.neighborhoods[j].amenity * q[k].powf(-nc.alpha) * psi[k].powf(gamma)).powf(nc.theta)
        })
        .collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Distinct within-community equilibria by H_A.
pub fn community_equilibria(
    nc: &NestedCity,
    i: usize,
    cfg: &SolveConfig,
) -> Result<Vec<MenuEntry>> {
    let city = nc.community_city(i);
    let rat = rational_approx(city.gamma[0], 1e-12, 1_000_000)?;
    let sol = solve_amenity_homotopy(&city, rat, cfg)?;
    let mc: Vec<f64> = nc.communities[i]
        .members
        .iter()
        .map(|&j| nc.neighborhoods[j].mc)
        .collect();
    Ok(sol
        .proper()
        .into_iter()
        .map(|e| MenuEntry {
            psi: e.psi.clone(),
            shares: e.x.clone(),
            welfare: [
                welfare(nc, i, &e.psi, &mc, nc.gamma[0]),
                welfare(nc, i, &e.psi, &mc, nc.gamma[1]),
            ],
            residual: e.residual,
        })
        .collect())
}

/// Menus of every community, fanned out over communities.
pub fn all_menus(nc: &NestedCity, cfg: &SolveConfig) -> Vec<Result<Vec<MenuEntry>>> {
    let idx: Vec<usize> = (0..nc.n_communities()).collect();
    par::map(cfg.exec, &idx, |&i| community_equilibria(nc, i, cfg))
}

/// N^e = Π N_i^e.
pub fn combination_count(sizes: &[usize]) -> u128 {
    sizes
        .iter()
        .fold(1u128, |acc, &s| acc.saturating_mul(s as u128))
}

/// Every selection when N^e ≤ budget, else `budget` seeded draws.
pub fn selections(sizes: &[usize], budget: usize, seed: u64) -> Vec<Vec<usize>> {
    let total = combination_count(sizes);
    if total <= budget as u128 {
        let mut out = Vec::with_capacity(total as usize);
        let mut cur = vec![0usize; sizes.len()];
        for _ in 0..total {
            out.push(cur.clone());
            for k in (0..cur.len()).rev() {
                cur[k] += 1;
                if cur[k] < sizes[k] {
                    break;
                }
                cur[k] = 0;
            }
        }
        out
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..budget)
            .map(|_| sizes.iter().map(|&s| rng.gen_range(0..s)).collect())
            .collect()
    }
}

/// Region equilibrium for fixed community welfare.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEquilibrium {
    pub psi_c: Vec<f64>,
    /// Community populations of groups w and b.
    pub population: [Vec<f64>; 2],
}

/// Community-level choice probabilities in region `r`.
pub fn community_probabilities(
    nc: &NestedCity,
    r: usize,
    psi_c: &[f64],
    u: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let th = nc.theta;
    let v: Vec<f64> = (0..nc.regions[r].communities.len())
        .map(|k| (psi_c[k].powf(gamma) * u[k]).powf(th))
        .collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Solves Ψ_i = Σ_ι e^{−ξ d} Ψ_ι^{γθ} U_ι^θ / Σ_k Ψ_k^{γθ} U_k^θ within region `r`.
///
/// `welfare[k]` is (U^w, U^b) of the k-th community of the region.
pub fn region_fixed_point(
    nc: &NestedCity,
    r: usize,
    welfare: &[[f64; 2]],
    cfg: &SolveConfig,
) -> Result<Vec<RegionEquilibrium>> {
    let reg = &nc.regions[r];
    let n = reg.communities.len();
    if welfare.len() != n {
        return Err(Error::Config(format!(
            "region {} needs {} welfare pairs",
            reg.id, n
        )));
    }
    let th = nc.theta;
    let mut city = City::line(n, nc.gamma[0] * th, nc.xi);
    city.dist = nc.community_distances(r);
    city.a = welfare.iter().map(|u| u[0].powf(th)).collect();
    city.alpha = 0.0;
    let rat = rational_approx(city.gamma[0], 1e-12, 1_000_000)?;
    let sol = solve_amenity_homotopy(&city, rat, cfg)?;
    let uw: Vec<f64> = welfare.iter().map(|u| u[0]).collect();
    let ub: Vec<f64> = welfare.iter().map(|u| u[1]).collect();
    Ok(sol
        .proper()
        .into_iter()
        .map(|e| {
            let pw = community_probabilities(nc, r, &e.psi, &uw, nc.gamma[0]);
            let pb = community_probabilities(nc, r, &e.psi, &ub, nc.gamma[1]);
            RegionEquilibrium {
                psi_c: e.psi.clone(),
                population: [
                    pw.iter().map(|p| p * reg.population[0]).collect(),
                    pb.iter().map(|p| p * reg.population[1]).collect(),
                ],
            }
        })
        .collect())
}

/// Flat logit over all (community, neighborhood) pairs of region `r` with V = A q^{−α} Ψ_ij^γ Ψ_i^γ.
pub fn choice_probabilities_direct(
    nc: &NestedCity,
    r: usize,
    psi_c: &[f64],
    psi_n: &[Vec<f64>],
    q: &[Vec<f64>],
    gamma: f64,
) -> Vec<Vec<f64>> {
    let th = nc.theta;
    let v: Vec<Vec<f64>> = nc.regions[r]
        .communities
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            nc.communities[i]
                .members
                .iter()
                .enumerate()
                .map(|(m, &j)| {
                    (nc.neighborhoods[j].amenity
                        * q[k][m].powf(-nc.alpha)
                        * psi_n[k][m].powf(gamma)
                        * psi_c[k].powf(gamma))
                    .powf(th)
                })
                .collect()
        })
        .collect();
    let s: f64 = v.iter().flatten().sum();
    v.into_iter()
        .map(|row| row.into_iter().map(|x| x / s).collect())
        .collect()
}

/// Same probabilities through P_i(Ψ_i^{γθ} U_i^θ) · P_{j|i}.
pub fn choice_probabilities_factorized(
    nc: &NestedCity,
    r: usize,
    psi_c: &[f64],
    psi_n: &[Vec<f64>],
    q: &[Vec<f64>],
    gamma: f64,
) -> Vec<Vec<f64>> {
    let cs = &nc.regions[r].communities;
    let u: Vec<f64> = cs
        .iter()
        .enumerate()
        .map(|(k, &i)| welfare(nc, i, &psi_n[k], &q[k], gamma))
        .collect();
    let pc = community_probabilities(nc, r, psi_c, &u, gamma);
    cs.iter()
        .enumerate()
        .map(|(k, &i)| {
            conditional_shares(nc, i, &psi_n[k], &q[k], gamma)
                .into_iter()
                .map(|p| p * pc[k])
                .collect()
        })
        .collect()
}

/// Stacked citywide state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CitywideState {
    pub lw: Vec<f64>,
    pub lb: Vec<f64>,
    pub uw: Vec<f64>,
    pub ub: Vec<f64>,
    pub psi_c: Vec<f64>,
    pub psi_n: Vec<f64>,
    pub q_n: Vec<f64>,
    pub zeta: f64,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    nc: usize,
    jn: usize,
}

impl Layout {
    fn block(&self, k: usize) -> Range<usize> {
        let s = [
            0,
            self.nc,
            2 * self.nc,
            3 * self.nc,
            4 * self.nc,
            5 * self.nc,
            5 * self.nc + self.jn,
            5 * self.nc + 2 * self.jn,
        ];
        s[k]..s[k + 1]
    }
    fn dim(&self) -> usize {
        5 * self.nc + 2 * self.jn
    }
}

const LW: usize = 0;
const LB: usize = 1;
const UW: usize = 2;
const UB: usize = 3;
const PC: usize = 4;
const PN: usize = 5;
const QN: usize = 6;

impl CitywideState {
    pub fn to_vec(&self) -> Vec<f64> {
        [
            &self.lw,
            &self.lb,
            &self.uw,
            &self.ub,
            &self.psi_c,
            &self.psi_n,
            &self.q_n,
        ]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect()
    }

    fn from_vec(nc: &NestedCity, y: &[f64], zeta: f64) -> CitywideState {
        let l = Layout {
            nc: nc.n_communities(),
            jn: nc.n_neighborhoods(),
        };
        let b = |k| y[l.block(k)].to_vec();
        CitywideState {
            lw: b(LW),
            lb: b(LB),
            uw: b(UW),
            ub: b(UB),
            psi_c: b(PC),
            psi_n: b(PN),
            q_n: b(QN),
            zeta,
        }
    }

    /// State at ζ = 0 from one menu entry per community and one equilibrium per region.
    pub fn assemble(
        nc: &NestedCity,
        entries: &[&MenuEntry],
        regions: &[&RegionEquilibrium],
    ) -> CitywideState {
        let ncom = nc.n_communities();
        let mut s = CitywideState {
            lw: vec![0.0; ncom],
            lb: vec![0.0; ncom],
            uw: entries.iter().map(|e| e.welfare[0]).collect(),
            ub: entries.iter().map(|e| e.welfare[1]).collect(),
            psi_c: vec![0.0; ncom],
            psi_n: vec![0.0; nc.n_neighborhoods()],
            q_n: nc.neighborhoods.iter().map(|n| n.mc).collect(),
            zeta: 0.0,
        };
        for (i, c) in nc.communities.iter().enumerate() {
            for (k, &j) in c.members.iter().enumerate() {
                s.psi_n[j] = entries[i].psi[k];
            }
        }
        for (r, reg) in nc.regions.iter().enumerate() {
            for (k, &i) in reg.communities.iter().enumerate() {
                s.psi_c[i] = regions[r].psi_c[k];
                s.lw[i] = regions[r].population[0][k];
                s.lb[i] = regions[r].population[1][k];
            }
        }
        s
    }
}

/// Residual blocks (e_Lw, e_Lb, e_Uw, e_Ub, f_c, f_n, m_n) over the stacked state, t = ζ.
pub struct CitywideH<'a> {
    pub nc: &'a NestedCity,
    near: Vec<DMatrix<f64>>,
    far: Vec<DMatrix<f64>>,
    layout: Layout,
}

impl<'a> CitywideH<'a> {
    pub fn new(nc: &'a NestedCity) -> CitywideH<'a> {
        let near = (0..nc.n_communities())
            .map(|i| {
                let d = nc.neighborhood_distances(i);
                DMatrix::from_fn(d.len(), d.len(), |a, b| (-nc.xi * d[a][b]).exp())
            })
            .collect();
        let far = (0..nc.regions.len())
            .map(|r| {
                let d = nc.community_distances(r);
                DMatrix::from_fn(d.len(), d.len(), |a, b| (-nc.xi * d[a][b]).exp())
            })
            .collect();
        CitywideH {
            nc,
            near,
            far,
            layout: Layout {
                nc: nc.n_communities(),
                jn: nc.n_neighborhoods(),
            },
        }
    }

    fn blk(&self, m: &DMatrix<f64>, r: usize, c: usize) -> DMatrix<f64> {
        let (rr, cc) = (self.layout.block(r), self.layout.block(c));
        m.view((rr.start, cc.start), (rr.len(), cc.len()))
            .into_owned()
    }

    /// Φ and B of (1 − Φ) dq/dζ = B, plus the secondary tangent blocks.
    pub fn phi_b(&self, y: &[f64], zeta: f64) -> Option<(DMatrix<f64>, DVector<f64>, Vec<f64>)> {
        let j = ad_jac_x(self, y, zeta);
        let jt = ad_jac_t(self, y, zeta);
        let g = |r, c| self.blk(&j, r, c);
        let inv_solve = |a: DMatrix<f64>, b: &DMatrix<f64>| a.lu().solve(b);
        // implicit relations: ∂(explicit)/∂· = −∂e/∂·
        let dlw_duw = -g(LW, UW);
        let dlw_dpc = -g(LW, PC);
        let dlb_dub = -g(LB, UB);
        let dlb_dpc = -g(LB, PC);
        let duw_dpn = -g(UW, PN);
        let duw_dq = -g(UW, QN);
        let dub_dpn = -g(UB, PN);
        let dub_dq = -g(UB, QN);
        let fn_pn_inv_fn_q = inv_solve(g(PN, PN), &g(PN, QN))?;
        let fc_pc_inv_fc_uw = inv_solve(g(PC, PC), &g(PC, UW))?;
        let fw = -&duw_dpn * &fn_pn_inv_fn_q + duw_dq;
        let fb = -&dub_dpn * &fn_pn_inv_fn_q + dub_dq;
        let ew = &dlw_duw - &dlw_dpc * &fc_pc_inv_fc_uw;
        let gw = &ew * &fw;
        let gb = &dlb_dub * &fb - &dlb_dpc * (&fc_pc_inv_fc_uw * &fw);
        let mq = g(QN, QN).lu();
        let inner = g(QN, LW) * &gw + g(QN, LB) * &gb - g(QN, PN) * &fn_pn_inv_fn_q;
        let phi = -mq.solve(&inner)?;
        let mz = DVector::from_column_slice(&jt[self.layout.block(QN)]);
        let b = -mq.solve(&mz)?;
        let n = phi.nrows();
        let dq = (DMatrix::identity(n, n) - &phi).lu().solve(&b)?;
        let duw = &fw * &dq;
        let dub = &fb * &dq;
        let dlw = &gw * &dq;
        let dlb = &gb * &dq;
        let dpc = -(&fc_pc_inv_fc_uw * &duw);
        let dpn = -(&fn_pn_inv_fn_q * &dq);
        let tangent: Vec<f64> = [&dlw, &dlb, &duw, &dub, &dpc, &dpn, &dq]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect();
        Some((phi, b, tangent))
    }

    /// −G_y⁻¹ G_ζ on the full stacked system.
    pub fn ift_tangent(&self, y: &[f64], zeta: f64) -> Option<Vec<f64>> {
        let jt: Vec<f64> = ad_jac_t(self, y, zeta).into_iter().map(|v| -v).collect();
        crate::linalg::solve(&ad_jac_x(self, y, zeta), &jt)
    }

    /// (min |λ(1 − Φ)|, log|det(1 − Φ)|).
    pub fn certificate(&self, y: &[f64], zeta: f64) -> (f64, f64) {
        match self.phi_b(y, zeta) {
            Some((phi, _, _)) => {
                let m = DMatrix::identity(phi.nrows(), phi.nrows()) - phi;
                // unbounded Schur iterations can stall on near-defective matrices
                let min = match m.clone().try_schur(1e-14, 10_000) {
                    Some(s) => s
                        .complex_eigenvalues()
                        .iter()
                        .fold(f64::INFINITY, |a, z| a.min(z.norm())),
                    None => f64::NAN,
                };
                (min, log_det(&m).1)
            }
            None => (0.0, f64::NEG_INFINITY),
        }
    }

    /// Max-norm of the f_c, f_n and m_n blocks.
    pub fn equilibrium_residuals(&self, y: &[f64], zeta: f64) -> [f64; 3] {
        let r = Homotopy::eval(self, y, zeta);
        [
            max_abs(&r[self.layout.block(PC)]),
            max_abs(&r[self.layout.block(PN)]),
            max_abs(&r[self.layout.block(QN)]),
        ]
    }
}

impl Residual<f64> for CitywideH<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }
    fn residual<S: Scalar<Base = f64>>(&self, y: &[S], zeta: S) -> Vec<S> {
        let nc = self.nc;
        let l = self.layout;
        let th = nc.theta;
        let at = |k: usize, i: usize| y[l.block(k).start + i];
        let mut out = vec![S::zero(); l.dim()];
        // within communities
        for (i, c) in nc.communities.iter().enumerate() {
            let m = c.members.len();
            let mut vw = Vec::with_capacity(m);
            let mut vb = Vec::with_capacity(m);
            for &j in &c.members {
                let nb = &nc.neighborhoods[j];
                let base = at(QN, j).powf(-nc.alpha).scale(nb.amenity);
                let psi = at(PN, j);
                vw.push((base * psi.powf(nc.gamma[0])).powf(th));
                vb.push((base * psi.powf(nc.gamma[1])).powf(th));
            }
            let (mut sw, mut sb) = (S::zero(), S::zero());
            for k in 0..m {
                sw += vw[k];
                sb += vb[k];
            }
            out[l.block(UW).start + i] = at(UW, i) - sw.powf(1.0 / th);
            out[l.block(UB).start + i] = at(UB, i) - sb.powf(1.0 / th);
            for (a, &ja) in c.members.iter().enumerate() {
                let mut f = at(PN, ja);
                for b in 0..m {
                    f -= (vw[b] / sw).scale(self.near[i][(a, b)]);
                }
                out[l.block(PN).start + ja] = f;
                let nb = &nc.neighborhoods[ja];
                let dem = at(LW, i) * vw[a] / sw + at(LB, i) * vb[a] / sb;
                out[l.block(QN).start + ja] =
                    at(QN, ja).ln() - S::from_f64(nb.mc.ln()) - zeta * dem.scale(1.0 / nb.c).ln();
            }
        }
        // across communities of each region
        for (r, reg) in nc.regions.iter().enumerate() {
            let n = reg.communities.len();
            let vw: Vec<S> = reg
                .communities
                .iter()
                .map(|&i| (at(PC, i).powf(nc.gamma[0]) * at(UW, i)).powf(th))
                .collect();
            let vb: Vec<S> = reg
                .communities
                .iter()
                .map(|&i| (at(PC, i).powf(nc.gamma[1]) * at(UB, i)).powf(th))
                .collect();
            let (mut sw, mut sb) = (S::zero(), S::zero());
            for k in 0..n {
                sw += vw[k];
                sb += vb[k];
            }
            for (a, &i) in reg.communities.iter().enumerate() {
                out[l.block(LW).start + i] = at(LW, i) - (vw[a] / sw).scale(reg.population[0]);
                out[l.block(LB).start + i] = at(LB, i) - (vb[a] / sb).scale(reg.population[1]);
                let mut f = at(PC, i);
                for b in 0..n {
                    f -= (vw[b] / sw).scale(self.far[r][(a, b)]);
                }
                out[l.block(PC).start + i] = f;
            }
        }
        out
    }
}

impl Homotopy<f64> for CitywideH<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
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
    fn tangent(&self, y: &[f64], t: f64) -> Option<Vec<f64>> {
        self.phi_b(y, t)
            .map(|(_, _, tan)| tan)
            .filter(|v| v.iter().all(|x| x.is_finite()))
    }
    fn in_domain(&self, y: &[f64]) -> bool {
        let l = self.layout;
        y[l.block(UW).start..].iter().all(|&v| v > 0.0)
            && y[..l.block(UW).start].iter().all(|&v| v >= 0.0)
    }
}

/// One logged step of the citywide path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CitywideStep {
    pub zeta: f64,
    pub min_eig: f64,
    pub logdet: f64,
    pub q_norm: f64,
    /// Max of the f_c, f_n, m_n residual norms.
    pub residual: f64,
    pub lw: Vec<f64>,
    pub lb: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CitywidePath {
    pub status: PathStatus,
    pub steps: Vec<CitywideStep>,
    pub end: CitywideState,
    pub residuals: [f64; 3],
}

impl CitywidePath {
    pub fn trace_csv(&self) -> String {
        let n = self.end.lw.len();
        let mut s = String::from("zeta,min_eig,logdet,q_norm,residual");
        for g in ["w", "b"] {
            for i in 0..n {
                s.push_str(&format!(",L{g}_{i}"));
            }
        }
        s.push('\n');
        for st in &self.steps {
            let mut row = vec![
                fmt_f64(st.zeta),
                fmt_f64(st.min_eig),
                fmt_f64(st.logdet),
                fmt_f64(st.q_norm),
                fmt_f64(st.residual),
            ];
            row.extend(st.lw.iter().chain(&st.lb).map(|v| fmt_f64(*v)));
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Integrates (1 − Φ) dq/dζ = B from the state's ζ to `zeta_to`, polishing the stacked state at every step.
pub fn citywide_elasticity_homotopy(
    nc: &NestedCity,
    state0: &CitywideState,
    zeta_to: f64,
    cfg: &SolveConfig,
) -> Result<CitywidePath> {
    let h = CitywideH::new(nc);
    let y0 = state0.to_vec();
    let mut tcfg = cfg.tracker.clone();
    tcfg.trace = true;
    tcfg.endgame_radius = 0.0;
    let path = track(&h, &y0, state0.zeta, zeta_to, &tcfg)?;
    let mut points: Vec<(f64, Vec<f64>)> = vec![(state0.zeta, y0.clone())];
    points.extend(
        path.trace
            .iter()
            .flatten()
            .map(|p| (p.t, p.x.iter().map(|z| z.re).collect())),
    );
    if path.status == PathStatus::Converged {
        points.push((path.t_final, path.endpoint.clone()));
    }
    points.dedup_by(|a, b| a.0 == b.0);
    let steps = points
        .iter()
        .map(|(z, y)| {
            let (min_eig, logdet) = h.certificate(y, *z);
            let r = h.equilibrium_residuals(y, *z);
            let st = CitywideState::from_vec(nc, y, *z);
            CitywideStep {
                zeta: *z,
                min_eig,
                logdet,
                q_norm: st.q_n.iter().map(|v| v * v).sum::<f64>().sqrt(),
                residual: r[0].max(r[1]).max(r[2]),
                lw: st.lw,
                lb: st.lb,
            }
        })
        .collect();
    let residuals = h.equilibrium_residuals(&path.endpoint, path.t_final);
    Ok(CitywidePath {
        status: path.status,
        steps,
        end: CitywideState::from_vec(nc, &path.endpoint, path.t_final),
        residuals,
    })
}

/// Distinct region equilibria across selections, used to flag collisions.
pub fn distinct_states(states: &[CitywideState], tol: f64) -> usize {
    let pts: Vec<Vec<f64>> = states.iter().map(|s| s.to_vec()).collect();
    dedup_groups(&pts, tol).len()
}
