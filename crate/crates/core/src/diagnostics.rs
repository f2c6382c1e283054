//! Arrangement and dispersion diagnostics: sign-pattern enumeration, chamber
//! diameters, 2-D angular dispersion and the ℓ1-isometry constant.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data;
use crate::dict::binomial;
use crate::error::{Error, Result};
use crate::ga;
use crate::rng;

/// Largest `C(n, r-1)·2^r` the exact enumeration accepts.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;
/// Random directions added to the enumeration after the ray pass.
const CLOSURE_PROBES: usize = 2000;
const DEGENERATE_PROBES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chamber {
    pub pattern: Vec<i8>,
    /// Unit direction inside the chamber, in the original coordinates.
    pub witness: Vec<f64>,
    /// Unit extreme rays found for the chamber (original coordinates).
    pub rays: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementEnumeration {
    pub chambers: Vec<Chamber>,
    /// Rows kept after dropping zero rows, as indices into the input.
    pub rows: Vec<usize>,
    pub rank: usize,
}

impl ArrangementEnumeration {
    pub fn count(&self) -> usize {
        self.chambers.len()
    }
}

/// Upper bound `2 Σ_{j<r} C(n-1, j)` on the number of chambers.
pub fn chamber_count_bound(n: usize, r: usize) -> u64 {
    if n == 0 {
        return 1;
    }
    2 * (0..r).map(|j| binomial(n - 1, j)).sum::<u64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiameterMode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamberDiameter {
    pub value: f64,
    /// True when computed from extreme rays (vertex-attained maxima).
    pub exact: bool,
    /// Some chamber had fewer than two rays and was sampled instead.
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometryEstimate {
    pub epsilon: f64,
    pub alpha: f64,
    /// Implied chamber-diameter bound `4√ε`.
    pub diameter_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub chamber_diameter_estimate: f64,
    pub exact: bool,
    pub vertex_attained: bool,
    pub local_chamber_diameter: Option<f64>,
    pub epsilon_2d: Option<f64>,
    pub local_epsilons: Vec<f64>,
    pub isometry_epsilon: f64,
    pub isometry_alpha: f64,
    pub isometry_diameter_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnoseConfig {
    pub probes: usize,
    pub seed: u64,
    /// Also compute the local (per-anchor) chamber diameter.
    pub local: bool,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            probes: 10_000,
            seed: 0,
            local: true,
        }
    }
}

fn nonzero_rows(x: &DMatrix<f64>) -> Vec<usize> {
    let dropped: Vec<usize> = (0..x.nrows()).filter(|&i| x.row(i).iter().all(|v| *v == 0.0)).collect();
    if !dropped.is_empty() {
        log::debug!("dropping {} zero rows before the arrangement analysis", dropped.len());
    }
    (0..x.nrows()).filter(|i| !dropped.contains(i)).collect()
}

fn gaussian_unit(r: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let n = ga::norm_l2(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Orthonormal basis (`d × r`) of the row space, columns ordered by
/// decreasing singular value.
fn row_space(x: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let d = x.ncols();
    if x.nrows() == 0 {
        return (DMatrix::zeros(d, 0), 0);
    }
    let svd = x.clone().svd(false, true);
    let s = &svd.singular_values;
    let vt = svd.v_t.expect("requested V");
    let smax = s.max();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let keep: Vec<usize> = order.into_iter().filter(|&i| smax > 0.0 && s[i] > data::RANK_RTOL * smax).collect();
    let mut v = DMatrix::zeros(d, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        v.set_column(k, &vt.row(i).transpose());
    }
    let r = keep.len();
    (v, r)
}

fn pack(pattern: &[i8]) -> Vec<u64> {
    let mut words = vec![0u64; pattern.len().div_ceil(64)];
    for (i, &s) in pattern.iter().enumerate() {
        if s > 0 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

fn sign_pattern(rows: &[Vec<f64>], w: &[f64]) -> Option<Vec<i8>> {
    rows.iter()
        .map(|x| {
            let p = ga::dot(x, w);
            if p > 0.0 {
                Some(1)
            } else if p < 0.0 {
                Some(-1)
            } else {
                None
            }
        })
        .collect()
}

/// Exact set of full-dimensional sign patterns of `sign(Xw)`.
///
/// Extreme rays of the arrangement are cross products of `r-1` independent
/// rows; perturbing each ray in every sign direction of its defining rows
/// reaches every adjacent chamber. Rays lying on extra hyperplanes are
/// explored with random perturbations, and random probes close the set.
pub fn enumerate_arrangements(x: &DMatrix<f64>, seed: u64) -> Result<ArrangementEnumeration> {
    let keep = nonzero_rows(x);
    let d = x.ncols();
    let xs = DMatrix::from_fn(keep.len(), d, |i, j| x[(keep[i], j)]);
    let (v, r) = row_space(&xs);
    let n = keep.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (xs.row(i) * &v).iter().copied().collect())
        .collect();
    let lift = |w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (k, wk) in w.iter().enumerate() {
            for j in 0..d {
                out[j] += v[(j, k)] * wk;
            }
        }
        let nn = ga::norm_l2(&out);
        out.into_iter().map(|x| x / nn).collect()
    };

    let mut map: BTreeMap<Vec<u64>, Chamber> = BTreeMap::new();
    let mut add = |pattern: Vec<i8>, witness: &[f64], ray: Option<&[f64]>| {
        let key = pack(&pattern);
        let entry = map.entry(key).or_insert_with(|| Chamber {
            pattern,
            witness: lift(witness),
            rays: Vec::new(),
        });
        if let Some(ray) = ray {
            let ray = lift(ray);
            let dup = entry
                .rays
                .iter()
                .any(|q| q.iter().zip(&ray).all(|(a, b)| (a - b).abs() <= 1e-12));
            if !dup {
                entry.rays.push(ray);
            }
        }
    };

    if n == 0 || r == 0 {
        return Ok(ArrangementEnumeration {
            chambers: vec![Chamber {
                pattern: Vec::new(),
                witness: {
                    let mut e = vec![0.0; d];
                    e[0] = 1.0;
                    e
                },
                rays: Vec::new(),
            }],
            rows: keep,
            rank: r,
        });
    }

    if r == 1 {
        for s in [1.0, -1.0] {
            let w = [s];
            let pat = sign_pattern(&rows, &w).expect("nonzero projections");
            add(pat, &w, Some(&w));
        }
    } else {
        let subsets = binomial(n, r - 1);
        let budget = subsets.saturating_mul(1 << r.min(63));
        if budget > ENUMERATION_BUDGET {
            return Err(Error::Size(format!(
                "arrangement enumeration needs C({n},{})·2^{r} = {budget} > {ENUMERATION_BUDGET} chambers",
                r - 1
            )));
        }
        let mut rngp = rng::child(seed, rng::stream::ARRANGEMENT);
        let mut idx: Vec<usize> = (0..r - 1).collect();
        loop {
            let gens: Vec<&[f64]> = idx.iter().map(|&i| rows[i].as_slice()).collect();
            if ga::independent(&gens) {
                let c = ga::cross(&gens)?;
                let un = ga::norm_l2(&c.direction);
                let u: Vec<f64> = c.direction.iter().map(|x| x / un).collect();
                let prods: Vec<f64> = rows.iter().map(|x| ga::dot(x, &u)).collect();
                let zeros: Vec<usize> = (0..n)
                    .filter(|&i| prods[i].abs() <= 1e-12 * ga::norm_l2(&rows[i]))
                    .collect();
                let min_other = (0..n)
                    .filter(|i| !zeros.contains(i))
                    .map(|i| prods[i].abs())
                    .fold(f64::INFINITY, f64::min);
                let rmax = rows.iter().map(|x| ga::norm_l2(x)).fold(0.0, f64::max);
                for sigma in [1.0, -1.0] {
                    let ray: Vec<f64> = u.iter().map(|x| sigma * x).collect();
                    if zeros.len() == r - 1 {
                        let a = DMatrix::from_fn(r - 1, r, |k, j| rows[idx[k]][j]);
                        let svd = a.svd(true, true);
                        for mask in 0..(1usize << (r - 1)) {
                            let s = nalgebra::DVector::from_fn(r - 1, |k, _| {
                                if mask >> k & 1 == 1 { -1.0 } else { 1.0 }
                            });
                            let delta = svd.solve(&s, 1e-300).expect("full SVD");
                            let dn = rmax * delta.norm();
                            let eps = if min_other.is_finite() {
                                (0.5 * min_other / dn).min(0.5)
                            } else {
                                0.5
                            };
                            let w: Vec<f64> = (0..r).map(|j| ray[j] + eps * delta[j]).collect();
                            if let Some(pat) = sign_pattern(&rows, &w) {
                                add(pat, &w, Some(&ray));
                            }
                        }
                    } else {
                        let eps = if min_other.is_finite() { 0.25 * min_other / rmax } else { 0.25 };
                        for _ in 0..DEGENERATE_PROBES {
                            let delta = gaussian_unit(&mut rngp, r);
                            let w: Vec<f64> = (0..r).map(|j| ray[j] + eps * delta[j]).collect();
                            if let Some(pat) = sign_pattern(&rows, &w) {
                                add(pat, &w, Some(&ray));
                            }
                        }
                    }
                }
            }
            // Next combination in lexicographic order.
            let k = r - 1;
            let mut i = k;
            while i > 0 && idx[i - 1] == n - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
        for _ in 0..CLOSURE_PROBES {
            let w = gaussian_unit(&mut rngp, r);
            if let Some(pat) = sign_pattern(&rows, &w) {
                add(pat, &w, None);
            }
        }
    }
    Ok(ArrangementEnumeration {
        chambers: map.into_values().collect(),
        rows: keep,
        rank: r,
    })
}

fn max_pairwise(vs: &[Vec<f64>]) -> f64 {
    let mut m = 0.0f64;
    for a in 0..vs.len() {
        for b in (a + 1)..vs.len() {
            m = m.max(ga::norm_l2(&ga::sub(&vs[a], &vs[b])));
        }
    }
    m
}

/// Maximum chamber diameter. Exact mode takes, per chamber, the largest
/// distance between its unit extreme rays; rank-deficient data has
/// antipodal-reaching chambers and diameter 2. Sampled mode buckets random
/// unit directions by sign pattern (a lower bound).
pub fn chamber_diameter(x: &DMatrix<f64>, mode: DiameterMode, probes: usize, seed: u64) -> Result<ChamberDiameter> {
    match mode {
        DiameterMode::Sampled => Ok(ChamberDiameter {
            value: sampled_diameter(x, probes, seed),
            exact: false,
            fell_back: false,
        }),
        DiameterMode::Exact => {
            let keep = nonzero_rows(x);
            let d = x.ncols();
            let xs = DMatrix::from_fn(keep.len(), d, |i, j| x[(keep[i], j)]);
            let (_, r) = row_space(&xs);
            if r < d {
                return Ok(ChamberDiameter { value: 2.0, exact: true, fell_back: false });
            }
            let arr = enumerate_arrangements(x, seed)?;
            let mut value = 0.0f64;
            let mut fell_back = false;
            for ch in &arr.chambers {
                if ch.rays.len() >= 2 {
                    value = value.max(max_pairwise(&ch.rays));
                } else if d > 1 {
                    fell_back = true;
                }
            }
            if fell_back {
                value = value.max(sampled_diameter(x, probes, seed));
            }
            Ok(ChamberDiameter { value, exact: !fell_back, fell_back })
        }
    }
}

/// Lower bound from random probes. Probes sharing a sign pattern give one
/// bound; each probe also walks a random great circle both ways to the first
/// hyperplane crossing, and the chord between the two crossing points lies in
/// the closure of the probe's chamber.
fn sampled_diameter(x: &DMatrix<f64>, probes: usize, seed: u64) -> f64 {
    let keep = nonzero_rows(x);
    let d = x.ncols();
    if keep.is_empty() {
        return 2.0;
    }
    let xs = DMatrix::from_fn(keep.len(), d, |i, j| x[(keep[i], j)]);
    let mut r = rng::child(seed, rng::stream::DIAGNOSTICS);
    let ws: Vec<(Vec<f64>, Vec<f64>)> = (0..probes)
        .map(|_| {
            let w = gaussian_unit(&mut r, d);
            let mut u = gaussian_unit(&mut r, d);
            let c = ga::dot(&u, &w);
            for (ui, wi) in u.iter_mut().zip(&w) {
                *ui -= c * wi;
            }
            let nu = ga::norm_l2(&u);
            if nu > 0.0 {
                u.iter_mut().for_each(|v| *v /= nu);
            }
            (w, u)
        })
        .collect();
    let per: Vec<(Vec<u64>, f64)> = ws
        .par_iter()
        .map(|(w, u)| {
            let a = &xs * nalgebra::DVector::from_column_slice(w);
            let pat: Vec<i8> = a.iter().map(|v| if *v > 0.0 { 1 } else { -1 }).collect();
            if d < 2 || ga::norm_l2(u) == 0.0 {
                return (pack(&pat), 0.0);
            }
            let b = &xs * nalgebra::DVector::from_column_slice(u);
            let half = std::f64::consts::FRAC_PI_2;
            let (mut hi, mut lo) = (std::f64::consts::PI, -std::f64::consts::PI);
            for (ai, bi) in a.iter().zip(b.iter()) {
                // a cos t + b sin t = 0
                let phi = if *bi == 0.0 { half } else { (-ai / bi).atan() };
                let (pos, neg) = if phi > 0.0 {
                    (phi, phi - std::f64::consts::PI)
                } else {
                    (phi + std::f64::consts::PI, phi)
                };
                hi = hi.min(pos);
                lo = lo.max(neg);
            }
            (pack(&pat), 2.0 * (0.5 * (hi - lo)).min(half).sin())
        })
        .collect();
    let mut best = per.iter().map(|p| p.1).fold(0.0f64, f64::max);
    let mut order: Vec<usize> = (0..probes).collect();
    order.sort_by(|&a, &b| per[a].0.cmp(&per[b].0).then(a.cmp(&b)));
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && per[order[end]].0 == per[order[start]].0 {
            end += 1;
        }
        if end - start > 1 {
            let group: Vec<Vec<f64>> = order[start..end].iter().map(|&i| ws[i].0.clone()).collect();
            best = best.max(max_pairwise(&group));
        }
        start = end;
    }
    best
}

/// Largest chamber diameter over the data centered at each sample.
pub fn local_chamber_diameter(x: &DMatrix<f64>, mode: DiameterMode, probes: usize, seed: u64) -> Result<ChamberDiameter> {
    let results: Vec<Result<ChamberDiameter>> = (0..x.nrows())
        .into_par_iter()
        .map(|j| {
            let xj = x.row(j).into_owned();
            let mut c = x.clone();
            for mut row in c.row_iter_mut() {
                row -= &xj;
            }
            chamber_diameter(&c, mode, probes, seed)
        })
        .collect();
    let mut out = ChamberDiameter { value: 0.0, exact: true, fell_back: false };
    for r in results {
        let r = r?;
        out.value = out.value.max(r.value);
        out.exact &= r.exact;
        out.fell_back |= r.fell_back;
    }
    Ok(out)
}

/// Maximum gap between consecutive row angles taken modulo π, as a
/// fraction of π. Zero rows are skipped.
pub fn angular_dispersion_2d(x: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() != 2 {
        return Err(Error::dim(format!("angular dispersion needs d = 2, got {}", x.ncols())));
    }
    let pi = std::f64::consts::PI;
    let mut angles: Vec<f64> = x
        .row_iter()
        .filter(|r| r[0] != 0.0 || r[1] != 0.0)
        .map(|r| r[1].atan2(r[0]).rem_euclid(pi))
        .map(|a| if a >= pi { 0.0 } else { a })
        .collect();
    if angles.is_empty() {
        return Ok(1.0);
    }
    angles.sort_by(f64::total_cmp);
    let mut gap = angles[0] + pi - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    Ok(gap / pi)
}

/// Angular dispersion of `{x_i - x_j}` for every anchor `j`.
pub fn local_angular_dispersion_2d(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..x.nrows())
        .map(|j| {
            let xj = x.row(j).into_owned();
            let mut c = x.clone();
            for mut row in c.row_iter_mut() {
                row -= &xj;
            }
            angular_dispersion_2d(&c)
        })
        .collect()
}

/// `α` = median of `‖Xw‖₁/n` over random unit `w`, `ε` = max deviation
/// `|‖Xw‖₁/(αn) - 1|`.
pub fn isometry_epsilon(x: &DMatrix<f64>, probes: usize, seed: u64) -> IsometryEstimate {
    let (n, d) = (x.nrows(), x.ncols());
    let mut r = rng::child(seed, rng::stream::DIAGNOSTICS);
    let ws: Vec<Vec<f64>> = (0..probes.max(1)).map(|_| gaussian_unit(&mut r, d)).collect();
    let vals: Vec<f64> = ws
        .par_iter()
        .map(|w| {
            let p = x * nalgebra::DVector::from_column_slice(w);
            p.iter().map(|v| v.abs()).sum::<f64>() / n.max(1) as f64
        })
        .collect();
    let mut sorted = vals.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let alpha = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let epsilon = if alpha > 0.0 {
        vals.iter().map(|v| (v / alpha - 1.0).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    IsometryEstimate {
        epsilon,
        alpha,
        diameter_bound: 4.0 * epsilon.sqrt(),
    }
}

/// Full report: exact chamber diameter when the enumeration budget allows,
/// sampled otherwise.
pub fn diagnose(x: &DMatrix<f64>, cfg: &DiagnoseConfig) -> Result<DispersionReport> {
    let diam = match chamber_diameter(x, DiameterMode::Exact, cfg.probes, cfg.seed) {
        Ok(v) => v,
        Err(Error::Size(msg)) => {
            log::info!("{msg}; falling back to sampled diameter");
            chamber_diameter(x, DiameterMode::Sampled, cfg.probes, cfg.seed)?
        }
        Err(e) => return Err(e),
    };
    let local = if cfg.local {
        let m = match local_chamber_diameter(x, DiameterMode::Exact, cfg.probes, cfg.seed) {
            Ok(v) => v,
            Err(Error::Size(_)) => local_chamber_diameter(x, DiameterMode::Sampled, cfg.probes, cfg.seed)?,
            Err(e) => return Err(e),
        };
        Some(m.value)
    } else {
        None
    };
    let (epsilon_2d, local_epsilons) = if x.ncols() == 2 {
        (Some(angular_dispersion_2d(x)?), local_angular_dispersion_2d(x)?)
    } else {
        (None, Vec::new())
    };
    let iso = isometry_epsilon(x, cfg.probes, cfg.seed);
    Ok(DispersionReport {
        chamber_diameter_estimate: diam.value,
        exact: diam.exact,
        vertex_attained: diam.exact,
        local_chamber_diameter: local,
        epsilon_2d,
        local_epsilons,
        isometry_epsilon: iso.epsilon,
        isometry_alpha: iso.alpha,
        isometry_diameter_bound: iso.diameter_bound,
    })
}
