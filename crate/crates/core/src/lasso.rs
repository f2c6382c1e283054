//! Accelerated proximal-gradient solver for ℓ1 and group-ℓ1 penalized losses.
//!
//! ℓ1 problems default to an active-set method: add the most violating
//! column, take sign-constrained Newton steps on the support, drop columns
//! that hit zero. Group problems run cyclic block coordinate descent (or
//! FISTA with backtracking and restart) on a working set of columns, and a
//! Newton solve on the settled support lands on the exact stationary point.
//! Every answer is checked against the full KKT system.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dict::Dictionary;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `½‖f - y‖²`.
    SquaredError,
    /// `Σ log(1 + exp(-y f))` with labels in {-1, +1}.
    Logistic,
}

/// Inner iteration used between Newton refinements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Sign-constrained Newton on a growing active set (ℓ1 problems); group
    /// problems fall back to coordinate descent.
    #[default]
    ActiveSet,
    /// Cyclic proximal coordinate (block) descent.
    CoordinateDescent,
    /// Accelerated proximal gradient with backtracking and restart.
    Fista,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Iterations (FISTA steps or full coordinate sweeps).
    pub max_iter: usize,
    /// Relative objective change counted as a stall.
    pub tol: f64,
    /// Dual residual allowed at convergence, relative to `λ_eff`.
    pub kkt_tol: f64,
    /// Consecutive stalled iterations required.
    pub patience: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::ActiveSet,
            max_iter: 200_000,
            tol: 1e-9,
            kkt_tol: 1e-6,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem {
    /// `n × P`.
    pub k: DMatrix<f64>,
    /// `n × c`.
    pub y: DMatrix<f64>,
    pub lambda: f64,
    pub penalty_scale: f64,
    pub loss: Loss,
    pub intercept: bool,
    /// Partition of the columns of `K`; each group's block of `Z` (all
    /// outputs) is penalized by its Frobenius norm.
    pub groups: Option<Vec<Vec<usize>>>,
}

impl LassoProblem {
    pub fn new(k: DMatrix<f64>, y: DMatrix<f64>, lambda: f64) -> Self {
        Self {
            k,
            y,
            lambda,
            penalty_scale: 2.0,
            loss: Loss::SquaredError,
            intercept: false,
            groups: None,
        }
    }

    /// Problem matching a dictionary: intercept for biased families, one
    /// group per feature for vector output, and the three-layer penalty
    /// convention (`penalty_scale = 1`).
    pub fn for_dictionary(dict: &Dictionary, y: &DMatrix<f64>, lambda: f64) -> Self {
        let mut p = Self::new(dict.k.clone(), y.clone(), lambda);
        p.intercept = dict.intercept;
        if dict.family.is_three_layer() {
            p.penalty_scale = 1.0;
        }
        if dict.grouped {
            p.groups = Some((0..dict.n_features()).map(|j| vec![j]).collect());
        }
        p
    }

    pub fn with_loss(mut self, loss: Loss) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn with_penalty_scale(mut self, s: f64) -> Self {
        self.penalty_scale = s;
        self
    }

    pub fn with_groups(mut self, groups: Vec<Vec<usize>>) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn lambda_eff(&self) -> f64 {
        self.penalty_scale * self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.penalty_scale > 0.0) || !self.penalty_scale.is_finite() {
            return Err(Error::InvalidArgument("penalty_scale must be > 0".into()));
        }
        if self.k.nrows() != self.y.nrows() {
            return Err(Error::dim(format!(
                "K has {} rows, y has {}",
                self.k.nrows(),
                self.y.nrows()
            )));
        }
        if self.y.ncols() == 0 || self.k.nrows() == 0 {
            return Err(Error::dim("empty problem"));
        }
        if self.k.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in K or y".into()));
        }
        if self.loss == Loss::Logistic && self.y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidArgument("logistic loss needs labels in {-1, +1}".into()));
        }
        if let Some(groups) = &self.groups {
            let mut seen = vec![false; self.k.ncols()];
            for g in groups {
                if g.is_empty() {
                    return Err(Error::InvalidArgument("empty group".into()));
                }
                for &j in g {
                    if j >= seen.len() || seen[j] {
                        return Err(Error::InvalidArgument(
                            "groups must partition the columns exactly once".into(),
                        ));
                    }
                    seen[j] = true;
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::InvalidArgument("groups do not cover every column".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    /// `P × c`.
    pub z: DMatrix<f64>,
    pub t: Option<Vec<f64>>,
    pub objective: f64,
    /// `max_j |vᵀK_j| - λ_eff` (group norms for group problems).
    pub dual_residual: f64,
    pub intercept_residual: f64,
    pub support: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl LassoSolution {
    /// Intercept for output `o`, zero when absent.
    pub fn intercept(&self, o: usize) -> f64 {
        self.t.as_ref().map_or(0.0, |t| t[o])
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = (0..self.z.nrows())
            .map(|j| self.z.row(j).iter().copied().collect())
            .collect();
        serde_json::json!({
            "z": rows,
            "t": self.t,
            "objective": self.objective,
            "dual_residual": self.dual_residual,
            "intercept_residual": self.intercept_residual,
            "support": self.support,
            "iterations": self.iterations,
            "converged": self.converged,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Dto {
            z: Vec<Vec<f64>>,
            t: Option<Vec<f64>>,
            objective: f64,
            dual_residual: f64,
            #[serde(default)]
            intercept_residual: f64,
            support: Vec<usize>,
            iterations: usize,
            converged: bool,
        }
        let d: Dto = serde_json::from_value(v.clone())?;
        let c = d.z.first().map_or(1, |r| r.len());
        if d.z.iter().any(|r| r.len() != c) {
            return Err(Error::Data("ragged z".into()));
        }
        Ok(Self {
            z: DMatrix::from_fn(d.z.len(), c, |i, j| d.z[i][j]),
            t: d.t,
            objective: d.objective,
            dual_residual: d.dual_residual,
            intercept_residual: d.intercept_residual,
            support: d.support,
            iterations: d.iterations,
            converged: d.converged,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    /// `n × c` loss gradient at the solution.
    pub v: DMatrix<f64>,
    pub max_violation: f64,
    pub intercept_residual: f64,
}

/// Internal view of a problem: either a group problem or a single-output ℓ1
/// problem (multi-output ℓ1 problems separate by column).
struct Core<'a> {
    k: &'a DMatrix<f64>,
    y: DMatrix<f64>,
    lam: f64,
    loss: Loss,
    intercept: bool,
    groups: Option<&'a [Vec<usize>]>,
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl<'a> Core<'a> {
    fn c(&self) -> usize {
        self.y.ncols()
    }

    fn predict(&self, z: &DMatrix<f64>, t: &[f64]) -> DMatrix<f64> {
        let mut f = self.k * z;
        if self.intercept {
            for (o, mut col) in f.column_iter_mut().enumerate() {
                col.add_scalar_mut(t[o]);
            }
        }
        f
    }

    fn loss_value(&self, f: &DMatrix<f64>) -> f64 {
        match self.loss {
            Loss::SquaredError => {
                0.5 * f.iter().zip(self.y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            Loss::Logistic => f
                .iter()
                .zip(self.y.iter())
                .map(|(a, b)| softplus(-a * b))
                .sum(),
        }
    }

    fn loss_grad(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        match self.loss {
            Loss::SquaredError => f - &self.y,
            Loss::Logistic => f.zip_map(&self.y, |a, b| -b * sigmoid(-a * b)),
        }
    }

    fn penalty(&self, z: &DMatrix<f64>) -> f64 {
        match self.groups {
            None => z.iter().map(|v| v.abs()).sum(),
            Some(gs) => gs
                .iter()
                .map(|g| {
                    g.iter()
                        .flat_map(|&j| z.row(j).iter().map(|v| v * v).collect::<Vec<_>>())
                        .sum::<f64>()
                        .sqrt()
                })
                .sum(),
        }
    }

    fn objective(&self, z: &DMatrix<f64>, t: &[f64]) -> f64 {
        self.loss_value(&self.predict(z, t)) + self.lam * self.penalty(z)
    }

    fn prox(&self, z: &mut DMatrix<f64>, tau: f64) {
        match self.groups {
            None => z.apply(|v| *v = v.signum() * (v.abs() - tau).max(0.0)),
            Some(gs) => {
                for g in gs {
                    let norm = g
                        .iter()
                        .map(|&j| z.row(j).norm_squared())
                        .sum::<f64>()
                        .sqrt();
                    let s = if norm > tau { 1.0 - tau / norm } else { 0.0 };
                    for &j in g {
                        z.row_mut(j).scale_mut(s);
                    }
                }
            }
        }
    }

    /// Dual residual and intercept residual at `(z, t)`.
    fn kkt(&self, z: &DMatrix<f64>, t: &[f64]) -> (f64, f64, DMatrix<f64>) {
        let v = self.loss_grad(&self.predict(z, t));
        let kv = self.k.tr_mul(&v);
        let corr = match self.groups {
            None => kv.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            Some(gs) => gs.iter().fold(0.0f64, |m, g| {
                m.max(g.iter().map(|&j| kv.row(j).norm_squared()).sum::<f64>().sqrt())
            }),
        };
        let int_res = if self.intercept {
            v.column_iter().map(|c| c.sum().abs()).fold(0.0, f64::max)
        } else {
            0.0
        };
        (corr - self.lam, int_res, v)
    }

    /// Full optimality test: dual feasibility off the support, equality
    /// `K_jᵀv = -λ sign(z_j)` (groups: `K_gᵀV = -λ Z_g/‖Z_g‖`) on it, and
    /// the intercept condition.
    fn optimal(&self, z: &DMatrix<f64>, t: &[f64], tol: f64) -> bool {
        let (res, ir, v) = self.kkt(z, t);
        if res > self.lam * tol || !self.intercept_ok(ir, &v, tol) {
            return false;
        }
        let kv = self.k.tr_mul(&v);
        let bound = self.lam * tol;
        match self.groups {
            None => z.iter().zip(kv.iter()).all(|(zj, c)| *zj == 0.0 || (c + self.lam * zj.signum()).abs() <= bound),
            Some(gs) => gs.iter().all(|g| {
                let zn = g.iter().map(|&j| z.row(j).norm_squared()).sum::<f64>().sqrt();
                if zn == 0.0 {
                    return true;
                }
                let dev = g
                    .iter()
                    .map(|&j| (kv.row(j) + z.row(j) * (self.lam / zn)).norm_squared())
                    .sum::<f64>()
                    .sqrt();
                dev <= bound
            }),
        }
    }

    fn intercept_ok(&self, int_res: f64, v: &DMatrix<f64>, tol: f64) -> bool {
        !self.intercept || int_res <= tol * v.iter().map(|x| x.abs()).sum::<f64>().max(1e-300)
    }

    /// Intercept minimizing the loss at `z`; a few Newton steps for logistic.
    fn best_intercept(&self, z: &DMatrix<f64>) -> Vec<f64> {
        let c = self.c();
        if !self.intercept {
            return vec![0.0; c];
        }
        let base = self.k * z;
        let n = base.nrows() as f64;
        (0..c)
            .map(|o| match self.loss {
                Loss::SquaredError => {
                    (0..base.nrows()).map(|i| self.y[(i, o)] - base[(i, o)]).sum::<f64>() / n
                }
                Loss::Logistic => {
                    let mut t = 0.0;
                    for _ in 0..100 {
                        let (mut g, mut h) = (0.0, 0.0);
                        for i in 0..base.nrows() {
                            let yi = self.y[(i, o)];
                            let s = sigmoid(-yi * (base[(i, o)] + t));
                            g += -yi * s;
                            h += s * (1.0 - s);
                        }
                        if g.abs() <= 1e-15 * n {
                            break;
                        }
                        let step = (g / h.max(1e-12)).clamp(-10.0, 10.0);
                        t -= step;
                    }
                    t
                }
            })
            .collect()
    }

    fn lipschitz(&self, seed: u64) -> f64 {
        let (n, p) = (self.k.nrows(), self.k.ncols());
        let mut r = rng::child(seed, rng::stream::SOLVER);
        let mut u = DVector::from_fn(p, |_, _| r.random::<f64>() + 0.5);
        let mut u0 = if self.intercept { 1.0 } else { 0.0 };
        let mut est = 0.0;
        for _ in 0..50 {
            let norm = (u.norm_squared() + u0 * u0).sqrt();
            if norm == 0.0 {
                break;
            }
            u /= norm;
            u0 /= norm;
            let mut w = self.k * &u;
            if self.intercept {
                w.add_scalar_mut(u0);
            }
            let nu = self.k.tr_mul(&w);
            let nu0 = if self.intercept { w.sum() } else { 0.0 };
            est = (nu.norm_squared() + nu0 * nu0).sqrt();
            u = nu;
            u0 = nu0;
        }
        let _ = n;
        let l = if self.loss == Loss::Logistic { 0.25 * est } else { est };
        l.max(1e-12)
    }

    /// Newton solve of the smooth problem restricted to `support`, with signs
    /// (ℓ1) or group activity fixed. Columns whose sign flips are dropped and
    /// the solve repeated.
    fn refine(&self, z: &DMatrix<f64>, t: &[f64], mut support: Vec<usize>) -> Option<(DMatrix<f64>, Vec<f64>)> {
        let c = self.c();
        for _ in 0..=support.len() {
            let s = support.len();
            if s * c > 3000 {
                return None;
            }
            let signs: Vec<f64> = support.iter().map(|&j| z[(j, 0)].signum()).collect();
            // Group blocks as positions into the support.
            let blocks: Vec<Vec<usize>> = match self.groups {
                None => Vec::new(),
                Some(gs) => gs
                    .iter()
                    .filter_map(|g| {
                        let pos: Vec<usize> = g
                            .iter()
                            .filter_map(|j| support.iter().position(|s| s == j))
                            .collect();
                        (!pos.is_empty()).then_some(pos)
                    })
                    .collect(),
            };
            let q = s + usize::from(self.intercept);
            let a = {
                let mut a = DMatrix::zeros(self.k.nrows(), q);
                for (c_, &j) in support.iter().enumerate() {
                    a.set_column(c_, &self.k.column(j));
                }
                if self.intercept {
                    a.column_mut(s).fill(1.0);
                }
                a
            };
            // u laid out output-major: [z_S(:,0); t_0; z_S(:,1); t_1; ...]
            let mut u = DVector::zeros(q * c);
            for o in 0..c {
                for (c_, &j) in support.iter().enumerate() {
                    u[o * q + c_] = z[(j, o)];
                }
                if self.intercept {
                    u[o * q + s] = t[o];
                }
            }
            let unpack = |u: &DVector<f64>| -> DMatrix<f64> {
                DMatrix::from_fn(self.k.nrows(), c, |i, o| {
                    (0..q).map(|c_| a[(i, c_)] * u[o * q + c_]).sum()
                })
            };
            let block_norm = |u: &DVector<f64>, b: &[usize]| -> f64 {
                (0..c)
                    .flat_map(|o| b.iter().map(move |&pp| o * q + pp))
                    .map(|ix| u[ix] * u[ix])
                    .sum::<f64>()
                    .sqrt()
            };
            let obj = |u: &DVector<f64>| -> f64 {
                let f = unpack(u);
                let pen = match self.groups {
                    None => (0..s).map(|c_| signs[c_] * u[c_]).sum::<f64>(),
                    Some(_) => blocks.iter().map(|b| block_norm(u, b)).sum(),
                };
                self.loss_value(&f) + self.lam * pen
            };
            let mut fu = obj(&u);
            let mut flat = 0;
            let mut vanished: Vec<usize> = Vec::new();
            for _ in 0..60 {
                let f = unpack(&u);
                let v = self.loss_grad(&f);
                let mut g = DVector::zeros(q * c);
                let mut h = DMatrix::zeros(q * c, q * c);
                for o in 0..c {
                    let vo = v.column(o);
                    let ga = a.tr_mul(&vo);
                    g.rows_mut(o * q, q).copy_from(&ga);
                    let hb = match self.loss {
                        Loss::SquaredError => a.tr_mul(&a),
                        Loss::Logistic => {
                            let mut da = a.clone();
                            for i in 0..a.nrows() {
                                let sg = sigmoid(-self.y[(i, o)] * f[(i, o)]);
                                da.row_mut(i).scale_mut(sg * (1.0 - sg));
                            }
                            a.tr_mul(&da)
                        }
                    };
                    h.view_mut((o * q, o * q), (q, q)).copy_from(&hb);
                }
                match self.groups {
                    None => {
                        for c_ in 0..s {
                            g[c_] += self.lam * signs[c_];
                        }
                    }
                    Some(_) => {
                        for b in &blocks {
                            let idx: Vec<usize> =
                                (0..c).flat_map(|o| b.iter().map(move |&pp| o * q + pp)).collect();
                            let nb = block_norm(&u, b);
                            if nb == 0.0 {
                                return None;
                            }
                            for &ia in &idx {
                                g[ia] += self.lam * u[ia] / nb;
                                for &ib in &idx {
                                    let eye = if ia == ib { 1.0 } else { 0.0 };
                                    h[(ia, ib)] += self.lam * (eye - u[ia] * u[ib] / (nb * nb)) / nb;
                                }
                            }
                        }
                    }
                }
                let gmax = g.amax();
                if gmax <= 1e-14 * (1.0 + self.lam) {
                    break;
                }
                let shift = 1e-13 * h.diagonal().amax().max(1e-300);
                let mut hs = h.clone();
                for i in 0..hs.nrows() {
                    hs[(i, i)] += shift;
                }
                let dir = match hs.cholesky() {
                    Some(ch) => ch.solve(&(-&g)),
                    None => {
                        let svd = h.clone().svd(true, true);
                        let smax = svd.singular_values.max();
                        match svd.solve(&(-&g), 1e-14 * smax.max(1e-300)) {
                            Ok(d) => d,
                            Err(_) => return None,
                        }
                    }
                };
                let slope = g.dot(&dir);
                if slope >= 0.0 {
                    break;
                }
                let mut step = 1.0;
                let mut improved = false;
                for _ in 0..60 {
                    let cand = &u + &dir * step;
                    let fc = obj(&cand);
                    if fc <= fu + 1e-4 * step * slope {
                        flat = if fu - fc <= 1e-15 * fu.abs() { flat + 1 } else { 0 };
                        u = cand;
                        fu = fc;
                        improved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved || flat >= 3 {
                    break;
                }
                if !blocks.is_empty() {
                    // Groups Newton drives into the norm's kink belong at zero.
                    let norms: Vec<f64> = blocks.iter().map(|b| block_norm(&u, b)).collect();
                    let top = norms.iter().copied().fold(0.0, f64::max);
                    vanished = blocks
                        .iter()
                        .zip(&norms)
                        .filter(|(_, n)| **n <= 1e-6 * top)
                        .flat_map(|(b, _)| b.iter().map(|&pp| support[pp]))
                        .collect();
                    if !vanished.is_empty() {
                        break;
                    }
                }
            }

            if !vanished.is_empty() && vanished.len() < s {
                support.retain(|j| !vanished.contains(j));
                continue;
            }

            let mut zn = DMatrix::zeros(z.nrows(), c);
            let mut tn = vec![0.0; c];
            for o in 0..c {
                for (c_, &j) in support.iter().enumerate() {
                    zn[(j, o)] = u[o * q + c_];
                }
                if self.intercept {
                    tn[o] = u[o * q + s];
                }
            }
            if self.groups.is_none() {
                let flipped: Vec<usize> = (0..s)
                    .filter(|&c_| u[c_] * signs[c_] <= 0.0)
                    .collect();
                if !flipped.is_empty() {
                    let drop: Vec<usize> = flipped.iter().map(|&c_| support[c_]).collect();
                    support.retain(|j| !drop.contains(j));
                    continue;
                }
            }
            if u.iter().any(|x| !x.is_finite()) {
                return None;
            }
            return Some((zn, tn));
        }
        None
    }
}

fn support_of(z: &DMatrix<f64>, groups: Option<&[Vec<usize>]>, rel: f64) -> Vec<usize> {
    let row_norm = |j: usize| z.row(j).norm();
    let max = (0..z.nrows()).map(row_norm).fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    let _ = groups;
    (0..z.nrows()).filter(|&j| row_norm(j) > rel * max).collect()
}

fn nonzero_support(z: &DMatrix<f64>) -> Vec<usize> {
    (0..z.nrows()).filter(|&j| z.row(j).iter().any(|v| *v != 0.0)).collect()
}

struct CoreResult {
    z: DMatrix<f64>,
    t: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn solve_core(core: &Core<'_>, cfg: &SolverConfig, warm: Option<DMatrix<f64>>) -> Result<CoreResult> {
    let (p, c) = (core.k.ncols(), core.c());
    let lam = core.lam;
    let mut z = warm.unwrap_or_else(|| DMatrix::zeros(p, c));
    let mut t = core.best_intercept(&z);

    let accept = |zc: &DMatrix<f64>, tc: &[f64]| core.optimal(zc, tc, cfg.kkt_tol);

    if let Some((zr, tr)) = core.refine(&z, &t, nonzero_support(&z)) {
        if accept(&zr, &tr) {
            return Ok(CoreResult { z: zr, t: tr, iterations: 0, converged: true });
        }
    }

    let mut fz = core.objective(&z, &t);
    let mut lip = core.lipschitz(cfg.seed);
    let (mut yz, mut yt) = (z.clone(), t.clone());
    let mut theta = 1.0f64;
    let mut stall = 0usize;
    let mut last_refine_support: Option<Vec<usize>> = None;
    let mut last_checkpoint_support: Option<Vec<usize>> = None;
    let refine_cap = 2 * core.k.nrows() + 2;

    for it in 1..=cfg.max_iter {
        let fy = core.predict(&yz, &yt);
        let ly = core.loss_value(&fy);
        let v = core.loss_grad(&fy);
        let gz = core.k.tr_mul(&v);
        let gt: Vec<f64> = if core.intercept {
            v.column_iter().map(|col| col.sum()).collect()
        } else {
            vec![0.0; c]
        };

        let (nz, nt, ln) = loop {
            let mut nz = &yz - &gz / lip;
            core.prox(&mut nz, lam / lip);
            let nt: Vec<f64> = yt.iter().zip(&gt).map(|(a, g)| a - g / lip).collect();
            let ln = core.loss_value(&core.predict(&nz, &nt));
            let dz = &nz - &yz;
            let dt2: f64 = nt.iter().zip(&yt).map(|(a, b)| (a - b) * (a - b)).sum();
            let lin: f64 = gz.dot(&dz) + gt.iter().zip(nt.iter().zip(&yt)).map(|(g, (a, b))| g * (a - b)).sum::<f64>();
            let quad = ly + lin + 0.5 * lip * (dz.norm_squared() + dt2);
            if ln <= quad + 1e-13 * ly.abs().max(1.0) {
                break (nz, nt, ln);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::Numerical("step size underflow in line search".into()));
            }
        };
        let fnew = ln + lam * core.penalty(&nz);
        if !fnew.is_finite() || nz.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite iterate at iteration {it}")));
        }

        if fnew > fz {
            // Function-value restart from the last accepted point.
            theta = 1.0;
            yz = z.clone();
            yt = t.clone();
            stall = 0;
            continue;
        }
        let rel = (fz - fnew) / fnew.abs().max(1e-300);
        let theta_n = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let mom = (theta - 1.0) / theta_n;
        yz = &nz + (&nz - &z) * mom;
        yt = nt.iter().zip(&t).map(|(a, b)| a + mom * (a - b)).collect();
        theta = theta_n;
        z = nz;
        t = nt;
        fz = fnew;
        stall = if rel <= cfg.tol { stall + 1 } else { 0 };

        let stalled = stall >= cfg.patience;
        if it % 25 == 0 || stalled {
            let sup = nonzero_support(&z);
            // Newton on the support is only worth it once the support has
            // settled, and a unique optimum never needs more than n columns.
            let settled = last_checkpoint_support.as_ref() == Some(&sup);
            let small = sup.len() <= refine_cap;
            last_checkpoint_support = Some(sup.clone());
            if small && (settled || stalled) && last_refine_support.as_ref() != Some(&sup) {
                if let Some((zr, tr)) = core.refine(&z, &t, sup.clone()) {
                    let fr = core.objective(&zr, &tr);
                    if fr <= fz + 1e-9 * fz.abs().max(1e-300) && accept(&zr, &tr) {
                        return Ok(CoreResult { z: zr, t: tr, iterations: it, converged: true });
                    }
                }
                last_refine_support = Some(sup);
            }
            if it % 1000 == 0 {
                let (res, ir, _) = core.kkt(&z, &t);
                log::debug!("iter {it}: f = {fz:.12e}, kkt residual {res:.3e} (λ {lam:.3e}), intercept {ir:.3e}, lip {lip:.3e}");
            }
            if stalled && accept(&z, &t) {
                return Ok(CoreResult { z, t, iterations: it, converged: true });
            }
        }
    }
    Ok(CoreResult { z, t, iterations: cfg.max_iter, converged: false })
}

/// Active-set Newton for a single-output ℓ1 problem.
fn solve_active_set(core: &Core<'_>, cfg: &SolverConfig) -> Result<CoreResult> {
    debug_assert!(core.groups.is_none() && core.c() == 1);
    let (n, p) = (core.k.nrows(), core.k.ncols());
    let lam = core.lam;
    let icpt = core.intercept;
    let mut z = DMatrix::<f64>::zeros(p, 1);
    let mut t = core.best_intercept(&z);
    let mut active: Vec<usize> = Vec::new();
    let mut sign: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    let objective = |z: &DMatrix<f64>, t: &[f64]| core.objective(z, t);
    let accept = |zc: &DMatrix<f64>, tc: &[f64]| core.optimal(zc, tc, cfg.kkt_tol);

    while iterations < cfg.max_iter {
        // Sign-constrained Newton on the current active set.
        let mut inner_ok = false;
        for _ in 0..200 {
            iterations += 1;
            let s = active.len();
            let q = s + usize::from(icpt);
            if q == 0 {
                inner_ok = true;
                break;
            }
            let mut a = DMatrix::zeros(n, q);
            for (c_, &j) in active.iter().enumerate() {
                a.set_column(c_, &core.k.column(j));
            }
            if icpt {
                a.column_mut(s).fill(1.0);
            }
            let f = core.predict(&z, &t);
            let v = core.loss_grad(&f);
            let mut g = a.tr_mul(&v.column(0));
            for c_ in 0..s {
                g[c_] += lam * sign[c_];
            }
            let scale = lam.max(v.amax()) * (n as f64).sqrt();
            if g.amax() <= 1e-13 * scale.max(1e-300) {
                inner_ok = true;
                break;
            }
            let h = match core.loss {
                Loss::SquaredError => a.tr_mul(&a),
                Loss::Logistic => {
                    let mut da = a.clone();
                    for i in 0..n {
                        let sg = sigmoid(-core.y[(i, 0)] * f[(i, 0)]);
                        da.row_mut(i).scale_mut(sg * (1.0 - sg));
                    }
                    a.tr_mul(&da)
                }
            };
            let svd = h.svd(true, true);
            let smax = svd.singular_values.max();
            let rtol = 1e-11 * smax.max(1e-300);
            let mut d = match svd.solve(&(-&g), rtol) {
                Ok(d) => d,
                Err(_) => return Err(Error::Numerical("support system".into())),
            };
            // Gradient left outside the range of H lives in the null space
            // of the support columns: moving along it leaves the loss alone
            // and lowers the penalty until a coefficient reaches zero.
            let v_t = svd.v_t.as_ref().expect("requested");
            let mut null = -&g;
            for (k, sv) in svd.singular_values.iter().enumerate() {
                if *sv > rtol {
                    let row = v_t.row(k).transpose();
                    let c_ = row.dot(&null);
                    null.axpy(-c_, &row, 1.0);
                }
            }
            let null_dir = null.norm() > 1e-9 * g.norm();
            if null_dir {
                d = null;
            }
            // Longest step keeping every active sign.
            let mut amax = f64::INFINITY;
            let mut hit = None;
            for c_ in 0..s {
                let zc = z[(active[c_], 0)];
                if d[c_] * sign[c_] < 0.0 {
                    let a_ = -zc / d[c_];
                    if a_ < amax {
                        amax = a_;
                        hit = Some(c_);
                    }
                }
            }
            let slope = g.dot(&d);
            if slope >= 0.0 && !null_dir {
                inner_ok = true;
                break;
            }
            let f0 = objective(&z, &t);
            let apply = |alpha: f64, z: &mut DMatrix<f64>, t: &mut Vec<f64>| {
                for c_ in 0..s {
                    z[(active[c_], 0)] += alpha * d[c_];
                }
                if icpt {
                    t[0] += alpha * d[s];
                }
            };
            let mut step = if null_dir { amax } else { amax.min(1.0) };
            if !step.is_finite() {
                return Err(Error::Numerical("unbounded direction on the support".into()));
            }
            let mut taken = false;
            for _ in 0..60 {
                let (mut zc, mut tc) = (z.clone(), t.clone());
                apply(step, &mut zc, &mut tc);
                if objective(&zc, &tc) <= f0 + 1e-4 * step * slope.min(0.0) + 1e-15 * f0.abs() {
                    z = zc;
                    t = tc;
                    taken = true;
                    break;
                }
                step *= 0.5;
            }
            if !taken {
                inner_ok = true;
                break;
            }
            if let Some(c_) = hit.filter(|_| step == amax) {
                z[(active[c_], 0)] = 0.0;
                active.remove(c_);
                sign.remove(c_);
            }
            // Drop anything that landed on zero by rounding.
            let mut c_ = 0;
            while c_ < active.len() {
                if z[(active[c_], 0)] * sign[c_] <= 0.0 {
                    z[(active[c_], 0)] = 0.0;
                    active.remove(c_);
                    sign.remove(c_);
                } else {
                    c_ += 1;
                }
            }
        }
        let _ = inner_ok;

        // Most violating inactive column.
        let v = core.loss_grad(&core.predict(&z, &t));
        let corr = core.k.tr_mul(&v);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if z[(j, 0)] != 0.0 {
                continue;
            }
            let cj = corr[(j, 0)].abs();
            if cj > lam * (1.0 + 0.1 * cfg.kkt_tol) && best.is_none_or(|(_, b)| cj > b) {
                best = Some((j, cj));
            }
        }
        match best {
            None => {
                if accept(&z, &t) {
                    return Ok(CoreResult { z, t, iterations, converged: true });
                }
                // On-support conditions still loose; polish with the
                // generic refinement.
                if let Some((zr, tr)) = core.refine(&z, &t, active.clone()) {
                    if accept(&zr, &tr) {
                        return Ok(CoreResult { z: zr, t: tr, iterations, converged: true });
                    }
                }
                return Ok(CoreResult { z, t, iterations, converged: false });
            }
            Some((j, cj)) => {
                let sj = -corr[(j, 0)].signum();
                // Exact line minimization along the new column (squared loss)
                // or a curvature-bounded step; either way a strict decrease.
                let kj = core.k.column(j);
                let curv = if core.loss == Loss::Logistic { 0.25 } else { 1.0 };
                let mut kk = kj.norm_squared();
                if icpt {
                    let m = kj.sum() / n as f64;
                    kk -= n as f64 * m * m;
                }
                let kk = (curv * kk).max(1e-300);
                z[(j, 0)] = sj * (cj - lam) / kk;
                if icpt {
                    t = core.best_intercept(&z);
                }
                active.push(j);
                sign.push(sj);
            }
        }
    }
    Ok(CoreResult { z, t, iterations, converged: false })
}

/// Proximal coordinate descent over groups (single columns for ℓ1), with
/// the intercept updated once per sweep.
fn solve_cd(core: &Core<'_>, cfg: &SolverConfig, warm: Option<DMatrix<f64>>) -> Result<CoreResult> {
    let (n, p, c) = (core.k.nrows(), core.k.ncols(), core.c());
    let lam = core.lam;
    let groups: Vec<Vec<usize>> = match core.groups {
        Some(gs) => gs.to_vec(),
        None => (0..p).map(|j| vec![j]).collect(),
    };
    let curv = if core.loss == Loss::Logistic { 0.25 } else { 1.0 };
    // Frobenius norm bounds the block's spectral norm.
    let lips: Vec<f64> = groups
        .iter()
        .map(|g| curv * g.iter().map(|&j| core.k.column(j).norm_squared()).sum::<f64>())
        .collect();

    let mut z = warm.unwrap_or_else(|| DMatrix::zeros(p, c));
    let mut t = core.best_intercept(&z);
    let accept = |zc: &DMatrix<f64>, tc: &[f64]| core.optimal(zc, tc, cfg.kkt_tol);
    if let Some((zr, tr)) = core.refine(&z, &t, nonzero_support(&z)) {
        if accept(&zr, &tr) {
            return Ok(CoreResult { z: zr, t: tr, iterations: 0, converged: true });
        }
    }

    let mut f = core.predict(&z, &t);
    let mut fz = core.objective(&z, &t);
    let mut stall = 0usize;
    let mut prev_support: Option<Vec<usize>> = None;
    let mut last_refine: Option<Vec<usize>> = None;
    for sweep in 1..=cfg.max_iter {
        for (gi, g) in groups.iter().enumerate() {
            if lips[gi] == 0.0 {
                continue;
            }
            let v = core.loss_grad(&f);
            let old: Vec<f64> = g.iter().flat_map(|&j| z.row(j).iter().copied().collect::<Vec<_>>()).collect();
            let mut new = old.clone();
            for (bi, &j) in g.iter().enumerate() {
                let kj = core.k.column(j);
                for o in 0..c {
                    new[bi * c + o] -= kj.dot(&v.column(o)) / lips[gi];
                }
            }
            let tau = lam / lips[gi];
            let norm = new.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = if norm > tau { 1.0 - tau / norm } else { 0.0 };
            for (bi, &j) in g.iter().enumerate() {
                for o in 0..c {
                    let nv = new[bi * c + o] * scale;
                    let dv = nv - old[bi * c + o];
                    if dv != 0.0 {
                        z[(j, o)] = nv;
                        f.column_mut(o).axpy(dv, &core.k.column(j), 1.0);
                    }
                }
            }
        }
        if core.intercept {
            let v = core.loss_grad(&f);
            for o in 0..c {
                let g: f64 = v.column(o).sum();
                let h: f64 = match core.loss {
                    Loss::SquaredError => n as f64,
                    Loss::Logistic => (0..n)
                        .map(|i| {
                            let sg = sigmoid(-core.y[(i, o)] * f[(i, o)]);
                            sg * (1.0 - sg)
                        })
                        .sum::<f64>()
                        .max(1e-12),
                };
                let step = g / h;
                t[o] -= step;
                f.column_mut(o).add_scalar_mut(-step);
            }
        }
        if sweep % 50 == 0 {
            // Re-sync against drift from the incremental updates.
            f = core.predict(&z, &t);
        }
        let fnew = core.loss_value(&f) + lam * core.penalty(&z);
        if !fnew.is_finite() {
            return Err(Error::Numerical(format!("non-finite objective at sweep {sweep}")));
        }
        let rel = (fz - fnew).abs() / fnew.abs().max(1e-300);
        stall = if rel <= cfg.tol { stall + 1 } else { 0 };
        fz = fnew;

        let sup = nonzero_support(&z);
        let settled = prev_support.as_ref() == Some(&sup);
        prev_support = Some(sup.clone());
        if (settled || stall >= cfg.patience) && last_refine.as_ref() != Some(&sup) {
            if let Some((zr, tr)) = core.refine(&z, &t, sup.clone()) {
                let fr = core.objective(&zr, &tr);
                if fr <= fz + 1e-9 * fz.abs().max(1e-300) && accept(&zr, &tr) {
                    return Ok(CoreResult { z: zr, t: tr, iterations: sweep, converged: true });
                }
                if fr < fz {
                    // Keep the Newton point and let the sweeps fix the support.
                    z = zr;
                    t = tr;
                    f = core.predict(&z, &t);
                    fz = fr;
                    stall = 0;
                }
            }
            last_refine = Some(sup);
        }
        if (stall >= cfg.patience || sweep % 10 == 0) && accept(&z, &t) {
            return Ok(CoreResult { z, t, iterations: sweep, converged: true });
        }
        if sweep % 1000 == 0 {
            let (res, ir, _) = core.kkt(&z, &t);
            log::debug!("sweep {sweep}: f = {fz:.12e}, kkt residual {res:.3e} (λ {lam:.3e}), intercept {ir:.3e}");
        }
    }
    Ok(CoreResult { z, t, iterations: cfg.max_iter, converged: false })
}

fn solve_inner(core: &Core<'_>, cfg: &SolverConfig, warm: Option<DMatrix<f64>>) -> Result<CoreResult> {
    match cfg.method {
        Method::ActiveSet | Method::CoordinateDescent => solve_cd(core, cfg, warm),
        Method::Fista => solve_core(core, cfg, warm),
    }
}

/// Columns per working set before the outer loop kicks in.
const WORKING_SET_MIN: usize = 256;

/// Solves on a growing working set of groups (single columns for ℓ1): the
/// inner solve only sees the selected columns, and groups outside that break
/// the full KKT conditions are added until none are left.
fn solve_working_set(core: &Core<'_>, cfg: &SolverConfig) -> Result<CoreResult> {
    if cfg.method == Method::ActiveSet && core.groups.is_none() && core.c() == 1 {
        return solve_active_set(core, cfg);
    }
    let (p, c) = (core.k.ncols(), core.c());
    let groups: Vec<Vec<usize>> = match core.groups {
        Some(gs) => gs.to_vec(),
        None => (0..p).map(|j| vec![j]).collect(),
    };
    if p <= WORKING_SET_MIN {
        return solve_inner(core, cfg, None);
    }
    let batch = (2 * core.k.nrows()).max(64);
    let lam = core.lam;
    let group_corr = |kv: &DMatrix<f64>| -> Vec<f64> {
        groups
            .iter()
            .map(|g| g.iter().map(|&j| kv.row(j).norm_squared()).sum::<f64>().sqrt())
            .collect()
    };

    let mut z = DMatrix::zeros(p, c);
    let mut in_set = vec![false; groups.len()];
    let mut set: Vec<usize> = Vec::new();
    let mut iterations = 0usize;
    let mut t = core.best_intercept(&z);
    loop {
        let (_, _, v) = core.kkt(&z, &t);
        let corr = group_corr(&core.k.tr_mul(&v));
        let mut violators: Vec<usize> = (0..groups.len())
            .filter(|&g| !in_set[g] && corr[g] > lam * (1.0 + cfg.kkt_tol))
            .collect();
        if violators.is_empty() && !set.is_empty() {
            // Inner solve met its own KKT and nothing outside violates.
            return Ok(CoreResult { z, t, iterations, converged: true });
        }
        if violators.is_empty() {
            // Zero is optimal; let the plain solver certify it.
            return solve_inner(core, cfg, None);
        }
        violators.sort_by(|&a, &b| corr[b].total_cmp(&corr[a]).then(a.cmp(&b)));
        violators.truncate(batch.max(set.len() / 2));
        for g in violators {
            in_set[g] = true;
            set.push(g);
        }
        set.sort_unstable();

        let cols: Vec<usize> = set.iter().flat_map(|&g| groups[g].iter().copied()).collect();
        let sub_k = core.k.select_columns(&cols);
        let sub_groups: Option<Vec<Vec<usize>>> = core.groups.map(|_| {
            let mut at = 0;
            set.iter()
                .map(|&g| {
                    let b: Vec<usize> = (at..at + groups[g].len()).collect();
                    at += groups[g].len();
                    b
                })
                .collect()
        });
        let sub = Core {
            k: &sub_k,
            y: core.y.clone(),
            lam,
            loss: core.loss,
            intercept: core.intercept,
            groups: sub_groups.as_deref(),
        };
        let warm = z.select_rows(&cols);
        let remaining = SolverConfig {
            max_iter: cfg.max_iter.saturating_sub(iterations).max(1),
            ..*cfg
        };
        let r = solve_inner(&sub, &remaining, Some(warm))?;
        iterations += r.iterations;
        t = r.t;
        z.fill(0.0);
        for (ci, &j) in cols.iter().enumerate() {
            z.set_row(j, &r.z.row(ci));
        }
        if !r.converged {
            return Ok(CoreResult { z, t, iterations, converged: false });
        }
        if set.len() == groups.len() {
            return Ok(CoreResult { z, t, iterations, converged: true });
        }
    }
}

/// Solves the penalized problem. Returns `NonConverged` (carrying the best
/// iterate) when `max_iter` runs out before the KKT conditions hold.
pub fn solve(problem: &LassoProblem, cfg: &SolverConfig) -> Result<LassoSolution> {
    problem.validate()?;
    let lam = problem.lambda_eff();
    let c = problem.y.ncols();
    let p = problem.k.ncols();

    let (z, t, iterations, converged) = if problem.groups.is_none() && c > 1 {
        // ℓ1 separates across outputs.
        let mut z = DMatrix::zeros(p, c);
        let mut t = vec![0.0; c];
        let (mut iters, mut ok) = (0, true);
        for o in 0..c {
            let core = Core {
                k: &problem.k,
                y: problem.y.columns(o, 1).into_owned(),
                lam,
                loss: problem.loss,
                intercept: problem.intercept,
                groups: None,
            };
            let r = solve_working_set(&core, cfg)?;
            z.set_column(o, &r.z.column(0));
            t[o] = r.t[0];
            iters = iters.max(r.iterations);
            ok &= r.converged;
        }
        (z, t, iters, ok)
    } else {
        let core = Core {
            k: &problem.k,
            y: problem.y.clone(),
            lam,
            loss: problem.loss,
            intercept: problem.intercept,
            groups: problem.groups.as_deref(),
        };
        let r = solve_working_set(&core, cfg)?;
        (r.z, r.t, r.iterations, r.converged)
    };

    let t_opt = problem.intercept.then(|| t.clone());
    let cert = dual_certificate_raw(problem, &z, t_opt.as_deref());
    let sol = LassoSolution {
        objective: objective_value(problem, &z, t_opt.as_deref()),
        dual_residual: cert.max_violation,
        intercept_residual: cert.intercept_residual,
        support: support_of(&z, problem.groups.as_deref(), 1e-8),
        z,
        t: t_opt,
        iterations,
        converged,
    };
    if converged {
        Ok(sol)
    } else {
        Err(Error::NonConverged {
            iterations,
            best: Box::new(sol),
        })
    }
}

fn dual_certificate_raw(problem: &LassoProblem, z: &DMatrix<f64>, t: Option<&[f64]>) -> DualCertificate {
    let core = Core {
        k: &problem.k,
        y: problem.y.clone(),
        lam: problem.lambda_eff(),
        loss: problem.loss,
        intercept: problem.intercept,
        groups: problem.groups.as_deref(),
    };
    let zero = vec![0.0; problem.y.ncols()];
    let (max_violation, intercept_residual, v) = core.kkt(z, t.unwrap_or(&zero));
    DualCertificate {
        v,
        max_violation,
        intercept_residual,
    }
}

/// `v = ∇ℓ(Kz + 1t, y)` with its constraint violations. For problems whose
/// ℓ1 penalty separates across several outputs the violation is the worst
/// single entry of `KᵀV`.
pub fn dual_certificate(problem: &LassoProblem, solution: &LassoSolution) -> DualCertificate {
    dual_certificate_raw(problem, &solution.z, solution.t.as_deref())
}

/// `ℓ(Kz + 1t, y) + λ_eff·penalty(z)`.
pub fn objective_value(problem: &LassoProblem, z: &DMatrix<f64>, t: Option<&[f64]>) -> f64 {
    let core = Core {
        k: &problem.k,
        y: problem.y.clone(),
        lam: problem.lambda_eff(),
        loss: problem.loss,
        intercept: problem.intercept && t.is_some(),
        groups: problem.groups.as_deref(),
    };
    let zero = vec![0.0; problem.y.ncols()];
    core.objective(z, t.unwrap_or(&zero))
}
