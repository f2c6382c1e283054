//! Reference non-convex trainer: full-batch gradient descent or Adam on the
//! weight-decay objectives, best of several seeded restarts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::lasso::Loss;
use crate::net::{self, Layer, Regularizer, ReluNetwork};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    GD,
    AdaptiveMoments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub m: usize,
    pub lambda: f64,
    pub p: u8,
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Standard deviation of the Gaussian initialization; 0 gives all zeros.
    pub init_scale: f64,
    pub loss: Loss,
    pub hidden_bias: bool,
    pub output_bias: bool,
    /// Linearly decay the step size to 1% over the run.
    pub decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m: 50,
            lambda: 0.1,
            p: 2,
            steps: 5000,
            lr: 1e-2,
            restarts: 1,
            seed: 0,
            optimizer: Optimizer::AdaptiveMoments,
            init_scale: 0.5,
            loss: Loss::SquaredError,
            hidden_bias: true,
            output_bias: true,
            decay: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.steps == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("m, steps and restarts must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) || !(self.lr > 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::InvalidArgument("lambda, lr and init_scale must be non-negative (lr > 0)".into()));
        }
        if self.p != 1 && self.p != 2 {
            return Err(Error::InvalidArgument(format!("p must be 1 or 2, got {}", self.p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub net: ReluNetwork,
    pub best_objective: f64,
    /// Final objective of every restart; `None` marks a diverged restart.
    pub restart_objectives: Vec<Option<f64>>,
}

/// Flat parameter storage shared by the two architectures.
#[derive(Clone)]
struct Params {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    /// Diagonal middle layer (three-layer only).
    w2: DVector<f64>,
    b2: DVector<f64>,
    wo: DMatrix<f64>,
    bo: DVector<f64>,
}

impl Params {
    fn zeros_like(p: &Params) -> Params {
        Params {
            w1: DMatrix::zeros(p.w1.nrows(), p.w1.ncols()),
            b1: DVector::zeros(p.b1.len()),
            w2: DVector::zeros(p.w2.len()),
            b2: DVector::zeros(p.b2.len()),
            wo: DMatrix::zeros(p.wo.nrows(), p.wo.ncols()),
            bo: DVector::zeros(p.bo.len()),
        }
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.wo.as_mut_slice(),
            self.bo.as_mut_slice(),
        ]
    }

    fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.wo.as_slice(),
            self.bo.as_slice(),
        ]
    }

    fn finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

fn p_norm_grad(row: &[f64], p: u8) -> (f64, Vec<f64>) {
    match p {
        1 => (
            row.iter().map(|v| v.abs()).sum(),
            row.iter().map(|v| if *v > 0.0 { 1.0 } else if *v < 0.0 { -1.0 } else { 0.0 }).collect(),
        ),
        _ => {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let g = if n > 0.0 { row.iter().map(|v| v / n).collect() } else { vec![0.0; row.len()] };
            (n, g)
        }
    }
}

fn loss_grad(loss: Loss, f: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    match loss {
        Loss::SquaredError => f - y,
        Loss::Logistic => f.zip_map(y, |a, b| {
            let u = -a * b;
            let s = if u >= 0.0 { 1.0 / (1.0 + (-u).exp()) } else { let e = u.exp(); e / (1.0 + e) };
            -b * s
        }),
    }
}

fn col_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum())
}

struct Model<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    cfg: &'a TrainConfig,
    three: bool,
}

impl Model<'_> {
    /// Gradient of loss + λ·reg with the ReLU derivative taken as 0 at 0.
    fn gradient(&self, p: &Params) -> Params {
        let x = self.x;
        let mut h1 = x * p.w1.transpose();
        for (j, mut c) in h1.column_iter_mut().enumerate() {
            c.add_scalar_mut(p.b1[j]);
        }
        let a1 = h1.map(|v| v.max(0.0));
        let (h2, a_last) = if self.three {
            let mut h2 = a1.clone();
            for (j, mut c) in h2.column_iter_mut().enumerate() {
                c.scale_mut(p.w2[j]);
                c.add_scalar_mut(p.b2[j]);
            }
            let a2 = h2.map(|v| v.max(0.0));
            (Some(h2), a2)
        } else {
            (None, a1.clone())
        };
        let mut f = &a_last * p.wo.transpose();
        for (o, mut c) in f.column_iter_mut().enumerate() {
            c.add_scalar_mut(p.bo[o]);
        }
        let g = loss_grad(self.cfg.loss, &f, self.y);

        let mut grad = Params::zeros_like(p);
        grad.wo = g.tr_mul(&a_last);
        if self.cfg.output_bias {
            grad.bo = col_sums(&g);
        }
        let da_last = &g * &p.wo;
        let dh1 = if let Some(h2) = &h2 {
            let dh2 = da_last.zip_map(h2, |d, h| if h > 0.0 { d } else { 0.0 });
            grad.w2 = DVector::from_fn(p.w2.len(), |j, _| dh2.column(j).dot(&a1.column(j)));
            grad.b2 = col_sums(&dh2);
            let mut da1 = dh2;
            for (j, mut c) in da1.column_iter_mut().enumerate() {
                c.scale_mut(p.w2[j]);
            }
            da1.zip_map(&h1, |d, h| if h > 0.0 { d } else { 0.0 })
        } else {
            da_last.zip_map(&h1, |d, h| if h > 0.0 { d } else { 0.0 })
        };
        grad.w1 = dh1.tr_mul(x);
        if self.cfg.hidden_bias {
            grad.b1 = col_sums(&dh1);
        }

        let lam = self.cfg.lambda;
        let pn = self.cfg.p;
        for j in 0..p.w1.nrows() {
            let row: Vec<f64> = p.w1.row(j).iter().copied().collect();
            let (nrm, dn) = p_norm_grad(&row, pn);
            let col_norm = p.wo.column(j).norm();
            if self.three {
                // ⅓(a³ + |w2|³ + c³): derivatives a²∂a, w2|w2|, c·w.
                for k in 0..row.len() {
                    grad.w1[(j, k)] += lam * nrm * nrm * dn[k];
                }
                grad.w2[j] += lam * p.w2[j] * p.w2[j].abs();
                for o in 0..p.wo.nrows() {
                    grad.wo[(o, j)] += lam * col_norm * p.wo[(o, j)];
                }
            } else {
                for k in 0..row.len() {
                    grad.w1[(j, k)] += lam * 2.0 * nrm * dn[k];
                }
                for o in 0..p.wo.nrows() {
                    grad.wo[(o, j)] += lam * 2.0 * p.wo[(o, j)];
                }
            }
        }
        grad
    }

    fn to_network(&self, p: &Params) -> ReluNetwork {
        let mut layers = vec![Layer::new(p.w1.clone(), self.cfg.hidden_bias.then(|| p.b1.clone()))];
        if self.three {
            layers.push(Layer::new(DMatrix::from_diagonal(&p.w2), Some(p.b2.clone())));
        }
        layers.push(Layer::new(p.wo.clone(), self.cfg.output_bias.then(|| p.bo.clone())));
        let mut net = ReluNetwork::new(layers, self.cfg.p).expect("consistent shapes");
        net.regularizer = if self.three { Regularizer::BranchCubic } else { Regularizer::Pair };
        net
    }

    fn init(&self, restart: usize) -> Params {
        let (d, c, m) = (self.x.ncols(), self.y.ncols(), self.cfg.m);
        let mut r = rng::child(self.cfg.seed, rng::stream::TRAINER + restart as u64);
        let s = self.cfg.init_scale;
        let mut draw = |rows: usize, cols: usize| -> DMatrix<f64> {
            DMatrix::from_fn(rows, cols, |_, _| s * r.sample::<f64, _>(StandardNormal))
        };
        let w1 = draw(m, d);
        let b1 = if self.cfg.hidden_bias { draw(m, 1).column(0).into_owned() } else { DVector::zeros(m) };
        let (w2, b2) = if self.three {
            (draw(m, 1).column(0).into_owned().map(|v| v.abs().max(if s > 0.0 { 1e-3 } else { 0.0 })), DVector::zeros(m))
        } else {
            (DVector::zeros(0), DVector::zeros(0))
        };
        let wo = draw(c, m);
        Params { w1, b1, w2, b2, wo, bo: DVector::zeros(c) }
    }

    fn run(&self, restart: usize, data: &DataMatrix) -> Option<(ReluNetwork, f64)> {
        let cfg = self.cfg;
        let mut p = self.init(restart);
        let mut m1 = Params::zeros_like(&p);
        let mut m2 = Params::zeros_like(&p);
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut best: Option<(Params, f64)> = None;
        let checkpoint = (cfg.steps / 20).max(1);
        for step in 1..=cfg.steps {
            let g = self.gradient(&p);
            let lr = if cfg.decay {
                cfg.lr * (1.0 - 0.99 * (step - 1) as f64 / cfg.steps as f64)
            } else {
                cfg.lr
            };
            match cfg.optimizer {
                Optimizer::GD => {
                    for (w, gv) in p.slices_mut().into_iter().zip(g.slices()) {
                        for (a, b) in w.iter_mut().zip(gv.iter()) {
                            *a -= lr * b;
                        }
                    }
                }
                Optimizer::AdaptiveMoments => {
                    let bc1 = 1.0 - f64::powi(b1, step as i32);
                    let bc2 = 1.0 - f64::powi(b2, step as i32);
                    let gs = g.slices();
                    let ps = p.slices_mut();
                    let m1s = m1.slices_mut();
                    let m2s = m2.slices_mut();
                    for k in 0..6 {
                        for i in 0..gs[k].len() {
                            let gv = gs[k][i];
                            m1s[k][i] = b1 * m1s[k][i] + (1.0 - b1) * gv;
                            m2s[k][i] = b2 * m2s[k][i] + (1.0 - b2) * gv * gv;
                            ps[k][i] -= lr * (m1s[k][i] / bc1) / ((m2s[k][i] / bc2).sqrt() + eps);
                        }
                    }
                }
            }
            if !cfg.output_bias {
                p.bo.fill(0.0);
            }
            if !cfg.hidden_bias {
                p.b1.fill(0.0);
            }
            if !p.finite() {
                return best.map(|(bp, _)| {
                    let net = self.to_network(&bp);
                    let obj = objective(&net, data, cfg);
                    (net, obj)
                });
            }
            if step % checkpoint == 0 || step == cfg.steps {
                let obj = objective(&self.to_network(&p), data, cfg);
                if obj.is_finite() && best.as_ref().is_none_or(|(_, b)| obj < *b) {
                    best = Some((p.clone(), obj));
                }
            }
        }
        best.map(|(bp, _)| {
            let net = self.to_network(&bp);
            let obj = objective(&net, data, cfg);
            (net, obj)
        })
    }
}

fn objective(net: &ReluNetwork, data: &DataMatrix, cfg: &TrainConfig) -> f64 {
    net::nonconvex_cost(net, data, cfg.lambda, cfg.p, cfg.loss)
        .map(|r| r.total)
        .unwrap_or(f64::NAN)
}

fn train(data: &DataMatrix, cfg: &TrainConfig, three: bool) -> Result<TrainResult> {
    cfg.validate()?;
    let x = data.samples();
    if x.iter().chain(data.y().iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite training data".into()));
    }
    let model = Model { x: &x, y: data.y(), cfg, three };
    let runs: Vec<Option<(ReluNetwork, f64)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| model.run(k, data))
        .collect();
    let restart_objectives: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().map(|(_, o)| *o)).collect();
    let failed = restart_objectives.iter().filter(|o| o.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} of {} restarts diverged", cfg.restarts);
    }
    // Lowest objective, ties to the lower restart index.
    let best = runs
        .into_iter()
        .flatten()
        .fold(None::<(ReluNetwork, f64)>, |acc, cur| match acc {
            Some(a) if a.1 <= cur.1 => Some(a),
            _ => Some(cur),
        })
        .ok_or_else(|| Error::Numerical("every restart diverged".into()))?;
    Ok(TrainResult {
        net: best.0,
        best_objective: best.1,
        restart_objectives,
    })
}

/// Two-layer network `Σ_j (x·W1_j + b1_j)₊ W2_j + b2` trained on
/// `ℓ + λ Σ_j ‖W1_j‖_p² + ‖W2_j‖²`.
pub fn train_two_layer(data: &DataMatrix, cfg: &TrainConfig) -> Result<TrainResult> {
    train(data, cfg, false)
}

/// Three-layer network of `m` scalar branches trained on the cubic
/// regularizer `λ/3 Σ_j ‖W1_j‖_p³ + |W2_j|³ + |W3_j|³`.
pub fn train_three_layer(data: &DataMatrix, cfg: &TrainConfig) -> Result<TrainResult> {
    train(data, cfg, true)
}

/// Objective of a parameter draw; exposed for gradient checks.
#[doc(hidden)]
pub fn gradient_check(data: &DataMatrix, cfg: &TrainConfig, three: bool, restart: usize) -> (f64, f64) {
    let x = data.samples();
    let model = Model { x: &x, y: data.y(), cfg, three };
    let mut p = model.init(restart);
    // b2 = 0 puts inactive branches exactly on the second ReLU's kink.
    p.b2.fill(0.05);
    let g = model.gradient(&p);
    // Directional derivative along the gradient vs central difference.
    let h = 1e-6;
    let shift = |sgn: f64| {
        let mut q = p.clone();
        for (w, gv) in q.slices_mut().into_iter().zip(g.slices()) {
            for (a, b) in w.iter_mut().zip(gv.iter()) {
                *a += sgn * h * b;
            }
        }
        objective(&model.to_network(&q), data, cfg)
    };
    let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
    let analytic: f64 = g.slices().iter().map(|s| s.iter().map(|v| v * v).sum::<f64>()).sum();
    (fd, analytic)
}
