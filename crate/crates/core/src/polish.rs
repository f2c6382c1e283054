//! Neuron polishing: snap each trained neuron to the cross product of the
//! `r-1` samples it is most nearly orthogonal to, refit the following layer
//! with the new features frozen, and rebalance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::ga;
use crate::lasso::Loss;
use crate::net::{self, Layer, ReluNetwork};

/// Relative singular-value cut for the rank of layer activations.
pub const ACTIVATION_RANK_RTOL: f64 = 1e-8;
/// Ridge added when the refit normal equations are singular.
pub const RIDGE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Refit {
    LeastSquaresRidge,
    LogisticRidge,
}

impl Refit {
    pub fn loss(self) -> Loss {
        match self {
            Refit::LeastSquaresRidge => Loss::SquaredError,
            Refit::LogisticRidge => Loss::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishConfig {
    /// Lift samples with a trailing 1 so the bias is polished too.
    pub include_bias: bool,
    pub rank_override: Option<usize>,
    pub refit: Refit,
    /// Ridge weight on the refit layer; `None` uses `lambda`.
    pub refit_reg: Option<f64>,
    /// Hidden layers to polish, in order. Empty means every hidden layer.
    pub layers_to_polish: Vec<usize>,
    /// Weight decay used for the reported objective.
    pub lambda: f64,
    pub p: u8,
}

impl Default for PolishConfig {
    fn default() -> Self {
        Self {
            include_bias: true,
            rank_override: None,
            refit: Refit::LeastSquaresRidge,
            refit_reg: None,
            layers_to_polish: Vec::new(),
            lambda: 1e-3,
            p: 2,
        }
    }
}

impl PolishConfig {
    fn ridge(&self) -> f64 {
        self.refit_reg.unwrap_or(self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronReport {
    pub layer: usize,
    pub neuron: usize,
    /// Rows the polished neuron is orthogonal to (lifted when biased).
    pub selected: Vec<usize>,
    /// Orientation applied to the cross product of the selected rows.
    pub sign: i8,
    pub pre_residual: f64,
    pub post_residual: f64,
    /// Angle between the original and polished (lifted) weight vectors.
    pub angle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRank {
    pub layer: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishReport {
    pub neurons: Vec<NeuronReport>,
    pub ranks: Vec<LayerRank>,
    pub pre_objective: f64,
    pub post_objective: f64,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
    pub ridge_floor_applied: bool,
}

/// Outcome of polishing one layer.
#[derive(Debug, Clone)]
pub struct PolishedLayer {
    pub w: DMatrix<f64>,
    pub b: Option<DVector<f64>>,
    pub rank: usize,
    pub neurons: Vec<NeuronReport>,
}

fn lifted_rows(samples: &DMatrix<f64>, include_bias: bool) -> Vec<Vec<f64>> {
    samples
        .row_iter()
        .map(|r| {
            let mut v: Vec<f64> = r.iter().copied().collect();
            if include_bias {
                v.push(1.0);
            }
            v
        })
        .collect()
}

/// Top-`r` right singular basis (`D × r`) and the effective rank.
fn top_basis(rows: &[Vec<f64>], rank_override: Option<usize>) -> (DMatrix<f64>, usize) {
    let dim = rows.first().map_or(0, |r| r.len());
    let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let svd = m.svd(false, true);
    let s = &svd.singular_values;
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let smax = s.max();
    let r = rank_override.unwrap_or_else(|| {
        order.iter().filter(|&&i| smax > 0.0 && s[i] > ACTIVATION_RANK_RTOL * smax).count()
    });
    let r = r.min(order.len());
    let mut v = DMatrix::zeros(dim, r);
    for (k, &i) in order.iter().take(r).enumerate() {
        v.set_column(k, &vt.row(i).transpose());
    }
    (v, r)
}

fn max_rel_residual(w: &[f64], rows: &[Vec<f64>], idx: &[usize]) -> f64 {
    let wn = ga::norm_l2(w);
    idx.iter()
        .map(|&i| {
            let xn = ga::norm_l2(&rows[i]);
            if wn == 0.0 || xn == 0.0 {
                0.0
            } else {
                ga::dot(w, &rows[i]).abs() / (wn * xn)
            }
        })
        .fold(0.0, f64::max)
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (ga::norm_l2(a), ga::norm_l2(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let ua: Vec<f64> = a.iter().map(|x| x / na).collect();
    let ub: Vec<f64> = b.iter().map(|x| x / nb).collect();
    let diff = ga::norm_l2(&ga::sub(&ua, &ub));
    let sum: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| x + y).collect();
    2.0 * diff.atan2(ga::norm_l2(&sum))
}

/// Polishes every neuron (row of `w`, `out × in`) of one layer against the
/// `n × in` activations feeding it.
pub fn polish_layer(
    layer_index: usize,
    w: &DMatrix<f64>,
    b: Option<&DVector<f64>>,
    samples: &DMatrix<f64>,
    config: &PolishConfig,
) -> Result<PolishedLayer> {
    if samples.ncols() != w.ncols() {
        return Err(Error::dim(format!(
            "layer {layer_index} takes {} inputs but samples have {}",
            w.ncols(),
            samples.ncols()
        )));
    }
    let din = w.ncols();
    let rows = lifted_rows(samples, config.include_bias);
    let (basis, r) = top_basis(&rows, config.rank_override);
    let projected: Vec<Vec<f64>> = rows
        .iter()
        .map(|x| (0..r).map(|k| (0..x.len()).map(|j| x[j] * basis[(j, k)]).sum()).collect())
        .collect();

    let results: Vec<(Vec<f64>, NeuronReport)> = (0..w.nrows())
        .into_par_iter()
        .map(|j| {
            let mut orig: Vec<f64> = w.row(j).iter().copied().collect();
            if config.include_bias {
                orig.push(b.map_or(0.0, |b| b[j]));
            }
            let mut report = NeuronReport {
                layer: layer_index,
                neuron: j,
                selected: Vec::new(),
                sign: 1,
                pre_residual: 0.0,
                post_residual: 0.0,
                angle: 0.0,
                skipped: None,
            };
            if r < 2 {
                report.skipped = Some(format!("activation rank {r} leaves no rows to select"));
                return (orig, report);
            }
            if ga::norm_l2(&orig) == 0.0 {
                report.skipped = Some("zero neuron".into());
                return (orig, report);
            }
            let mut order: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .map(|(i, x)| (ga::dot(x, &orig).abs(), i))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut selected: Vec<usize> = Vec::with_capacity(r - 1);
            for &(_, i) in &order {
                if selected.len() == r - 1 {
                    break;
                }
                let mut cand: Vec<&[f64]> = selected.iter().map(|&s| projected[s].as_slice()).collect();
                cand.push(&projected[i]);
                if ga::norm_l2(&projected[i]) > 0.0 && ga::independent(&cand) {
                    selected.push(i);
                }
            }
            report.pre_residual = max_rel_residual(&orig, &rows, &selected);
            report.selected = selected.clone();
            if selected.len() < r - 1 {
                report.skipped = Some(format!(
                    "only {} independent rows, need {}",
                    selected.len(),
                    r - 1
                ));
                return (orig, report);
            }
            let gens: Vec<&[f64]> = selected.iter().map(|&s| projected[s].as_slice()).collect();
            let Ok(c) = ga::cross(&gens) else {
                report.skipped = Some("cross product failed".into());
                return (orig, report);
            };
            let mut lifted: Vec<f64> = (0..rows[0].len())
                .map(|jj| (0..r).map(|k| basis[(jj, k)] * c.direction[k]).sum())
                .collect();
            let wn = ga::norm_p(&lifted[..din], config.p);
            let scale = if wn > 0.0 { wn } else { ga::norm_p(&lifted, config.p) };
            if scale == 0.0 {
                report.skipped = Some("degenerate cross product".into());
                return (orig, report);
            }
            let sign = if ga::dot(&orig, &lifted) < 0.0 { -1.0 } else { 1.0 };
            for v in lifted.iter_mut() {
                *v *= sign / scale;
            }
            report.sign = sign as i8;
            report.post_residual = max_rel_residual(&lifted, &rows, &selected);
            report.angle = angle_between(&orig, &lifted);
            (lifted, report)
        })
        .collect();

    let mut w_out = w.clone();
    let mut b_out = if config.include_bias {
        Some(b.cloned().unwrap_or_else(|| DVector::zeros(w.nrows())))
    } else {
        b.cloned()
    };
    let mut neurons = Vec::with_capacity(results.len());
    for (j, (v, rep)) in results.into_iter().enumerate() {
        if rep.skipped.is_none() {
            w_out.row_mut(j).copy_from_slice(&v[..din]);
            if config.include_bias {
                b_out.as_mut().expect("bias present")[j] = v[din];
            }
        }
        neurons.push(rep);
    }
    Ok(PolishedLayer { w: w_out, b: b_out, rank: r, neurons })
}

/// Ridge least squares `min ½‖H a + t - y‖² + ρ‖a‖²` with an unpenalized
/// intercept; returns `(a, t, floor_applied)`.
fn ridge_ls(h: &DMatrix<f64>, y: &DVector<f64>, rho: f64, intercept: bool) -> (DVector<f64>, f64, bool) {
    let n = h.nrows() as f64;
    let (hc, yc, hmean, ymean) = if intercept {
        let hmean = DVector::from_fn(h.ncols(), |j, _| h.column(j).sum() / n);
        let ymean = y.sum() / n;
        let mut hc = h.clone();
        for (j, mut col) in hc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-hmean[j]);
        }
        (hc, y.add_scalar(-ymean), hmean, ymean)
    } else {
        (h.clone(), y.clone(), DVector::zeros(h.ncols()), 0.0)
    };
    let g = hc.tr_mul(&hc);
    let rhs = hc.tr_mul(&yc);
    let mut floor = false;
    let mut reg = 2.0 * rho;
    let a = loop {
        let mut m = g.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += reg;
        }
        if let Some(ch) = m.clone().cholesky() {
            let a = ch.solve(&rhs);
            // One refinement step against the exact system.
            let resid = &rhs - &m * &a;
            break a + ch.solve(&resid);
        }
        floor = true;
        reg = if reg < RIDGE_FLOOR { RIDGE_FLOOR } else { reg * 10.0 };
    };
    let t = if intercept { ymean - hmean.dot(&a) } else { 0.0 };
    (a, t, floor)
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Damped Newton for `Σ log(1+exp(-y(Ha+t))) + ρ‖a‖²`, gradient norm 1e-10.
fn ridge_logistic(h: &DMatrix<f64>, y: &DVector<f64>, rho: f64, intercept: bool) -> (DVector<f64>, f64, bool) {
    let (n, m) = (h.nrows(), h.ncols());
    let q = m + usize::from(intercept);
    let a_mat = {
        let mut a = DMatrix::zeros(n, q);
        a.view_mut((0, 0), (n, m)).copy_from(h);
        if intercept {
            a.column_mut(m).fill(1.0);
        }
        a
    };
    let reg = (2.0 * rho).max(0.0);
    let mut floor = rho == 0.0;
    let eff_reg = if rho == 0.0 { RIDGE_FLOOR } else { reg };
    let obj = |u: &DVector<f64>| -> f64 {
        let f = &a_mat * u;
        let l: f64 = f
            .iter()
            .zip(y.iter())
            .map(|(fi, yi)| {
                let z = -fi * yi;
                if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() }
            })
            .sum();
        l + 0.5 * eff_reg * u.rows(0, m).norm_squared()
    };
    let mut u = DVector::zeros(q);
    let mut fu = obj(&u);
    for _ in 0..200 {
        let f = &a_mat * &u;
        let s = DVector::from_fn(n, |i, _| sigmoid(-y[i] * f[i]));
        let gl = DVector::from_fn(n, |i, _| -y[i] * s[i]);
        let mut g = a_mat.tr_mul(&gl);
        let mut da = a_mat.clone();
        for i in 0..n {
            da.row_mut(i).scale_mut(s[i] * (1.0 - s[i]));
        }
        let mut hess = a_mat.tr_mul(&da);
        for j in 0..m {
            g[j] += eff_reg * u[j];
            hess[(j, j)] += eff_reg;
        }
        if g.norm() <= 1e-10 {
            break;
        }
        let dir = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => {
                floor = true;
                for j in 0..q {
                    hess[(j, j)] += RIDGE_FLOOR;
                }
                match hess.cholesky() {
                    Some(ch) => ch.solve(&(-&g)),
                    None => -&g,
                }
            }
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &u + &dir * step;
            let fc = obj(&cand);
            if fc <= fu + 1e-4 * step * slope {
                u = cand;
                fu = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let t = if intercept { u[m] } else { 0.0 };
    (u.rows(0, m).into_owned(), t, floor)
}

/// Refits the layer after `polished` with the features up to `polished`
/// frozen. The output layer is fit to the labels; a hidden next layer is fit
/// to its own pre-activations under the original network (`reference`).
/// Returns the new network and whether the ridge floor was needed.
pub fn refit_head(
    net: &ReluNetwork,
    polished: usize,
    data: &DataMatrix,
    config: &PolishConfig,
    reference: Option<&ReluNetwork>,
) -> Result<(ReluNetwork, bool)> {
    let next = polished + 1;
    if next >= net.depth() {
        return Err(Error::InvalidArgument(format!("layer {polished} has no following layer")));
    }
    let x = data.samples();
    let acts = net.activations(&x)?;
    let h = &acts[polished];
    let is_output = next + 1 == net.depth();
    let targets: DMatrix<f64> = if is_output {
        data.y().clone()
    } else {
        let src = reference.unwrap_or(net);
        let ra = src.activations(&x)?;
        // Pre-activation of the next layer under the reference network.
        let layer = &src.layers[next];
        let mut z = &ra[polished] * layer.w.transpose();
        if let Some(b) = &layer.b {
            for (j, mut col) in z.column_iter_mut().enumerate() {
                col.add_scalar_mut(b[j]);
            }
        }
        z
    };
    let intercept = net.layers[next].b.is_some() || is_output;
    let rho = config.ridge();
    let logistic = is_output && config.refit == Refit::LogisticRidge;
    let mut w = DMatrix::zeros(net.layers[next].outputs(), h.ncols());
    let mut b = DVector::zeros(net.layers[next].outputs());
    let mut floor = false;
    for o in 0..targets.ncols() {
        let y = targets.column(o).into_owned();
        let (a, t, fl) = if logistic {
            ridge_logistic(h, &y, rho, intercept)
        } else {
            ridge_ls(h, &y, rho, intercept)
        };
        floor |= fl;
        w.row_mut(o).copy_from(&a.transpose());
        b[o] = t;
    }
    let mut out = net.clone();
    out.layers[next] = Layer::new(w, intercept.then_some(b));
    Ok((out, floor))
}

fn norm_p_row(w: &DMatrix<f64>, j: usize, p: u8) -> f64 {
    let row: Vec<f64> = w.row(j).iter().copied().collect();
    ga::norm_p(&row, p)
}

fn accuracy(f: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let n = f.nrows();
    if n == 0 {
        return 0.0;
    }
    let hits = if f.ncols() == 1 {
        (0..n).filter(|&i| (f[(i, 0)] >= 0.0) == (y[(i, 0)] >= 0.0)).count()
    } else {
        (0..n)
            .filter(|&i| f.row(i).transpose().argmax().0 == y.row(i).transpose().argmax().0)
            .count()
    };
    hits as f64 / n as f64
}

/// Polishes the requested layers in order, refitting the following layer and
/// rebalancing after each.
pub fn polish_network(net: &ReluNetwork, data: &DataMatrix, config: &PolishConfig) -> Result<(ReluNetwork, PolishReport)> {
    let loss = config.refit.loss();
    let x = data.samples();
    let pre = net::nonconvex_cost(net, data, config.lambda, config.p, loss)?;
    let pre_acc = accuracy(&net::forward(net, &x)?, data.y());
    let layers: Vec<usize> = if config.layers_to_polish.is_empty() {
        (0..net.depth() - 1).collect()
    } else {
        config.layers_to_polish.clone()
    };
    let mut cur = net.clone();
    let mut neurons = Vec::new();
    let mut ranks = Vec::new();
    let mut floor = false;
    for &l in &layers {
        if l + 1 >= cur.depth() {
            return Err(Error::InvalidArgument(format!("layer {l} is not a hidden layer")));
        }
        let acts = cur.activations(&x)?;
        let input = if l == 0 { x.clone() } else { acts[l - 1].clone() };
        let layer = &cur.layers[l];
        let pl = polish_layer(l, &layer.w, layer.b.as_ref(), &input, config)?;
        let reference = cur.clone();
        // Back to the trained magnitudes, so the ridge head sees the same
        // weight-decay split as the original network.
        let (mut w, mut b) = (pl.w, pl.b);
        for j in 0..w.nrows() {
            let old = norm_p_row(&layer.w, j, config.p);
            let new = norm_p_row(&w, j, config.p);
            if new > 0.0 && old > 0.0 {
                let s = old / new;
                w.row_mut(j).scale_mut(s);
                if let Some(b) = b.as_mut() {
                    b[j] *= s;
                }
            }
        }
        cur.layers[l] = Layer::new(w, b);
        if l == 0 {
            cur.provenance = vec![None; cur.layers[0].outputs()];
        }
        let (refit, fl) = refit_head(&cur, l, data, config, Some(&reference))?;
        floor |= fl;
        cur = net::balance_scaling(&refit).net;
        ranks.push(LayerRank { layer: l, rank: pl.rank });
        neurons.extend(pl.neurons);
    }
    let post = net::nonconvex_cost(&cur, data, config.lambda, config.p, loss)?;
    let post_acc = accuracy(&net::forward(&cur, &x)?, data.y());
    Ok((
        cur,
        PolishReport {
            neurons,
            ranks,
            pre_objective: pre.total,
            post_objective: post.total,
            pre_accuracy: pre_acc,
            post_accuracy: post_acc,
            ridge_floor_applied: floor,
        },
    ))
}
