//! Explicit ReLU networks: reconstruction from convex solutions, evaluation,
//! weight-decay costs and balanced rescaling.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{self, DataMatrix};
use crate::dict::{self, Dictionary, FeatureDescriptor, Generator};
use crate::error::{Error, Result};
use crate::ga;
use crate::lasso::{LassoSolution, Loss};

/// Relative tolerance for checking a descriptor's stored norm against the
/// recomputed cross product.
const PROVENANCE_RTOL: f64 = 1e-9;

/// One affine map `x ↦ W x + b`, `W` being `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: Option<DVector<f64>>,
}

impl Layer {
    pub fn new(w: DMatrix<f64>, b: Option<DVector<f64>>) -> Self {
        Self { w, b }
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }
}

/// How the weight-decay term of a network is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// Two layers: `Σ_j ‖W1_j‖_p² + ‖W2_{·j}‖₂²`.
    Pair,
    /// Three layers of parallel scalar branches (diagonal middle layer):
    /// `⅓ Σ_j ‖W1_j‖_p³ + |W2_jj|³ + ‖W3_{·j}‖₂³`.
    BranchCubic,
    /// Plain weight decay `Σ_l ‖W_l‖_F²`.
    Frobenius,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    pub layers: Vec<Layer>,
    /// Generator identity of each first-layer neuron, when known.
    pub provenance: Vec<Option<FeatureDescriptor>>,
    /// Extended generator set the three-layer descriptors index into.
    pub generators: Vec<Generator>,
    pub p: u8,
    pub regularizer: Regularizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonconvexObjectiveReport {
    pub loss_term: f64,
    pub reg_term: f64,
    pub total: f64,
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Option<Vec<f64>>,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    p: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regularizer: Option<Regularizer>,
    layers: Vec<LayerJson>,
    #[serde(default)]
    provenance: Vec<Option<FeatureDescriptor>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    generators: Vec<Generator>,
}

fn default_regularizer(layers: &[Layer]) -> Regularizer {
    match layers.len() {
        2 => Regularizer::Pair,
        3 if is_branch_diagonal(&layers[1]) => Regularizer::BranchCubic,
        _ => Regularizer::Frobenius,
    }
}

fn is_branch_diagonal(l: &Layer) -> bool {
    l.w.is_square()
        && (0..l.w.nrows()).all(|i| (0..l.w.ncols()).all(|j| i == j || l.w[(i, j)] == 0.0))
}

impl ReluNetwork {
    pub fn new(layers: Vec<Layer>, p: u8) -> Result<Self> {
        let regularizer = default_regularizer(&layers);
        let net = Self {
            provenance: vec![None; layers.first().map_or(0, |l| l.outputs())],
            layers,
            generators: Vec::new(),
            p,
            regularizer,
        };
        net.check()?;
        Ok(net)
    }

    fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::dim("network without layers"));
        }
        if self.p != 1 && self.p != 2 {
            return Err(Error::InvalidArgument(format!("p must be 1 or 2, got {}", self.p)));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::dim(format!(
                    "layer {i} has {} outputs but layer {} takes {} inputs",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(b) = &l.b {
                if b.len() != l.outputs() {
                    return Err(Error::dim(format!("layer {i} bias has the wrong length")));
                }
            }
        }
        if self.regularizer == Regularizer::BranchCubic
            && (self.layers.len() != 3 || !is_branch_diagonal(&self.layers[1]))
        {
            return Err(Error::InvalidArgument("branch-cubic regularizer needs a diagonal middle layer".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Activations after each hidden layer followed by the output, row per sample.
    pub fn activations(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "network expects {} inputs, data has {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &h * layer.w.transpose();
            if let Some(b) = &layer.b {
                for (j, mut col) in z.column_iter_mut().enumerate() {
                    col.add_scalar_mut(b[j]);
                }
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            out.push(z.clone());
            h = z;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerJson {
                w: (0..l.w.nrows()).map(|i| l.w.row(i).iter().copied().collect()).collect(),
                b: l.b.as_ref().map(|b| b.iter().copied().collect()),
                shape: [l.w.nrows(), l.w.ncols()],
            })
            .collect();
        serde_json::to_value(NetworkJson {
            p: self.p,
            regularizer: Some(self.regularizer),
            layers,
            provenance: self.provenance.clone(),
            generators: self.generators.clone(),
        })
        .expect("network serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let j: NetworkJson = serde_json::from_value(v.clone())?;
        let mut layers = Vec::with_capacity(j.layers.len());
        for (i, l) in j.layers.into_iter().enumerate() {
            let [r, c] = l.shape;
            if l.w.len() != r || l.w.iter().any(|row| row.len() != c) {
                return Err(Error::Data(format!("layer {i}: W does not match shape {r}x{c}")));
            }
            layers.push(Layer {
                w: DMatrix::from_fn(r, c, |a, b| l.w[a][b]),
                b: l.b.map(DVector::from_vec),
            });
        }
        let regularizer = j.regularizer.unwrap_or_else(|| default_regularizer(&layers));
        let width = layers.first().map_or(0, |l| l.outputs());
        let provenance = if j.provenance.is_empty() {
            vec![None; width]
        } else if j.provenance.len() == width {
            j.provenance
        } else {
            return Err(Error::Data("provenance length differs from first-layer width".into()));
        };
        let net = Self {
            layers,
            provenance,
            generators: j.generators,
            p: j.p,
            regularizer,
        };
        net.check()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }

    /// Replaces a rank-reduced first layer `W̃` by `W̃ Vᵀ`, mapping neurons
    /// back to the original input space.
    pub fn lift_input(&mut self, v: &DMatrix<f64>) -> Result<()> {
        if v.ncols() != self.input_dim() {
            return Err(Error::dim("lift basis does not match the network input"));
        }
        self.layers[0].w = &self.layers[0].w * v.transpose();
        Ok(())
    }
}

/// Standard ReLU forward pass; `x` is `n × d`, the result `n × c`.
pub fn forward(net: &ReluNetwork, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(net.activations(x)?.pop().expect("non-empty"))
}

fn loss_value(loss: Loss, f: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    match loss {
        Loss::SquaredError => 0.5 * f.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        Loss::Logistic => f
            .iter()
            .zip(y.iter())
            .map(|(a, b)| {
                let u = -a * b;
                if u > 0.0 {
                    u + (-u).exp().ln_1p()
                } else {
                    u.exp().ln_1p()
                }
            })
            .sum(),
    }
}

fn row_norm(w: &DMatrix<f64>, j: usize, p: u8) -> f64 {
    let r: Vec<f64> = w.row(j).iter().copied().collect();
    ga::norm_p(&r, p)
}

fn col_norm(w: &DMatrix<f64>, j: usize) -> f64 {
    let c: Vec<f64> = w.column(j).iter().copied().collect();
    ga::norm_l2(&c)
}

/// Weight-decay term of the network, measured in the network's own form.
pub fn regularization(net: &ReluNetwork, p: u8) -> f64 {
    match net.regularizer {
        Regularizer::Pair => {
            let (w1, w2) = (&net.layers[0].w, &net.layers[1].w);
            (0..w1.nrows())
                .map(|j| row_norm(w1, j, p).powi(2) + col_norm(w2, j).powi(2))
                .sum()
        }
        Regularizer::BranchCubic => {
            let (w1, w2, w3) = (&net.layers[0].w, &net.layers[1].w, &net.layers[2].w);
            (0..w1.nrows())
                .map(|j| {
                    (row_norm(w1, j, p).powi(3) + w2[(j, j)].abs().powi(3) + col_norm(w3, j).powi(3)) / 3.0
                })
                .sum()
        }
        Regularizer::Frobenius => net.layers.iter().map(|l| l.w.norm_squared()).sum(),
    }
}

/// `ℓ(f(X), y) + λ·reg`.
pub fn nonconvex_cost(
    net: &ReluNetwork,
    data: &DataMatrix,
    lambda: f64,
    p: u8,
    loss: Loss,
) -> Result<NonconvexObjectiveReport> {
    let f = forward(net, &data.samples())?;
    if f.ncols() != data.outputs() {
        return Err(Error::dim("network outputs differ from label columns"));
    }
    let loss_term = loss_value(loss, &f, data.y());
    let reg_term = regularization(net, p);
    Ok(NonconvexObjectiveReport {
        loss_term,
        reg_term,
        total: loss_term + lambda * reg_term,
    })
}

/// Result of [`balance_scaling`]: the rescaled network and the neurons left
/// untouched because one side had zero norm.
#[derive(Debug, Clone)]
pub struct Balanced {
    pub net: ReluNetwork,
    pub skipped: Vec<usize>,
}

/// Per-neuron rescaling that keeps the function and minimizes the weight
/// decay term. Two layers use `α* = (‖W2_j‖/‖W1_j‖_p)^{1/2}`; branch networks
/// set all three factors of each branch to their geometric mean; plain
/// weight decay sweeps the closed form neuron by neuron.
pub fn balance_scaling(net: &ReluNetwork) -> Balanced {
    let mut out = net.clone();
    let mut skipped = Vec::new();
    let p = net.p;
    match net.regularizer {
        Regularizer::Pair => {
            for j in 0..out.layers[0].outputs() {
                let a = row_norm(&out.layers[0].w, j, p);
                let b = col_norm(&out.layers[1].w, j);
                if a == 0.0 || b == 0.0 {
                    skipped.push(j);
                    continue;
                }
                let alpha = (b / a).sqrt();
                scale_neuron(&mut out, 0, j, alpha);
            }
        }
        Regularizer::BranchCubic => {
            for j in 0..out.layers[0].outputs() {
                let a1 = row_norm(&out.layers[0].w, j, p);
                let a2 = out.layers[1].w[(j, j)].abs();
                let a3 = col_norm(&out.layers[2].w, j);
                if a1 == 0.0 || a2 == 0.0 || a3 == 0.0 {
                    skipped.push(j);
                    continue;
                }
                let g = (a1 * a2 * a3).cbrt();
                let (s1, s2, s3) = (g / a1, g / a2, g / a3);
                out.layers[0].w.row_mut(j).scale_mut(s1);
                if let Some(b) = out.layers[0].b.as_mut() {
                    b[j] *= s1;
                }
                out.layers[1].w[(j, j)] *= s2;
                if let Some(b) = out.layers[1].b.as_mut() {
                    b[j] *= s1 * s2;
                }
                out.layers[2].w.column_mut(j).scale_mut(s3);
            }
        }
        Regularizer::Frobenius => {
            let hidden = out.layers.len() - 1;
            for _sweep in 0..100 {
                let mut moved = 0.0f64;
                for l in 0..hidden {
                    for j in 0..out.layers[l].outputs() {
                        let a = out.layers[l].w.row(j).norm();
                        let b = out.layers[l + 1].w.column(j).norm();
                        if a == 0.0 || b == 0.0 {
                            continue;
                        }
                        let alpha = (b / a).sqrt();
                        moved = moved.max((alpha - 1.0).abs());
                        scale_neuron(&mut out, l, j, alpha);
                    }
                }
                if moved <= 1e-14 {
                    break;
                }
            }
            for j in 0..out.layers[0].outputs() {
                if out.layers[0].w.row(j).norm() == 0.0 {
                    skipped.push(j);
                }
            }
        }
    }
    Balanced { net: out, skipped }
}

/// Scales neuron `j` of layer `l` (incoming weights and bias) by `alpha` and
/// its outgoing weights by `1/alpha`.
fn scale_neuron(net: &mut ReluNetwork, l: usize, j: usize, alpha: f64) {
    net.layers[l].w.row_mut(j).scale_mut(alpha);
    if let Some(b) = net.layers[l].b.as_mut() {
        b[j] *= alpha;
    }
    net.layers[l + 1].w.column_mut(j).scale_mut(1.0 / alpha);
}

/// Builds the network realizing `Kz + 1t`. Every feature with a nonzero
/// coefficient row becomes one unit-norm first-layer neuron; three-layer
/// features add a middle neuron `(±h ∓ c)₊` computing the outer positive part.
pub fn reconstruct(dict: &Dictionary, sol: &LassoSolution, data: &DataMatrix) -> Result<ReluNetwork> {
    if data.n() != dict.n_rows() {
        return Err(Error::Provenance(format!(
            "dictionary has {} rows, data has {} samples",
            dict.n_rows(),
            data.n()
        )));
    }
    if sol.z.nrows() != dict.n_features() {
        return Err(Error::Provenance("solution length differs from dictionary width".into()));
    }
    let d = data.d();
    let c = sol.z.ncols();
    let active: Vec<usize> = (0..sol.z.nrows())
        .filter(|&j| sol.z.row(j).iter().any(|v| *v != 0.0))
        .collect();
    let m = active.len();
    let biased = dict.features.iter().any(|f| f.variant.has_neuron_bias());

    let mut w1 = DMatrix::zeros(m, d);
    let mut b1 = DVector::zeros(m);
    let mut provenance = Vec::with_capacity(m);
    for (r, &j) in active.iter().enumerate() {
        let f = &dict.features[j];
        let geom = dict::feature_geometry(f, data, &dict.extended)?;
        let dir = geom.direction(d)?;
        let norm = ga::norm_p(&dir, dict.p);
        if (norm - f.norm_value).abs() > PROVENANCE_RTOL * f.norm_value.max(1e-300) {
            return Err(Error::Provenance(format!(
                "feature {j}: recomputed norm {norm} does not match descriptor {}",
                f.norm_value
            )));
        }
        let s = f.sign as f64 / norm;
        let w: Vec<f64> = dir.iter().map(|v| s * v).collect();
        if let Some(shift) = &geom.shift {
            b1[r] = -ga::dot(&w, shift);
        }
        w1.row_mut(r).copy_from_slice(&w);
        provenance.push(Some(f.clone()));
    }
    let first = Layer::new(w1.clone(), biased.then_some(b1.clone()));
    let t = sol.t.as_ref().map(|t| DVector::from_column_slice(t));
    let zt = DMatrix::from_fn(c, m, |o, r| sol.z[(active[r], o)]);

    let (layers, regularizer) = if dict.family.is_three_layer() {
        let mut w2 = DMatrix::zeros(m, m);
        let mut b2 = DVector::zeros(m);
        for (r, &j) in active.iter().enumerate() {
            let f = &dict.features[j];
            let j0 = f
                .anchor_j0
                .ok_or_else(|| Error::Provenance(format!("feature {j} lacks its outer anchor")))?;
            let xj0 = data.row(j0);
            let w: Vec<f64> = w1.row(r).iter().copied().collect();
            let cval = (ga::dot(&w, &xj0) + b1[r]).max(0.0);
            if f.variant.is_second_kind() {
                w2[(r, r)] = -1.0;
                b2[r] = cval;
            } else {
                w2[(r, r)] = 1.0;
                b2[r] = -cval;
            }
        }
        (
            vec![first, Layer::new(w2, Some(b2)), Layer::new(zt, t)],
            Regularizer::BranchCubic,
        )
    } else {
        (vec![first, Layer::new(zt, t)], Regularizer::Pair)
    };
    let net = ReluNetwork {
        layers,
        provenance,
        generators: dict.extended.clone(),
        p: dict.p,
        regularizer,
    };
    net.check()?;
    Ok(net)
}

/// Largest relative violation `|x_kᵀw| / (‖w‖‖x_k‖)` of first-layer neurons
/// against their generating vectors (shifted for biased neurons).
pub fn provenance_orthogonality(net: &ReluNetwork, data: &DataMatrix) -> Result<f64> {
    let mut worst = 0.0f64;
    for (r, prov) in net.provenance.iter().enumerate() {
        let Some(f) = prov else { continue };
        let geom = dict::feature_geometry(f, data, &net.generators)?;
        let w: Vec<f64> = net.layers[0].w.row(r).iter().copied().collect();
        let wn = ga::norm_l2(&w);
        for g in &geom.generators {
            let gn = ga::norm_l2(g);
            if gn > 0.0 && wn > 0.0 {
                worst = worst.max(ga::dot(&w, g).abs() / (wn * gn));
            }
        }
    }
    Ok(worst)
}

/// Rank reduction `X = UΣVᵀ ↦ X̃ = U_rΣ_r`. Returns the reduced data, the
/// `d × r` basis `V_r` for lifting neurons back (`w = V_r w̃`) and `r`.
pub fn rank_reduce(data: &DataMatrix) -> Result<(DataMatrix, DMatrix<f64>, usize)> {
    let x = data.samples();
    let (n, d) = (x.nrows(), x.ncols());
    // Thin SVD through the Gram side keeps V square for wide and tall data.
    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let vt = svd.v_t.as_ref().expect("requested V");
    let smax = s.max();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let r = if smax == 0.0 {
        0
    } else {
        order.iter().filter(|&&i| s[i] > data::RANK_RTOL * smax).count()
    };
    let r_eff = r.max(1);
    let mut v = DMatrix::zeros(d, r_eff);
    for (k, &i) in order.iter().take(r_eff).enumerate() {
        v.set_column(k, &vt.row(i).transpose());
        // Deterministic orientation: largest-magnitude entry positive.
        let col = v.column(k);
        let (imax, _) = col.iter().enumerate().fold((0, 0.0f64), |acc, (ix, val)| {
            if val.abs() > acc.1 { (ix, val.abs()) } else { acc }
        });
        if v[(imax, k)] < 0.0 {
            v.column_mut(k).neg_mut();
        }
    }
    let reduced = &x * &v;
    let _ = n;
    Ok((data.with_samples(reduced)?, v, r))
}
