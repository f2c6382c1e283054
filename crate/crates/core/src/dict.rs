//! Wedge-product feature dictionaries.
//!
//! Every column of a dictionary is the positive part of an oriented distance
//! generated by a handful of training samples. Builders enumerate generator
//! subsets in lexicographic order, drop dependent ones, and emit both
//! orientations of every surviving subset. Column order is the enumeration
//! order regardless of how the work is scheduled across threads.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::ga;
use crate::rng;

pub const DEFAULT_MAX_FEATURES: usize = 200_000;

/// Relative tolerance for collapsing parallel vectors of the three-layer
/// extended generator set.
const DEDUP_RTOL: f64 = 1e-12;

const BINARY_MAGIC: &[u8; 8] = b"WDGDICT1";

/// Tag identifying the kernel formula behind one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    OneD,
    #[serde(rename = "TwoD_L1_NoBias")]
    TwoDL1NoBias,
    #[serde(rename = "TwoD_L1_Bias")]
    TwoDL1Bias,
    #[serde(rename = "TwoD_L2_Bias")]
    TwoDL2Bias,
    #[serde(rename = "Ddim_L1_NoBias")]
    DdimL1NoBias,
    #[serde(rename = "Ddim_L2_NoBias")]
    DdimL2NoBias,
    #[serde(rename = "Ddim_L2_Bias")]
    DdimL2Bias,
    #[serde(rename = "ThreeLayer_L1_NoBias_K1")]
    ThreeLayerL1NoBiasK1,
    #[serde(rename = "ThreeLayer_L1_NoBias_K2")]
    ThreeLayerL1NoBiasK2,
    #[serde(rename = "ThreeLayer_L1_Bias_K1")]
    ThreeLayerL1BiasK1,
    #[serde(rename = "ThreeLayer_L1_Bias_K2")]
    ThreeLayerL1BiasK2,
}

impl Variant {
    pub fn is_three_layer(self) -> bool {
        matches!(
            self,
            Variant::ThreeLayerL1NoBiasK1
                | Variant::ThreeLayerL1NoBiasK2
                | Variant::ThreeLayerL1BiasK1
                | Variant::ThreeLayerL1BiasK2
        )
    }

    /// `K^{(2)}` columns swap the roles of the query and the anchor `j0`.
    pub fn is_second_kind(self) -> bool {
        matches!(
            self,
            Variant::ThreeLayerL1NoBiasK2 | Variant::ThreeLayerL1BiasK2
        )
    }

    /// Whether the first-layer neuron carries a bias.
    pub fn has_neuron_bias(self) -> bool {
        matches!(
            self,
            Variant::OneD
                | Variant::TwoDL1Bias
                | Variant::TwoDL2Bias
                | Variant::DdimL2Bias
                | Variant::ThreeLayerL1BiasK1
                | Variant::ThreeLayerL1BiasK2
        )
    }
}

/// Dictionary family, i.e. which builder produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    OneD,
    L1NoBias,
    L2NoBias,
    L2Bias,
    TwoDL1Bias,
    TwoDL2Bias,
    ThreeLayerL1NoBias,
    ThreeLayerL1Bias,
}

impl Family {
    pub fn is_three_layer(self) -> bool {
        matches!(self, Family::ThreeLayerL1NoBias | Family::ThreeLayerL1Bias)
    }

    /// Whether the convex program carries an unpenalized intercept.
    pub fn needs_intercept(self) -> bool {
        !matches!(self, Family::L1NoBias | Family::L2NoBias)
    }
}

/// One vector of the three-layer extended generator set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    /// Sample row `x_i`.
    Row(usize),
    /// Difference `x_i - x_j`.
    Diff(usize, usize),
    /// Standard basis vector `e_k`.
    Basis(usize),
}

impl Generator {
    pub fn vector(&self, rows: &[Vec<f64>], d: usize) -> Vec<f64> {
        match *self {
            Generator::Row(i) => rows[i].clone(),
            Generator::Diff(i, j) => ga::sub(&rows[i], &rows[j]),
            Generator::Basis(k) => {
                let mut e = vec![0.0; d];
                e[k] = 1.0;
                e
            }
        }
    }
}

/// Identity of one dictionary column.
///
/// `indices` are row indices into the generator rows of the data (augmented
/// rows included), except for three-layer variants where they index the
/// dictionary's extended generator set, and for `TwoD_L1_Bias` where an index
/// `n + k` denotes the shifted point `x_{j1} + e_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub variant: Variant,
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_j0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_ell: Option<usize>,
    pub sign: i8,
    pub norm_value: f64,
}

impl FeatureDescriptor {
    fn label(&self) -> String {
        let idx: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        let mut s = format!(
            "{}{}",
            if self.sign > 0 { "+" } else { "-" },
            idx.join("-")
        );
        if let Some(l) = self.anchor_ell {
            s.push_str(&format!("@{l}"));
        }
        if let Some(j0) = self.anchor_j0 {
            s.push_str(&format!("|{j0}"));
        }
        if self.variant.is_second_kind() {
            s.push_str("'");
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    /// Candidate columns before sampling and degeneracy checks.
    pub enumerated: u64,
    /// Candidates examined after sampling.
    pub considered: u64,
    pub skipped_degenerate: u64,
    pub subsampled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildConfig {
    pub max_features: usize,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            max_features: DEFAULT_MAX_FEATURES,
            seed: 0,
        }
    }
}

/// Dense kernel matrix with its feature metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// `n × P`, one row per original sample.
    pub k: DMatrix<f64>,
    pub features: Vec<FeatureDescriptor>,
    pub family: Family,
    /// Regularization norm the kernels are normalized with.
    pub p: u8,
    pub intercept: bool,
    /// Vector-output dictionaries penalize each feature's output row as a group.
    pub grouped: bool,
    /// Extended generator set for three-layer dictionaries.
    pub extended: Vec<Generator>,
    pub stats: BuildStats,
}

#[derive(Serialize, Deserialize)]
struct DictionaryMeta {
    family: Family,
    p: u8,
    intercept: bool,
    grouped: bool,
    extended: Vec<Generator>,
    stats: BuildStats,
    features: Vec<FeatureDescriptor>,
}

/// Resolved geometry of a feature: the first-layer neuron computes
/// `sign · cross(generators)ᵀ (x - shift)`.
#[derive(Debug, Clone)]
pub struct FeatureGeometry {
    pub shift: Option<Vec<f64>>,
    pub generators: Vec<Vec<f64>>,
}

impl FeatureGeometry {
    /// Unnormalized neuron direction `cross(generators)`; `[1]` in one dimension.
    pub fn direction(&self, d: usize) -> Result<Vec<f64>> {
        if self.generators.is_empty() {
            if d != 1 {
                return Err(Error::Provenance("feature without generators needs d = 1".into()));
            }
            return Ok(vec![1.0]);
        }
        let refs: Vec<&[f64]> = self.generators.iter().map(|g| g.as_slice()).collect();
        Ok(ga::cross(&refs)?.direction)
    }

    /// `⋆((x - shift) ∧ g_1 ∧ … ∧ g_{d-1})` through the determinant route.
    pub fn signed_volume(&self, x: &[f64]) -> Result<f64> {
        let q = match &self.shift {
            Some(s) => ga::sub(x, s),
            None => x.to_vec(),
        };
        let mut vs: Vec<&[f64]> = vec![q.as_slice()];
        vs.extend(self.generators.iter().map(|g| g.as_slice()));
        ga::signed_volume(&vs)
    }
}

impl Dictionary {
    pub fn n_rows(&self) -> usize {
        self.k.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Generator geometry of feature `j` against the given data.
    pub fn geometry(&self, j: usize, data: &DataMatrix) -> Result<FeatureGeometry> {
        let f = self
            .features
            .get(j)
            .ok_or_else(|| Error::Provenance(format!("no feature {j}")))?;
        resolve_geometry(f, &data.rows(), data.n(), data.d(), &self.extended)
    }

    /// Kernel value of feature `j` at an arbitrary point, recomputed from the
    /// descriptor through signed volumes.
    pub fn evaluate(&self, j: usize, data: &DataMatrix, x: &[f64]) -> Result<f64> {
        let f = &self.features[j];
        let geom = self.geometry(j, data)?;
        let s = f.sign as f64;
        let raw = s * geom.signed_volume(x)?;
        if f.variant.is_three_layer() {
            let j0 = f
                .anchor_j0
                .ok_or_else(|| Error::Provenance("three-layer feature without j0".into()))?;
            let anchor = s * geom.signed_volume(&data.row(j0))?;
            let diff = if f.variant.is_second_kind() {
                anchor.max(0.0) - raw.max(0.0)
            } else {
                raw.max(0.0) - anchor.max(0.0)
            };
            Ok(diff.max(0.0) / f.norm_value)
        } else {
            Ok(raw.max(0.0) / f.norm_value)
        }
    }

    /// Writes the columnar binary format: magic, `n` and `P` as little-endian
    /// u64, the `P` columns of `n` little-endian f64 each, then a JSON trailer
    /// (descriptor table and metadata) preceded by its byte length.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.k.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.k.ncols() as u64).to_le_bytes())?;
        // nalgebra storage is column-major already.
        for v in self.k.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        let meta = serde_json::to_vec(&DictionaryMeta {
            family: self.family,
            p: self.p,
            intercept: self.intercept,
            grouped: self.grouped,
            extended: self.extended.clone(),
            stats: self.stats.clone(),
            features: self.features.clone(),
        })?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Data("not a dictionary file (bad magic)".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let p = u64::from_le_bytes(word) as usize;
        let mut vals = vec![0.0; n * p];
        for v in &mut vals {
            r.read_exact(&mut word)?;
            *v = f64::from_le_bytes(word);
        }
        r.read_exact(&mut word)?;
        let len = u64::from_le_bytes(word) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let meta: DictionaryMeta = serde_json::from_slice(&buf)?;
        if meta.features.len() != p {
            return Err(Error::Data("descriptor table does not match column count".into()));
        }
        Ok(Self {
            k: DMatrix::from_vec(n, p, vals),
            features: meta.features,
            family: meta.family,
            p: meta.p,
            intercept: meta.intercept,
            grouped: meta.grouped,
            extended: meta.extended,
            stats: meta.stats,
        })
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Plain CSV dump: a header of feature labels then one line per sample.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = self.features.iter().map(|f| f.label()).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.k.nrows() {
            let row: Vec<String> = self.k.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn resolve_geometry(
    f: &FeatureDescriptor,
    rows: &[Vec<f64>],
    n: usize,
    d: usize,
    extended: &[Generator],
) -> Result<FeatureGeometry> {
    let row = |i: usize| -> Result<&Vec<f64>> {
        rows.get(i)
            .ok_or_else(|| Error::Provenance(format!("row index {i} out of range")))
    };
    match f.variant {
        Variant::OneD => Ok(FeatureGeometry {
            shift: Some(row(f.indices[0])?.clone()),
            generators: Vec::new(),
        }),
        Variant::TwoDL1NoBias | Variant::DdimL1NoBias | Variant::DdimL2NoBias => {
            Ok(FeatureGeometry {
                shift: None,
                generators: f.indices.iter().map(|&i| row(i).cloned()).collect::<Result<_>>()?,
            })
        }
        Variant::TwoDL2Bias | Variant::DdimL2Bias => {
            let ell = f
                .anchor_ell
                .ok_or_else(|| Error::Provenance("affine feature without anchor".into()))?;
            let a = row(ell)?;
            Ok(FeatureGeometry {
                shift: Some(a.clone()),
                generators: f
                    .indices
                    .iter()
                    .map(|&i| row(i).map(|r| ga::sub(r, a)))
                    .collect::<Result<_>>()?,
            })
        }
        Variant::TwoDL1Bias => {
            let (j1, j2) = (f.indices[0], f.indices[1]);
            let a = row(j1)?;
            let second = if j2 < n {
                row(j2)?.clone()
            } else {
                let mut p = a.clone();
                let k = j2 - n;
                if k >= d {
                    return Err(Error::Provenance(format!("shift index {j2} out of range")));
                }
                p[k] += 1.0;
                p
            };
            Ok(FeatureGeometry {
                shift: Some(a.clone()),
                generators: vec![ga::sub(&second, a)],
            })
        }
        Variant::ThreeLayerL1NoBiasK1
        | Variant::ThreeLayerL1NoBiasK2
        | Variant::ThreeLayerL1BiasK1
        | Variant::ThreeLayerL1BiasK2 => {
            let generators = f
                .indices
                .iter()
                .map(|&i| {
                    extended
                        .get(i)
                        .map(|g| g.vector(rows, d))
                        .ok_or_else(|| Error::Provenance(format!("extended index {i} out of range")))
                })
                .collect::<Result<_>>()?;
            let shift = match f.anchor_ell {
                Some(l) => Some(row(l)?.clone()),
                None => None,
            };
            Ok(FeatureGeometry { shift, generators })
        }
    }
}

/// Geometry shared by all columns spawned from one generator subset.
struct BaseGeom {
    indices: Vec<usize>,
    anchor_ell: Option<usize>,
    shift: Option<Vec<f64>>,
    generators: Vec<Vec<f64>>,
}

/// Per-subset expansion: orientation and, for three-layer dictionaries, the
/// shift anchor, the outer anchor `j0` and the kernel kind.
#[derive(Clone, Copy)]
struct Expansion {
    sign: i8,
    ell: Option<usize>,
    j0: Option<usize>,
    second_kind: bool,
}

fn sign_expansions() -> Vec<Expansion> {
    [1i8, -1]
        .into_iter()
        .map(|sign| Expansion {
            sign,
            ell: None,
            j0: None,
            second_kind: false,
        })
        .collect()
}

/// Lexicographic unranking of `k`-combinations of `0..n`.
fn unrank_combination(n: usize, k: usize, mut rank: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for slot in 0..k {
        let remaining = k - slot - 1;
        let mut c = start;
        loop {
            let count = binomial(n - c - 1, remaining);
            if rank < count {
                break;
            }
            rank -= count;
            c += 1;
        }
        out.push(c);
        start = c + 1;
    }
    out
}

/// `C(n, k)`, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

struct Plan<'a> {
    n_base: u64,
    expansions: Vec<Expansion>,
    base: Box<dyn Fn(u64) -> BaseGeom + Sync + 'a>,
    variant: Box<dyn Fn(&Expansion) -> Variant + Sync + 'a>,
}

fn assemble(plan: Plan<'_>, samples: &[Vec<f64>], d: usize, p: u8, cfg: &BuildConfig) -> Result<(DMatrix<f64>, Vec<FeatureDescriptor>, BuildStats)> {
    let n_exp = plan.expansions.len() as u64;
    let total = plan
        .n_base
        .checked_mul(n_exp)
        .ok_or_else(|| Error::Size("candidate feature count overflows u64".into()))?;
    let mut stats = BuildStats {
        enumerated: total,
        ..BuildStats::default()
    };

    // (base rank, expansion indices) in canonical order.
    let groups: Vec<(u64, Vec<usize>)> = if total as u128 <= cfg.max_features as u128 {
        (0..plan.n_base)
            .map(|b| (b, (0..plan.expansions.len()).collect()))
            .collect()
    } else {
        if total > usize::MAX as u64 {
            return Err(Error::Size(format!("{total} candidate features cannot be sampled")));
        }
        stats.subsampled = true;
        let mut r = rng::child(cfg.seed, rng::stream::SUBSAMPLE);
        let mut picked: Vec<u64> = rand::seq::index::sample(&mut r, total as usize, cfg.max_features)
            .into_iter()
            .map(|i| i as u64)
            .collect();
        picked.sort_unstable();
        let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
        for idx in picked {
            let (b, e) = (idx / n_exp, (idx % n_exp) as usize);
            match groups.last_mut() {
                Some((lb, es)) if *lb == b => es.push(e),
                _ => groups.push((b, vec![e])),
            }
        }
        groups
    };
    stats.considered = groups.iter().map(|(_, e)| e.len() as u64).sum();

    let n = samples.len();
    let built: Vec<(Vec<(FeatureDescriptor, Vec<f64>)>, u64)> = groups
        .par_iter()
        .map(|(b, exps)| {
            let geom = (plan.base)(*b);
            let refs: Vec<&[f64]> = geom.generators.iter().map(|g| g.as_slice()).collect();
            let dir = if refs.is_empty() {
                Some(vec![1.0])
            } else if ga::independent(&refs) {
                ga::cross(&refs).ok().map(|c| c.direction)
            } else {
                None
            };
            let Some(dir) = dir else {
                return (Vec::new(), exps.len() as u64);
            };
            let norm = ga::norm_p(&dir, p);
            let scale = refs.iter().map(|g| ga::norm_l2(g)).product::<f64>().max(1.0);
            if norm <= ga::DEPENDENCE_RTOL * scale {
                return (Vec::new(), exps.len() as u64);
            }
            let raw_at = |x: &[f64], shift: Option<&[f64]>| -> f64 {
                match shift {
                    Some(s) => dir.iter().zip(x).zip(s).map(|((w, a), b)| w * (a - b)).sum(),
                    None => ga::dot(&dir, x),
                }
            };
            let base_raw: Vec<f64> = samples
                .iter()
                .map(|x| raw_at(x, geom.shift.as_deref()))
                .collect();
            let mut out = Vec::with_capacity(exps.len());
            for &e in exps {
                let ex = plan.expansions[e];
                let s = ex.sign as f64;
                let col: Vec<f64> = match (ex.j0, ex.ell) {
                    (Some(j0), ell) => {
                        // Three-layer kernel; shift comes from the expansion.
                        let raw: Vec<f64> = match ell {
                            Some(l) => samples.iter().map(|x| raw_at(x, Some(&samples[l]))).collect(),
                            None => base_raw.clone(),
                        };
                        let anchor = (s * raw[j0]).max(0.0);
                        raw.iter()
                            .map(|&r| {
                                let q = (s * r).max(0.0);
                                let diff = if ex.second_kind { anchor - q } else { q - anchor };
                                diff.max(0.0) / norm
                            })
                            .collect()
                    }
                    _ => base_raw.iter().map(|&r| (s * r).max(0.0) / norm).collect(),
                };
                debug_assert_eq!(col.len(), n);
                out.push((
                    FeatureDescriptor {
                        variant: (plan.variant)(&ex),
                        indices: geom.indices.clone(),
                        anchor_j0: ex.j0,
                        anchor_ell: ex.ell.or(geom.anchor_ell),
                        sign: ex.sign,
                        norm_value: norm,
                    },
                    col,
                ));
            }
            (out, 0)
        })
        .collect();

    let mut features = Vec::new();
    let mut cols: Vec<f64> = Vec::new();
    for (items, skipped) in built {
        stats.skipped_degenerate += skipped;
        for (f, c) in items {
            features.push(f);
            cols.extend(c);
        }
    }
    let k = DMatrix::from_vec(n, features.len(), cols);
    let _ = d;
    Ok((k, features, stats))
}

fn require_full_rank(data: &DataMatrix) -> Result<()> {
    if data.effective_rank() < data.d() {
        return Err(Error::Rank(format!(
            "samples have rank {} < d = {}",
            data.effective_rank(),
            data.d()
        )));
    }
    Ok(())
}

/// Ramp dictionary for one-dimensional data: `K_ij = (x_i - x_j)₊` for the
/// first `n` columns and `(x_j - x_i)₊` for the next `n`.
pub fn build_1d(data: &DataMatrix) -> Result<Dictionary> {
    if data.d() != 1 {
        return Err(Error::Variant(format!("one-dimensional dictionary needs d = 1, got {}", data.d())));
    }
    let samples = data.sample_rows();
    let n = samples.len();
    let mut features = Vec::with_capacity(2 * n);
    let mut k = DMatrix::zeros(n, 2 * n);
    for (half, sign) in [1i8, -1].into_iter().enumerate() {
        for j in 0..n {
            let col = half * n + j;
            for i in 0..n {
                k[(i, col)] = (sign as f64 * (samples[i][0] - samples[j][0])).max(0.0);
            }
            features.push(FeatureDescriptor {
                variant: Variant::OneD,
                indices: vec![j],
                anchor_j0: None,
                anchor_ell: None,
                sign,
                norm_value: 1.0,
            });
        }
    }
    Ok(Dictionary {
        k,
        features,
        family: Family::OneD,
        p: 1,
        intercept: true,
        grouped: false,
        extended: Vec::new(),
        stats: BuildStats {
            enumerated: 2 * n as u64,
            considered: 2 * n as u64,
            skipped_degenerate: 0,
            subsampled: false,
        },
    })
}

/// Bias-free ℓ1 dictionary over `(d-1)`-subsets of the augmented rows:
/// `K_ij = (x_i ∧ x_{j1} ∧ … ∧ x_{j_{d-1}})₊ / ‖×(x_{j1}, …)‖₁`.
pub fn build_l1_nobias(data: &DataMatrix, cfg: &BuildConfig) -> Result<Dictionary> {
    if !data.is_augmented() {
        return Err(Error::State("the ℓ1 bias-free dictionary expects augmented data".into()));
    }
    if data.d() < 2 {
        return Err(Error::Variant("use the one-dimensional dictionary for d = 1".into()));
    }
    require_full_rank(data)?;
    subset_dictionary(data, 1, Family::L1NoBias, cfg)
}

/// ℓ2 dictionary over rows of the (non-augmented) data. Bias-free columns are
/// `dist₊(x, Span(u_1..u_{d-1}))`; biased columns are `dist₊` to the affine
/// hyperplane through `d` rows, anchored at the largest index.
pub fn build_l2(data: &DataMatrix, biased: bool, cfg: &BuildConfig) -> Result<Dictionary> {
    if data.is_augmented() {
        return Err(Error::State("ℓ2 dictionaries index raw rows; pass non-augmented data".into()));
    }
    if data.d() < 2 {
        return Err(Error::Variant("use the one-dimensional dictionary for d = 1".into()));
    }
    require_full_rank(data)?;
    if biased {
        affine_dictionary(data, Family::L2Bias, cfg)
    } else {
        subset_dictionary(data, 2, Family::L2NoBias, cfg)
    }
}

/// Planar ℓ2 dictionary with biases: `dist₊(x, Aff(x', x''))` over pairs.
pub fn build_2d_l2_bias(data: &DataMatrix, cfg: &BuildConfig) -> Result<Dictionary> {
    if data.d() != 2 {
        return Err(Error::Variant(format!("planar dictionary needs d = 2, got {}", data.d())));
    }
    if data.is_augmented() {
        return Err(Error::State("pass non-augmented data".into()));
    }
    affine_dictionary(data, Family::TwoDL2Bias, cfg)
}

fn subset_dictionary(data: &DataMatrix, p: u8, family: Family, cfg: &BuildConfig) -> Result<Dictionary> {
    let rows = data.rows();
    let samples = data.sample_rows();
    let d = data.d();
    let pool = rows.len();
    let variant = match (family, d) {
        (Family::L1NoBias, 2) => Variant::TwoDL1NoBias,
        (Family::L1NoBias, _) => Variant::DdimL1NoBias,
        _ => Variant::DdimL2NoBias,
    };
    let plan = Plan {
        n_base: binomial(pool, d - 1),
        expansions: sign_expansions(),
        base: Box::new(|b| {
            let indices = unrank_combination(pool, d - 1, b);
            let generators = indices.iter().map(|&i| rows[i].clone()).collect();
            BaseGeom {
                indices,
                anchor_ell: None,
                shift: None,
                generators,
            }
        }),
        variant: Box::new(move |_| variant),
    };
    let (k, features, stats) = assemble(plan, &samples, d, p, cfg)?;
    Ok(Dictionary {
        k,
        features,
        family,
        p,
        intercept: family.needs_intercept(),
        grouped: false,
        extended: Vec::new(),
        stats,
    })
}

fn affine_dictionary(data: &DataMatrix, family: Family, cfg: &BuildConfig) -> Result<Dictionary> {
    let rows = data.rows();
    let samples = data.sample_rows();
    let d = data.d();
    let n = samples.len();
    let variant = if family == Family::TwoDL2Bias {
        Variant::TwoDL2Bias
    } else {
        Variant::DdimL2Bias
    };
    let plan = Plan {
        n_base: binomial(n, d),
        expansions: sign_expansions(),
        base: Box::new(|b| {
            let mut subset = unrank_combination(n, d, b);
            let anchor = subset.pop().expect("d >= 1");
            let a = &rows[anchor];
            let generators = subset.iter().map(|&i| ga::sub(&rows[i], a)).collect();
            BaseGeom {
                indices: subset,
                anchor_ell: Some(anchor),
                shift: Some(a.clone()),
                generators,
            }
        }),
        variant: Box::new(move |_| variant),
    };
    let (k, features, stats) = assemble(plan, &samples, d, 2, cfg)?;
    Ok(Dictionary {
        k,
        features,
        family,
        p: 2,
        intercept: true,
        grouped: false,
        extended: Vec::new(),
        stats,
    })
}

/// Planar ℓ1 dictionary with biases. Columns are indexed by `(j1, j2)` where
/// the second point is another sample (`j2 < n`) or the shifted point
/// `x_{j1} + e_k` (`j2 = n + k`); the kernel is
/// `2·Vol₊(△(x, x_{j1}, x_{j2})) / ‖x_{j1} - x_{j2}‖₁`.
pub fn build_2d_l1_bias(data: &DataMatrix, cfg: &BuildConfig) -> Result<Dictionary> {
    if data.d() != 2 {
        return Err(Error::Variant(format!("planar dictionary needs d = 2, got {}", data.d())));
    }
    if data.is_augmented() {
        return Err(Error::State("pass non-augmented data; shifted basis points are generated internally".into()));
    }
    let samples = data.sample_rows();
    let n = samples.len();
    let d = 2;
    let n_pairs = binomial(n, 2);
    let plan = Plan {
        n_base: n_pairs + (n * d) as u64,
        expansions: sign_expansions(),
        base: Box::new(|b| {
            let (j1, j2, second) = if b < n_pairs {
                let c = unrank_combination(n, 2, b);
                (c[0], c[1], samples[c[1]].clone())
            } else {
                let q = (b - n_pairs) as usize;
                let (j1, k) = (q / d, q % d);
                let mut s = samples[j1].clone();
                s[k] += 1.0;
                (j1, n + k, s)
            };
            BaseGeom {
                indices: vec![j1, j2],
                anchor_ell: None,
                shift: Some(samples[j1].clone()),
                generators: vec![ga::sub(&second, &samples[j1])],
            }
        }),
        variant: Box::new(|_| Variant::TwoDL1Bias),
    };
    let (k, features, stats) = assemble(plan, &samples, d, 1, cfg)?;
    Ok(Dictionary {
        k,
        features,
        family: Family::TwoDL1Bias,
        p: 1,
        intercept: true,
        grouped: false,
        extended: Vec::new(),
        stats,
    })
}

/// Extended generator set of the three-layer dictionaries with parallel
/// vectors (and zero differences) collapsed to their first occurrence.
pub fn extended_generators(data: &DataMatrix, include_rows: bool) -> Vec<Generator> {
    let samples = data.sample_rows();
    let n = samples.len();
    let d = data.d();
    let mut cands: Vec<Generator> = Vec::new();
    if include_rows {
        cands.extend((0..n).map(Generator::Row));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            cands.push(Generator::Diff(i, j));
        }
    }
    cands.extend((0..d).map(Generator::Basis));

    let mut kept: Vec<Generator> = Vec::new();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for g in cands {
        let v = g.vector(&samples, d);
        let norm = ga::norm_l2(&v);
        let scale = samples.iter().map(|r| ga::norm_l2(r)).fold(1.0, f64::max);
        if norm <= DEDUP_RTOL * scale {
            continue;
        }
        let u: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let dup = dirs.iter().any(|w| {
            let minus = u.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let plus = u.iter().zip(w).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            minus.min(plus) <= DEDUP_RTOL
        });
        if !dup {
            dirs.push(u);
            kept.push(g);
        }
    }
    kept
}

/// Three-layer ℓ1 dictionaries.
///
/// Inner tuples range over `(d-1)`-subsets of the extended set
/// `{x_i} ∪ {x_i - x_j} ∪ {e_k}` (rows omitted when biased); for each subset,
/// orientation and outer anchor `j0` produce the pair of kernels
/// `K¹ = ((x∧T)₊ - (x_{j0}∧T)₊)₊ / ‖T‖₁` and `K² = ((x_{j0}∧T)₊ - (x∧T)₊)₊ / ‖T‖₁`.
/// The biased variant evaluates the same kernels on data shifted by every
/// sample `x_ℓ`.
pub fn build_3layer_l1(data: &DataMatrix, biased: bool, cfg: &BuildConfig) -> Result<Dictionary> {
    if data.is_augmented() {
        return Err(Error::State("pass non-augmented data".into()));
    }
    require_full_rank(data)?;
    let d = data.d();
    let samples = data.sample_rows();
    let n = samples.len();
    let extended = extended_generators(data, !biased);
    let ext_vecs: Vec<Vec<f64>> = extended.iter().map(|g| g.vector(&samples, d)).collect();

    let mut expansions = Vec::new();
    let shifts: Vec<Option<usize>> = if biased { (0..n).map(Some).collect() } else { vec![None] };
    for ell in &shifts {
        for sign in [1i8, -1] {
            for j0 in 0..n {
                for second_kind in [false, true] {
                    expansions.push(Expansion {
                        sign,
                        ell: *ell,
                        j0: Some(j0),
                        second_kind,
                    });
                }
            }
        }
    }
    let pool = extended.len();
    let plan = Plan {
        n_base: binomial(pool, d - 1),
        expansions,
        base: Box::new(|b| {
            let indices = unrank_combination(pool, d - 1, b);
            let generators = indices.iter().map(|&i| ext_vecs[i].clone()).collect();
            BaseGeom {
                indices,
                anchor_ell: None,
                shift: None,
                generators,
            }
        }),
        variant: Box::new(move |e| match (biased, e.second_kind) {
            (false, false) => Variant::ThreeLayerL1NoBiasK1,
            (false, true) => Variant::ThreeLayerL1NoBiasK2,
            (true, false) => Variant::ThreeLayerL1BiasK1,
            (true, true) => Variant::ThreeLayerL1BiasK2,
        }),
    };
    if d < 2 {
        return Err(Error::Variant("three-layer dictionaries need d >= 2".into()));
    }
    let (k, features, stats) = assemble(plan, &samples, d, 1, cfg)?;
    Ok(Dictionary {
        k,
        features,
        family: if biased {
            Family::ThreeLayerL1Bias
        } else {
            Family::ThreeLayerL1NoBias
        },
        p: 1,
        intercept: true,
        grouped: false,
        extended,
        stats,
    })
}

/// Vector-output dictionary: the bias-free ℓ1 (`p = 1`, augmented rows) or
/// ℓ2 (`p = 2`) dictionary, flagged so each feature's output row is a group.
pub fn build_vector_output(data: &DataMatrix, p: u8, cfg: &BuildConfig) -> Result<Dictionary> {
    if data.outputs() < 2 {
        return Err(Error::Variant(format!(
            "vector-output dictionary needs at least 2 label columns, got {}",
            data.outputs()
        )));
    }
    let mut dict = match p {
        1 => {
            let aug = if data.is_augmented() { data.clone() } else { data.augment()? };
            build_l1_nobias(&aug, cfg)?
        }
        2 => build_l2(data, false, cfg)?,
        _ => return Err(Error::InvalidArgument(format!("p must be 1 or 2, got {p}"))),
    };
    dict.grouped = true;
    Ok(dict)
}

/// Resolves a descriptor against raw data (used by network reconstruction).
pub fn feature_geometry(
    f: &FeatureDescriptor,
    data: &DataMatrix,
    extended: &[Generator],
) -> Result<FeatureGeometry> {
    resolve_geometry(f, &data.rows(), data.n(), data.d(), extended)
}
