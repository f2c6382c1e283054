//! Exterior-algebra primitives over Euclidean `R^d`.
//!
//! Only the blades the convex reformulations need are represented: top-grade
//! wedges (whose Hodge dual is a signed volume), `(d-1)`-blades (whose Hodge
//! dual is the generalized cross product) and their norms. A top-grade wedge
//! `x ∧ u_1 ∧ … ∧ u_{d-1}` is identified with `det[x u_1 … u_{d-1}]`, and the
//! generalized cross product is the cofactor vector satisfying
//! `cross(u)ᵀ x = det[x u_1 … u_{d-1}]` for every `x`.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which a set of vectors is treated
/// as linearly dependent.
pub const DEPENDENCE_RTOL: f64 = 1e-10;

/// Largest order evaluated by closed-form cofactor expansion; larger
/// determinants go through LU with partial pivoting.
const CLOSED_FORM_MAX: usize = 4;

/// Hodge dual of a `(d-1)`-blade `u_1 ∧ … ∧ u_{d-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossProduct {
    pub direction: Vec<f64>,
    pub generating_indices: Vec<usize>,
    pub l1: f64,
    pub l2: f64,
}

impl CrossProduct {
    fn from_direction(direction: Vec<f64>, generating_indices: Vec<usize>) -> Self {
        let l1 = norm_l1(&direction);
        let l2 = norm_l2(&direction);
        Self {
            direction,
            generating_indices,
            l1,
            l2,
        }
    }

    /// The `p`-norm of the direction for `p ∈ {1, 2}`.
    pub fn norm(&self, p: u8) -> f64 {
        if p == 1 {
            self.l1
        } else {
            self.l2
        }
    }

    pub fn is_zero(&self) -> bool {
        self.direction.iter().all(|&v| v == 0.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_l2(v: &[f64]) -> f64 {
    // Scaled accumulation keeps tiny/huge inputs from under/overflowing.
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale) * (x / scale)).sum::<f64>().sqrt()
}

pub fn norm_p(v: &[f64], p: u8) -> f64 {
    if p == 1 {
        norm_l1(v)
    } else {
        norm_l2(v)
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Determinant of a square row-major matrix. Closed-form cofactor expansion
/// up to order 4, LU with partial pivoting above.
pub fn determinant(rows: &[Vec<f64>]) -> f64 {
    let d = rows.len();
    match d {
        0 => 1.0,
        1 => rows[0][0],
        2 => det2(rows[0][0], rows[0][1], rows[1][0], rows[1][1]),
        3 => det3(&rows[0], &rows[1], &rows[2]),
        4 => det4(rows),
        _ => det_lu(rows),
    }
}

#[inline]
fn det2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    a * d - b * c
}

#[inline]
fn det3(r0: &[f64], r1: &[f64], r2: &[f64]) -> f64 {
    r0[0] * det2(r1[1], r1[2], r2[1], r2[2]) - r0[1] * det2(r1[0], r1[2], r2[0], r2[2])
        + r0[2] * det2(r1[0], r1[1], r2[0], r2[1])
}

fn det4(m: &[Vec<f64>]) -> f64 {
    // Laplace expansion along the first row.
    let minor = |skip: usize| -> f64 {
        let pick = |r: &[f64]| -> [f64; 3] {
            let mut out = [0.0; 3];
            let mut k = 0;
            for (c, v) in r.iter().enumerate() {
                if c != skip {
                    out[k] = *v;
                    k += 1;
                }
            }
            out
        };
        det3(&pick(&m[1]), &pick(&m[2]), &pick(&m[3]))
    };
    m[0][0] * minor(0) - m[0][1] * minor(1) + m[0][2] * minor(2) - m[0][3] * minor(3)
}

fn det_lu(rows: &[Vec<f64>]) -> f64 {
    let d = rows.len();
    let mut a: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let mut det = 1.0;
    for col in 0..d {
        let mut piv = col;
        let mut best = a[col * d + col].abs();
        for r in (col + 1)..d {
            let v = a[r * d + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..d {
                a.swap(col * d + c, piv * d + c);
            }
            det = -det;
        }
        let p = a[col * d + col];
        det *= p;
        for r in (col + 1)..d {
            let f = a[r * d + col] / p;
            if f != 0.0 {
                for c in (col + 1)..d {
                    a[r * d + c] -= f * a[col * d + c];
                }
            }
        }
    }
    det
}

/// Sorts the inputs into a canonical order and reports the permutation parity.
/// Evaluating an alternating form on the canonical order and multiplying by the
/// parity makes the result exactly antisymmetric under any swap of inputs.
/// Returns `None` when two inputs are bit-identical (the form vanishes).
fn canonical_order(vectors: &[&[f64]]) -> Option<(Vec<usize>, f64)> {
    let mut perm: Vec<usize> = (0..vectors.len()).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        for (x, y) in vectors[*a].iter().zip(vectors[*b]) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    };
    perm.sort_by(cmp);
    if perm.windows(2).any(|w| cmp(&w[0], &w[1]) == Ordering::Equal) {
        return None;
    }
    // Parity from cycle decomposition.
    let mut seen = vec![false; perm.len()];
    let mut parity = 1.0;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut j = start;
        while !seen[j] {
            seen[j] = true;
            j = perm[j];
            len += 1;
        }
        if len % 2 == 0 {
            parity = -parity;
        }
    }
    Some((perm, parity))
}

fn check_square(vectors: &[&[f64]]) -> Result<usize> {
    let d = vectors.len();
    if d == 0 {
        return Err(Error::dim("signed volume needs at least one vector"));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::dim(format!(
            "expected {d} vectors of length {d}, found a vector of length {}",
            v.len()
        )));
    }
    Ok(d)
}

/// `⋆(v_1 ∧ … ∧ v_d)`: the determinant of the matrix whose columns are the
/// `d` input vectors of `R^d`.
pub fn signed_volume(vectors: &[&[f64]]) -> Result<f64> {
    let d = check_square(vectors)?;
    if d == 1 {
        return Ok(vectors[0][0]);
    }
    let Some((perm, parity)) = canonical_order(vectors) else {
        return Ok(0.0);
    };
    // det(A) = det(Aᵀ): the vectors may be laid out as rows.
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| vectors[i].to_vec()).collect();
    Ok(parity * determinant(&rows))
}

/// Generalized cross product `×(v_1, …, v_{d-1}) = ⋆(v_1 ∧ … ∧ v_{d-1})` of
/// `d-1` vectors in `R^d`, via cofactor expansion
/// `Σ_i (-1)^{i-1} |A_i| e_i` where `A_i` drops coordinate `i`.
pub fn cross(vectors: &[&[f64]]) -> Result<CrossProduct> {
    let direction = cross_direction(vectors)?;
    Ok(CrossProduct::from_direction(
        direction,
        (0..vectors.len()).collect(),
    ))
}

/// Same as [`cross`], recording the caller's identities for the inputs.
pub fn cross_indexed(vectors: &[&[f64]], indices: &[usize]) -> Result<CrossProduct> {
    if indices.len() != vectors.len() {
        return Err(Error::dim("one index per generating vector"));
    }
    let direction = cross_direction(vectors)?;
    Ok(CrossProduct::from_direction(direction, indices.to_vec()))
}

fn cross_direction(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    let k = vectors.len();
    let d = k + 1;
    if d < 2 {
        return Err(Error::dim("cross product needs d >= 2 (at least one vector)"));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::dim(format!(
            "cross product of {k} vectors needs length {d}, found length {}",
            v.len()
        )));
    }
    if d == 2 {
        let (a, b) = (vectors[0][0], vectors[0][1]);
        return Ok(vec![b, -a]);
    }
    let Some((perm, parity)) = canonical_order(vectors) else {
        return Ok(vec![0.0; d]);
    };
    let sorted: Vec<&[f64]> = perm.iter().map(|&i| vectors[i]).collect();
    let mut out = if d == 3 {
        let (a, b) = (sorted[0], sorted[1]);
        vec![
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    } else {
        let mut out = Vec::with_capacity(d);
        let mut minor: Vec<Vec<f64>> = vec![vec![0.0; d - 1]; k];
        for i in 0..d {
            for (row, v) in minor.iter_mut().zip(&sorted) {
                let mut c = 0;
                for (j, val) in v.iter().enumerate() {
                    if j != i {
                        row[c] = *val;
                        c += 1;
                    }
                }
            }
            let m = if d - 1 <= CLOSED_FORM_MAX {
                determinant(&minor)
            } else {
                det_lu(&minor)
            };
            out.push(if i % 2 == 0 { m } else { -m });
        }
        out
    };
    if parity < 0.0 {
        for v in &mut out {
            *v = -*v;
        }
    }
    Ok(out)
}

/// Singular values of the stacked `k × d` matrix, descending.
pub fn singular_values(vectors: &[&[f64]]) -> Vec<f64> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let d = vectors[0].len();
    let m = DMatrix::from_fn(vectors.len(), d, |i, j| vectors[i][j]);
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Linear independence test: the smallest singular value of the stacked
/// vectors must exceed `DEPENDENCE_RTOL` times the largest.
pub fn independent(vectors: &[&[f64]]) -> bool {
    if vectors.is_empty() {
        return true;
    }
    let d = vectors[0].len();
    if vectors.len() > d {
        return false;
    }
    let s = singular_values(vectors);
    let max = s[0];
    let min = *s.last().unwrap_or(&0.0);
    max > 0.0 && s.len() == vectors.len() && min > DEPENDENCE_RTOL * max
}

/// Blade norm `‖u_1 ∧ … ∧ u_k‖₂ = sqrt(det Gram(u))`.
pub fn blade_norm(vectors: &[&[f64]]) -> f64 {
    let k = vectors.len();
    let gram: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| dot(vectors[i], vectors[j])).collect())
        .collect();
    determinant(&gram).max(0.0).sqrt()
}

/// Signed distance `⋆(x ∧ u_1 ∧ … ∧ u_{d-1}) / ‖u_1 ∧ … ∧ u_{d-1}‖₂` to the
/// linear span of the basis.
pub fn signed_distance_to_span(x: &[f64], basis: &[&[f64]]) -> Result<f64> {
    let d = x.len();
    if basis.len() + 1 != d || basis.iter().any(|u| u.len() != d) {
        return Err(Error::dim(format!(
            "distance in R^{d} needs {} basis vectors of length {d}",
            d.saturating_sub(1)
        )));
    }
    if !independent(basis) {
        return Err(Error::DegenerateFeature(
            "basis vectors are linearly dependent".into(),
        ));
    }
    let mut all: Vec<&[f64]> = Vec::with_capacity(d);
    all.push(x);
    all.extend_from_slice(basis);
    let vol = signed_volume(&all)?;
    let c = cross(basis)?;
    Ok(vol / c.l2)
}

/// `dist₊(x, Span(u_1, …, u_{d-1}))`.
pub fn dist_plus_to_span(x: &[f64], basis: &[&[f64]]) -> Result<f64> {
    Ok(signed_distance_to_span(x, basis)?.max(0.0))
}

/// Signed distance to the affine hyperplane through `u_1 … u_d`, anchored at
/// the last point: `signed_distance_to_span(x - u_d, {u_i - u_d})`.
pub fn signed_distance_to_affine(x: &[f64], points: &[&[f64]]) -> Result<f64> {
    let d = x.len();
    if points.len() != d || points.iter().any(|u| u.len() != d) {
        return Err(Error::dim(format!(
            "affine distance in R^{d} needs {d} points of length {d}"
        )));
    }
    let anchor = points[d - 1];
    let shifted = sub(x, anchor);
    let diffs: Vec<Vec<f64>> = points[..d - 1].iter().map(|u| sub(u, anchor)).collect();
    let refs: Vec<&[f64]> = diffs.iter().map(|v| v.as_slice()).collect();
    signed_distance_to_span(&shifted, &refs).map_err(|e| match e {
        Error::DegenerateFeature(_) => {
            Error::DegenerateFeature("points do not span an affine hyperplane".into())
        }
        other => other,
    })
}

/// `dist₊(x, Aff(u_1, …, u_d))`.
pub fn dist_plus_to_affine(x: &[f64], points: &[&[f64]]) -> Result<f64> {
    Ok(signed_distance_to_affine(x, points)?.max(0.0))
}

/// `½ (a - c) ∧ (b - c)` for points of the plane.
pub fn signed_triangle_area(a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    if a.len() != 2 || b.len() != 2 || c.len() != 2 {
        return Err(Error::dim("triangle area is defined for points in R^2"));
    }
    let u = sub(a, c);
    let v = sub(b, c);
    Ok(0.5 * det2(u[0], v[0], u[1], v[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram_det(vs: &[Vec<f64>]) -> f64 {
        let k = vs.len();
        let g = DMatrix::from_fn(k, k, |i, j| dot(&vs[i], &vs[j]));
        g.determinant()
    }

    #[test]
    fn signed_volume_examples() {
        let v = |a: &[f64], b: &[f64]| signed_volume(&[a, b]).unwrap();
        assert_eq!(v(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(v(&[2.0, 1.0], &[1.0, 2.0]), 3.0);
        assert_eq!(v(&[1.0, 2.0], &[2.0, 4.0]), 0.0);
        assert!(matches!(
            signed_volume(&[&[1.0, 0.0], &[0.0, 1.0, 2.0]]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            signed_volume(&[&[1.0, 0.0]]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn lu_matches_nalgebra_for_large_orders() {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| (0..7).map(|j| ((i * 7 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let m = DMatrix::from_fn(7, 7, |i, j| rows[i][j]);
        let ours = determinant(&rows);
        assert!((ours - m.determinant()).abs() <= 1e-12 * ours.abs().max(1.0));
    }

    #[test]
    fn cross_examples() {
        assert_eq!(cross(&[&[1.0, 2.0]]).unwrap().direction, vec![2.0, -1.0]);
        assert_eq!(
            cross(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]).unwrap().direction,
            vec![0.0, 0.0, 1.0]
        );
        let zero = cross(&[&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]).unwrap();
        assert!(zero.is_zero());
        let two: [&[f64]; 2] = [&[1.0, 0.0], &[0.0, 1.0]];
        assert!(matches!(cross(&two), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_identical_inputs_vanish() {
        let v = [0.3, -1.2, 4.0, 0.5];
        let w = [1.0, 2.0, 3.0, 4.0];
        assert!(cross(&[&v, &w, &v]).unwrap().is_zero());
    }

    #[test]
    fn cross_dot_matches_wedge() {
        let u1 = [0.3, -1.0, 2.0, 0.7, 1.1];
        let u2 = [1.5, 0.2, -0.4, 0.9, -2.0];
        let u3 = [-0.6, 0.8, 0.1, 1.3, 0.4];
        let u4 = [0.0, 1.0, -1.0, 0.5, 2.2];
        let x = [0.9, -0.3, 0.2, 1.7, -0.8];
        let c = cross(&[&u1, &u2, &u3, &u4]).unwrap();
        let vol = signed_volume(&[&x, &u1, &u2, &u3, &u4]).unwrap();
        assert!((dot(&c.direction, &x) - vol).abs() < 1e-12);
        let gd = gram_det(&[u1.to_vec(), u2.to_vec(), u3.to_vec(), u4.to_vec()]);
        assert!((c.l2 * c.l2 - gd).abs() <= 1e-9 * gd);
        assert!((blade_norm(&[&u1, &u2, &u3, &u4]) - c.l2).abs() <= 1e-9 * c.l2);
    }

    #[test]
    fn distance_examples() {
        let d = dist_plus_to_span(&[0.0, 0.0, 1.0], &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(d.unwrap(), 1.0);
        assert_eq!(dist_plus_to_span(&[1.0, 1.0], &[&[1.0, 0.0]]).unwrap(), 0.0);
        assert_eq!(
            signed_distance_to_span(&[1.0, 1.0], &[&[1.0, 0.0]]).unwrap(),
            -1.0
        );
        assert!(matches!(
            dist_plus_to_span(&[1.0, 1.0, 1.0], &[&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]),
            Err(Error::DegenerateFeature(_))
        ));

        let p1 = [1.0, 1.0];
        let p2 = [-1.0, 1.0];
        assert_eq!(dist_plus_to_affine(&[0.0, 2.0], &[&p1, &p2]).unwrap(), 0.0);
        assert_eq!(dist_plus_to_affine(&[0.0, 2.0], &[&p2, &p1]).unwrap(), 1.0);
        assert_eq!(dist_plus_to_affine(&[0.5, 1.0], &[&p2, &p1]).unwrap(), 0.0);
        assert!(matches!(
            dist_plus_to_affine(&[0.0, 2.0], &[&p1, &p1]),
            Err(Error::DegenerateFeature(_))
        ));
    }

    #[test]
    fn triangle_area_examples() {
        let (a, b, c) = ([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        assert_eq!(signed_triangle_area(&a, &b, &c).unwrap(), 0.5);
        assert_eq!(signed_triangle_area(&b, &a, &c).unwrap(), -0.5);
        assert_eq!(
            signed_triangle_area(&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]).unwrap(),
            0.0
        );
        // Equivalent form ½(a∧b + b∧c + c∧a).
        let (a, b, c) = ([0.3, -1.1], [2.0, 0.4], [-0.7, 0.9]);
        let w = |p: &[f64], q: &[f64]| p[0] * q[1] - p[1] * q[0];
        let alt = 0.5 * (w(&a, &b) + w(&b, &c) + w(&c, &a));
        assert!((signed_triangle_area(&a, &b, &c).unwrap() - alt).abs() < 1e-14);
    }

    #[test]
    fn independence_threshold() {
        assert!(independent(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]));
        assert!(!independent(&[&[1.0, 0.0, 0.0], &[1.0, 1e-12, 0.0]]));
        assert!(!independent(&[&[0.0, 0.0]]));
        assert!(independent(&[]));
    }
}
