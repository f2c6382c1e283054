//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of them fails.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wedgenet::cli::{build_for_variant, VariantArg};
use wedgenet::diagnostics::{self, DiameterMode};
use wedgenet::dict::{self, BuildConfig, Dictionary};
use wedgenet::lasso::{self, LassoProblem, LassoSolution, Loss, SolverConfig};
use wedgenet::net::{self, Layer, ReluNetwork};
use wedgenet::polish::{self, PolishConfig};
use wedgenet::trainer::{self, TrainConfig};
use wedgenet::{ga, DataMatrix};

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn gauss_vec(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| gauss(r)).collect()
}

fn gauss_matrix(r: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| gauss(r))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Checks the Lasso optimality conditions against the loss gradient at the
/// returned solution. Returns the worst normalized violation.
fn certify(problem: &LassoProblem, sol: &LassoSolution) -> std::result::Result<f64, String> {
    let lam = problem.lambda_eff();
    let v = lasso::dual_certificate(problem, sol).v;
    let kv = problem.k.transpose() * &v;
    let mut worst = 0.0f64;
    if let Some(groups) = &problem.groups {
        for g in groups {
            let block = DMatrix::from_fn(g.len(), v.ncols(), |a, o| kv[(g[a], o)]);
            let zb = DMatrix::from_fn(g.len(), v.ncols(), |a, o| sol.z[(g[a], o)]);
            let bn = block.norm();
            if bn > lam * (1.0 + 1e-6) {
                return Err(format!("group {g:?}: ‖K_gᵀV‖ = {bn:.9e} > λ = {lam:.9e}"));
            }
            let zn = zb.norm();
            if zn > 0.0 {
                let dev = (bn - lam).abs();
                let align = (&block + &zb * (lam / zn)).norm();
                if dev > 1e-6 * lam || align > 1e-6 * lam {
                    return Err(format!("active group {g:?}: |‖K_gᵀV‖-λ| = {dev:.3e}, misalignment {align:.3e}"));
                }
                worst = worst.max(dev.max(align) / lam);
            }
        }
    } else {
        for o in 0..v.ncols() {
            for j in 0..problem.k.ncols() {
                let c = kv[(j, o)];
                if c.abs() > lam * (1.0 + 1e-6) {
                    return Err(format!("column {j}: |vᵀK_j| = {:.9e} > λ = {lam:.9e}", c.abs()));
                }
                let z = sol.z[(j, o)];
                if z != 0.0 {
                    let dev = (c + lam * z.signum()).abs();
                    if dev > 1e-6 * lam {
                        return Err(format!("support column {j}: |vᵀK_j + λ sign z| = {dev:.3e}"));
                    }
                    worst = worst.max(dev / lam);
                }
            }
        }
    }
    if problem.intercept {
        for o in 0..v.ncols() {
            let s: f64 = v.column(o).sum();
            let l1: f64 = v.column(o).iter().map(|x| x.abs()).sum();
            if s.abs() > 1e-6 * l1 {
                return Err(format!("intercept: |Σv| = {:.3e} > 1e-6·‖v‖₁ = {:.3e}", s.abs(), 1e-6 * l1));
            }
        }
    }
    Ok(worst)
}

struct Convex {
    dict: Dictionary,
    gen: DataMatrix,
    problem: LassoProblem,
    sol: LassoSolution,
    net: ReluNetwork,
    net_cost: f64,
}

fn convex(variant: VariantArg, data: &DataMatrix, lambda: f64, loss: Loss) -> std::result::Result<Convex, String> {
    let p = variant.resolve_p(None).map_err(|e| e.to_string())?;
    let (dict, gen) = build_for_variant(variant, p, data, &BuildConfig::default()).map_err(|e| e.to_string())?;
    let problem = LassoProblem::for_dictionary(&dict, data.y(), lambda).with_loss(loss);
    let sol = lasso::solve(&problem, &SolverConfig::default()).map_err(|e| e.to_string())?;
    certify(&problem, &sol).map_err(|e| format!("certificate: {e}"))?;
    let net = net::reconstruct(&dict, &sol, &gen).map_err(|e| e.to_string())?;
    let net = net::balance_scaling(&net).net;
    let net_cost = net::nonconvex_cost(&net, data, lambda, p, loss).map_err(|e| e.to_string())?.total;
    Ok(Convex { dict, gen, problem, sol, net, net_cost })
}

fn eval1(net: &ReluNetwork, t: f64) -> f64 {
    net::forward(net, &DMatrix::from_element(1, 1, t)).unwrap()[(0, 0)]
}

fn c1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let xs: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..8).map(|_| gauss(&mut r)).collect();
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let data = DataMatrix::from_rows(&rows, &ys).map_err(|e| e.to_string())?;
    let lambda = 0.1;
    let cv = convex(VariantArg::OneD, &data, lambda, Loss::SquaredError)?;
    let gap = rel(cv.net_cost, cv.sol.objective);
    if gap > 1e-8 {
        return Err(format!("reconstruction cost {} vs Lasso {} (rel {gap:.2e})", cv.net_cost, cv.sol.objective));
    }

    let tc = TrainConfig { m: 50, lambda, p: 2, steps: 5000, restarts: 20, seed: 11, ..TrainConfig::default() };
    let tr = trainer::train_two_layer(&data, &tc).map_err(|e| e.to_string())?;
    if tr.best_objective < cv.sol.objective - 1e-3 {
        return Err(format!("trainer {} beats convex optimum {}", tr.best_objective, cv.sol.objective));
    }

    // Slopes on both sides of each grid point; away from the samples the
    // function must be affine between consecutive abscissae.
    let h = 1e-6;
    let mut knots = xs.clone();
    knots.sort_by(f64::total_cmp);
    let (lo, hi) = (-1.5, 1.5);
    let grid = 30_001;
    let mut pieces: Vec<Vec<f64>> = vec![Vec::new(); knots.len() + 1];
    let mut scan_kinks = 0;
    for k in 0..grid {
        let t = lo + (hi - lo) * k as f64 / (grid - 1) as f64;
        if knots.iter().any(|&x| (t - x).abs() <= 4.0 * h) {
            continue;
        }
        let (fm, f0, fp) = (eval1(&cv.net, t - h), eval1(&cv.net, t), eval1(&cv.net, t + h));
        let (sl, sr) = ((f0 - fm) / h, (fp - f0) / h);
        if (sl - sr).abs() > 1e-5 * (1.0 + sl.abs()) {
            scan_kinks += 1;
        }
        let piece = knots.iter().filter(|&&x| x < t).count();
        pieces[piece].push(0.5 * (sl + sr));
    }
    if scan_kinks > 0 {
        return Err(format!("{scan_kinks} grid points away from the samples show a slope jump"));
    }
    for (i, s) in pieces.iter().enumerate() {
        let (mn, mx) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
        if !s.is_empty() && mx - mn > 1e-5 * (1.0 + mx.abs()) {
            return Err(format!("piece {i} is not affine: slopes in [{mn}, {mx}]"));
        }
    }
    let l0 = &cv.net.layers[0];
    for j in 0..l0.outputs() {
        let w = l0.w[(j, 0)];
        let b = l0.b.as_ref().map_or(0.0, |b| b[j]);
        let bp = -b / w;
        let dist = xs.iter().map(|x| (x - bp).abs()).fold(f64::INFINITY, f64::min);
        if dist > 1e-10 {
            return Err(format!("neuron {j} breakpoint {bp} is {dist:.2e} from every sample"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!(
        "Lasso {:.10} = network {:.10} (rel {gap:.1e}); best of 20 trained {:.6}; {} neurons on samples; {secs:.1}s",
        cv.sol.objective,
        cv.net_cost,
        tr.best_objective,
        l0.outputs()
    ))
}

fn c2() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let x = gauss_matrix(&mut r, 10, 3);
    let y = DMatrix::from_fn(10, 1, |_, _| gauss(&mut r));
    let data = DataMatrix::new(x, y).map_err(|e| e.to_string())?;
    let lambda = 0.1;
    let cv = convex(VariantArg::L1Nobias, &data, lambda, Loss::SquaredError)?;
    if !cv.gen.is_augmented() {
        return Err("dictionary data is not augmented".into());
    }
    let gap = rel(cv.net_cost, cv.sol.objective);
    if gap > 1e-8 {
        return Err(format!("reconstruction cost {} vs Lasso {} (rel {gap:.2e})", cv.net_cost, cv.sol.objective));
    }
    let tc = TrainConfig {
        m: 50,
        lambda,
        p: 1,
        steps: 5000,
        restarts: 20,
        seed: 12,
        hidden_bias: false,
        output_bias: false,
        ..TrainConfig::default()
    };
    let tr = trainer::train_two_layer(&data, &tc).map_err(|e| e.to_string())?;
    if tr.best_objective < cv.sol.objective * (1.0 - 1e-2) {
        return Err(format!("trainer {} beats convex optimum {}", tr.best_objective, cv.sol.objective));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 120.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!(
        "Lasso {:.10} over {} features = network (rel {gap:.1e}); best of 20 trained {:.6}; {secs:.1}s",
        cv.sol.objective,
        cv.dict.n_features(),
        tr.best_objective
    ))
}

/// Least-squares residual of `x` against the columns spanned by `basis`.
fn residual_norm(x: &[f64], basis: &[Vec<f64>]) -> f64 {
    let d = x.len();
    let a = DMatrix::from_fn(d, basis.len(), |i, j| basis[j][i]);
    let b = DVector::from_column_slice(x);
    let coef = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
    (b - a * coef).norm()
}

fn oriented_det(first: &[f64], rest: &[Vec<f64>]) -> f64 {
    let d = first.len();
    let m = DMatrix::from_fn(d, d, |i, j| if j == 0 { first[i] } else { rest[j - 1][i] });
    m.determinant()
}

fn c3() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for draw in 0..1000 {
        let d = 2 + draw % 5;
        let x = gauss_vec(&mut r, d);
        let us: Vec<Vec<f64>> = (0..d - 1).map(|_| gauss_vec(&mut r, d)).collect();
        let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
        let k = ga::dist_plus_to_span(&x, &refs).map_err(|e| e.to_string())?;
        let oracle = (oriented_det(&x, &us).signum() * residual_norm(&x, &us)).max(0.0);
        let e = (k - oracle).abs() / oracle.max(ga::norm_l2(&x));
        worst = worst.max(e);
        if e > 1e-9 {
            return Err(format!("span draw {draw} (d={d}): kernel {k} vs oracle {oracle}"));
        }

        let pts: Vec<Vec<f64>> = (0..d).map(|_| gauss_vec(&mut r, d)).collect();
        let prefs: Vec<&[f64]> = pts.iter().map(|u| u.as_slice()).collect();
        let k = ga::dist_plus_to_affine(&x, &prefs).map_err(|e| e.to_string())?;
        let anchor = &pts[d - 1];
        let xs = ga::sub(&x, anchor);
        let dirs: Vec<Vec<f64>> = pts[..d - 1].iter().map(|p| ga::sub(p, anchor)).collect();
        let oracle = (oriented_det(&xs, &dirs).signum() * residual_norm(&xs, &dirs)).max(0.0);
        let e = (k - oracle).abs() / oracle.max(ga::norm_l2(&xs));
        worst = worst.max(e);
        if e > 1e-9 {
            return Err(format!("affine draw {draw} (d={d}): kernel {k} vs oracle {oracle}"));
        }
    }
    Ok(format!("2000 kernel evaluations, d in 2..=6, worst relative error {worst:.2e}"))
}

fn gram_det(vs: &[Vec<f64>]) -> f64 {
    DMatrix::from_fn(vs.len(), vs.len(), |i, j| ga::dot(&vs[i], &vs[j])).determinant()
}

fn c4() -> Outcome {
    let mut r = rng(4);
    let (mut worst_orth, mut worst_gram) = (0.0f64, 0.0f64);
    for draw in 0..10_000 {
        let d = 2 + draw % 7;
        let us: Vec<Vec<f64>> = (0..d - 1).map(|_| gauss_vec(&mut r, d)).collect();
        let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
        let c = ga::cross(&refs).map_err(|e| e.to_string())?.direction;
        let cn = ga::norm_l2(&c);
        for (i, u) in us.iter().enumerate() {
            let e = ga::dot(&c, u).abs() / (cn * ga::norm_l2(u));
            worst_orth = worst_orth.max(e);
            if e > 1e-10 {
                return Err(format!("draw {draw} (d={d}): cross not orthogonal to input {i} ({e:.2e})"));
            }
        }
        let g = gram_det(&us);
        let e = rel(cn * cn, g);
        worst_gram = worst_gram.max(e);
        if e > 1e-9 {
            return Err(format!("draw {draw} (d={d}): ‖×‖² = {} vs Gram {g}", cn * cn));
        }
        if d > 2 {
            let (a, b) = (r.random_range(0..d - 1), r.random_range(0..d - 1));
            if a != b {
                let mut swapped = refs.clone();
                swapped.swap(a, b);
                let s = ga::cross(&swapped).map_err(|e| e.to_string())?.direction;
                if s.iter().zip(&c).any(|(p, q)| *p != -*q) {
                    return Err(format!("draw {draw} (d={d}): swap is not an exact sign flip"));
                }
            }
        }
        match d {
            2 => {
                if c != vec![us[0][1], -us[0][0]] {
                    return Err(format!("d=2 draw {draw}: {c:?} is not (b, -a)"));
                }
            }
            3 => {
                let (a, b) = (&us[0], &us[1]);
                let classical = vec![a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
                if c != classical {
                    return Err(format!("d=3 draw {draw}: {c:?} differs from the classical formula {classical:?}"));
                }
            }
            _ => {}
        }
    }
    Ok(format!(
        "10000 draws, d in 2..=8: orthogonality {worst_orth:.1e}, Gram {worst_gram:.1e}, swaps and low-d formulas exact"
    ))
}

fn c5() -> Outcome {
    let mut r = rng(5);
    let mut solves = 0;
    let mut worst = 0.0f64;
    for case in 0..24 {
        let n = 12 + case % 7;
        let p = 30 + 7 * case;
        let loss = if case % 2 == 0 { Loss::SquaredError } else { Loss::Logistic };
        let k = DMatrix::from_fn(n, p, |_, _| gauss(&mut r).max(0.0));
        let c = if case % 3 == 2 { 3 } else { 1 };
        let y = DMatrix::from_fn(n, c, |_, _| {
            let g = gauss(&mut r);
            if loss == Loss::Logistic {
                g.signum()
            } else {
                g
            }
        });
        let mut problem = LassoProblem::new(k, y, 0.02 + 0.01 * (case % 5) as f64)
            .with_loss(loss)
            .with_intercept(case % 4 < 2);
        if case % 6 == 5 {
            let groups: Vec<Vec<usize>> = (0..p).collect::<Vec<_>>().chunks(3).map(|g| g.to_vec()).collect();
            problem = problem.with_groups(groups);
        }
        let sol = match lasso::solve(&problem, &SolverConfig::default()) {
            Ok(s) => s,
            Err(e) => return Err(format!("case {case}: {e}")),
        };
        worst = worst.max(certify(&problem, &sol).map_err(|e| format!("case {case}: {e}"))?);
        solves += 1;
    }
    // Dictionary-backed problems, one per family the spatial builders cover.
    let mut q = rng(55);
    let x = gauss_matrix(&mut q, 14, 2);
    let y = DMatrix::from_fn(14, 1, |_, _| gauss(&mut q));
    let data = DataMatrix::new(x, y).map_err(|e| e.to_string())?;
    for v in [VariantArg::L1Nobias, VariantArg::L2Nobias, VariantArg::L2Bias, VariantArg::TwoDL1Bias, VariantArg::TwoDL2Bias, VariantArg::ThreeLayerBias] {
        for loss in [Loss::SquaredError, Loss::Logistic] {
            let data = if loss == Loss::Logistic {
                DataMatrix::new(data.samples(), data.y().map(f64::signum)).map_err(|e| e.to_string())?
            } else {
                data.clone()
            };
            let cv = convex(v, &data, 0.05, loss).map_err(|e| format!("{v:?} {loss:?}: {e}"))?;
            worst = worst.max(certify(&cv.problem, &cv.sol)?);
            solves += 1;
        }
    }
    Ok(format!("{solves} converged solves certified; worst on-support deviation {worst:.1e}·λ"))
}

fn c6() -> Outcome {
    let eye = DMatrix::identity(2, 2);
    let e = diagnostics::chamber_diameter(&eye, DiameterMode::Exact, 100, 0).map_err(|e| e.to_string())?;
    if (e.value - 2f64.sqrt()).abs() > 1e-6 || !e.exact {
        return Err(format!("I₂ diameter {} (exact flag {})", e.value, e.exact));
    }

    let n = 4096;
    let mut worst_ratio = 0.0f64;
    let mut largest = [0.0f64; 3];
    for (k, d) in [2usize, 3, 4].into_iter().enumerate() {
        let bound = 9.0 * (d as f64 / n as f64).powf(0.25);
        for seed in 0..20u64 {
            let x = gauss_matrix(&mut rng(600 + 100 * d as u64 + seed), n, d);
            let s = diagnostics::chamber_diameter(&x, DiameterMode::Sampled, 2000, seed).map_err(|e| e.to_string())?;
            largest[k] = largest[k].max(s.value);
            worst_ratio = worst_ratio.max(s.value / bound);
            if s.value > bound {
                return Err(format!("d={d} seed {seed}: sampled diameter {} > {bound}", s.value));
            }
        }
    }

    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let x = gauss_matrix(&mut rng(700 + seed), 50, 2);
        let exact = diagnostics::chamber_diameter(&x, DiameterMode::Exact, 100, seed).map_err(|e| e.to_string())?;
        let eps = diagnostics::angular_dispersion_2d(&x).map_err(|e| e.to_string())?;
        let chord = 2.0 * (PI * eps / 2.0).sin();
        let e = (exact.value - chord).abs();
        worst = worst.max(e);
        if e > 1e-9 {
            return Err(format!("seed {seed}: exact diameter {} vs chord {chord}", exact.value));
        }
    }
    Ok(format!(
        "I₂ → {:.12}; 60 Gaussian runs under the bound (largest estimates {:.4}/{:.4}/{:.4} for d=2/3/4, worst ratio {worst_ratio:.3}); 2-D chord identity {worst:.1e}",
        e.value, largest[0], largest[1], largest[2]
    ))
}

fn c7() -> Outcome {
    let mut r = rng(7);
    let x = gauss_matrix(&mut r, 200, 2);
    let y = DMatrix::from_fn(200, 1, |i, _| (1.5 * x[(i, 0)]).sin() + 0.5 * x[(i, 1)] + 0.1 * gauss(&mut r));
    let data = DataMatrix::new(x.clone(), y).map_err(|e| e.to_string())?;
    let lambda = 0.05;
    let cv = convex(VariantArg::L2Bias, &data, lambda, Loss::SquaredError)?;
    let gap = rel(cv.net_cost, cv.sol.objective);
    if gap > 1e-8 {
        return Err(format!("reconstruction cost {} vs Lasso {} (rel {gap:.2e})", cv.net_cost, cv.sol.objective));
    }
    // Biased neurons need the data dispersed around every sample.
    let eps = diagnostics::local_chamber_diameter(&x, DiameterMode::Exact, 2000, 0).map_err(|e| e.to_string())?;
    let global = diagnostics::chamber_diameter(&x, DiameterMode::Exact, 2000, 0).map_err(|e| e.to_string())?;
    let worst_gap = diagnostics::local_angular_dispersion_2d(&x).map_err(|e| e.to_string())?.into_iter().fold(0.0, f64::max);
    let chord = 2.0 * (PI * worst_gap / 2.0).sin();
    if (chord - eps.value).abs() > 1e-9 {
        return Err(format!("local diameter {} disagrees with the local angular chord {chord}", eps.value));
    }
    let tc = TrainConfig { m: 50, lambda, p: 2, steps: 5000, restarts: 20, seed: 17, ..TrainConfig::default() };
    let tr = trainer::train_two_layer(&data, &tc).map_err(|e| e.to_string())?;
    let detail = format!(
        "convex {:.8}, best of 20 trained {:.8}, local diameter ε̂ = {:.6} (global {:.6})",
        cv.sol.objective, tr.best_objective, eps.value, global.value
    );
    if !(eps.value < 1.0) {
        return Err(format!("{detail}: ε̂ ≥ 1, the approximation bound does not apply"));
    }
    let bound = tr.best_objective / (1.0 - eps.value) + 1e-6;
    if cv.sol.objective > bound {
        return Err(format!("{detail}: convex exceeds {bound}"));
    }
    Ok(format!("{detail}; bound {bound:.8}; reconstruction rel {gap:.1e}"))
}

fn spiral(seed: u64, n: usize) -> DataMatrix {
    let mut r = rng(seed);
    let half = n / 2;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..half {
        let t = 0.25 + 3.0 * PI * k as f64 / half as f64;
        let rad = t / (3.0 * PI);
        for s in [1.0, -1.0] {
            rows.push(vec![
                s * rad * t.cos() + 0.02 * gauss(&mut r),
                s * rad * t.sin() + 0.02 * gauss(&mut r),
            ]);
            labels.push(s);
        }
    }
    DataMatrix::from_rows(&rows, &labels).unwrap()
}

fn lifted_row(net: &ReluNetwork, j: usize) -> Vec<f64> {
    let l = &net.layers[0];
    let mut v: Vec<f64> = l.w.row(j).iter().copied().collect();
    v.push(l.b.as_ref().map_or(0.0, |b| b[j]));
    v
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (ga::norm_l2(a), ga::norm_l2(b));
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { PI };
    }
    // Chord of the unit directions; accurate for tiny angles.
    let chord: f64 = a.iter().zip(b).map(|(x, y)| (x / na - y / nb).powi(2)).sum::<f64>().sqrt();
    2.0 * (0.5 * chord).min(1.0).asin()
}

fn c8() -> Outcome {
    let mut better = 0;
    let mut lines = Vec::new();
    let (mut worst_orth, mut worst_move) = (0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let data = spiral(800 + seed, 200);
        let lambda = 1e-5;
        let tc = TrainConfig { m: 40, lambda, p: 2, steps: 5000, restarts: 1, seed, ..TrainConfig::default() };
        let tr = trainer::train_two_layer(&data, &tc).map_err(|e| e.to_string())?;
        let pc = PolishConfig { lambda, ..PolishConfig::default() };
        let (pol, rep) = polish::polish_network(&tr.net, &data, &pc).map_err(|e| e.to_string())?;
        let xs = data.sample_rows();
        for nr in rep.neurons.iter().filter(|nr| nr.layer == 0 && nr.skipped.is_none()) {
            let w = lifted_row(&pol, nr.neuron);
            for &i in &nr.selected {
                let mut xi = xs[i].clone();
                xi.push(1.0);
                let e = ga::dot(&w, &xi).abs() / (ga::norm_l2(&w) * ga::norm_l2(&xi));
                worst_orth = worst_orth.max(e);
                if e > 1e-8 {
                    return Err(format!("seed {seed}: neuron {} not orthogonal to sample {i} ({e:.2e})", nr.neuron));
                }
            }
        }
        if rep.post_objective <= 1.05 * rep.pre_objective {
            better += 1;
        }
        lines.push(format!("{:.4}→{:.4}", rep.pre_objective, rep.post_objective));
        let (again, _) = polish::polish_network(&pol, &data, &pc).map_err(|e| e.to_string())?;
        for j in 0..pol.layers[0].outputs() {
            let a = angle(&lifted_row(&pol, j), &lifted_row(&again, j));
            worst_move = worst_move.max(a);
            if a > 1e-8 {
                return Err(format!("seed {seed}: re-polishing moved neuron {j} by {a:.2e} rad"));
            }
        }
    }
    let detail = format!(
        "objectives {}; orthogonality {worst_orth:.1e}; re-polish drift {worst_move:.1e} rad",
        lines.join(", ")
    );
    if better < 4 {
        return Err(format!("only {better}/5 seeds within 1.05× ({detail})"));
    }
    Ok(format!("{better}/5 seeds within 1.05×; {detail}"))
}

fn c9() -> Outcome {
    let mut r = rng(9);
    let (mut worst_fd, mut worst_out) = (0.0f64, 0.0f64);
    for case in 0..100 {
        let d = 1 + case % 4;
        let m = 2 + case % 7;
        let c = 1 + case % 3;
        let p = if case % 2 == 0 { 2u8 } else { 1 };
        let w1 = gauss_matrix(&mut r, m, d);
        let b1 = (case % 3 != 0).then(|| DVector::from_fn(m, |_, _| gauss(&mut r)));
        let w2 = gauss_matrix(&mut r, c, m);
        let b2 = (case % 5 != 0).then(|| DVector::from_fn(c, |_, _| gauss(&mut r)));
        let orig = ReluNetwork::new(vec![Layer::new(w1, b1), Layer::new(w2, b2)], p).map_err(|e| e.to_string())?;
        let bal = net::balance_scaling(&orig);
        if !bal.skipped.is_empty() {
            return Err(format!("case {case}: neurons skipped"));
        }
        let net = bal.net;

        let x = gauss_matrix(&mut r, 17, d);
        let (f0, f1) = (net::forward(&orig, &x).unwrap(), net::forward(&net, &x).unwrap());
        let scale = f0.amax().max(1.0);
        let e = (&f0 - &f1).amax() / scale;
        worst_out = worst_out.max(e);
        if e > 1e-12 {
            return Err(format!("case {case}: outputs moved by {e:.2e}"));
        }

        for j in 0..m {
            let row: Vec<f64> = orig.layers[0].w.row(j).iter().copied().collect();
            let col: Vec<f64> = orig.layers[1].w.column(j).iter().copied().collect();
            let alpha = (ga::norm_l2(&col) / ga::norm_p(&row, p)).sqrt();
            for k in 0..d {
                if net.layers[0].w[(j, k)] != orig.layers[0].w[(j, k)] * alpha {
                    return Err(format!("case {case}: neuron {j} not scaled by α* exactly"));
                }
            }

            let h = 1e-5;
            let reg_at = |s: f64| {
                let mut t = net.clone();
                t.layers[0].w.row_mut(j).scale_mut(s);
                if let Some(b) = t.layers[0].b.as_mut() {
                    b[j] *= s;
                }
                t.layers[1].w.column_mut(j).scale_mut(1.0 / s);
                net::regularization(&t, p)
            };
            let fd = (reg_at(1.0 + h) - reg_at(1.0 - h)) / (2.0 * h);
            worst_fd = worst_fd.max(fd.abs());
            if fd.abs() > 1e-6 {
                return Err(format!("case {case}: d reg / d s_{j} = {fd:.2e}"));
            }
        }
    }
    Ok(format!("100 networks: worst scale derivative {worst_fd:.1e}, output drift {worst_out:.1e}, α* exact"))
}

fn c10() -> Outcome {
    let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    let data = DataMatrix::from_rows(&rows, &[1.0, 1.0, -1.0, -1.0]).map_err(|e| e.to_string())?;
    let mut counts = Vec::new();
    for biased in [false, true] {
        let dict = dict::build_3layer_l1(&data, biased, &BuildConfig::default()).map_err(|e| e.to_string())?;
        let dirs: Vec<Vec<f64>> = (0..dict.n_features())
            .map(|j| dict.geometry(j, &data).and_then(|g| g.direction(2)))
            .collect::<wedgenet::Result<_>>()
            .map_err(|e| e.to_string())?;
        let mut pairs = 0;
        for a in 0..4 {
            for b in (a + 1)..4 {
                let diff = ga::sub(&rows[a], &rows[b]);
                let hit = dirs.iter().any(|u| {
                    ga::norm_l2(u) > 0.0 && ga::dot(u, &diff).abs() <= 1e-10 * ga::norm_l2(u) * ga::norm_l2(&diff)
                });
                if !hit {
                    return Err(format!(
                        "{} dictionary has no neuron orthogonal to x{} - x{}",
                        if biased { "biased" } else { "bias-free" },
                        a + 1,
                        b + 1
                    ));
                }
                pairs += 1;
            }
        }
        counts.push(format!("{} ({} features, {pairs} pairs)", if biased { "biased" } else { "bias-free" }, dict.n_features()));
    }
    Ok(format!("every pairwise difference has an orthogonal neuron: {}", counts.join(", ")))
}

fn c11() -> Outcome {
    let mut r = rng(11);
    let x = gauss_matrix(&mut r, 20, 2);
    let y = gauss_matrix(&mut r, 20, 3);
    let data = DataMatrix::new(x, y).map_err(|e| e.to_string())?;
    let p = VariantArg::Vector.resolve_p(None).map_err(|e| e.to_string())?;
    let (dict, _) = build_for_variant(VariantArg::Vector, p, &data, &BuildConfig::default()).map_err(|e| e.to_string())?;
    let base = LassoProblem::for_dictionary(&dict, data.y(), 1.0);
    let groups = base.groups.clone().ok_or("vector dictionary without groups")?;
    // Gradient at Z = 0 (with the optimal intercept when there is one).
    let mut v0 = -data.y().clone();
    if base.intercept {
        for o in 0..3 {
            let mean = data.y().column(o).mean();
            v0.column_mut(o).add_scalar_mut(mean);
        }
    }
    let kv = dict.k.transpose() * &v0;
    let lam_max = groups
        .iter()
        .map(|g| DMatrix::from_fn(g.len(), 3, |a, o| kv[(g[a], o)]).norm())
        .fold(0.0, f64::max)
        / base.penalty_scale;

    let above = LassoProblem { lambda: 1.01 * lam_max, ..base.clone() };
    let sol = lasso::solve(&above, &SolverConfig::default()).map_err(|e| e.to_string())?;
    if sol.z.iter().any(|v| *v != 0.0) {
        return Err(format!("λ = 1.01·λ_max = {:.6}: Z has {} nonzeros", above.lambda, sol.z.iter().filter(|v| **v != 0.0).count()));
    }
    let mut active = Vec::new();
    for frac in [0.5, 0.2, 0.05] {
        let below = LassoProblem { lambda: frac * lam_max, ..base.clone() };
        let sol = lasso::solve(&below, &SolverConfig::default()).map_err(|e| e.to_string())?;
        certify(&below, &sol).map_err(|e| format!("λ = {frac}·λ_max: {e}"))?;
        if sol.support.is_empty() {
            return Err(format!("λ = {frac}·λ_max: no active group"));
        }
        active.push(sol.support.len());
    }
    Ok(format!(
        "λ_max = {lam_max:.6}; Z = 0 above it; active groups {active:?} at 0.5/0.2/0.05·λ_max meet block KKT"
    ))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 11] = [
        ("C1 one-dimensional exactness", c1),
        ("C2 d-dimensional l1 exactness", c2),
        ("C3 kernel vs projection oracle", c3),
        ("C4 cross product identities", c4),
        ("C5 dual certificates", c5),
        ("C6 chamber diameters", c6),
        ("C7 l2 approximation bound", c7),
        ("C8 polishing pipeline", c8),
        ("C9 balanced scaling", c9),
        ("C10 three-layer breakline families", c10),
        ("C11 vector-output group sparsity", c11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in checks {
        if !filter.is_empty() && !filter.iter().any(|p| name.starts_with(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let out = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("PASS {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} [{secs:.1}s]: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
