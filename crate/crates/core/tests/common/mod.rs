#![allow(dead_code)]

use fairproj::baseline::{fit_logreg, LogRegConfig};
use fairproj::constraints::ConstraintSet;
use fairproj::data::{generate_synth, SynthSpec, TabularDataset};
use fairproj::{Matrix, ScoreMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FAVOUR: f64 = 0.7;
pub const SEPARATION: f64 = 2.0;

pub fn biased_spec(n: usize, classes: usize, groups: usize, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::biased(n, classes, groups, FAVOUR, seed);
    spec.cluster_separation = SEPARATION;
    spec
}

/// Biased synthetic data with logistic-regression scores fitted on itself.
pub fn biased_fixture(n: usize, classes: usize, groups: usize, seed: u64) -> (TabularDataset, ScoreMatrix) {
    let ds = generate_synth(&biased_spec(n, classes, groups, seed)).unwrap();
    let x = ds.features_with_groups().unwrap();
    let model = fit_logreg(&x, &ds.labels, classes, &LogRegConfig::default()).unwrap();
    let scores = model.predict_proba(&x).unwrap();
    (ds, scores)
}

/// N=32, C=2, A=2 with scores tilted towards class 0 in group 0.
pub struct SmallInstance {
    pub scores: ScoreMatrix,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
}

pub fn small_instance(seed: u64) -> SmallInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for i in 0..32 {
        let a = i % 2;
        let z: f64 = StandardNormal.sample(&mut rng);
        let z = z + if a == 0 { 1.0 } else { -1.0 };
        let p0 = 1.0 / (1.0 + (-z).exp());
        labels.push(if rng.random::<f64>() < p0 { 0 } else { 1 });
        rows.push(vec![p0, 1.0 - p0]);
        groups.push(a);
    }
    SmallInstance {
        scores: ScoreMatrix::from_rows(&rows).unwrap(),
        labels,
        groups,
    }
}

pub fn random_simplex(rng: &mut impl Rng, c: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

pub fn random_scores(rng: &mut impl Rng, n: usize, c: usize) -> ScoreMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(rng, c, 0.05)).collect();
    ScoreMatrix::from_rows(&rows).unwrap()
}

pub fn random_features(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    let data = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::new(n, d, data).unwrap()
}

pub fn gt_times(g: &[f64], k: usize, c: usize, lambda: &[f64]) -> Vec<f64> {
    (0..c).map(|j| (0..k).map(|r| g[r * c + j] * lambda[r]).sum()).collect()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// KL dual value, written out directly.
pub fn kl_dual_value(scores: &ScoreMatrix, cs: &ConstraintSet, lambda: &[f64], zeta: f64) -> f64 {
    let (n, k, c) = (cs.n(), cs.k(), cs.classes());
    let mut total = 0.0;
    for i in 0..n {
        let u = gt_times(cs.g(i), k, c, lambda);
        let z: Vec<f64> = u.iter().zip(scores.row(i)).map(|(u, p)| -u + p.ln()).collect();
        total += log_sum_exp(&z) + 0.5 * zeta * u.iter().map(|x| x * x).sum::<f64>();
    }
    total / n as f64 + 0.5 * zeta * lambda.iter().map(|x| x * x).sum::<f64>()
}

/// Projected gradient descent with step `1/L` on the KL dual.
pub fn kl_dual_pgd(scores: &ScoreMatrix, cs: &ConstraintSet, zeta: f64, steps: usize) -> Vec<f64> {
    let (n, k, c) = (cs.n(), cs.k(), cs.classes());
    let nf = n as f64;
    let frob: f64 = (0..n).map(|i| cs.g(i).iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / nf;
    let step = 1.0 / ((0.5 + zeta) * frob + zeta);
    let logp: Vec<Vec<f64>> = (0..n).map(|i| scores.row(i).iter().map(|p| p.ln()).collect()).collect();
    let mut lambda = vec![0.0; k];
    let mut grad = vec![0.0; k];
    let mut z = vec![0.0; c];
    for _ in 0..steps {
        grad.iter_mut().zip(&lambda).for_each(|(g, l)| *g = zeta * l);
        for i in 0..n {
            let g = cs.g(i);
            for j in 0..c {
                let mut u = 0.0;
                for r in 0..k {
                    u += g[r * c + j] * lambda[r];
                }
                z[j] = u;
            }
            let m = z.iter().zip(&logp[i]).map(|(u, lp)| -u + lp).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            let mut e = [0.0; 16];
            for j in 0..c {
                e[j] = (-z[j] + logp[i][j] - m).exp();
                s += e[j];
            }
            for r in 0..k {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += g[r * c + j] * (zeta * z[j] - e[j] / s);
                }
                grad[r] += acc / nf;
            }
        }
        for (l, g) in lambda.iter_mut().zip(&grad) {
            *l = (*l - step * g).max(0.0);
        }
    }
    lambda
}

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
pub fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Cyclic coordinate descent with golden-section line searches.
pub fn coordinate_minimize(f: impl Fn(&[f64]) -> f64, start: &[f64], radius: f64, sweeps: usize) -> Vec<f64> {
    let mut x = start.to_vec();
    for sweep in 0..sweeps {
        let width = radius / (1.0 + sweep as f64).sqrt();
        for j in 0..x.len() {
            let centre = x[j];
            let best = golden(
                |t| {
                    let mut y = x.clone();
                    y[j] = t;
                    f(&y)
                },
                centre - width,
                centre + width,
                1e-12,
            );
            x[j] = best;
        }
    }
    x
}

/// Cross-entropy conjugate `γ − 1 − Σ p_c log(γ − v_c)` with `γ` found by
/// bisection on `Σ p_c / (γ − v_c) = 1`.
pub fn ce_conj_bisect(v: &[f64], p: &[f64]) -> f64 {
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum = |g: f64| v.iter().zip(p).map(|(vc, pc)| pc / (g - vc)).sum::<f64>();
    let mut lo = vmax + 1e-300_f64.max(vmax.abs() * 1e-16);
    let mut hi = vmax + 1.0;
    while sum(hi) > 1.0 {
        hi = vmax + 2.0 * (hi - vmax);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sum(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    g - 1.0 - v.iter().zip(p).map(|(vc, pc)| pc * (g - vc).ln()).sum::<f64>()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}
