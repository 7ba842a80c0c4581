//! Multinomial logistic regression, used as the base label classifier and
//! as the group-membership classifier `s(x, y)`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::divergence::{clip_and_renormalize, softmax_into, EPS_CLIP};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, ScoreMatrix};

const CHUNK: usize = 512;
const HEADER: &str = "fairproj-linmodel v1";
const GROUP_HEADER: &str = "fairproj-groupmodel v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Recorded only; initialization is all zeros and data order is fixed.
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 500,
            lr: 0.1,
            seed: 0,
        }
    }
}

/// Affine softmax model on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Number of raw input features.
    pub input_dim: usize,
    pub classes: usize,
    /// Raw feature indices used by the model, in order.
    pub kept: Vec<usize>,
    /// `(kept.len() + 1) × C`; the last row is the bias.
    pub weights: Matrix,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    /// Raw features dropped for having zero variance.
    pub dropped: Vec<usize>,
    pub final_grad_norm: f64,
}

/// Mean cross-entropy plus `(l2/2)‖W‖²` (bias excluded) and its gradient.
///
/// `params` is the row-major `(d+1) × C` weight matrix with the bias in the
/// last row; `x` is already standardized.
pub fn loss_and_grad(
    x: &Matrix,
    labels: &[usize],
    classes: usize,
    params: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let c = classes;
    let partials: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut grad = vec![0.0; (d + 1) * c];
            let mut loss = 0.0;
            let mut z = vec![0.0; c];
            let mut prob = vec![0.0; c];
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                let xi = x.row(i);
                affine(xi, params, d, c, &mut z);
                softmax_into(&z, &mut prob);
                let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
                loss += lse - z[labels[i]];
                prob[labels[i]] -= 1.0;
                for (j, &xj) in xi.iter().enumerate() {
                    if xj != 0.0 {
                        for k in 0..c {
                            grad[j * c + k] += xj * prob[k];
                        }
                    }
                }
                for k in 0..c {
                    grad[d * c + k] += prob[k];
                }
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; (d + 1) * c];
    for (l, g) in &partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let nf = n.max(1) as f64;
    loss /= nf;
    grad.iter_mut().for_each(|g| *g /= nf);
    let mut reg = 0.0;
    for j in 0..d * c {
        reg += params[j] * params[j];
        grad[j] += l2 * params[j];
    }
    (loss + 0.5 * l2 * reg, grad)
}

#[inline]
fn affine(x: &[f64], params: &[f64], d: usize, c: usize, z: &mut [f64]) {
    z.copy_from_slice(&params[d * c..(d + 1) * c]);
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for k in 0..c {
                z[k] += xj * params[j * c + k];
            }
        }
    }
}

fn check_labels(labels: &[usize], classes: usize, n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "labels vs feature rows",
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Fits by full-batch gradient descent from zero weights.
///
/// Features are standardized with the training mean and standard deviation;
/// zero-variance features are dropped and listed in
/// [`LinearModel::dropped`]. The ridge term is applied as a proximal step so
/// very large `l2` stays stable.
pub fn fit_logreg(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    cfg: &LogRegConfig,
) -> Result<LinearModel> {
    let (n, d_in) = (features.rows(), features.cols());
    check_labels(labels, classes, n)?;
    if classes == 0 || n < classes {
        return Err(Error::InvalidArgument(format!(
            "need at least as many samples as classes ({n} < {classes})"
        )));
    }
    if !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::InvalidArgument("lr must be positive and l2 nonnegative".into()));
    }
    if features.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("features contain non-finite values".into()));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for j in 0..d_in {
        let mean = (0..n).map(|i| features.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (features.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            kept.push(j);
            means.push(mean);
            stds.push(sd);
        } else {
            dropped.push(j);
        }
    }
    let x = standardize(features, &kept, &means, &stds);
    let d = kept.len();
    let c = classes;
    let mut params = vec![0.0; (d + 1) * c];
    let shrink = 1.0 / (1.0 + cfg.lr * cfg.l2);
    for _ in 0..cfg.epochs {
        let (_, grad) = loss_and_grad(&x, labels, c, &params, 0.0);
        for (j, (p, g)) in params.iter_mut().zip(&grad).enumerate() {
            *p -= cfg.lr * g;
            if j < d * c {
                *p *= shrink;
            }
        }
    }
    let (_, grad) = loss_and_grad(&x, labels, c, &params, cfg.l2);
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericBlowup { iteration: cfg.epochs });
    }
    Ok(LinearModel {
        input_dim: d_in,
        classes: c,
        kept,
        weights: Matrix::new(d + 1, c, params)?,
        feature_means: means,
        feature_stds: stds,
        dropped,
        final_grad_norm: grad_norm,
    })
}

fn standardize(features: &Matrix, kept: &[usize], means: &[f64], stds: &[f64]) -> Matrix {
    let n = features.rows();
    let mut out = Matrix::zeros(n, kept.len());
    for i in 0..n {
        let src = features.row(i);
        for (t, &j) in kept.iter().enumerate() {
            out.set(i, t, (src[j] - means[t]) / stds[t]);
        }
    }
    out
}

impl LinearModel {
    /// Softmax of the affine scores, clipped and renormalized.
    pub fn predict_proba(&self, features: &Matrix) -> Result<ScoreMatrix> {
        if features.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "model input features",
                expected: self.input_dim,
                found: features.cols(),
            });
        }
        let x = standardize(features, &self.kept, &self.feature_means, &self.feature_stds);
        let (d, c) = (self.kept.len(), self.classes);
        let params = self.weights.as_slice();
        let eps = EPS_CLIP.min(1.0 / c as f64);
        let mut out = vec![0.0; x.rows() * c];
        out.par_chunks_mut(c).enumerate().for_each(|(i, row)| {
            let mut z = vec![0.0; c];
            affine(x.row(i), params, d, c, &mut z);
            softmax_into(&z, row);
            clip_and_renormalize(row, eps);
        });
        Ok(ScoreMatrix::from_clipped(Matrix::new(x.rows(), c, out)?, eps))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "input_dim {} classes {}", self.input_dim, self.classes).unwrap();
        writeln!(s, "kept {}", join(self.kept.iter())).unwrap();
        writeln!(s, "dropped {}", join(self.dropped.iter())).unwrap();
        writeln!(s, "weights {} {}", self.weights.rows(), self.weights.cols()).unwrap();
        for row in self.weights.iter_rows() {
            writeln!(s, "{}", join(row.iter())).unwrap();
        }
        writeln!(s, "means {}", join(self.feature_means.iter())).unwrap();
        writeln!(s, "stds {}", join(self.feature_stds.iter())).unwrap();
        writeln!(s, "grad_norm {}", self.final_grad_norm).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        Self::parse_lines(&mut lines)
    }

    fn parse_lines<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Self> {
        let bad = |m: &str| Error::InvalidModel(m.to_string());
        let mut next = || lines.next().ok_or_else(|| bad("truncated model file"));
        if next()?.trim() != HEADER {
            return Err(bad("missing model header"));
        }
        let dims = tagged(next()?, "input_dim")?;
        if dims.len() != 3 || dims[1] != "classes" {
            return Err(bad("bad dimension line"));
        }
        let input_dim: usize = parse_num(dims[0])?;
        let classes: usize = parse_num(dims[2])?;
        let kept: Vec<usize> = parse_all(&tagged(next()?, "kept")?)?;
        let dropped: Vec<usize> = parse_all(&tagged(next()?, "dropped")?)?;
        let wdims: Vec<usize> = parse_all(&tagged(next()?, "weights")?)?;
        if wdims.len() != 2 || wdims[0] != kept.len() + 1 || wdims[1] != classes {
            return Err(bad("weight shape does not match the kept features"));
        }
        let mut w = Vec::with_capacity(wdims[0] * wdims[1]);
        for _ in 0..wdims[0] {
            let row: Vec<f64> = parse_all(&next()?.split_whitespace().collect::<Vec<_>>())?;
            if row.len() != classes {
                return Err(bad("weight row has the wrong length"));
            }
            w.extend(row);
        }
        let feature_means: Vec<f64> = parse_all(&tagged(next()?, "means")?)?;
        let feature_stds: Vec<f64> = parse_all(&tagged(next()?, "stds")?)?;
        let gn: Vec<f64> = parse_all(&tagged(next()?, "grad_norm")?)?;
        if feature_means.len() != kept.len() || feature_stds.len() != kept.len() {
            return Err(bad("standardization vectors do not match the kept features"));
        }
        if feature_stds.iter().any(|&s| !(s > 0.0)) || w.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-positive standard deviation or non-finite weight"));
        }
        if kept.iter().chain(&dropped).any(|&j| j >= input_dim) {
            return Err(bad("feature index out of range"));
        }
        Ok(Self {
            input_dim,
            classes,
            kept,
            weights: Matrix::new(wdims[0], wdims[1], w)?,
            feature_means,
            feature_stds,
            dropped,
            final_grad_norm: gn.first().copied().unwrap_or(f64::NAN),
        })
    }
}

fn join<T: std::fmt::Display>(it: impl Iterator<Item = T>) -> String {
    it.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn tagged<'a>(line: &'a str, tag: &str) -> Result<Vec<&'a str>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::InvalidModel(format!("expected '{tag}' line")));
    }
    Ok(parts.collect())
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::InvalidModel(format!("cannot parse '{s}'")))
}

fn parse_all<T: std::str::FromStr>(parts: &[&str]) -> Result<Vec<T>> {
    parts.iter().map(|s| parse_num(s)).collect()
}

/// Predicts the group from features and a one-hot label.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupClassifier {
    pub label_classes: usize,
    pub model: LinearModel,
}

fn augment(features: &Matrix, label: impl Fn(usize) -> usize, classes: usize) -> Matrix {
    let (n, d) = (features.rows(), features.cols());
    let mut out = Matrix::zeros(n, d + classes);
    for i in 0..n {
        let row = out.row_mut(i);
        row[..d].copy_from_slice(features.row(i));
        row[d + label(i)] = 1.0;
    }
    out
}

/// Fits `s(x, y) ≈ P(S | X=x, Y=y)` on features augmented with the one-hot
/// label.
pub fn fit_group_model(
    features: &Matrix,
    labels: &[usize],
    groups: &[usize],
    num_classes: usize,
    num_groups: usize,
    cfg: &LogRegConfig,
) -> Result<GroupClassifier> {
    check_labels(labels, num_classes, features.rows())?;
    let x = augment(features, |i| labels[i], num_classes);
    let model = fit_logreg(&x, groups, num_groups, cfg)?;
    Ok(GroupClassifier {
        label_classes: num_classes,
        model,
    })
}

impl GroupClassifier {
    pub fn groups(&self) -> usize {
        self.model.classes
    }

    /// `s_a(x_i, c)` for every sample and every candidate label, laid out
    /// at `[(i * C + c) * A + a]`.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<f64>> {
        let (n, c_n, a_n) = (features.rows(), self.label_classes, self.groups());
        let mut out = vec![0.0; n * c_n * a_n];
        for c in 0..c_n {
            let probs = self.model.predict_proba(&augment(features, |_| c, c_n))?;
            for i in 0..n {
                out[(i * c_n + c) * a_n..(i * c_n + c + 1) * a_n].copy_from_slice(probs.row(i));
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        format!("{GROUP_HEADER}\nlabel_classes {}\n{}", self.label_classes, self.model.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(GROUP_HEADER) {
            return Err(Error::InvalidModel("missing group model header".into()));
        }
        let lc = tagged(lines.next().unwrap_or(""), "label_classes")?;
        let label_classes: usize = parse_num(lc.first().copied().unwrap_or(""))?;
        let model = LinearModel::parse_lines(&mut lines)?;
        if model.input_dim < label_classes {
            return Err(Error::InvalidModel("group model input too narrow".into()));
        }
        Ok(Self {
            label_classes,
            model,
        })
    }
}
