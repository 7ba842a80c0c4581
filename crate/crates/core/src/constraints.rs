//! Per-sample constraint matrices `G(x)` for group-fairness criteria.
//!
//! Each criterion is linearized as `E[G(X) h(X)] ≤ 0` with one `K × C` matrix
//! per sample. Group information enters through `s_a(x, c) ≈ P(S=a | X=x, Y=c)`,
//! which is an indicator when group membership is observed.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ScoreMatrix;

/// Floor added to empirical marginals before renormalizing.
pub const MARGINAL_FLOOR: f64 = 1e-12;
/// Marginals below this are treated as empty cells.
const DEGENERATE_MARGINAL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessMetric {
    StatisticalParity,
    EqualizedOdds,
    OverallAccuracyEquality,
}

impl FairnessMetric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sp" | "statistical_parity" => Ok(Self::StatisticalParity),
            "eo" | "equalized_odds" => Ok(Self::EqualizedOdds),
            "oae" | "overall_accuracy_equality" => Ok(Self::OverallAccuracyEquality),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric '{other}' (expected sp, eo or oae)"
            ))),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Self::StatisticalParity => "sp",
            Self::EqualizedOdds => "eo",
            Self::OverallAccuracyEquality => "oae",
        }
    }

    /// Number of constraint rows for `groups` groups and `classes` classes.
    pub fn row_count(&self, groups: usize, classes: usize) -> usize {
        match self {
            Self::StatisticalParity => 2 * groups * classes,
            Self::EqualizedOdds => 2 * groups * classes * classes,
            Self::OverallAccuracyEquality => 2 * groups,
        }
    }
}

impl fmt::Display for FairnessMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Group-membership probabilities and the group marginals used to scale
/// the constraint rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    n: usize,
    groups: usize,
    classes: usize,
    /// `s_a(x_i, c)` stored at `[(i * C + c) * A + a]`.
    group_probs: Vec<f64>,
    /// `P_S(a)`.
    pub p_s: Vec<f64>,
    /// `P_{S|Y=c}(a)` stored at `[a * C + c]`.
    pub p_s_given_y: Vec<f64>,
}

/// Frozen marginals of a fitted group model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMarginals {
    pub groups: usize,
    pub classes: usize,
    pub p_s: Vec<f64>,
    /// Row-major `A × C`.
    pub p_s_given_y: Vec<f64>,
}

impl GroupModel {
    /// Indicator group probabilities for observed group ids.
    pub fn indicator_probs(groups: &[usize], num_groups: usize, classes: usize) -> Vec<f64> {
        let mut probs = vec![0.0; groups.len() * classes * num_groups];
        for (i, &g) in groups.iter().enumerate() {
            for c in 0..classes {
                probs[(i * classes + c) * num_groups + g] = 1.0;
            }
        }
        probs
    }

    /// Assembles a model from explicit parts, validating shapes and simplex
    /// constraints.
    pub fn from_parts(
        marginals: &GroupMarginals,
        n: usize,
        group_probs: Vec<f64>,
    ) -> Result<Self> {
        let (a, c) = (marginals.groups, marginals.classes);
        if group_probs.len() != n * c * a {
            return Err(Error::DimensionMismatch {
                what: "group probability tensor",
                expected: n * c * a,
                found: group_probs.len(),
            });
        }
        if marginals.p_s.len() != a || marginals.p_s_given_y.len() != a * c {
            return Err(Error::DimensionMismatch {
                what: "group marginals",
                expected: a,
                found: marginals.p_s.len(),
            });
        }
        for (idx, slice) in group_probs.chunks(a.max(1)).enumerate() {
            let s: f64 = slice.iter().sum();
            if slice.iter().any(|x| !x.is_finite() || *x < 0.0) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "group probabilities for sample {} class {} are not a distribution",
                    idx / c.max(1),
                    idx % c.max(1)
                )));
            }
        }
        Ok(Self {
            n,
            groups: a,
            classes: c,
            group_probs,
            p_s: marginals.p_s.clone(),
            p_s_given_y: marginals.p_s_given_y.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `s_a(x_i, c)`.
    #[inline]
    pub fn s(&self, i: usize, a: usize, c: usize) -> f64 {
        self.group_probs[(i * self.classes + c) * self.groups + a]
    }

    pub fn p_s_given_y(&self, a: usize, c: usize) -> f64 {
        self.p_s_given_y[a * self.classes + c]
    }

    pub fn marginals(&self) -> GroupMarginals {
        GroupMarginals {
            groups: self.groups,
            classes: self.classes,
            p_s: self.p_s.clone(),
            p_s_given_y: self.p_s_given_y.clone(),
        }
    }

    /// Same marginals, new samples.
    pub fn with_frozen_marginals(&self, n: usize, group_probs: Vec<f64>) -> Result<Self> {
        Self::from_parts(&self.marginals(), n, group_probs)
    }
}

/// Estimates `P_S` and `P_{S|Y}` from observed group and class ids.
///
/// `group_probs` supplies `s_a(x_i, c)` from a group-membership classifier
/// (layout `[(i * C + c) * A + a]`); when `None` the indicator of the
/// observed group is used. With `metric = EqualizedOdds` every
/// `(group, class)` cell must be nonempty.
pub fn estimate_group_model(
    groups: &[usize],
    labels: &[usize],
    num_groups: usize,
    num_classes: usize,
    metric: FairnessMetric,
    group_probs: Option<Vec<f64>>,
) -> Result<GroupModel> {
    let n = groups.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "labels vs groups",
            expected: n,
            found: labels.len(),
        });
    }
    if num_groups == 0 || num_classes == 0 {
        return Err(Error::InvalidArgument("need at least one group and one class".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut group_counts = vec![0usize; num_groups];
    let mut cell_counts = vec![0usize; num_groups * num_classes];
    for (i, (&g, &y)) in groups.iter().zip(labels).enumerate() {
        if g >= num_groups {
            return Err(Error::InvalidArgument(format!(
                "group id {g} at sample {i} out of range for {num_groups} groups"
            )));
        }
        if y >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class id {y} at sample {i} out of range for {num_classes} classes"
            )));
        }
        group_counts[g] += 1;
        cell_counts[g * num_classes + y] += 1;
    }
    if metric == FairnessMetric::EqualizedOdds {
        for a in 0..num_groups {
            for c in 0..num_classes {
                if cell_counts[a * num_classes + c] == 0 {
                    return Err(Error::DegenerateMarginal(format!(
                        "no samples with group {a} and class {c}"
                    )));
                }
            }
        }
    }
    let mut p_s: Vec<f64> = group_counts
        .iter()
        .map(|&k| k as f64 / n as f64 + MARGINAL_FLOOR)
        .collect();
    let total: f64 = p_s.iter().sum();
    p_s.iter_mut().for_each(|x| *x /= total);

    let mut p_s_given_y = vec![0.0; num_groups * num_classes];
    for c in 0..num_classes {
        let class_total: usize = (0..num_groups).map(|a| cell_counts[a * num_classes + c]).sum();
        let mut col: Vec<f64> = (0..num_groups)
            .map(|a| {
                let k = cell_counts[a * num_classes + c];
                if class_total == 0 {
                    MARGINAL_FLOOR
                } else {
                    k as f64 / class_total as f64 + MARGINAL_FLOOR
                }
            })
            .collect();
        let s: f64 = col.iter().sum();
        col.iter_mut().for_each(|x| *x /= s);
        for a in 0..num_groups {
            p_s_given_y[a * num_classes + c] = col[a];
        }
    }
    let marginals = GroupMarginals {
        groups: num_groups,
        classes: num_classes,
        p_s,
        p_s_given_y,
    };
    let probs = match group_probs {
        Some(p) => p,
        None => GroupModel::indicator_probs(groups, num_groups, num_classes),
    };
    GroupModel::from_parts(&marginals, n, probs)
}

/// Label of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    /// `(δ, a, c′)`.
    StatisticalParity { delta: u8, group: usize, pred_class: usize },
    /// `(δ, a, c, c′)`.
    EqualizedOdds { delta: u8, group: usize, class: usize, pred_class: usize },
    /// `(δ, a)`.
    OverallAccuracy { delta: u8, group: usize },
}

/// Stacked per-sample constraint matrices for one criterion and tolerance.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub metric: FairnessMetric,
    pub alpha: f64,
    n: usize,
    k: usize,
    c: usize,
    /// `G_i` stored row-major at `[i * K * C ..]`.
    g: Vec<f64>,
    row_labels: Vec<RowLabel>,
}

impl ConstraintSet {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of constraint rows `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    /// `G_i` as a row-major `K × C` slice.
    #[inline]
    pub fn g(&self, i: usize) -> &[f64] {
        let kc = self.k * self.c;
        &self.g[i * kc..(i + 1) * kc]
    }

    pub fn row_labels(&self) -> &[RowLabel] {
        &self.row_labels
    }

    /// `(1/N) Σ_i G_i h_i` for a matrix of per-sample distributions `h`.
    pub fn empirical_values(&self, h: &ScoreMatrix) -> Result<Vec<f64>> {
        if h.n() != self.n || h.classes() != self.c {
            return Err(Error::DimensionMismatch {
                what: "classifier outputs vs constraints",
                expected: self.n,
                found: h.n(),
            });
        }
        let mut mu = vec![0.0; self.k];
        for i in 0..self.n {
            let gi = self.g(i);
            let hi = h.row(i);
            for (k, m) in mu.iter_mut().enumerate() {
                let row = &gi[k * self.c..(k + 1) * self.c];
                *m += row.iter().zip(hi).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        mu.iter_mut().for_each(|m| *m /= self.n as f64);
        Ok(mu)
    }

    /// Assembles a set from raw per-sample matrices.
    pub fn from_raw(
        metric: FairnessMetric,
        alpha: f64,
        n: usize,
        k: usize,
        c: usize,
        g: Vec<f64>,
        row_labels: Vec<RowLabel>,
    ) -> Result<Self> {
        if g.len() != n * k * c {
            return Err(Error::DimensionMismatch {
                what: "constraint tensor",
                expected: n * k * c,
                found: g.len(),
            });
        }
        if row_labels.len() != k {
            return Err(Error::DimensionMismatch {
                what: "constraint row labels",
                expected: k,
                found: row_labels.len(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("constraint matrix has non-finite entries".into()));
        }
        Ok(Self {
            metric,
            alpha,
            n,
            k,
            c,
            g,
            row_labels,
        })
    }
}

fn check_inputs(scores: &ScoreMatrix, gm: &GroupModel, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if scores.n() != gm.n() {
        return Err(Error::DimensionMismatch {
            what: "scores vs group model samples",
            expected: gm.n(),
            found: scores.n(),
        });
    }
    if scores.classes() != gm.classes() {
        return Err(Error::DimensionMismatch {
            what: "scores vs group model classes",
            expected: gm.classes(),
            found: scores.classes(),
        });
    }
    Ok(())
}

fn check_p_s(gm: &GroupModel) -> Result<()> {
    for (a, &p) in gm.p_s.iter().enumerate() {
        if !(p > DEGENERATE_MARGINAL) {
            return Err(Error::DegenerateMarginal(format!("P_S({a}) = {p:e}")));
        }
    }
    Ok(())
}

const SIGN: [f64; 2] = [1.0, -1.0];

/// Fills `G_i` for every sample in parallel; `fill(i, out)` writes one
/// `K × C` block.
fn fill_parallel<F>(n: usize, k: usize, c: usize, fill: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let mut g = vec![0.0; n * k * c];
    g.par_chunks_mut((k * c).max(1))
        .enumerate()
        .for_each(|(i, block)| fill(i, block));
    g
}

/// Statistical parity rows, indexed `(δ, a, c′)`:
/// `((−1)^δ Σ_c s_a(x,c) h_c(x) / P_S(a) − (α + (−1)^δ)) e_{c′}`.
pub fn build_sp(scores: &ScoreMatrix, gm: &GroupModel, alpha: f64) -> Result<ConstraintSet> {
    check_inputs(scores, gm, alpha)?;
    check_p_s(gm)?;
    let (n, a_n, c_n) = (scores.n(), gm.groups(), scores.classes());
    let k = FairnessMetric::StatisticalParity.row_count(a_n, c_n);
    let mut labels = Vec::with_capacity(k);
    for delta in 0..2u8 {
        for group in 0..a_n {
            for pred_class in 0..c_n {
                labels.push(RowLabel::StatisticalParity { delta, group, pred_class });
            }
        }
    }
    let g = fill_parallel(n, k, c_n, |i, block| {
        let h = scores.row(i);
        for delta in 0..2 {
            let sign = SIGN[delta];
            for a in 0..a_n {
                let w: f64 = (0..c_n).map(|c| gm.s(i, a, c) * h[c]).sum::<f64>() / gm.p_s[a];
                let val = sign * w - (alpha + sign);
                for cp in 0..c_n {
                    let row = (delta * a_n + a) * c_n + cp;
                    block[row * c_n + cp] = val;
                }
            }
        }
    });
    ConstraintSet::from_raw(FairnessMetric::StatisticalParity, alpha, n, k, c_n, g, labels)
}

/// Equalized-odds rows, indexed `(δ, a, c, c′)`:
/// `((−1)^δ s_a(x,c) h_c(x) / P_{S|Y=c}(a) − (α + (−1)^δ) h_c(x)) e_{c′}`.
pub fn build_eo(scores: &ScoreMatrix, gm: &GroupModel, alpha: f64) -> Result<ConstraintSet> {
    check_inputs(scores, gm, alpha)?;
    let (n, a_n, c_n) = (scores.n(), gm.groups(), scores.classes());
    for a in 0..a_n {
        for c in 0..c_n {
            let p = gm.p_s_given_y(a, c);
            if !(p > DEGENERATE_MARGINAL) {
                return Err(Error::DegenerateMarginal(format!(
                    "P_S|Y(group {a} | class {c}) = {p:e}"
                )));
            }
        }
    }
    let k = FairnessMetric::EqualizedOdds.row_count(a_n, c_n);
    let mut labels = Vec::with_capacity(k);
    for delta in 0..2u8 {
        for group in 0..a_n {
            for class in 0..c_n {
                for pred_class in 0..c_n {
                    labels.push(RowLabel::EqualizedOdds { delta, group, class, pred_class });
                }
            }
        }
    }
    let g = fill_parallel(n, k, c_n, |i, block| {
        let h = scores.row(i);
        for delta in 0..2 {
            let sign = SIGN[delta];
            for a in 0..a_n {
                for c in 0..c_n {
                    let val = sign * gm.s(i, a, c) * h[c] / gm.p_s_given_y(a, c)
                        - (alpha + sign) * h[c];
                    for cp in 0..c_n {
                        let row = ((delta * a_n + a) * c_n + c) * c_n + cp;
                        block[row * c_n + cp] = val;
                    }
                }
            }
        }
    });
    ConstraintSet::from_raw(FairnessMetric::EqualizedOdds, alpha, n, k, c_n, g, labels)
}

/// Overall-accuracy-equality rows, indexed `(δ, a)`:
/// `(−1)^δ s_a(x,·) ⊙ h(x) / P_S(a) − (α + (−1)^δ) h(x)`.
pub fn build_oae(scores: &ScoreMatrix, gm: &GroupModel, alpha: f64) -> Result<ConstraintSet> {
    check_inputs(scores, gm, alpha)?;
    check_p_s(gm)?;
    let (n, a_n, c_n) = (scores.n(), gm.groups(), scores.classes());
    let k = FairnessMetric::OverallAccuracyEquality.row_count(a_n, c_n);
    let mut labels = Vec::with_capacity(k);
    for delta in 0..2u8 {
        for group in 0..a_n {
            labels.push(RowLabel::OverallAccuracy { delta, group });
        }
    }
    let g = fill_parallel(n, k, c_n, |i, block| {
        let h = scores.row(i);
        for delta in 0..2 {
            let sign = SIGN[delta];
            for a in 0..a_n {
                let row = delta * a_n + a;
                for c in 0..c_n {
                    block[row * c_n + c] =
                        sign * gm.s(i, a, c) * h[c] / gm.p_s[a] - (alpha + sign) * h[c];
                }
            }
        }
    });
    ConstraintSet::from_raw(FairnessMetric::OverallAccuracyEquality, alpha, n, k, c_n, g, labels)
}

/// Dispatches to the builder for `metric`.
pub fn build(
    metric: FairnessMetric,
    scores: &ScoreMatrix,
    gm: &GroupModel,
    alpha: f64,
) -> Result<ConstraintSet> {
    match metric {
        FairnessMetric::StatisticalParity => build_sp(scores, gm, alpha),
        FairnessMetric::EqualizedOdds => build_eo(scores, gm, alpha),
        FairnessMetric::OverallAccuracyEquality => build_oae(scores, gm, alpha),
    }
}
