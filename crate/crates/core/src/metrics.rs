//! Accuracy and multi-class group-fairness metrics.

use serde::{Deserialize, Serialize};

use crate::constraints::FairnessMetric;
use crate::error::{Error, Result};
use crate::matrix::ScoreMatrix;

/// Decision-based evaluation of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    /// Mean equalized odds: worst class and group pair of the averaged
    /// TPR and FPR gaps.
    pub meo: f64,
    /// Worst class and group pair gap of prediction rates.
    pub statistical_parity: f64,
    pub groups: usize,
    pub classes: usize,
    /// `P(Ŷ=c | Y=c, S=a)` at `[a][c]`.
    pub tpr: Vec<Vec<f64>>,
    /// `P(Ŷ=c | Y≠c, S=a)` at `[a][c]`.
    pub fpr: Vec<Vec<f64>>,
    /// `P(Ŷ=c | S=a)` at `[a][c]`.
    pub rate: Vec<Vec<f64>>,
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn decide(scores: &ScoreMatrix) -> Vec<usize> {
    (0..scores.n()).map(|i| argmax(scores.row(i))).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = c;
        }
    }
    best
}

fn check_ids(ids: &[usize], bound: usize, what: &str) -> Result<()> {
    if let Some((i, &x)) = ids.iter().enumerate().find(|(_, &x)| x >= bound) {
        return Err(Error::InvalidArgument(format!(
            "{what} id {x} at row {i} is outside [0, {bound})"
        )));
    }
    Ok(())
}

fn max_pair_gap(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.len() < 2 {
        0.0
    } else {
        hi - lo
    }
}

/// Evaluates hard decisions against labels.
///
/// With a single group MEO and SP are zero. Otherwise every
/// `(group, class)` cell and its complement within the group must be
/// nonempty, since the rates are otherwise undefined.
pub fn evaluate(
    pred: &[usize],
    labels: &[usize],
    groups: &[usize],
    num_classes: usize,
    num_groups: usize,
) -> Result<EvaluationReport> {
    let n = pred.len();
    if labels.len() != n || groups.len() != n {
        return Err(Error::DimensionMismatch {
            what: "predictions, labels and groups",
            expected: n,
            found: if labels.len() != n { labels.len() } else { groups.len() },
        });
    }
    if n == 0 || num_classes == 0 || num_groups == 0 {
        return Err(Error::InvalidArgument("evaluation needs samples, classes and groups".into()));
    }
    check_ids(pred, num_classes, "prediction")?;
    check_ids(labels, num_classes, "label")?;
    check_ids(groups, num_groups, "group")?;

    let (a_n, c_n) = (num_groups, num_classes);
    // confusion[a][y][ŷ]
    let mut confusion = vec![vec![vec![0usize; c_n]; c_n]; a_n];
    for i in 0..n {
        confusion[groups[i]][labels[i]][pred[i]] += 1;
    }
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    let accuracy = correct as f64 / n as f64;

    let mut tpr = vec![vec![f64::NAN; c_n]; a_n];
    let mut fpr = vec![vec![f64::NAN; c_n]; a_n];
    let mut rate = vec![vec![f64::NAN; c_n]; a_n];
    for a in 0..a_n {
        let conf = &confusion[a];
        let size: usize = conf.iter().map(|r| r.iter().sum::<usize>()).sum();
        if size == 0 {
            if a_n > 1 {
                return Err(Error::UndefinedRate(format!("group {a} has no samples")));
            }
            continue;
        }
        for c in 0..c_n {
            let pos: usize = conf[c].iter().sum();
            let pred_c: usize = (0..c_n).map(|y| conf[y][c]).sum();
            let tp = conf[c][c];
            rate[a][c] = pred_c as f64 / size as f64;
            if pos > 0 {
                tpr[a][c] = tp as f64 / pos as f64;
            }
            if size > pos {
                fpr[a][c] = (pred_c - tp) as f64 / (size - pos) as f64;
            }
            if a_n > 1 && (pos == 0 || (size == pos && c_n > 1)) {
                let which = if pos == 0 { "class" } else { "complement of class" };
                return Err(Error::UndefinedRate(format!(
                    "group {a} has no samples in the {which} {c}"
                )));
            }
        }
    }

    let mut meo: f64 = 0.0;
    let mut sp: f64 = 0.0;
    if a_n > 1 {
        for c in 0..c_n {
            for a1 in 0..a_n {
                for a2 in a1 + 1..a_n {
                    let f = if c_n > 1 {
                        (fpr[a1][c] - fpr[a2][c]).abs()
                    } else {
                        0.0
                    };
                    meo = meo.max(0.5 * ((tpr[a1][c] - tpr[a2][c]).abs() + f));
                }
            }
            let col: Vec<f64> = (0..a_n).map(|a| rate[a][c]).collect();
            sp = sp.max(max_pair_gap(&col));
        }
    }

    Ok(EvaluationReport {
        accuracy,
        meo,
        statistical_parity: sp,
        groups: a_n,
        classes: c_n,
        tpr,
        fpr,
        rate,
    })
}

/// Argmax decisions of `scores`, evaluated.
pub fn evaluate_scores(
    scores: &ScoreMatrix,
    labels: &[usize],
    groups: &[usize],
    num_groups: usize,
) -> Result<EvaluationReport> {
    evaluate(&decide(scores), labels, groups, scores.classes(), num_groups)
}

/// Worst relative deviation of a randomized classifier from the group
/// criterion, so that the criterion holds at tolerance `α` exactly when the
/// returned value is at most `α`.
///
/// The prediction is drawn as `Ŷ ~ h(x)` and the label as `Y ~ y(x)`, where
/// `y` is given by `label_probs` (one-hot rows for observed labels, or base
/// scores as a surrogate). With `P` the empirical average over samples:
///
/// * SP: `max_{a,c} |P(Ŷ=c | S=a) / P(Ŷ=c) − 1|`
/// * EO: `max_{a,c,c′} |P(Ŷ=c′ | Y=c, S=a) / P(Ŷ=c′ | Y=c) − 1|`
/// * OAE: `max_a |P(Ŷ=Y | S=a) / P(Ŷ=Y) − 1|`
///
/// Terms with a zero denominator are skipped.
pub fn criterion_value(
    metric: FairnessMetric,
    h: &ScoreMatrix,
    label_probs: &ScoreMatrix,
    groups: &[usize],
    num_groups: usize,
) -> Result<f64> {
    let (n, c_n) = (h.n(), h.classes());
    if label_probs.n() != n || label_probs.classes() != c_n || groups.len() != n {
        return Err(Error::DimensionMismatch {
            what: "criterion inputs",
            expected: n,
            found: if groups.len() != n { groups.len() } else { label_probs.n() },
        });
    }
    check_ids(groups, num_groups, "group")?;
    let a_n = num_groups;
    let dev = |num: f64, den: f64, tot_num: f64, tot_den: f64| -> Option<f64> {
        if den <= 0.0 || tot_num <= 0.0 || tot_den <= 0.0 {
            return None;
        }
        Some(((num / den) / (tot_num / tot_den) - 1.0).abs())
    };
    let mut worst: f64 = 0.0;
    match metric {
        FairnessMetric::StatisticalParity => {
            let mut mass = vec![vec![0.0; c_n]; a_n];
            let mut size = vec![0.0; a_n];
            for i in 0..n {
                size[groups[i]] += 1.0;
                for (m, &x) in mass[groups[i]].iter_mut().zip(h.row(i)) {
                    *m += x;
                }
            }
            for c in 0..c_n {
                let tot: f64 = (0..a_n).map(|a| mass[a][c]).sum();
                for a in 0..a_n {
                    if let Some(d) = dev(mass[a][c], size[a], tot, n as f64) {
                        worst = worst.max(d);
                    }
                }
            }
        }
        FairnessMetric::EqualizedOdds => {
            // joint[a][c][c′] = Σ y_c h_c′, cell[a][c] = Σ y_c
            let mut joint = vec![vec![vec![0.0; c_n]; c_n]; a_n];
            let mut cell = vec![vec![0.0; c_n]; a_n];
            for i in 0..n {
                let (y, hi) = (label_probs.row(i), h.row(i));
                let a = groups[i];
                for c in 0..c_n {
                    cell[a][c] += y[c];
                    for cp in 0..c_n {
                        joint[a][c][cp] += y[c] * hi[cp];
                    }
                }
            }
            for c in 0..c_n {
                let cell_tot: f64 = (0..a_n).map(|a| cell[a][c]).sum();
                for cp in 0..c_n {
                    let joint_tot: f64 = (0..a_n).map(|a| joint[a][c][cp]).sum();
                    for a in 0..a_n {
                        if let Some(d) = dev(joint[a][c][cp], cell[a][c], joint_tot, cell_tot) {
                            worst = worst.max(d);
                        }
                    }
                }
            }
        }
        FairnessMetric::OverallAccuracyEquality => {
            let mut acc = vec![0.0; a_n];
            let mut size = vec![0.0; a_n];
            for i in 0..n {
                size[groups[i]] += 1.0;
                acc[groups[i]] += h
                    .row(i)
                    .iter()
                    .zip(label_probs.row(i))
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            let tot: f64 = acc.iter().sum();
            for a in 0..a_n {
                if let Some(d) = dev(acc[a], size[a], tot, n as f64) {
                    worst = worst.max(d);
                }
            }
        }
    }
    Ok(worst)
}

/// One-hot rows for observed labels, as a label distribution for
/// [`criterion_value`]. Rows are clipped like any score matrix.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<ScoreMatrix> {
    check_ids(labels, num_classes, "label")?;
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let mut r = vec![0.0; num_classes];
            r[l] = 1.0;
            r
        })
        .collect();
    ScoreMatrix::from_rows(&rows)
}
