//! CSV loading and writing, train/test splitting, and a seeded synthetic
//! generator of group-biased tabular data.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, ScoreMatrix};

/// Features, labels and groups of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub features: Option<Matrix>,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
    pub num_classes: usize,
    pub num_groups: usize,
    pub feature_names: Vec<String>,
    /// Raw value of each label id.
    pub label_values: Vec<String>,
    /// Raw value of each group id.
    pub group_values: Vec<String>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows selected by index; id spaces are kept.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.as_ref().map(|f| f.select_rows(idx)),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            num_classes: self.num_classes,
            num_groups: self.num_groups,
            feature_names: self.feature_names.clone(),
            label_values: self.label_values.clone(),
            group_values: self.group_values.clone(),
        }
    }

    /// Features with one-hot group columns appended.
    pub fn features_with_groups(&self) -> Result<Matrix> {
        let f = self
            .features
            .as_ref()
            .ok_or_else(|| Error::Schema("dataset has no feature columns".into()))?;
        let (n, d, a) = (f.rows(), f.cols(), self.num_groups);
        let mut out = Matrix::zeros(n, d + a);
        for i in 0..n {
            let row = out.row_mut(i);
            row[..d].copy_from_slice(f.row(i));
            row[d + self.groups[i]] = 1.0;
        }
        Ok(out)
    }
}

/// Column names for loading a feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSchema {
    pub label_col: String,
    pub group_col: String,
    /// `None` uses every other column.
    pub feature_cols: Option<Vec<String>>,
}

impl Default for TabularSchema {
    fn default() -> Self {
        Self {
            label_col: "label".into(),
            group_col: "group".into(),
            feature_cols: None,
        }
    }
}

/// Maps raw category strings to dense ids.
///
/// When every value is a nonnegative integer the integer is the id, so
/// files written by this crate keep their ids. Otherwise ids follow first
/// appearance.
pub fn encode_ids(values: &[String]) -> (Vec<usize>, Vec<String>) {
    let ints: Option<Vec<usize>> = values.iter().map(|v| v.trim().parse::<usize>().ok()).collect();
    if let Some(ids) = ints {
        let count = ids.iter().max().map_or(0, |m| m + 1);
        return (ids, (0..count).map(|i| i.to_string()).collect());
    }
    let mut map: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let ids = values
        .iter()
        .map(|v| {
            *map.entry(v.as_str()).or_insert_with(|| {
                names.push(v.clone());
                names.len() - 1
            })
        })
        .collect();
    (ids, names)
}

fn column_index(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("unknown column '{name}'")))
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(RawTable { headers, rows })
}

fn cell<'a>(t: &'a RawTable, row: usize, col: usize) -> Result<&'a str> {
    let v = t.rows[row][col].trim();
    if v.is_empty() {
        return Err(Error::Parse {
            row: row + 1,
            column: t.headers[col].clone(),
            message: "missing value".into(),
        });
    }
    Ok(v)
}

fn float_cell(t: &RawTable, row: usize, col: usize) -> Result<f64> {
    let v = cell(t, row, col)?;
    v.parse::<f64>().map_err(|_| Error::Parse {
        row: row + 1,
        column: t.headers[col].clone(),
        message: format!("'{v}' is not a number"),
    })
}

fn category_column(t: &RawTable, col: usize) -> Result<Vec<String>> {
    (0..t.rows.len()).map(|r| cell(t, r, col).map(str::to_string)).collect()
}

/// Loads a table of features, labels and groups.
pub fn load_tabular(path: impl AsRef<Path>, schema: &TabularSchema) -> Result<TabularDataset> {
    let t = read_table(path.as_ref())?;
    let lc = column_index(&t.headers, &schema.label_col)?;
    let gc = column_index(&t.headers, &schema.group_col)?;
    let feature_names: Vec<String> = match &schema.feature_cols {
        Some(cols) => cols.clone(),
        None => t
            .headers
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != lc && *j != gc)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let fcols: Vec<usize> = feature_names
        .iter()
        .map(|f| column_index(&t.headers, f))
        .collect::<Result<_>>()?;
    let n = t.rows.len();
    let mut data = Vec::with_capacity(n * fcols.len());
    for r in 0..n {
        for &j in &fcols {
            data.push(float_cell(&t, r, j)?);
        }
    }
    let (labels, label_values) = encode_ids(&category_column(&t, lc)?);
    let (groups, group_values) = encode_ids(&category_column(&t, gc)?);
    Ok(TabularDataset {
        features: if fcols.is_empty() {
            None
        } else {
            Some(Matrix::new(n, fcols.len(), data)?)
        },
        num_classes: label_values.len(),
        num_groups: group_values.len(),
        labels,
        groups,
        feature_names,
        label_values,
        group_values,
    })
}

/// Writes features, then `label` and `group` columns, with raw id values.
pub fn write_tabular(path: impl AsRef<Path>, ds: &TabularDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = ds.feature_names.clone();
    header.push("label".into());
    header.push("group".into());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = match &ds.features {
            Some(f) => f.row(i).iter().map(|x| x.to_string()).collect(),
            None => Vec::new(),
        };
        rec.push(ds.label_values[ds.labels[i]].clone());
        rec.push(ds.group_values[ds.groups[i]].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Scores with labels, groups and optional group probabilities.
#[derive(Debug, Clone)]
pub struct ScoreData {
    pub scores: ScoreMatrix,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
    pub num_groups: usize,
    /// `s_a(x_i, c)` at `[(i * C + c) * A + a]`, when present in the file.
    pub group_probs: Option<Vec<f64>>,
    /// One line per row whose scores needed renormalization.
    pub notes: Vec<String>,
}

/// Column names of a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSchema {
    pub label_col: String,
    pub group_col: String,
    /// `None` uses every column named `score_<c>`, in order of `c`.
    pub score_cols: Option<Vec<String>>,
}

impl Default for ScoreSchema {
    fn default() -> Self {
        Self {
            label_col: "label".into(),
            group_col: "group".into(),
            score_cols: None,
        }
    }
}

fn numbered_columns(headers: &[String], prefix: &str) -> Vec<String> {
    let mut cols: Vec<(usize, String)> = headers
        .iter()
        .filter_map(|h| {
            h.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|c| (c, h.clone()))
        })
        .collect();
    cols.sort();
    cols.into_iter().map(|(_, h)| h).collect()
}

pub fn group_prob_column(class: usize, group: usize) -> String {
    format!("gprob_c{class}_a{group}")
}

/// Loads a score file. Rows are clipped and renormalized; rows whose sum
/// differs from one by more than `1e-9` are listed in [`ScoreData::notes`].
/// Labels and groups must be integer ids in this format.
pub fn load_scores(path: impl AsRef<Path>, schema: &ScoreSchema) -> Result<ScoreData> {
    let t = read_table(path.as_ref())?;
    let lc = column_index(&t.headers, &schema.label_col)?;
    let gc = column_index(&t.headers, &schema.group_col)?;
    let score_names = match &schema.score_cols {
        Some(c) => c.clone(),
        None => numbered_columns(&t.headers, "score_"),
    };
    if score_names.is_empty() {
        return Err(Error::Schema("no score columns".into()));
    }
    let scols: Vec<usize> = score_names
        .iter()
        .map(|s| column_index(&t.headers, s))
        .collect::<Result<_>>()?;
    let (n, c_n) = (t.rows.len(), scols.len());
    let (scores, notes) = score_block(&t, &scols)?;
    let ids = |col: usize, what: &str| -> Result<Vec<usize>> {
        (0..n)
            .map(|r| {
                let v = cell(&t, r, col)?;
                v.parse::<usize>().map_err(|_| Error::Parse {
                    row: r + 1,
                    column: t.headers[col].clone(),
                    message: format!("{what} '{v}' is not an integer id"),
                })
            })
            .collect()
    };
    let labels = ids(lc, "label")?;
    let groups = ids(gc, "group")?;
    if let Some((r, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c_n) {
        return Err(Error::Parse {
            row: r + 1,
            column: schema.label_col.clone(),
            message: format!("label {l} has no score column"),
        });
    }
    let mut num_groups = groups.iter().max().map_or(0, |m| m + 1);
    let gp_names = numbered_group_columns(&t.headers);
    let group_probs = if gp_names.is_empty() {
        None
    } else {
        let a_n = gp_names.len() / c_n;
        if a_n * c_n != gp_names.len() || a_n < num_groups {
            return Err(Error::Schema(format!(
                "{} group probability columns do not cover {c_n} classes and {num_groups} groups",
                gp_names.len()
            )));
        }
        num_groups = a_n;
        let mut cols = Vec::with_capacity(c_n * a_n);
        for c in 0..c_n {
            for a in 0..a_n {
                cols.push(column_index(&t.headers, &group_prob_column(c, a))?);
            }
        }
        let mut probs = Vec::with_capacity(n * c_n * a_n);
        for r in 0..n {
            for &j in &cols {
                probs.push(float_cell(&t, r, j)?);
            }
        }
        Some(probs)
    };
    Ok(ScoreData {
        scores,
        labels,
        groups,
        num_groups,
        group_probs,
        notes,
    })
}

fn score_block(t: &RawTable, cols: &[usize]) -> Result<(ScoreMatrix, Vec<String>)> {
    let n = t.rows.len();
    let mut data = Vec::with_capacity(n * cols.len());
    let mut notes = Vec::new();
    for r in 0..n {
        let mut sum = 0.0;
        for &j in cols {
            let x = float_cell(t, r, j)?;
            sum += x;
            data.push(x);
        }
        if (sum - 1.0).abs() > 1e-9 {
            notes.push(format!("row {}: scores summed to {sum}, renormalized", r + 1));
        }
    }
    Ok((ScoreMatrix::new(Matrix::new(n, cols.len(), data)?)?, notes))
}

/// Loads only the score columns of a file (all `score_<c>` columns when
/// `score_cols` is `None`), with renormalization notes.
pub fn load_score_matrix(
    path: impl AsRef<Path>,
    score_cols: Option<&[String]>,
) -> Result<(ScoreMatrix, Vec<String>)> {
    let t = read_table(path.as_ref())?;
    let names = match score_cols {
        Some(c) => c.to_vec(),
        None => numbered_columns(&t.headers, "score_"),
    };
    if names.is_empty() {
        return Err(Error::Schema("no score columns".into()));
    }
    let cols: Vec<usize> = names
        .iter()
        .map(|s| column_index(&t.headers, s))
        .collect::<Result<_>>()?;
    score_block(&t, &cols)
}

fn numbered_group_columns(headers: &[String]) -> Vec<String> {
    headers
        .iter()
        .filter(|h| h.starts_with("gprob_c"))
        .cloned()
        .collect()
}

/// Writes `label, group, score_0.., [gprob_c{c}_a{a}..]` with shortest
/// round-trip float formatting.
pub fn write_scores(
    path: impl AsRef<Path>,
    scores: &ScoreMatrix,
    labels: &[usize],
    groups: &[usize],
    group_probs: Option<(&[f64], usize)>,
) -> Result<()> {
    let (n, c_n) = (scores.n(), scores.classes());
    if labels.len() != n || groups.len() != n {
        return Err(Error::DimensionMismatch {
            what: "score file rows",
            expected: n,
            found: labels.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string(), "group".to_string()];
    header.extend((0..c_n).map(|c| format!("score_{c}")));
    if let Some((probs, a_n)) = group_probs {
        if probs.len() != n * c_n * a_n {
            return Err(Error::DimensionMismatch {
                what: "group probabilities",
                expected: n * c_n * a_n,
                found: probs.len(),
            });
        }
        for c in 0..c_n {
            for a in 0..a_n {
                header.push(group_prob_column(c, a));
            }
        }
    }
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![labels[i].to_string(), groups[i].to_string()];
        rec.extend(scores.row(i).iter().map(|x| x.to_string()));
        if let Some((probs, a_n)) = group_probs {
            let k = c_n * a_n;
            rec.extend(probs[i * k..(i + 1) * k].iter().map(|x| x.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Train and test row indices, each in increasing order.
///
/// The test split has `round(test_fraction · N)` rows. When every nonempty
/// `(label, group)` cell has at least two rows, each cell contributes to the
/// test split in proportion to its size (largest remainder); otherwise the
/// split is a plain seeded shuffle.
pub fn split_indices(
    labels: &[usize],
    groups: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = labels.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for i in 0..n {
        let key = (labels[i], groups[i]);
        let slot = *lookup.entry(key).or_insert_with(|| {
            cells.push((key, Vec::new()));
            cells.len() - 1
        });
        cells[slot].1.push(i);
    }
    cells.sort_by_key(|(k, _)| *k);
    let mut test = Vec::with_capacity(n_test);
    if cells.iter().all(|(_, m)| m.len() >= 2) {
        let quotas: Vec<f64> = cells
            .iter()
            .map(|(_, m)| test_fraction * m.len() as f64)
            .collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let mut missing = n_test.saturating_sub(take.iter().sum());
        for &j in order.iter().cycle().take(order.len() * 2) {
            if missing == 0 {
                break;
            }
            if take[j] < cells[j].1.len() {
                take[j] += 1;
                missing -= 1;
            }
        }
        for ((_, members), &k) in cells.iter_mut().zip(&take) {
            members.shuffle(&mut rng);
            test.extend_from_slice(&members[..k]);
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        test.extend_from_slice(&perm[..n_test]);
    }
    test.sort_unstable();
    let mut in_test = vec![false; n];
    for &i in &test {
        in_test[i] = true;
    }
    let train = (0..n).filter(|&i| !in_test[i]).collect();
    Ok((train, test))
}

/// Seeded train/test split of a dataset.
pub fn split(
    ds: &TabularDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    let (train, test) = split_indices(&ds.labels, &ds.groups, test_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub groups: usize,
    pub group_weights: Vec<f64>,
    /// `class_bias[a]` is the class distribution of group `a`.
    pub class_bias: Vec<Vec<f64>>,
    pub cluster_separation: f64,
    /// Size of the group-dependent feature shift.
    pub group_shift: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Groups of equal size and identical class distributions.
    pub fn unbiased(n: usize, classes: usize, groups: usize, seed: u64) -> Self {
        Self {
            n,
            d: classes.max(2) + 1,
            classes,
            groups,
            group_weights: vec![1.0 / groups as f64; groups],
            class_bias: vec![vec![1.0 / classes as f64; classes]; groups],
            cluster_separation: 1.0,
            group_shift: 0.25,
            seed,
        }
    }

    /// Group `a` puts `favour` of its mass on class `a mod C` and spreads the
    /// rest evenly.
    pub fn biased(n: usize, classes: usize, groups: usize, favour: f64, seed: u64) -> Self {
        let mut spec = Self::unbiased(n, classes, groups, seed);
        if classes > 1 {
            let rest = (1.0 - favour) / (classes - 1) as f64;
            spec.class_bias = (0..groups)
                .map(|a| {
                    (0..classes)
                        .map(|c| if c == a % classes { favour } else { rest })
                        .collect()
                })
                .collect();
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 || self.d == 0 || self.classes == 0 || self.groups == 0 {
            return bad("synthetic spec needs positive n, d, classes and groups".into());
        }
        if self.group_weights.len() != self.groups || self.class_bias.len() != self.groups {
            return bad("group_weights and class_bias need one entry per group".into());
        }
        let simplex = |v: &[f64]| {
            v.iter().all(|x| x.is_finite() && *x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if !simplex(&self.group_weights) {
            return bad("group_weights must be a probability vector".into());
        }
        for (a, row) in self.class_bias.iter().enumerate() {
            if row.len() != self.classes || !simplex(row) {
                return bad(format!("class_bias row {a} must be a probability vector over classes"));
            }
        }
        if !self.cluster_separation.is_finite() || !self.group_shift.is_finite() {
            return bad("separation and shift must be finite".into());
        }
        Ok(())
    }

    /// Class mean: `±separation` along axis `c mod d`, sign flipping each
    /// time the axes wrap around.
    fn class_mean(&self, c: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        let sign = if (c / self.d) % 2 == 0 { 1.0 } else { -1.0 };
        m[c % self.d] = sign * self.cluster_separation;
        m
    }
}

/// Draws `group ~ group_weights`, `label ~ class_bias[group]` and features
/// from a unit Gaussian centred at the class mean plus
/// `group_shift · a` on the last axis.
pub fn generate_synth(spec: &SynthSpec) -> Result<TabularDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gdist = WeightedIndex::new(&spec.group_weights)
        .map_err(|e| Error::InvalidArgument(format!("group_weights: {e}")))?;
    let cdists: Vec<WeightedIndex<f64>> = spec
        .class_bias
        .iter()
        .map(|row| WeightedIndex::new(row))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("class_bias: {e}")))?;
    let means: Vec<Vec<f64>> = (0..spec.classes).map(|c| spec.class_mean(c)).collect();
    let (n, d) = (spec.n, spec.d);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let a = gdist.sample(&mut rng);
        let c = cdists[a].sample(&mut rng);
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let shift = if j == d - 1 { spec.group_shift * a as f64 } else { 0.0 };
            features.push(means[c][j] + shift + noise);
        }
        labels.push(c);
        groups.push(a);
    }
    Ok(TabularDataset {
        features: Some(Matrix::new(n, d, features)?),
        labels,
        groups,
        num_classes: spec.classes,
        num_groups: spec.groups,
        feature_names: (0..d).map(|j| format!("x{j}")).collect(),
        label_values: (0..spec.classes).map(|c| c.to_string()).collect(),
        group_values: (0..spec.groups).map(|a| a.to_string()).collect(),
    })
}
