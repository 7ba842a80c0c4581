//! The multiplicative tilt `h_c = p_c φ(v_c + γ)` with `v = −Gᵀλ`, and the
//! fitted model that applies it to new samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{self, ConstraintSet, FairnessMetric, GroupMarginals, GroupModel};
use crate::divergence::{ce_tilt_into, generic_tilt_into, softmax_into, DivergenceKind};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, ScoreMatrix};
use crate::solver::{admm_fit, DualSolution, SolverConfig};

fn tilt_direction(p: &[f64], g: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    let c = p.len();
    if c == 0 || g.len() != lambda.len() * c {
        return Err(Error::DimensionMismatch {
            what: "tilt constraint matrix",
            expected: lambda.len() * c,
            found: g.len(),
        });
    }
    let mut v = vec![0.0; c];
    for (k, &l) in lambda.iter().enumerate() {
        if l != 0.0 {
            for (vc, &x) in v.iter_mut().zip(&g[k * c..(k + 1) * c]) {
                *vc -= x * l;
            }
        }
    }
    Ok(v)
}

/// KL tilt: `softmax(log p − gᵀλ)`. `g` is row-major `K × C`.
pub fn tilt_kl(p: &[f64], g: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    let v = tilt_direction(p, g, lambda)?;
    let z: Vec<f64> = v.iter().zip(p).map(|(vc, pc)| vc + pc.ln()).collect();
    let mut out = vec![0.0; p.len()];
    softmax_into(&z, &mut out);
    Ok(out)
}

/// CE tilt: `p_c / (−γ − v_c)` with `γ < −max v` fixed by normalization.
pub fn tilt_ce(p: &[f64], g: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    let v = tilt_direction(p, g, lambda)?;
    let mut out = vec![0.0; p.len()];
    ce_tilt_into(p, &v, &mut out)?;
    Ok(out)
}

/// Tilt for any divergence.
pub fn tilt(kind: &DivergenceKind, p: &[f64], g: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    match kind {
        DivergenceKind::Kl => tilt_kl(p, g, lambda),
        DivergenceKind::Ce => tilt_ce(p, g, lambda),
        DivergenceKind::Generic(gf) => {
            let v = tilt_direction(p, g, lambda)?;
            let mut out = vec![0.0; p.len()];
            generic_tilt_into(gf, p, &v, &mut out)?;
            Ok(out)
        }
    }
}

/// Applies the tilt of `lambda` to every row, using the rows of `cs`.
pub fn tilt_all(
    kind: &DivergenceKind,
    scores: &ScoreMatrix,
    cs: &ConstraintSet,
    lambda: &[f64],
) -> Result<ScoreMatrix> {
    if cs.n() != scores.n() || cs.k() != lambda.len() || cs.classes() != scores.classes() {
        return Err(Error::InvalidModel(format!(
            "constraint set ({} samples, {} rows) does not match scores ({} samples) and lambda ({})",
            cs.n(),
            cs.k(),
            scores.n(),
            lambda.len()
        )));
    }
    let c = scores.classes();
    let mut data = vec![0.0; scores.n() * c];
    data.par_chunks_mut(c)
        .enumerate()
        .try_for_each(|(i, out)| -> Result<()> {
            out.copy_from_slice(&tilt(kind, scores.row(i), cs.g(i), lambda)?);
            Ok(())
        })?;
    ScoreMatrix::with_eps(Matrix::new(scores.n(), c, data)?, scores.eps_clip())
}

/// A fitted projection: the dual vector plus everything needed to rebuild
/// the constraint rows for new samples.
#[derive(Debug, Clone)]
pub struct ProjectedModel {
    pub lambda: Vec<f64>,
    pub metric: FairnessMetric,
    pub alpha: f64,
    pub marginals: GroupMarginals,
    pub divergence: DivergenceKind,
    pub eps_clip: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    divergence: String,
    metric: FairnessMetric,
    alpha: f64,
    eps_clip: f64,
    lambda: Vec<f64>,
    marginals: GroupMarginals,
}

const MODEL_FORMAT: &str = "fairproj-projected v1";

impl ProjectedModel {
    /// Fits `λ` on `scores` and freezes the marginals of `gm`.
    pub fn fit(
        scores: &ScoreMatrix,
        gm: &GroupModel,
        metric: FairnessMetric,
        alpha: f64,
        cfg: &SolverConfig,
    ) -> Result<(Self, DualSolution)> {
        let cs = constraints::build(metric, scores, gm, alpha)?;
        let sol = admm_fit(scores, &cs, cfg)?;
        let model = Self {
            lambda: sol.lambda.clone(),
            metric,
            alpha,
            marginals: gm.marginals(),
            divergence: cfg.divergence.clone(),
            eps_clip: scores.eps_clip(),
        };
        Ok((model, sol))
    }

    pub fn classes(&self) -> usize {
        self.marginals.classes
    }

    pub fn groups(&self) -> usize {
        self.marginals.groups
    }

    /// Group model for new samples that reuses the frozen marginals.
    pub fn group_model_for(&self, n: usize, group_probs: Vec<f64>) -> Result<GroupModel> {
        GroupModel::from_parts(&self.marginals, n, group_probs)
    }

    pub fn to_json(&self) -> Result<String> {
        if let DivergenceKind::Generic(g) = &self.divergence {
            return Err(Error::InvalidModel(format!(
                "divergence '{}' has no serialized form",
                g.name
            )));
        }
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            divergence: self.divergence.name().to_string(),
            metric: self.metric,
            alpha: self.alpha,
            eps_clip: self.eps_clip,
            lambda: self.lambda.clone(),
            marginals: self.marginals.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidModel(format!("unknown model format '{}'", file.format)));
        }
        if file.lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidModel("lambda must be finite and nonnegative".into()));
        }
        let m = &file.marginals;
        if file.lambda.len() != file.metric.row_count(m.groups, m.classes) {
            return Err(Error::InvalidModel(format!(
                "lambda has {} entries, {} needs {}",
                file.lambda.len(),
                file.metric,
                file.metric.row_count(m.groups, m.classes)
            )));
        }
        Ok(Self {
            divergence: DivergenceKind::parse(&file.divergence)?,
            lambda: file.lambda,
            metric: file.metric,
            alpha: file.alpha,
            marginals: file.marginals,
            eps_clip: file.eps_clip,
        })
    }
}

/// Tilts a batch of new samples. `gm_new` must carry the model's frozen
/// marginals and the new samples' group probabilities.
pub fn project_scores(
    model: &ProjectedModel,
    scores: &ScoreMatrix,
    gm_new: &GroupModel,
) -> Result<ScoreMatrix> {
    if scores.classes() != model.classes() || gm_new.classes() != model.classes() {
        return Err(Error::InvalidModel(format!(
            "model has {} classes, scores have {}",
            model.classes(),
            scores.classes()
        )));
    }
    if gm_new.groups() != model.groups()
        || gm_new.p_s != model.marginals.p_s
        || gm_new.p_s_given_y != model.marginals.p_s_given_y
    {
        return Err(Error::InvalidModel(
            "group model does not carry the model's frozen marginals".into(),
        ));
    }
    let cs = constraints::build(model.metric, scores, gm_new, model.alpha)?;
    if cs.k() != model.lambda.len() {
        return Err(Error::InvalidModel(format!(
            "lambda has {} entries, constraints have {} rows",
            model.lambda.len(),
            cs.k()
        )));
    }
    tilt_all(&model.divergence, scores, &cs, &model.lambda)
}
