mod common;

use common::*;
use fairproj::baseline::{fit_group_model, fit_logreg, LogRegConfig};
use fairproj::constraints::{self, estimate_group_model, GroupMarginals, GroupModel};
use fairproj::data::{generate_synth, split_indices, SynthSpec};
use fairproj::divergence::{v_update_ce, v_update_generic, v_update_kl, GenericF};
use fairproj::metrics::{criterion_value, evaluate_scores};
use fairproj::solver::{dual_objective, lambda_max_bound, lambda_qp_solve, precompute_q, qp_kkt_residual};
use fairproj::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn generic_route_matches_kl_and_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (gkl, gce) = (GenericF::kl(), GenericF::ce());
    for _ in 0..50 {
        let c = rng.random_range(2..6);
        let p = random_simplex(&mut rng, c, 0.02);
        let a: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let xi = rng.random_range(0.3..3.0);
        let kl = v_update_kl(&p, &a, xi, &vec![0.0; c]).unwrap();
        let ce = v_update_ce(&p, &a, xi, 0.0).unwrap().v;
        let g1 = v_update_generic(&gkl, &p, &a, xi).unwrap();
        let g2 = v_update_generic(&gce, &p, &a, xi).unwrap();
        for j in 0..c {
            assert!((kl[j] - g1[j]).abs() < 1e-6, "{kl:?} vs {g1:?}");
            assert!((ce[j] - g2[j]).abs() < 1e-6, "{ce:?} vs {g2:?}");
        }
    }
}

/// Minimizes `λᵀQλ + qᵀλ` over `λ ≥ 0` by trying every active set.
fn qp_enumerate(qm: &DMatrix<f64>, q: &[f64]) -> Vec<f64> {
    let k = q.len();
    let obj = |l: &[f64]| {
        let v = DVector::from_column_slice(l);
        (v.transpose() * qm * &v)[(0, 0)] + l.iter().zip(q).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let free: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let mut l = vec![0.0; k];
        if !free.is_empty() {
            let sub = DMatrix::from_fn(free.len(), free.len(), |r, c| 2.0 * qm[(free[r], free[c])]);
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&j| -q[j]));
            let sol = sub.lu().solve(&rhs).unwrap();
            if sol.iter().any(|x| *x < 0.0) {
                continue;
            }
            for (t, &j) in free.iter().enumerate() {
                l[j] = sol[t];
            }
        }
        let grad: Vec<f64> = (0..k)
            .map(|r| 2.0 * (0..k).map(|c| qm[(r, c)] * l[c]).sum::<f64>() + q[r])
            .collect();
        if (0..k).any(|j| mask & (1 << j) == 0 && grad[j] < -1e-12) {
            continue;
        }
        let f = obj(&l);
        if best.as_ref().map_or(true, |(b, _)| f < *b) {
            best = Some((f, l));
        }
    }
    best.unwrap().1
}

#[test]
fn qp_matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..60 {
        let k = 1 + trial % 6;
        let m = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let qm = &m * m.transpose() + DMatrix::identity(k, k) * 0.05;
        let q: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = lambda_qp_solve(&qm, &q, &vec![0.0; k]).unwrap();
        let want = qp_enumerate(&qm, &q);
        for j in 0..k {
            assert!((got[j] - want[j]).abs() < 1e-8, "{got:?} vs {want:?}");
        }
        assert!(qp_kkt_residual(&qm, &q, &got) < 1e-8);
    }
}

#[test]
fn admm_matches_projected_gradient_for_sp_eo_oae() {
    let inst = small_instance(3);
    for metric in [
        FairnessMetric::StatisticalParity,
        FairnessMetric::EqualizedOdds,
        FairnessMetric::OverallAccuracyEquality,
    ] {
        let gm = estimate_group_model(&inst.groups, &inst.labels, 2, 2, metric, None).unwrap();
        let cs = constraints::build(metric, &inst.scores, &gm, 0.1).unwrap();
        let cfg = SolverConfig::defaults_for(32, DivergenceKind::Kl);
        let sol = admm_fit(&inst.scores, &cs, &cfg).unwrap();
        assert!(sol.converged);
        let oracle = kl_dual_pgd(&inst.scores, &cs, cfg.zeta, 200_000);
        let d_admm = kl_dual_value(&inst.scores, &cs, &sol.lambda, cfg.zeta);
        let d_oracle = kl_dual_value(&inst.scores, &cs, &oracle, cfg.zeta);
        assert!((d_admm - d_oracle).abs() < 1e-6, "{metric}: {d_admm} vs {d_oracle}");
        let lib = dual_objective(&inst.scores, &cs, &sol.lambda, &DivergenceKind::Kl, cfg.zeta).unwrap();
        assert!((lib - d_admm).abs() < 1e-12);
    }
}

#[test]
fn ce_dual_is_minimized_by_admm() {
    let inst = small_instance(4);
    let metric = FairnessMetric::StatisticalParity;
    let gm = estimate_group_model(&inst.groups, &inst.labels, 2, 2, metric, None).unwrap();
    let cs = constraints::build(metric, &inst.scores, &gm, 0.1).unwrap();
    let cfg = SolverConfig::defaults_for(32, DivergenceKind::Ce);
    let sol = admm_fit(&inst.scores, &cs, &cfg).unwrap();
    assert!(sol.converged);
    assert!(sol.lambda.iter().any(|l| *l > 1e-3));
    let value = |l: &[f64]| {
        let (k, c) = (cs.k(), cs.classes());
        let mut tot = 0.0;
        for i in 0..cs.n() {
            let u = gt_times(cs.g(i), k, c, l);
            let v: Vec<f64> = u.iter().map(|x| -x).collect();
            tot += ce_conj_bisect(&v, inst.scores.row(i)) + 0.5 * cfg.zeta * u.iter().map(|x| x * x).sum::<f64>();
        }
        tot / cs.n() as f64 + 0.5 * cfg.zeta * l.iter().map(|x| x * x).sum::<f64>()
    };
    let at = value(&sol.lambda);
    let lib = dual_objective(&inst.scores, &cs, &sol.lambda, &DivergenceKind::Ce, cfg.zeta).unwrap();
    assert!((at - lib).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let probe: Vec<f64> = sol
            .lambda
            .iter()
            .map(|l| (l + rng.random_range(-0.05..0.05)).max(0.0))
            .collect();
        assert!(value(&probe) >= at - 1e-9);
    }
}

#[test]
fn single_group_gives_zero_multipliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scores = random_scores(&mut rng, 200, 3);
    let groups = vec![0; 200];
    let labels: Vec<usize> = (0..200).map(|i| i % 3).collect();
    for metric in [
        FairnessMetric::StatisticalParity,
        FairnessMetric::EqualizedOdds,
        FairnessMetric::OverallAccuracyEquality,
    ] {
        let gm = estimate_group_model(&groups, &labels, 1, 3, metric, None).unwrap();
        let cs = constraints::build(metric, &scores, &gm, 0.05).unwrap();
        let vals = cs.empirical_values(&scores).unwrap();
        assert!(vals.iter().all(|v| *v < 0.0));
        for div in [DivergenceKind::Kl, DivergenceKind::Ce] {
            let sol = admm_fit(&scores, &cs, &SolverConfig::defaults_for(200, div)).unwrap();
            assert!(sol.lambda.iter().all(|l| l.abs() < 1e-6), "{metric}: {:?}", sol.lambda);
        }
    }
}

#[test]
fn lambda_norm_within_uniform_bound() {
    for seed in 0..5 {
        let inst = small_instance(20 + seed);
        let metric = FairnessMetric::StatisticalParity;
        let gm = estimate_group_model(&inst.groups, &inst.labels, 2, 2, metric, None).unwrap();
        let cs = constraints::build(metric, &inst.scores, &gm, 0.1).unwrap();
        for div in [DivergenceKind::Kl, DivergenceKind::Ce] {
            let bound = lambda_max_bound(&inst.scores, &cs, &div).unwrap();
            let sol = admm_fit(&inst.scores, &cs, &SolverConfig::defaults_for(32, div)).unwrap();
            let l1: f64 = sol.lambda.iter().sum();
            assert!(l1 <= bound + 0.1, "{l1} > {bound}");
        }
    }
}

#[test]
fn uniform_base_has_zero_bound() {
    let scores = ScoreMatrix::from_rows(&vec![vec![0.5, 0.5]; 8]).unwrap();
    let groups = vec![0, 1, 0, 1, 0, 1, 0, 1];
    let labels = vec![0, 0, 1, 1, 0, 0, 1, 1];
    let gm = estimate_group_model(&groups, &labels, 2, 2, FairnessMetric::StatisticalParity, None).unwrap();
    let cs = constraints::build_sp(&scores, &gm, 0.1).unwrap();
    assert!(lambda_max_bound(&scores, &cs, &DivergenceKind::Kl).unwrap().abs() < 1e-15);
}

#[test]
fn single_group_bound_uses_slack_over_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scores = random_scores(&mut rng, 50, 3);
    let gm = estimate_group_model(&[0; 50], &vec![0; 50], 1, 3, FairnessMetric::StatisticalParity, None).unwrap();
    let alpha = 0.2;
    let cs = constraints::build_sp(&scores, &gm, alpha).unwrap();
    let u = [1.0 / 3.0; 3];
    let div: f64 = (0..50).map(|i| DivergenceKind::Kl.divergence(&u, scores.row(i))).sum::<f64>() / 50.0;
    let bound = lambda_max_bound(&scores, &cs, &DivergenceKind::Kl).unwrap();
    assert!((bound - div / (alpha / 3.0)).abs() < 1e-12);
}

/// Marginals computed from soft base-score label masses.
fn soft_marginals(scores: &ScoreMatrix, groups: &[usize], a_n: usize) -> GroupMarginals {
    let (n, c_n) = (scores.n(), scores.classes());
    let mut mass = vec![0.0; a_n * c_n];
    let mut count = vec![0.0; a_n];
    for i in 0..n {
        count[groups[i]] += 1.0;
        for c in 0..c_n {
            mass[groups[i] * c_n + c] += scores.row(i)[c];
        }
    }
    let mut p_s_given_y = vec![0.0; a_n * c_n];
    for c in 0..c_n {
        let tot: f64 = (0..a_n).map(|a| mass[a * c_n + c]).sum();
        for a in 0..a_n {
            p_s_given_y[a * c_n + c] = mass[a * c_n + c] / tot;
        }
    }
    GroupMarginals {
        groups: a_n,
        classes: c_n,
        p_s: count.iter().map(|x| x / n as f64).collect(),
        p_s_given_y,
    }
}

#[test]
fn constraints_agree_with_criterion_on_random_datasets() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut sides = [0usize; 2];
    for trial in 0..20 {
        let (n, c_n, a_n) = (rng.random_range(30..120), rng.random_range(2..5), rng.random_range(2..4));
        let groups: Vec<usize> = (0..n).map(|i| if i < a_n { i } else { rng.random_range(0..a_n) }).collect();
        let rows: Vec<Vec<f64>> = groups
            .iter()
            .map(|&a| {
                let mut p = random_simplex(&mut rng, c_n, 0.05);
                p[a % c_n] += 0.3 * rng.random::<f64>();
                let s: f64 = p.iter().sum();
                p.iter().map(|x| x / s).collect()
            })
            .collect();
        let scores = ScoreMatrix::from_rows(&rows).unwrap();
        let probs = GroupModel::indicator_probs(&groups, a_n, c_n);
        let gm = GroupModel::from_parts(&soft_marginals(&scores, &groups, a_n), n, probs).unwrap();
        for metric in [
            FairnessMetric::StatisticalParity,
            FairnessMetric::EqualizedOdds,
            FairnessMetric::OverallAccuracyEquality,
        ] {
            let value = criterion_value(metric, &scores, &scores, &groups, a_n).unwrap();
            let factor = if trial % 2 == 0 { rng.random_range(0.5..0.95) } else { rng.random_range(1.05..1.5) };
            let alpha = value * factor;
            let cs = constraints::build(metric, &scores, &gm, alpha).unwrap();
            let worst = cs.empirical_values(&scores).unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(worst <= 0.0, value <= alpha, "{metric} trial {trial}: worst {worst}, value {value}, alpha {alpha}");
            sides[(value <= alpha) as usize] += 1;
        }
    }
    assert!(sides[0] > 10 && sides[1] > 10);
}

#[test]
fn marginals_track_generator() {
    let mut spec = SynthSpec::biased(100_000, 3, 2, 0.6, 17);
    spec.group_weights = vec![0.3, 0.7];
    let ds = generate_synth(&spec).unwrap();
    let gm = estimate_group_model(&ds.groups, &ds.labels, 2, 3, FairnessMetric::EqualizedOdds, None).unwrap();
    assert!((gm.p_s[0] - 0.3).abs() < 0.01);
    // P(S=a | Y=c) ∝ w_a · bias[a][c]
    for c in 0..3 {
        let joint: Vec<f64> = (0..2).map(|a| spec.group_weights[a] * spec.class_bias[a][c]).collect();
        let tot: f64 = joint.iter().sum();
        for a in 0..2 {
            assert!((gm.p_s_given_y(a, c) - joint[a] / tot).abs() < 0.01);
        }
    }
}

#[test]
fn generator_marginals_within_three_sigma() {
    let spec = SynthSpec::biased(20_000, 3, 3, 0.6, 4);
    let ds = generate_synth(&spec).unwrap();
    let n = ds.len() as f64;
    for a in 0..3 {
        let cnt = ds.groups.iter().filter(|&&g| g == a).count() as f64;
        let p = spec.group_weights[a];
        assert!((cnt / n - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt());
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.groups[i] == a).collect();
        for c in 0..3 {
            let k = idx.iter().filter(|&&i| ds.labels[i] == c).count() as f64;
            let q = spec.class_bias[a][c];
            let m = idx.len() as f64;
            assert!((k / m - q).abs() <= 3.0 * (q * (1.0 - q) / m).sqrt());
        }
    }
}

fn held_out_meo(spec: &SynthSpec) -> f64 {
    let ds = generate_synth(spec).unwrap();
    let (tr, te) = split_indices(&ds.labels, &ds.groups, 0.3, 1).unwrap();
    let (train, test) = (ds.subset(&tr), ds.subset(&te));
    let model = fit_logreg(&train.features_with_groups().unwrap(), &train.labels, spec.classes, &LogRegConfig::default()).unwrap();
    let scores = model.predict_proba(&test.features_with_groups().unwrap()).unwrap();
    evaluate_scores(&scores, &test.labels, &test.groups, spec.groups).unwrap().meo
}

#[test]
fn unbiased_generator_gives_near_fair_model() {
    let meo = held_out_meo(&SynthSpec::unbiased(10_000, 2, 2, 6));
    assert!(meo < 0.05, "{meo}");
}

#[test]
fn biased_generator_gives_disparity() {
    let mut spec = SynthSpec::unbiased(10_000, 2, 2, 6);
    spec.class_bias = vec![vec![0.8, 0.2], vec![0.4, 0.6]];
    let meo = held_out_meo(&spec);
    assert!(meo > 0.15, "{meo}");
}

#[test]
fn independent_groups_predict_marginal() {
    let mut spec = SynthSpec::unbiased(10_000, 2, 2, 12);
    spec.group_weights = vec![0.35, 0.65];
    spec.group_shift = 0.0;
    let ds = generate_synth(&spec).unwrap();
    let x = ds.features.clone().unwrap();
    let gc = fit_group_model(&x, &ds.labels, &ds.groups, 2, 2, &LogRegConfig::default()).unwrap();
    let s = gc.predict(&x).unwrap();
    let p_s = [0.35, 0.65];
    for (j, v) in s.iter().enumerate() {
        assert!((v - p_s[j % 2]).abs() < 0.05, "{v}");
    }
}

#[test]
fn group_from_one_feature_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 4000;
    let x = random_features(&mut rng, n, 3);
    let groups: Vec<usize> = (0..n).map(|i| (x.get(i, 1) > 0.0) as usize).collect();
    let labels: Vec<usize> = (0..n).map(|i| (x.get(i, 0) > 0.0) as usize).collect();
    let train: Vec<usize> = (0..3000).collect();
    let cfg = LogRegConfig { epochs: 2000, lr: 0.5, ..Default::default() };
    let gc = fit_group_model(
        &x.select_rows(&train),
        &train.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        &train.iter().map(|&i| groups[i]).collect::<Vec<_>>(),
        2,
        2,
        &cfg,
    )
    .unwrap();
    let test: Vec<usize> = (3000..n).collect();
    let s = gc.predict(&x.select_rows(&test)).unwrap();
    let correct = test
        .iter()
        .enumerate()
        .filter(|(t, &i)| {
            let slice = &s[(t * 2 + labels[i]) * 2..(t * 2 + labels[i] + 1) * 2];
            (slice[1] > slice[0]) as usize == groups[i]
        })
        .count();
    assert!(correct as f64 / test.len() as f64 >= 0.99);
}

#[test]
fn q_is_positive_definite() {
    let inst = small_instance(1);
    let gm = estimate_group_model(&inst.groups, &inst.labels, 2, 2, FairnessMetric::EqualizedOdds, None).unwrap();
    let cs = constraints::build_eo(&inst.scores, &gm, 0.1).unwrap();
    let zeta = 0.3;
    let q = precompute_q(&cs, 2.0, zeta);
    assert!((&q - q.transpose()).abs().max() == 0.0);
    let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
    assert!(min_eig >= zeta / 2.0 - 1e-12);
}
