mod common;

use medrec_core::correction::CorrectionConfig;
use medrec_core::ehr::{bootstrap_rounds, BootstrapConfig, DdiMatrix};
use medrec_core::model::ModelConfig;
use medrec_core::train::metrics::ranking;
use medrec_core::train::{
    dataset_loss_at, evaluate_bootstrap, evaluate_patients, loss_bce, loss_ddi, loss_multi,
    metric_prauc, patient_alphas, train, Correction, LogRow, MetricValues, PatientMetrics,
};
use medrec_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_bce(y: &[bool], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        let q = p[i].max(1e-7).min(1.0 - 1e-7);
        let t = if y[i] { 1.0 } else { 0.0 };
        s -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
    }
    s
}

fn naive_multi(y: &[bool], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] && !y[j] {
                s += f64::max(0.0, 1.0 - (p[i] - p[j]));
            }
        }
    }
    s / y.len() as f64
}

fn naive_ddi(p: &[f64], adj: &[Vec<bool>]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            if adj[i][j] {
                s += p[i] * p[j];
            }
        }
    }
    s
}

#[test]
fn losses_match_naive_loops_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.gen_range(2..25);
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut adj = vec![vec![false; n]; n];
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.15) {
                    adj[a][b] = true;
                    adj[b][a] = true;
                    pairs.push((a, b));
                }
            }
        }
        let ddi = DdiMatrix::from_pairs(n, &pairs).unwrap();
        assert!((loss_bce(&y, &p) - naive_bce(&y, &p)).abs() < 1e-9);
        assert!((loss_multi(&y, &p) - naive_multi(&y, &p)).abs() < 1e-9);
        assert!((loss_ddi(&p, &ddi) - naive_ddi(&p, &adj)).abs() < 1e-9);
    }
}

/// Step-sum PRAUC by explicit enumeration of every cut-off.
fn naive_prauc(truth: &[usize], probs: &[f64]) -> f64 {
    let order = ranking(probs);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for k in 1..=order.len() {
        let top = &order[..k];
        let hits = top.iter().filter(|m| truth.contains(m)).count() as f64;
        let precision = hits / k as f64;
        let recall = hits / truth.len() as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    area
}

proptest! {
    #[test]
    fn prauc_matches_cutoff_enumeration(
        probs in prop::collection::vec(0.0f64..1.0, 1..9),
        mask in prop::collection::vec(any::<bool>(), 9),
    ) {
        let truth: Vec<usize> = (0..probs.len()).filter(|&i| mask[i]).collect();
        prop_assume!(!truth.is_empty());
        let a = metric_prauc(&truth, &probs);
        prop_assert!((a - naive_prauc(&truth, &probs)).abs() < 1e-9);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn aggregated_metrics_stay_in_range(
        visits in prop::collection::vec(
            (prop::collection::vec(any::<bool>(), 6), prop::collection::vec(0.0f64..1.0, 6)), 1..6),
        ddi_bits in prop::collection::vec(any::<bool>(), 15),
    ) {
        let mut pairs = Vec::new();
        let mut k = 0;
        for a in 0..6 {
            for b in a + 1..6 {
                if ddi_bits[k] { pairs.push((a, b)); }
                k += 1;
            }
        }
        let ddi = DdiMatrix::from_pairs(6, &pairs).unwrap();
        let data: Vec<(Vec<usize>, Vec<f64>, Vec<usize>)> = visits
            .iter()
            .map(|(t, p)| {
                let truth = (0..6).filter(|&i| t[i]).collect();
                let sel = (0..6).filter(|&i| p[i] >= 0.5).collect();
                (truth, p.clone(), sel)
            })
            .collect();
        let rows: Vec<(&[usize], &[f64], &[usize])> =
            data.iter().map(|(a, b, c)| (a.as_slice(), b.as_slice(), c.as_slice())).collect();
        let m = MetricValues::aggregate(&[PatientMetrics::compute(&rows, &ddi)]);
        for v in [m.jaccard, m.f1, m.prauc, m.ddi_rate] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!(m.avg_med >= 0.0 && m.avg_med <= 6.0);
    }
}

#[test]
fn one_epoch_reduces_loss_in_most_seeds() {
    let mut decreased = 0;
    for seed in 0..10u64 {
        let ds = common::dataset(10, 100 + seed);
        let art = common::mined(&ds);
        let mut model = common::model(&ds, &art, ModelConfig::default(), seed);
        let cfg = common::train_config(1, seed);
        let alphas = patient_alphas(&model, &ds.records, &ds.ddi, &cfg).unwrap();
        let before = dataset_loss_at(&model, &ds.records, &ds.ddi, &cfg, &alphas).unwrap();
        let out = train(
            &mut model,
            &ds.records,
            &[],
            &ds.ddi,
            &cfg,
            None,
            &mut |_| Ok(()),
        )
        .unwrap();
        assert_eq!(out.epoch_losses.len(), 1);
        let after = dataset_loss_at(&model, &ds.records, &ds.ddi, &cfg, &alphas).unwrap();
        if after < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 8, "loss decreased in {decreased}/10 seeds");
}

#[test]
fn training_is_deterministic_and_correction_does_not_touch_it() {
    let ds = common::dataset(60, 3);
    let art = common::mined(&ds);
    let cc = CorrectionConfig::default();
    let corr = Correction {
        dm: &art.disease_effects,
        pm: &art.procedure_effects,
        config: &cc,
    };
    let run = |with_corr: bool| {
        let mut model = common::model(&ds, &art, ModelConfig::default(), 9);
        let mut steps = Vec::new();
        let out = train(
            &mut model,
            &ds.records[..40],
            &ds.records[40..],
            &ds.ddi,
            &common::train_config(2, 9),
            with_corr.then_some(&corr),
            &mut |r| {
                if let LogRow::Step { loss, .. } = r {
                    steps.push(loss.total);
                }
                Ok(())
            },
        )
        .unwrap();
        (out.epoch_losses, steps)
    };
    let a = run(true);
    assert_eq!(a, run(true));
    assert_eq!(a, run(false));
    assert_eq!(a.1.len(), 80);
}

#[test]
fn best_epoch_parameters_are_restored() {
    let ds = common::dataset(80, 5);
    let art = common::mined(&ds);
    let mut model = common::model(&ds, &art, ModelConfig::default(), 2);
    let (tr, va) = ds.records.split_at(60);
    let out = train(
        &mut model,
        tr,
        va,
        &ds.ddi,
        &common::train_config(3, 2),
        None,
        &mut |_| Ok(()),
    )
    .unwrap();
    let best = out.best_val_jaccard.unwrap();
    let max = out
        .val_metrics
        .iter()
        .map(|m| m.unwrap().jaccard)
        .fold(f64::MIN, f64::max);
    assert_eq!(best, max);
    let now = MetricValues::aggregate(&evaluate_patients(&model, va, &ds.ddi, None, 0.5).unwrap());
    assert_eq!(now.jaccard, best);
}

#[test]
fn non_finite_parameters_abort_with_patient_id() {
    let ds = common::dataset(20, 6);
    let art = common::mined(&ds);
    let mut model = common::model(&ds, &art, ModelConfig::default(), 0);
    let id = model.param_id("head.b").unwrap();
    model.params.get_mut(id).data[0] = f64::NAN;
    let err = train(
        &mut model,
        &ds.records,
        &[],
        &ds.ddi,
        &common::train_config(1, 0),
        None,
        &mut |_| Ok(()),
    )
    .unwrap_err();
    match err {
        Error::Numeric(msg) => assert!(
            ds.records.iter().any(|r| msg.contains(&r.patient_id)),
            "{msg}"
        ),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn degenerate_bootstrap_equals_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let per: Vec<PatientMetrics> = (0..40)
        .map(|_| PatientMetrics {
            jaccard: rng.gen(),
            f1: rng.gen(),
            prauc: rng.gen(),
            ddi_hits: rng.gen_range(0..3),
            ddi_pairs: 3,
            label_pairs: 4,
            visits: 2,
            selected: rng.gen_range(0..6),
        })
        .collect();
    let cfg = BootstrapConfig {
        rounds: 1,
        fraction: 1.0,
        with_replacement: false,
    };
    let rounds = bootstrap_rounds(per.len(), cfg, 0).unwrap();
    let r = evaluate_bootstrap(&per, &rounds).unwrap();
    assert_eq!(r.mean, MetricValues::aggregate(&per));

    let se = |n: usize| {
        let cfg = BootstrapConfig {
            rounds: n,
            fraction: 1.0,
            with_replacement: true,
        };
        let rounds = bootstrap_rounds(per.len(), cfg, 7).unwrap();
        evaluate_bootstrap(&per, &rounds).unwrap().stderr.jaccard
    };
    assert!(se(50) < se(5));
}
