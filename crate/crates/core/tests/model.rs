mod common;

use medrec_core::ehr::PatientRecord;
use medrec_core::model::checkpoint::Checkpoint;
use medrec_core::model::{Grads, Model, ModelConfig, ModelContext};
use medrec_core::train::{patient_loss, TrainConfig};
use medrec_core::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture() -> (medrec_core::pipeline::Dataset, Vec<PatientRecord>, Model) {
    let ds = common::dataset(300, 11);
    let art = common::mined(&ds);
    let pair: Vec<PatientRecord> = ds
        .records
        .iter()
        .filter(|r| r.visits.len() >= 2)
        .take(2)
        .cloned()
        .collect();
    let m = common::model(&ds, &art, ModelConfig::default(), 3);
    (ds, pair, m)
}

fn total_loss(
    model: &Model,
    recs: &[PatientRecord],
    ds: &medrec_core::pipeline::Dataset,
    cfg: &TrainConfig,
) -> f64 {
    recs.iter()
        .map(|r| {
            patient_loss(model, r, &ds.ddi, cfg, None, None)
                .unwrap()
                .0
                .total
        })
        .sum()
}

#[test]
fn analytic_gradients_match_central_differences() {
    let (ds, recs, mut model) = fixture();
    let cfg = TrainConfig::default();
    let mut grads = Grads::zeros_like(&model.params);
    for r in &recs {
        patient_loss(&model, r, &ds.ddi, &cfg, None, Some(&mut grads)).unwrap();
    }
    let mut coords = Vec::new();
    for id in model.params.ids() {
        let t = model.params.get(id);
        for (k, g) in grads.get(id).iter().enumerate() {
            let free = t.mask.as_ref().map_or(true, |m| m[k]);
            if free && g.abs() > 1e-5 {
                coords.push((id, k));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    coords.shuffle(&mut rng);
    coords.truncate(20);
    assert_eq!(coords.len(), 20);
    let h = 1e-4;
    for (id, k) in coords {
        let x0 = model.params.get(id).data[k];
        model.params.get_mut(id).data[k] = x0 + h;
        let up = total_loss(&model, &recs, &ds, &cfg);
        model.params.get_mut(id).data[k] = x0 - h;
        let dn = total_loss(&model, &recs, &ds, &cfg);
        model.params.get_mut(id).data[k] = x0;
        let fd = (up - dn) / (2.0 * h);
        let an = grads.get(id)[k];
        let rel = (fd - an).abs() / fd.abs().max(an.abs());
        let name = &model.params.get(id).name;
        assert!(
            rel < 1e-4,
            "{name}[{k}]: analytic {an} vs numeric {fd} (rel {rel})"
        );
    }
}

#[test]
fn masked_composition_weights_get_zero_gradient() {
    let (ds, recs, model) = fixture();
    let mut grads = Grads::zeros_like(&model.params);
    for r in &recs {
        patient_loss(
            &model,
            r,
            &ds.ddi,
            &TrainConfig::default(),
            None,
            Some(&mut grads),
        )
        .unwrap();
    }
    let (id, mask) = model
        .masked_entries()
        .expect("molecule composition present");
    let g = grads.get(id);
    assert!(mask.iter().any(|&m| !m));
    for (k, &on) in mask.iter().enumerate() {
        if !on {
            assert_eq!(g[k], 0.0);
        }
    }
    assert!(g.iter().zip(mask).any(|(v, &on)| on && *v != 0.0));
}

#[test]
fn probabilities_are_valid_and_deterministic() {
    let (_, recs, model) = fixture();
    for r in &recs {
        let a = model.predict(r).unwrap();
        let b = model.predict(r).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), r.visits.len());
        for v in &a {
            assert_eq!(v.len(), model.n_medications());
            assert!(v.iter().all(|p| *p > 0.0 && *p < 1.0));
        }
    }
}

#[test]
fn first_visit_ignores_later_history() {
    let (_, recs, model) = fixture();
    let r = &recs[0];
    let single = PatientRecord {
        patient_id: r.patient_id.clone(),
        visits: vec![r.visits[0].clone()],
    };
    assert_eq!(
        model.predict(&single).unwrap()[0],
        model.predict(r).unwrap()[0]
    );
}

#[test]
fn ablation_variants_build_and_predict() {
    let ds = common::dataset(200, 4);
    let art = common::mined(&ds);
    let r = &ds.records[0];
    let wo_f = common::model(
        &ds,
        &art,
        ModelConfig {
            wo_f: true,
            ..ModelConfig::default()
        },
        1,
    );
    assert!(wo_f.params.by_name("emb.medication").is_some());
    assert!(wo_f.params.by_name("emb.molecule").is_none());
    assert!(wo_f.masked_entries().is_none());
    wo_f.predict(r).unwrap();

    let ctx = ModelContext::from_cooccurrence(
        &ds.records,
        ds.vocabs.diseases.len(),
        ds.vocabs.procedures.len(),
        ds.molecules.clone(),
        5,
    );
    assert_eq!(ctx.relation_types, 1);
    assert!(ctx.disease_graph.edges().is_empty());
    let wo_c = Model::new(
        ModelConfig {
            wo_c: true,
            ..ModelConfig::default()
        },
        ctx,
        1,
    )
    .unwrap();
    wo_c.predict(r).unwrap();
}

#[test]
fn relation_count_mismatch_is_a_config_error() {
    let ds = common::dataset(120, 4);
    let art = common::mined(&ds);
    let ctx = ModelContext::from_mining(
        &art,
        ds.vocabs.diseases.len(),
        ds.vocabs.procedures.len(),
        ds.molecules.clone(),
    );
    let cfg = ModelConfig {
        relation_types: 3,
        ..ModelConfig::default()
    };
    assert!(matches!(Model::new(cfg, ctx, 0), Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_and_fingerprint_guard() {
    let (_, recs, model) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::from_model(&model, "abc", 3)
        .save(&path)
        .unwrap();
    let ck = Checkpoint::load(&path, Some("abc")).unwrap();
    assert_eq!(ck.epoch, 3);
    let back = ck.into_model(model.context.clone()).unwrap();
    assert_eq!(
        back.predict(&recs[0]).unwrap(),
        model.predict(&recs[0]).unwrap()
    );
    assert!(Checkpoint::load(&path, Some("other")).is_err());
}
