use medrec_core::ehr::{generate_synthetic, EntityKind, SyntheticSpec};
use medrec_core::mining::io::{
    load_effects_csv, load_effects_sidecar, load_graph, load_strata, save_effects, save_graph,
    save_strata,
};
use medrec_core::mining::{
    estimate_causal_effects, greedy_equivalence_search, mine, CausalGraph, EffectConfig,
    MiningConfig, OccurrenceTable, SearchConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

/// BDeu by direct per-sample counting.
fn naive_local(cols: &[Vec<bool>], node: usize, parents: &[usize]) -> f64 {
    let q = 1usize << parents.len();
    let mut n = vec![[0f64; 2]; q];
    for s in 0..cols[node].len() {
        let j = parents
            .iter()
            .enumerate()
            .fold(0, |acc, (b, &p)| acc | ((cols[p][s] as usize) << b));
        n[j][cols[node][s] as usize] += 1.0;
    }
    let a = 1.0 / q as f64;
    n.iter()
        .map(|c| {
            ln_gamma(a) - ln_gamma(a + c[0] + c[1]) + ln_gamma(a / 2.0 + c[0]) - ln_gamma(a / 2.0)
                + ln_gamma(a / 2.0 + c[1])
                - ln_gamma(a / 2.0)
        })
        .sum()
}

/// All 25 DAGs on three labelled nodes as edge lists.
fn all_dags3() -> Vec<Vec<(usize, usize)>> {
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut out = Vec::new();
    for code in 0..27usize {
        let mut edges = Vec::new();
        let mut c = code;
        for &(a, b) in &pairs {
            match c % 3 {
                1 => edges.push((a, b)),
                2 => edges.push((b, a)),
                _ => {}
            }
            c /= 3;
        }
        let g =
            CausalGraph::new_unchecked(EntityKind::Disease, vec![0, 1, 2], edges.clone()).unwrap();
        if g.is_acyclic() {
            out.push(edges);
        }
    }
    out
}

fn naive_total(cols: &[Vec<bool>], edges: &[(usize, usize)]) -> f64 {
    (0..3)
        .map(|v| {
            let ps: Vec<usize> = edges.iter().filter(|e| e.1 == v).map(|e| e.0).collect();
            naive_local(cols, v, &ps)
        })
        .sum()
}

fn skeleton(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut s: Vec<_> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    s.sort();
    s
}

fn flip(rng: &mut ChaCha8Rng, parent: bool, on: f64, off: f64) -> bool {
    rng.gen::<f64>() < if parent { on } else { off }
}

fn chain_cols(seed: u64, n: usize) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = vec![Vec::with_capacity(n); 3];
    for _ in 0..n {
        let a = rng.gen::<f64>() < 0.4;
        let b = flip(&mut rng, a, 0.8, 0.15);
        let c = flip(&mut rng, b, 0.75, 0.2);
        cols[0].push(a);
        cols[1].push(b);
        cols[2].push(c);
    }
    cols
}

#[test]
fn exhaustive_oracle_has_25_dags() {
    assert_eq!(all_dags3().len(), 25);
}

#[test]
fn chain_skeleton_recovered_against_exhaustive_optimum() {
    let dags = all_dags3();
    let (mut skel_ok, mut score_ok) = (0, 0);
    for seed in 0..20 {
        let cols = chain_cols(seed, 10_000);
        let data = OccurrenceTable::from_columns(&cols);
        let out =
            greedy_equivalence_search(&data, EntityKind::Disease, SearchConfig::default()).unwrap();
        let best = dags
            .iter()
            .map(|d| naive_total(&cols, d))
            .fold(f64::NEG_INFINITY, f64::max);
        let got = naive_total(&cols, out.graph.edges());
        assert!(
            (got - out.score).abs() < 1e-6,
            "reported score is the exact total"
        );
        if (got - best).abs() < 1e-6 {
            score_ok += 1;
        }
        if skeleton(out.graph.edges()) == vec![(0, 1), (1, 2)] {
            skel_ok += 1;
        }
    }
    assert!(skel_ok >= 19, "skeleton recovered in {skel_ok}/20");
    assert!(score_ok >= 19, "optimum reached in {score_ok}/20");
}

#[test]
fn independent_columns_give_empty_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cols: Vec<Vec<bool>> = (0..3)
        .map(|_| (0..10_000).map(|_| rng.gen::<f64>() < 0.3).collect())
        .collect();
    let data = OccurrenceTable::from_columns(&cols);
    let out =
        greedy_equivalence_search(&data, EntityKind::Disease, SearchConfig::default()).unwrap();
    assert!(out.graph.edges().is_empty());
    let best = all_dags3()
        .iter()
        .map(|d| naive_total(&cols, d))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((naive_total(&cols, &[]) - best).abs() < 1e-9);
}

#[test]
fn search_trace_is_monotone_and_beats_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Six variables with a collider and a chain.
    let n = 4000;
    let mut cols = vec![Vec::with_capacity(n); 6];
    for _ in 0..n {
        let a = rng.gen::<f64>() < 0.5;
        let b = rng.gen::<f64>() < 0.4;
        let c = flip(&mut rng, a || b, 0.85, 0.1);
        let d = flip(&mut rng, c, 0.7, 0.2);
        let e = rng.gen::<f64>() < 0.3;
        let f = flip(&mut rng, e, 0.9, 0.05);
        for (i, v) in [a, b, c, d, e, f].into_iter().enumerate() {
            cols[i].push(v);
        }
    }
    let data = OccurrenceTable::from_columns(&cols);
    let out =
        greedy_equivalence_search(&data, EntityKind::Disease, SearchConfig::default()).unwrap();
    for w in out.trace.windows(2) {
        assert!(w[1] > w[0]);
    }
    let empty: f64 = (0..6).map(|v| naive_local(&cols, v, &[])).sum();
    assert!(out.score >= empty);
    assert!(out.graph.is_acyclic());
    // Collider orientation is identifiable.
    assert!(out.graph.has_edge(0, 2) && out.graph.has_edge(1, 2));
}

#[test]
fn confounded_pair_gets_smaller_effect() {
    // d1 -> d2; m1 is prescribed for d1 only.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 6000;
    let (mut d1, mut d2, mut m1) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let a = rng.gen::<f64>() < 0.3;
        let b = flip(&mut rng, a, 0.8, 0.1);
        let m = flip(&mut rng, a, 0.9, 0.02);
        d1.push(a);
        d2.push(b);
        m1.push(m);
    }
    let dt = OccurrenceTable::from_columns(&[d1, d2]);
    let pt = OccurrenceTable::from_columns(&[vec![false; n]]);
    let mt = OccurrenceTable::from_columns(&[m1]);
    let g = greedy_equivalence_search(&dt, EntityKind::Disease, SearchConfig::default())
        .unwrap()
        .graph;
    let gp = CausalGraph::empty(EntityKind::Procedure);
    let (dm, _) = estimate_causal_effects(&g, &gp, &dt, &pt, &mt, EffectConfig::default()).unwrap();
    assert!(
        dm.get(1, 0) < dm.get(0, 0),
        "{} vs {}",
        dm.get(1, 0),
        dm.get(0, 0)
    );
    assert!(dm.get(0, 0) > 0.85);
}

#[test]
fn planted_effects_and_strata_on_synthetic_corpus() {
    let ds = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let a = mine(&ds.records, &ds.vocabs, &MiningConfig::default()).unwrap();
    let top = a.strata.n_layers;
    for p in ds.truth.effect_pairs.iter().filter(|p| p.rho >= 0.95) {
        let e = a.effects(p.source_kind).get(p.source, p.medication);
        assert!(e >= 0.90, "{p:?} -> {e}");
        assert_eq!(
            a.strata.layer_of(p.source_kind, p.source, p.medication),
            Some(top)
        );
    }
    // Effects are bounded and vanish for pairs that never co-occur.
    let dt =
        OccurrenceTable::from_records(&ds.records, EntityKind::Disease, ds.vocabs.diseases.len());
    let mt = OccurrenceTable::from_records(
        &ds.records,
        EntityKind::Medication,
        ds.vocabs.medications.len(),
    );
    for d in 0..dt.n_vars() {
        for m in 0..mt.n_vars() {
            let e = a.disease_effects.get(d, m);
            assert!((0.0..=1.0).contains(&e));
            let co: usize = dt
                .column(d)
                .iter()
                .zip(mt.column(m))
                .map(|(x, y)| (x & y).count_ones() as usize)
                .sum();
            if co == 0 {
                assert_eq!(e, 0.0);
            }
        }
    }
    let sizes = &a.strata.sizes;
    for w in sizes.windows(2) {
        assert!(w[0] >= w[1]);
    }
    assert_eq!(sizes.iter().sum::<usize>(), a.strata.pairs.len());
}

#[test]
fn artifacts_round_trip_through_files() {
    let spec = SyntheticSpec {
        n_patients: 400,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let a = mine(&ds.records, &ds.vocabs, &MiningConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let v = &ds.vocabs;
    let gpath = dir.path().join("disease.graph");
    save_graph(&gpath, &a.disease_graph, &v.diseases).unwrap();
    assert_eq!(load_graph(&gpath, &v.diseases).unwrap(), a.disease_graph);
    assert!(load_graph(&gpath, &v.procedures).is_err());

    let epath = dir.path().join("effects_dm.csv");
    save_effects(&epath, &a.disease_effects, &v.diseases, &v.medications).unwrap();
    assert_eq!(load_effects_sidecar(&epath).unwrap(), a.disease_effects);
    let from_csv = load_effects_csv(&epath, &v.diseases, &v.medications).unwrap();
    assert_eq!(from_csv.values, a.disease_effects.values);

    let spath = dir.path().join("strata.csv");
    save_strata(
        &spath,
        &a.strata,
        &v.diseases,
        &v.procedures,
        &v.medications,
    )
    .unwrap();
    let back = load_strata(
        &spath,
        5,
        1.0 / 3.0,
        &v.diseases,
        &v.procedures,
        &v.medications,
    )
    .unwrap();
    assert_eq!(back, a.strata);

    // Determinism of the whole stage.
    let b = mine(&ds.records, &ds.vocabs, &MiningConfig::default()).unwrap();
    assert_eq!(b.strata, a.strata);
    assert_eq!(b.medication_graph, a.medication_graph);
}
