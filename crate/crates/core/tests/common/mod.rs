#![allow(dead_code)]

use medrec_core::config::RunConfig;
use medrec_core::ehr::SyntheticSpec;
use medrec_core::mining::{mine, MiningArtifacts, MiningConfig};
use medrec_core::model::{Model, ModelConfig, ModelContext};
use medrec_core::pipeline::Dataset;
use medrec_core::train::TrainConfig;

pub fn small_spec(n_patients: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_patients,
        seed,
        ..SyntheticSpec::default()
    }
}

pub fn dataset(n_patients: usize, seed: u64) -> Dataset {
    medrec_core::ehr::generate_synthetic(&small_spec(n_patients, seed))
        .unwrap()
        .into()
}

pub fn mined(ds: &Dataset) -> MiningArtifacts {
    mine(&ds.records, &ds.vocabs, &MiningConfig::default()).unwrap()
}

pub fn model(ds: &Dataset, art: &MiningArtifacts, cfg: ModelConfig, seed: u64) -> Model {
    let ctx = ModelContext::from_mining(
        art,
        ds.vocabs.diseases.len(),
        ds.vocabs.procedures.len(),
        ds.molecules.clone(),
    );
    Model::new(cfg, ctx, seed).unwrap()
}

pub fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    }
}

/// Default run settings with the given seed.
pub fn run_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        ..RunConfig::default()
    }
}
