//! Clinical record model, dataset I/O, synthetic generation and splitting.

pub mod io;
pub mod record;
pub mod split;
pub mod synthetic;
pub mod vocab;

pub use io::{load_ddi, load_molecule_map, load_records, LoadReport, RecordFilter};
pub use record::{DdiMatrix, MoleculeMap, MultiHotVector, PatientRecord, Visit};
pub use split::{
    bootstrap_rounds, split_dataset, split_indices, BootstrapConfig, SplitIndices, SplitRatios,
};
pub use synthetic::{
    generate_synthetic, PlantedPair, SyntheticDataset, SyntheticGroundTruth, SyntheticSpec,
};
pub use vocab::{EntityKind, Vocabularies, Vocabulary};

/// Encodes an index set as a multi-hot vector over `vocab`.
pub fn encode_multi_hot(codes: &[usize], vocab: &Vocabulary) -> crate::Result<MultiHotVector> {
    MultiHotVector::encode(codes, vocab.len())
}
