//! Stage functions and run-directory layout shared by the front ends.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use crate::config::RunConfig;
use crate::ehr::io::{save_ddi, save_molecule_map, save_records, save_vocabularies};
use crate::ehr::{
    bootstrap_rounds, generate_synthetic, load_ddi, load_molecule_map, load_records, split_dataset,
    DdiMatrix, MoleculeMap, PatientRecord, RecordFilter, SyntheticDataset, SyntheticGroundTruth,
    Vocabularies,
};
use crate::error::{Error, Result};
use crate::mining::io::{
    load_effects_sidecar, load_graph, load_strata, save_effects, save_graph, save_strata,
};
use crate::mining::{mine, MiningArtifacts};
use crate::model::checkpoint::Checkpoint;
use crate::model::{Model, ModelContext};
use crate::train::{
    evaluate_bootstrap, evaluate_patients, train, AuditRow, Correction, FrequencyBaseline, LogRow,
    MetricReport, PatientMetrics, TrainOutcome,
};

/// Records plus the side tables they are encoded against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    pub vocabs: Vocabularies,
    pub ddi: DdiMatrix,
    pub molecules: MoleculeMap,
}

impl From<SyntheticDataset> for Dataset {
    fn from(s: SyntheticDataset) -> Self {
        Dataset {
            records: s.records,
            vocabs: s.vocabs,
            ddi: s.ddi,
            molecules: s.molecules,
        }
    }
}

/// File locations inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
    pub data: PathBuf,
}

impl RunPaths {
    /// `<out>/<run id>`, with data under `data/` unless the config names a
    /// dataset directory.
    pub fn new(out: &Path, cfg: &RunConfig) -> Self {
        let root = out.join(cfg.run_id());
        let data = if cfg.data_dir.is_empty() {
            root.join("data")
        } else {
            PathBuf::from(&cfg.data_dir)
        };
        RunPaths { root, data }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }
    pub fn records(&self) -> PathBuf {
        self.data.join("records.jsonl")
    }
    pub fn vocab(&self) -> PathBuf {
        self.data.join("vocab.json")
    }
    pub fn ddi(&self) -> PathBuf {
        self.data.join("ddi.csv")
    }
    pub fn molecules(&self) -> PathBuf {
        self.data.join("molecules.csv")
    }
    pub fn truth(&self) -> PathBuf {
        self.data.join("truth.json")
    }
    pub fn mining(&self) -> PathBuf {
        self.root.join("mining")
    }
    pub fn graph(&self, kind: &str) -> PathBuf {
        self.mining().join(format!("graph_{kind}.txt"))
    }
    pub fn effects_dm(&self) -> PathBuf {
        self.mining().join("effects_dm.csv")
    }
    pub fn effects_pm(&self) -> PathBuf {
        self.mining().join("effects_pm.csv")
    }
    pub fn strata(&self) -> PathBuf {
        self.mining().join("strata.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model").join("checkpoint.json")
    }
    pub fn run_log(&self) -> PathBuf {
        self.root.join("model").join("run_log.jsonl")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(format!(
            "{} not found; run `{stage}` first",
            path.display()
        )))
    }
}

pub fn generate(cfg: &RunConfig) -> Result<SyntheticDataset> {
    cfg.synthetic.validate()?;
    generate_synthetic(&cfg.synthetic)
}

/// Writes records, vocabularies, DDI pairs, the molecule map and, when
/// given, the planted ground truth.
pub fn write_dataset(
    paths: &RunPaths,
    ds: &Dataset,
    truth: Option<&SyntheticGroundTruth>,
) -> Result<()> {
    ensure_dir(&paths.data)?;
    save_records(&paths.records(), &ds.records, &ds.vocabs)?;
    save_vocabularies(&paths.vocab(), &ds.vocabs)?;
    save_ddi(&paths.ddi(), &ds.ddi, &ds.vocabs.medications)?;
    save_molecule_map(
        &paths.molecules(),
        &ds.molecules,
        &ds.vocabs.medications,
        &ds.vocabs.molecules,
    )?;
    if let Some(t) = truth {
        let p = paths.truth();
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), t)?;
    }
    Ok(())
}

pub fn read_dataset(paths: &RunPaths, strict: bool) -> Result<Dataset> {
    require(&paths.records(), "generate")?;
    require(&paths.vocab(), "generate")?;
    let fixed = crate::ehr::io::load_vocabularies(&paths.vocab())?;
    let (records, mut vocabs, _) =
        load_records(&paths.records(), Some(&fixed), RecordFilter::default())?;
    let ddi = if paths.ddi().exists() {
        load_ddi(&paths.ddi(), &vocabs.medications, strict)?.0
    } else {
        DdiMatrix::zeros(vocabs.medications.len())
    };
    let (molecules, mols, _) = if paths.molecules().exists() {
        load_molecule_map(&paths.molecules(), &vocabs.medications, strict)?
    } else {
        let membership = (0..vocabs.medications.len()).map(|m| vec![m]).collect();
        let mut v = crate::ehr::Vocabulary::new(crate::ehr::EntityKind::Molecule);
        for m in 0..vocabs.medications.len() {
            v.intern(&format!(
                "{}{}",
                crate::ehr::io::SYNTHETIC_MOLECULE_PREFIX,
                vocabs.medications.code(m)?
            ));
        }
        let n = v.len();
        (MoleculeMap::new(membership, n)?, v, Default::default())
    };
    vocabs.molecules = mols;
    Ok(Dataset {
        records,
        vocabs,
        ddi,
        molecules,
    })
}

pub type Splits = (Vec<PatientRecord>, Vec<PatientRecord>, Vec<PatientRecord>);

/// Patient-level split from the run seed.
pub fn split(cfg: &RunConfig, ds: &Dataset) -> Result<Splits> {
    split_dataset(&ds.records, cfg.split, cfg.seed)
}

pub fn mine_training(
    cfg: &RunConfig,
    ds: &Dataset,
    train: &[PatientRecord],
) -> Result<MiningArtifacts> {
    mine(train, &ds.vocabs, &cfg.mining)
}

pub fn write_mining(paths: &RunPaths, art: &MiningArtifacts, vocabs: &Vocabularies) -> Result<()> {
    ensure_dir(&paths.mining())?;
    save_graph(
        &paths.graph("disease"),
        &art.disease_graph,
        &vocabs.diseases,
    )?;
    save_graph(
        &paths.graph("procedure"),
        &art.procedure_graph,
        &vocabs.procedures,
    )?;
    save_graph(
        &paths.graph("medication"),
        &art.medication_graph,
        &vocabs.medications,
    )?;
    save_effects(
        &paths.effects_dm(),
        &art.disease_effects,
        &vocabs.diseases,
        &vocabs.medications,
    )?;
    save_effects(
        &paths.effects_pm(),
        &art.procedure_effects,
        &vocabs.procedures,
        &vocabs.medications,
    )?;
    save_strata(
        &paths.strata(),
        &art.strata,
        &vocabs.diseases,
        &vocabs.procedures,
        &vocabs.medications,
    )
}

pub fn read_mining(
    paths: &RunPaths,
    cfg: &RunConfig,
    vocabs: &Vocabularies,
) -> Result<MiningArtifacts> {
    for p in [
        paths.graph("disease"),
        paths.graph("procedure"),
        paths.graph("medication"),
        paths.effects_dm(),
        paths.effects_pm(),
        paths.strata(),
    ] {
        require(&p, "mine")?;
    }
    Ok(MiningArtifacts {
        disease_graph: load_graph(&paths.graph("disease"), &vocabs.diseases)?,
        procedure_graph: load_graph(&paths.graph("procedure"), &vocabs.procedures)?,
        medication_graph: load_graph(&paths.graph("medication"), &vocabs.medications)?,
        disease_effects: load_effects_sidecar(&paths.effects_dm())?,
        procedure_effects: load_effects_sidecar(&paths.effects_pm())?,
        strata: load_strata(
            &paths.strata(),
            cfg.mining.n_layers,
            cfg.mining.gradient,
            &vocabs.diseases,
            &vocabs.procedures,
            &vocabs.medications,
        )?,
    })
}

/// Model structure for the configured ablation: mined strata, or
/// co-occurrence edges under `wo_c`.
pub fn model_context(
    cfg: &RunConfig,
    ds: &Dataset,
    train: &[PatientRecord],
    art: Option<&MiningArtifacts>,
) -> Result<ModelContext> {
    let nd = ds.vocabs.diseases.len();
    let np = ds.vocabs.procedures.len();
    if cfg.model.wo_c {
        return Ok(ModelContext::from_cooccurrence(
            train,
            nd,
            np,
            ds.molecules.clone(),
            cfg.mining.min_support,
        ));
    }
    let art = art.ok_or_else(|| {
        Error::MissingArtifact("mining artifacts are required unless wo_c is set".into())
    })?;
    Ok(ModelContext::from_mining(art, nd, np, ds.molecules.clone()))
}

pub fn build_model(
    cfg: &RunConfig,
    ds: &Dataset,
    train: &[PatientRecord],
    art: Option<&MiningArtifacts>,
) -> Result<Model> {
    Model::new(
        cfg.model.clone(),
        model_context(cfg, ds, train, art)?,
        cfg.seed,
    )
}

/// Correction inputs, or `None` under `wo_bc`.
pub fn correction<'a>(
    cfg: &'a RunConfig,
    art: Option<&'a MiningArtifacts>,
) -> Result<Option<Correction<'a>>> {
    if cfg.wo_bc {
        return Ok(None);
    }
    let art = art.ok_or_else(|| {
        Error::MissingArtifact("effect matrices are required unless wo_bc is set".into())
    })?;
    Ok(Some(Correction {
        dm: &art.disease_effects,
        pm: &art.procedure_effects,
        config: &cfg.correction,
    }))
}

/// Trains with the run settings, collecting the log rows.
pub fn train_model(
    cfg: &RunConfig,
    model: &mut Model,
    ds: &Dataset,
    splits: &Splits,
    art: Option<&MiningArtifacts>,
    log: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<TrainOutcome> {
    let corr = if cfg.wo_bc {
        None
    } else {
        correction(cfg, art).ok().flatten()
    };
    if cfg.train.correct_in_loss && corr.is_none() {
        return Err(Error::Config(
            "train.correct_in_loss needs effect matrices and wo_bc unset".into(),
        ));
    }
    let t0 = std::time::Instant::now();
    let out = train(
        model,
        &splits.0,
        &splits.1,
        &ds.ddi,
        &cfg.train_config(),
        corr.as_ref(),
        log,
    )?;
    info!(
        "trained {} epochs in {:.1?}, best epoch {}",
        out.epoch_losses.len(),
        t0.elapsed(),
        out.best_epoch
    );
    Ok(out)
}

/// Restores a trained model, refusing a checkpoint from another configuration.
pub fn load_model(
    cfg: &RunConfig,
    checkpoint: &Path,
    ds: &Dataset,
    train: &[PatientRecord],
    art: Option<&MiningArtifacts>,
) -> Result<Model> {
    let ckpt = Checkpoint::load(checkpoint, Some(&cfg.fingerprint()))?;
    ckpt.into_model(model_context(cfg, ds, train, art)?)
}

/// Audit rows as CSV with vocabulary codes.
pub fn write_audit(path: &Path, rows: &[AuditRow], vocabs: &Vocabularies) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "patient_id",
        "visit",
        "medication",
        "raw",
        "effect",
        "branch",
        "corrected",
        "selected",
        "prescribed",
    ])?;
    for r in rows {
        w.write_record([
            r.patient_id.clone(),
            r.visit.to_string(),
            vocabs.medications.code(r.medication)?.to_string(),
            format!("{:.6}", r.raw),
            format!("{:.6}", r.effect),
            r.branch.as_str().to_string(),
            format!("{:.6}", r.corrected),
            r.selected.to_string(),
            r.prescribed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Bootstrap report over `test` plus the cached per-patient metrics.
pub fn evaluate(
    cfg: &RunConfig,
    model: &Model,
    test: &[PatientRecord],
    ddi: &DdiMatrix,
    art: Option<&MiningArtifacts>,
) -> Result<(MetricReport, Vec<PatientMetrics>)> {
    let corr = correction(cfg, art)?;
    let per = evaluate_patients(
        model,
        test,
        ddi,
        corr.as_ref(),
        cfg.correction.selection_threshold,
    )?;
    let rounds = bootstrap_rounds(test.len(), cfg.bootstrap, cfg.seed)?;
    Ok((evaluate_bootstrap(&per, &rounds)?, per))
}

/// Bootstrap report of the frequency baseline on the same rounds.
pub fn evaluate_baseline(cfg: &RunConfig, ds: &Dataset, splits: &Splits) -> Result<MetricReport> {
    let base = FrequencyBaseline::fit(&splits.0, ds.vocabs.medications.len());
    let per = base.evaluate(&splits.2, &ds.ddi);
    let rounds = bootstrap_rounds(splits.2.len(), cfg.bootstrap, cfg.seed)?;
    evaluate_bootstrap(&per, &rounds)
}

/// Everything produced by an in-memory end-to-end run.
#[derive(Debug)]
pub struct Experiment {
    pub artifacts: Option<MiningArtifacts>,
    pub model: Model,
    pub outcome: TrainOutcome,
    pub report: MetricReport,
    pub per_patient: Vec<PatientMetrics>,
    pub baseline: MetricReport,
    pub splits: Splits,
}

/// split → mine → train → evaluate, entirely in memory.
pub fn run_experiment(
    cfg: &RunConfig,
    ds: &Dataset,
    log: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<Experiment> {
    cfg.validate()?;
    let splits = split(cfg, ds)?;
    let needs_mining = !cfg.model.wo_c || !cfg.wo_bc;
    let artifacts = if needs_mining {
        Some(mine_training(cfg, ds, &splits.0)?)
    } else {
        None
    };
    let mut model = build_model(cfg, ds, &splits.0, artifacts.as_ref())?;
    let outcome = train_model(cfg, &mut model, ds, &splits, artifacts.as_ref(), log)?;
    let (report, per_patient) = evaluate(cfg, &model, &splits.2, &ds.ddi, artifacts.as_ref())?;
    let baseline = evaluate_baseline(cfg, ds, &splits)?;
    Ok(Experiment {
        artifacts,
        model,
        outcome,
        report,
        per_patient,
        baseline,
        splits,
    })
}

/// Appends log rows as JSON lines.
pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            ensure_dir(dir)?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        serde_json::to_writer(&mut self.out, row)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
