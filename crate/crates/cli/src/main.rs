//! `medrec` command-line harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use medrec_core::config::RunConfig;
use medrec_core::model::checkpoint::Checkpoint;
use medrec_core::pipeline::{self, write_text, Dataset, LogWriter, RunPaths};
use medrec_core::train::{audit_patient, Correction, MetricReport, REPORT_COLUMNS};
use medrec_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "medrec",
    version,
    about = "Causal medication recommendation pipeline"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; each run lives in `<out>/<run id>`.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Treat unknown codes in input files as errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus and its planted ground truth.
    Generate,
    /// Mine causal graphs, effect matrices and strata on the training split.
    Mine,
    /// Train the model and write the best checkpoint.
    Train,
    /// Bootstrap evaluation of a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-medication correction audit for one patient.
    Explain {
        patient_id: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the five ablation variants and tabulate them.
    Ablate,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.apply_overrides(&g.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Stamps the resolved configuration into the run directory.
fn stamp(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let text = format!("# fingerprint {}\n{}", cfg.fingerprint(), cfg.to_text());
    write_text(&paths.config(), &text)
}

fn cmd_generate(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let syn = pipeline::generate(cfg)?;
    let truth = syn.truth.clone();
    let ds: Dataset = syn.into();
    pipeline::write_dataset(paths, &ds, Some(&truth))?;
    stamp(cfg, paths)?;
    println!(
        "generated {} patients, {} visits, {} DDI pairs into {}",
        ds.records.len(),
        ds.records.iter().map(|r| r.visits.len()).sum::<usize>(),
        ds.ddi.num_pairs(),
        paths.data.display()
    );
    Ok(())
}

/// Generates the corpus when a synthetic run has none yet.
fn ensure_data(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    if !paths.records().exists() && cfg.data_dir.is_empty() {
        cmd_generate(cfg, paths)?;
    }
    Ok(())
}

fn cmd_mine(cfg: &RunConfig, paths: &RunPaths, strict: bool) -> Result<()> {
    let ds = pipeline::read_dataset(paths, strict)?;
    let splits = pipeline::split(cfg, &ds)?;
    let t0 = std::time::Instant::now();
    let art = pipeline::mine_training(cfg, &ds, &splits.0)?;
    pipeline::write_mining(paths, &art, &ds.vocabs)?;
    stamp(cfg, paths)?;
    println!(
        "mined {} disease, {} procedure, {} medication edges; {} + {} non-zero effects; \
         strata sizes {:?}; {:.1?}",
        art.disease_graph.edges().len(),
        art.procedure_graph.edges().len(),
        art.medication_graph.edges().len(),
        art.disease_effects.nonzero().len(),
        art.procedure_effects.nonzero().len(),
        art.strata.sizes,
        t0.elapsed()
    );
    Ok(())
}

/// Mining artifacts when the configuration needs them.
fn artifacts_for(
    cfg: &RunConfig,
    paths: &RunPaths,
    ds: &Dataset,
    needed: bool,
) -> Result<Option<medrec_core::mining::MiningArtifacts>> {
    if needed {
        pipeline::read_mining(paths, cfg, &ds.vocabs).map(Some)
    } else {
        Ok(None)
    }
}

fn cmd_train(cfg: &RunConfig, paths: &RunPaths, strict: bool) -> Result<()> {
    let ds = pipeline::read_dataset(paths, strict)?;
    let splits = pipeline::split(cfg, &ds)?;
    let needs = !cfg.model.wo_c || cfg.train.correct_in_loss;
    let art = artifacts_for(cfg, paths, &ds, needs)?;
    let mut model = pipeline::build_model(cfg, &ds, &splits.0, art.as_ref())?;
    let mut log = LogWriter::create(&paths.run_log())?;
    let out = pipeline::train_model(cfg, &mut model, &ds, &splits, art.as_ref(), &mut |row| {
        log.write(row)
    })?;
    log.finish()?;
    Checkpoint::from_model(&model, &cfg.fingerprint(), out.best_epoch).save(&paths.checkpoint())?;
    stamp(cfg, paths)?;
    println!(
        "trained {} epochs; best epoch {} (val Jaccard {}); checkpoint {}",
        out.epoch_losses.len(),
        out.best_epoch,
        out.best_val_jaccard
            .map_or("n/a".to_string(), |j| format!("{j:.4}")),
        paths.checkpoint().display()
    );
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    paths: &RunPaths,
    strict: bool,
    checkpoint: Option<&Path>,
) -> Result<MetricReport> {
    let ds = pipeline::read_dataset(paths, strict)?;
    let splits = pipeline::split(cfg, &ds)?;
    let art = artifacts_for(cfg, paths, &ds, !cfg.model.wo_c || !cfg.wo_bc)?;
    let ckpt = checkpoint.map_or_else(|| paths.checkpoint(), Path::to_path_buf);
    let model = pipeline::load_model(cfg, &ckpt, &ds, &splits.0, art.as_ref())?;
    let (report, _) = pipeline::evaluate(cfg, &model, &splits.2, &ds.ddi, art.as_ref())?;
    let baseline = pipeline::evaluate_baseline(cfg, &ds, &splits)?;
    let dir = paths.eval();
    pipeline::ensure_dir(&dir)?;
    report.write_csv(&dir.join("report.csv"))?;
    baseline.write_csv(&dir.join("baseline.csv"))?;
    if let Some(corr) = pipeline::correction(cfg, art.as_ref())? {
        let mut rows = Vec::new();
        for r in &splits.2 {
            rows.extend(audit_patient(&model, r, &corr)?);
        }
        pipeline::write_audit(&dir.join("audit.csv"), &rows, &ds.vocabs)?;
    }
    stamp(cfg, paths)?;
    println!("{}", summary_line("model", &report));
    println!("{}", summary_line("baseline", &baseline));
    Ok(report)
}

fn summary_line(name: &str, r: &MetricReport) -> String {
    let cells: Vec<String> = REPORT_COLUMNS
        .iter()
        .zip(r.mean.columns().iter().zip(r.stderr.columns()))
        .map(|(c, (m, s))| format!("{c} {m:.4}±{s:.4}"))
        .collect();
    format!("{name}: {}", cells.join(", "))
}

fn cmd_explain(
    cfg: &RunConfig,
    paths: &RunPaths,
    strict: bool,
    checkpoint: Option<&Path>,
    patient_id: &str,
) -> Result<()> {
    let ds = pipeline::read_dataset(paths, strict)?;
    let record = ds
        .records
        .iter()
        .find(|r| r.patient_id == patient_id)
        .ok_or_else(|| Error::Config(format!("unknown patient `{patient_id}`")))?;
    let splits = pipeline::split(cfg, &ds)?;
    let art = pipeline::read_mining(paths, cfg, &ds.vocabs)?;
    let ckpt = checkpoint.map_or_else(|| paths.checkpoint(), Path::to_path_buf);
    let model = pipeline::load_model(cfg, &ckpt, &ds, &splits.0, Some(&art))?;
    let corr = Correction {
        dm: &art.disease_effects,
        pm: &art.procedure_effects,
        config: &cfg.correction,
    };
    let rows = audit_patient(&model, record, &corr)?;
    println!(
        "{:>5}  {:<12} {:>8} {:>8}  {:<9} {:>9}  {:<8} {:<10}",
        "visit", "medication", "raw", "effect", "branch", "corrected", "selected", "prescribed"
    );
    for r in &rows {
        println!(
            "{:>5}  {:<12} {:>8.4} {:>8.4}  {:<9} {:>9.4}  {:<8} {:<10}",
            r.visit,
            ds.vocabs.medications.code(r.medication)?,
            r.raw,
            r.effect,
            r.branch.as_str(),
            r.corrected,
            r.selected,
            r.prescribed
        );
    }
    let path = paths.eval().join(format!("explain_{patient_id}.csv"));
    pipeline::write_audit(&path, &rows, &ds.vocabs)?;
    Ok(())
}

/// The five ablation variants as `(name, wo_c, wo_f, wo_bc)`.
const VARIANTS: [(&str, bool, bool, bool); 5] = [
    ("full", false, false, false),
    ("wo_C", true, false, false),
    ("wo_F", false, true, false),
    ("wo_BC", false, false, true),
    ("wo_C+F+BC", true, true, true),
];

fn cmd_ablate(base: &RunConfig, out: &Path, strict: bool) -> Result<()> {
    let mut table = format!("variant,run_id,{}\n", REPORT_COLUMNS.join(","));
    for (name, wo_c, wo_f, wo_bc) in VARIANTS {
        let mut cfg = base.clone();
        cfg.model.wo_c = wo_c;
        cfg.model.wo_f = wo_f;
        cfg.wo_bc = wo_bc;
        cfg.validate()?;
        let paths = RunPaths::new(out, &cfg);
        info!("ablation variant {name} in {}", paths.root.display());
        ensure_data(&cfg, &paths)?;
        let needs_mining = !wo_c || !wo_bc;
        if needs_mining && !paths.strata().exists() {
            cmd_mine(&cfg, &paths, strict)?;
        }
        let trained = Checkpoint::load(&paths.checkpoint(), Some(&cfg.fingerprint())).is_ok();
        if !trained {
            cmd_train(&cfg, &paths, strict)?;
        }
        let report = evaluate_variant(&cfg, &paths, strict)?;
        let report_path = RunPaths::new(out, base)
            .root
            .join("ablation")
            .join(format!("{name}.csv"));
        write_text(&report_path, &report.to_csv())?;
        let cells: Vec<String> = report
            .mean
            .columns()
            .iter()
            .zip(report.stderr.columns())
            .map(|(m, s)| format!("{m:.4}±{s:.4}"))
            .collect();
        table.push_str(&format!("{name},{},{}\n", cfg.run_id(), cells.join(",")));
        println!("{}", summary_line(name, &report));
    }
    let path = RunPaths::new(out, base).root.join("ablation.csv");
    write_text(&path, &table)?;
    println!("ablation table written to {}", path.display());
    Ok(())
}

/// Evaluation without touching the variant's `eval/` directory, which
/// `wo_BC` shares with the full model.
fn evaluate_variant(cfg: &RunConfig, paths: &RunPaths, strict: bool) -> Result<MetricReport> {
    let ds = pipeline::read_dataset(paths, strict)?;
    let splits = pipeline::split(cfg, &ds)?;
    let art = artifacts_for(cfg, paths, &ds, !cfg.model.wo_c || !cfg.wo_bc)?;
    let model = pipeline::load_model(cfg, &paths.checkpoint(), &ds, &splits.0, art.as_ref())?;
    Ok(pipeline::evaluate(cfg, &model, &splits.2, &ds.ddi, art.as_ref())?.0)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let paths = RunPaths::new(&cli.global.out, &cfg);
    let strict = cli.global.strict;
    info!("run {} under {}", cfg.run_id(), paths.root.display());
    match cli.command {
        Command::Generate => cmd_generate(&cfg, &paths),
        Command::Mine => cmd_mine(&cfg, &paths, strict),
        Command::Train => cmd_train(&cfg, &paths, strict),
        Command::Evaluate { checkpoint } => {
            cmd_evaluate(&cfg, &paths, strict, checkpoint.as_deref()).map(|_| ())
        }
        Command::Explain {
            patient_id,
            checkpoint,
        } => cmd_explain(&cfg, &paths, strict, checkpoint.as_deref(), &patient_id),
        Command::Ablate => cmd_ablate(&cfg, &cli.global.out, strict),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingArtifact(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::MissingArtifact("x".into())), 3);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 4);
        assert_eq!(exit_code(&Error::Empty("x".into())), 1);
    }

    #[test]
    fn command_line_overrides_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "seed = 3\ntrain.epochs = 4\n").unwrap();
        let parse = |extra: &[&str]| {
            let mut args = vec!["medrec", "--config", path.to_str().unwrap()];
            args.extend_from_slice(extra);
            args.push("generate");
            load_config(&Cli::parse_from(args).global).unwrap()
        };
        let cfg = parse(&[]);
        assert_eq!((cfg.seed, cfg.train.epochs), (3, 4));
        assert_eq!(parse(&["--seed", "5"]).seed, 5);
        let cfg = parse(&["--seed", "5", "--set", "seed=7", "--set", "train.epochs=2"]);
        assert_eq!((cfg.seed, cfg.train.epochs), (7, 2));
    }
}
