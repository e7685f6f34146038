//! Readers and writers for the on-disk dataset formats.
//!
//! * records: JSON lines, one patient per line:
//!   `{"patient_id": "p1", "visits": [{"diseases": [..], "procedures": [..], "medications": [..]}]}`
//! * DDI: two-column CSV (`med_a,med_b`) of medication codes.
//! * molecule map: two-column CSV (`medication,molecule`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::record::{DdiMatrix, MoleculeMap, PatientRecord, Visit};
use super::vocab::{EntityKind, Vocabularies, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct VisitLine {
    diseases: Vec<String>,
    procedures: Vec<String>,
    medications: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PatientLine {
    patient_id: String,
    visits: Vec<VisitLine>,
}

/// Patient-level retention thresholds applied after visit filtering.
#[derive(Debug, Clone, Copy)]
pub struct RecordFilter {
    pub min_visits: usize,
}

impl Default for RecordFilter {
    fn default() -> Self {
        RecordFilter { min_visits: 1 }
    }
}

/// Counters describing what a loader skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_visits: usize,
    pub dropped_patients: usize,
    pub skipped_unknown: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Loads patient records.  When `fixed` is given, every code must already be
/// known; otherwise disease/procedure/medication vocabularies are built in
/// order of first appearance over retained visits.
pub fn load_records(
    path: &Path,
    fixed: Option<&Vocabularies>,
    filter: RecordFilter,
) -> Result<(Vec<PatientRecord>, Vocabularies, LoadReport)> {
    let reader = open(path)?;
    let mut parsed = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PatientLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        parsed.push(p);
    }

    let mut vocabs = fixed.cloned().unwrap_or_default();
    let mut report = LoadReport::default();
    let mut records = Vec::with_capacity(parsed.len());
    for p in parsed {
        let mut visits = Vec::with_capacity(p.visits.len());
        for v in p.visits {
            if v.diseases.is_empty() || v.procedures.is_empty() || v.medications.is_empty() {
                report.dropped_visits += 1;
                continue;
            }
            let mut resolve = |kind: EntityKind, codes: &[String]| -> Result<Vec<usize>> {
                let vocab = vocabs.get_mut(kind);
                codes
                    .iter()
                    .map(|c| {
                        if fixed.is_some() {
                            vocab.lookup(c)
                        } else {
                            Ok(vocab.intern(c))
                        }
                    })
                    .collect()
            };
            let d = resolve(EntityKind::Disease, &v.diseases)?;
            let pr = resolve(EntityKind::Procedure, &v.procedures)?;
            let m = resolve(EntityKind::Medication, &v.medications)?;
            visits.push(Visit::new(d, pr, m));
        }
        if visits.is_empty() || visits.len() < filter.min_visits {
            report.dropped_patients += 1;
            continue;
        }
        records.push(PatientRecord {
            patient_id: p.patient_id,
            visits,
        });
    }
    Ok((records, vocabs, report))
}

pub fn save_records(path: &Path, records: &[PatientRecord], vocabs: &Vocabularies) -> Result<()> {
    let mut w = create(path)?;
    let codes = |vocab: &Vocabulary, idx: &[usize]| -> Result<Vec<String>> {
        idx.iter()
            .map(|&i| vocab.code(i).map(str::to_string))
            .collect()
    };
    for r in records {
        let line = PatientLine {
            patient_id: r.patient_id.clone(),
            visits: r
                .visits
                .iter()
                .map(|v| {
                    Ok(VisitLine {
                        diseases: codes(&vocabs.diseases, &v.diseases)?,
                        procedures: codes(&vocabs.procedures, &v.procedures)?,
                        medications: codes(&vocabs.medications, &v.medications)?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_vocabularies(path: &Path, vocabs: &Vocabularies) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, vocabs)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_vocabularies(path: &Path) -> Result<Vocabularies> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn unknown(kind: &'static str, code: &str, strict: bool, report: &mut LoadReport) -> Result<()> {
    if strict {
        return Err(Error::UnknownCode {
            kind,
            code: code.to_string(),
        });
    }
    report.skipped_unknown += 1;
    Ok(())
}

/// Loads a DDI edge list.  Unknown medication codes are skipped (or rejected
/// under `strict`); a self-pair is always an error.
pub fn load_ddi(path: &Path, meds: &Vocabulary, strict: bool) -> Result<(DdiMatrix, LoadReport)> {
    let mut rdr = csv_reader(path)?;
    let mut matrix = DdiMatrix::zeros(meds.len());
    let mut report = LoadReport::default();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let (a, b) = match (row.get(0), row.get(1)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    msg: "expected two medication codes".into(),
                })
            }
        };
        if a == b {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("self-interaction `{a}`"),
            });
        }
        match (meds.get(a), meds.get(b)) {
            (Some(x), Some(y)) => matrix.insert(x, y)?,
            (None, _) => unknown("medication", a, strict, &mut report)?,
            (_, None) => unknown("medication", b, strict, &mut report)?,
        }
    }
    if report.skipped_unknown > 0 {
        warn!(
            "{}: skipped {} DDI rows with unknown medication codes",
            path.display(),
            report.skipped_unknown
        );
    }
    Ok((matrix, report))
}

pub fn save_ddi(path: &Path, ddi: &DdiMatrix, meds: &Vocabulary) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["med_a", "med_b"])?;
    for (a, b) in ddi.pairs() {
        w.write_record([meds.code(a)?, meds.code(b)?])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Prefix of the private molecule minted for medications missing from the map.
pub const SYNTHETIC_MOLECULE_PREFIX: &str = "__mol_";

/// Loads the medication → molecule map and the molecule vocabulary.  Any
/// medication not listed receives a private molecule of its own.
pub fn load_molecule_map(
    path: &Path,
    meds: &Vocabulary,
    strict: bool,
) -> Result<(MoleculeMap, Vocabulary, LoadReport)> {
    let mut rdr = csv_reader(path)?;
    let mut mol_vocab = Vocabulary::new(EntityKind::Molecule);
    let mut membership: Vec<Vec<usize>> = vec![Vec::new(); meds.len()];
    let mut report = LoadReport::default();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let (m, s) = match (row.get(0), row.get(1)) {
            (Some(m), Some(s)) if !s.is_empty() => (m, s),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    msg: "expected medication and molecule codes".into(),
                })
            }
        };
        match meds.get(m) {
            Some(mi) => {
                let si = mol_vocab.intern(s);
                membership[mi].push(si);
            }
            None => unknown("medication", m, strict, &mut report)?,
        }
    }
    for (mi, mols) in membership.iter_mut().enumerate() {
        if mols.is_empty() {
            let code = format!("{SYNTHETIC_MOLECULE_PREFIX}{}", meds.code(mi)?);
            mols.push(mol_vocab.intern(&code));
        }
    }
    if report.skipped_unknown > 0 {
        warn!(
            "{}: skipped {} molecule rows with unknown medication codes",
            path.display(),
            report.skipped_unknown
        );
    }
    let map = MoleculeMap::new(membership, mol_vocab.len())?;
    Ok((map, mol_vocab, report))
}

pub fn save_molecule_map(
    path: &Path,
    map: &MoleculeMap,
    meds: &Vocabulary,
    mols: &Vocabulary,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["medication", "molecule"])?;
    for (m, s) in map.rows() {
        w.write_record([meds.code(m)?, mols.code(s)?])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_record_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "r.jsonl",
            r#"{"patient_id":"a","visits":[{"diseases":["d1"],"procedures":["p1"],"medications":["m1"]}]}"#,
        );
        let (recs, vocabs, _) = load_records(&p, None, RecordFilter::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].visits.len(), 1);
        assert_eq!(vocabs.medications.len(), 1);
    }

    #[test]
    fn visit_without_medications_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "r.jsonl",
            r#"{"patient_id":"a","visits":[{"diseases":["d1"],"procedures":["p1"],"medications":[]}]}"#,
        );
        let (recs, _, report) = load_records(&p, None, RecordFilter::default()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.dropped_visits, 1);
        assert_eq!(report.dropped_patients, 1);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"patient_id":"a","visits":[{"diseases":["d1"],"procedures":["p1"],"medications":["m1"]}]}"#;
        let p = write(&dir, "r.jsonl", &format!("{good}\n{{broken\n"));
        match load_records(&p, None, RecordFilter::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_code_with_fixed_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "r.jsonl",
            r#"{"patient_id":"a","visits":[{"diseases":["dX"],"procedures":["p1"],"medications":["m1"]}]}"#,
        );
        let mut v = Vocabularies::default();
        v.diseases.intern("d1");
        v.procedures.intern("p1");
        v.medications.intern("m1");
        assert!(matches!(
            load_records(&p, Some(&v), RecordFilter::default()),
            Err(Error::UnknownCode { .. })
        ));
    }

    fn meds() -> Vocabulary {
        Vocabulary::from_codes(EntityKind::Medication, ["m0", "m1", "m2"]).unwrap()
    }

    #[test]
    fn ddi_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "ddi.csv", "med_a,med_b\nm1,m2\n");
        let (single, _) = load_ddi(&p, &meds(), false).unwrap();
        assert!(single.get(1, 2) && single.get(2, 1));
        assert_eq!(single.num_pairs(), 1);

        let p2 = write(&dir, "ddi2.csv", "med_a,med_b\nm1,m2\nm2,m1\nm1,m2\n");
        assert_eq!(load_ddi(&p2, &meds(), false).unwrap().0, single);

        let empty = write(&dir, "empty.csv", "");
        assert_eq!(load_ddi(&empty, &meds(), false).unwrap().0.num_pairs(), 0);

        let selfp = write(&dir, "self.csv", "med_a,med_b\nm1,m1\n");
        assert!(load_ddi(&selfp, &meds(), false).is_err());

        let unk = write(&dir, "unk.csv", "med_a,med_b\nm1,zz\n");
        let (_, rep) = load_ddi(&unk, &meds(), false).unwrap();
        assert_eq!(rep.skipped_unknown, 1);
        assert!(load_ddi(&unk, &meds(), true).is_err());
    }

    #[test]
    fn molecule_map_loading() {
        let dir = tempfile::tempdir().unwrap();
        let meds = Vocabulary::from_codes(EntityKind::Medication, ["mA", "mB"]).unwrap();
        let p = write(
            &dir,
            "mol.csv",
            "medication,molecule\nmA,s1\nmA,s2\nmB,s2\n",
        );
        let (map, mols, _) = load_molecule_map(&p, &meds, false).unwrap();
        assert_eq!(mols.len(), 2);
        assert_eq!(map.molecules_of(0), &[0, 1]);
        assert_eq!(map.molecules_of(1), &[1]);

        let meds3 = Vocabulary::from_codes(EntityKind::Medication, ["mA", "mB", "mC"]).unwrap();
        let (map, mols, _) = load_molecule_map(&p, &meds3, false).unwrap();
        assert_eq!(mols.len(), 3);
        assert_eq!(map.molecules_of(2), &[2]);
        assert_eq!(mols.code(2).unwrap(), "__mol_mC");
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = Vocabularies::default();
        for c in ["d0", "d1"] {
            v.diseases.intern(c);
        }
        v.procedures.intern("p0");
        for c in ["m0", "m1"] {
            v.medications.intern(c);
        }
        let recs = vec![PatientRecord {
            patient_id: "x".into(),
            visits: vec![
                Visit::new(vec![1], vec![0], vec![0, 1]),
                Visit::new(vec![0, 1], vec![0], vec![1]),
            ],
        }];
        let p = dir.path().join("r.jsonl");
        save_records(&p, &recs, &v).unwrap();
        let (back, _, _) = load_records(&p, Some(&v), RecordFilter::default()).unwrap();
        assert_eq!(back, recs);
    }
}
