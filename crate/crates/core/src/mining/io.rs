//! Persistence of mined graphs, effect matrices and strata.
//!
//! * Graphs: text edge list.  `#kind <kind>` first, then one `#node <code>`
//!   line per node, then `<parent code>\t<child code>` per edge.
//! * Effects: CSV `source,medication,effect` over nonzero entries, plus a
//!   little-endian binary sidecar holding the dense values, coefficients and
//!   intercepts.
//! * Strata: CSV `kind,source,medication,effect,layer` (kind column added so
//!   one file carries both source kinds).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::glm::CausalEffectMatrix;
use super::graph::CausalGraph;
use super::strata::{RelevanceStrata, StratifiedPair};
use crate::ehr::{EntityKind, Vocabulary};
use crate::error::{Error, Result};

const SIDECAR_MAGIC: &[u8; 4] = b"MREF";
const SIDECAR_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn save_graph(path: &Path, graph: &CausalGraph, vocab: &Vocabulary) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "#kind {}", graph.kind()).map_err(io)?;
    for &n in graph.nodes() {
        writeln!(w, "#node {}", vocab.code(n)?).map_err(io)?;
    }
    for &(a, b) in graph.edges() {
        writeln!(w, "{}\t{}", vocab.code(a)?, vocab.code(b)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_graph(path: &Path, vocab: &Vocabulary) -> Result<CausalGraph> {
    let reader = BufReader::new(open(path)?);
    let mut kind = None;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let lookup = |code: &str, line: usize| {
        vocab
            .get(code)
            .ok_or_else(|| parse_err(path, line, format!("unknown code `{code}`")))
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(k) = line.strip_prefix("#kind ") {
            kind = Some(
                EntityKind::parse(k)
                    .ok_or_else(|| parse_err(path, ln, format!("bad kind `{k}`")))?,
            );
        } else if let Some(code) = line.strip_prefix("#node ") {
            nodes.push(lookup(code.trim(), ln)?);
        } else {
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(path, ln, "expected `parent<TAB>child`"))?;
            edges.push((lookup(a.trim(), ln)?, lookup(b.trim(), ln)?));
        }
    }
    let kind = kind.ok_or_else(|| parse_err(path, 1, "missing `#kind` header"))?;
    if kind != vocab.kind() {
        return Err(parse_err(
            path,
            1,
            format!(
                "graph kind {kind} does not match {} vocabulary",
                vocab.kind()
            ),
        ));
    }
    CausalGraph::new(kind, nodes, edges)
}

/// Writes the CSV and its binary sidecar (`<path>.bin`).
pub fn save_effects(
    path: &Path,
    effects: &CausalEffectMatrix,
    sources: &Vocabulary,
    meds: &Vocabulary,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["source", "medication", "effect"])?;
    for (s, m, e) in effects.nonzero() {
        w.write_record([sources.code(s)?, meds.code(m)?, &format!("{e:?}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let side = sidecar_path(path);
    let mut b = create(&side)?;
    let io = |e| Error::io(&side, e);
    b.write_all(SIDECAR_MAGIC).map_err(io)?;
    b.write_all(&SIDECAR_VERSION.to_le_bytes()).map_err(io)?;
    let kind_tag: u8 = match effects.source_kind {
        EntityKind::Disease => 0,
        EntityKind::Procedure => 1,
        _ => 2,
    };
    b.write_all(&[kind_tag]).map_err(io)?;
    b.write_all(&(effects.n_sources as u64).to_le_bytes())
        .map_err(io)?;
    b.write_all(&(effects.n_medications as u64).to_le_bytes())
        .map_err(io)?;
    for v in effects
        .values
        .iter()
        .chain(&effects.coefficients)
        .chain(&effects.intercepts)
    {
        b.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    b.flush().map_err(io)
}

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".bin");
    s.into()
}

/// Loads the dense sidecar written by [`save_effects`].
pub fn load_effects_sidecar(csv_path: &Path) -> Result<CausalEffectMatrix> {
    let side = sidecar_path(csv_path);
    let mut buf = Vec::new();
    open(&side)?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(&side, e))?;
    let bad = |msg: &str| parse_err(&side, 0, msg.to_string());
    if buf.len() < 25 || &buf[..4] != SIDECAR_MAGIC {
        return Err(bad("not an effect sidecar"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != SIDECAR_VERSION {
        return Err(bad("unsupported sidecar version"));
    }
    let kind = match buf[8] {
        0 => EntityKind::Disease,
        1 => EntityKind::Procedure,
        _ => return Err(bad("bad source kind")),
    };
    let rows = u64::from_le_bytes(buf[9..17].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(buf[17..25].try_into().unwrap()) as usize;
    let n = rows * cols;
    let expect = 25 + 8 * (2 * n + cols);
    if buf.len() != expect {
        return Err(bad("truncated sidecar"));
    }
    let floats: Vec<f64> = buf[25..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(CausalEffectMatrix {
        source_kind: kind,
        n_sources: rows,
        n_medications: cols,
        values: floats[..n].to_vec(),
        coefficients: floats[n..2 * n].to_vec(),
        intercepts: floats[2 * n..].to_vec(),
    })
}

/// Reads effect values from the CSV alone (coefficients are zero).
pub fn load_effects_csv(
    path: &Path,
    sources: &Vocabulary,
    meds: &Vocabulary,
) -> Result<CausalEffectMatrix> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut m = CausalEffectMatrix::zeros(sources.kind(), sources.len(), meds.len());
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let ln = i + 2;
        let (s, med, e) = match (row.get(0), row.get(1), row.get(2)) {
            (Some(s), Some(med), Some(e)) => (s, med, e),
            _ => return Err(parse_err(path, ln, "expected three columns")),
        };
        let s = sources
            .get(s)
            .ok_or_else(|| parse_err(path, ln, format!("unknown source `{s}`")))?;
        let med = meds
            .get(med)
            .ok_or_else(|| parse_err(path, ln, format!("unknown medication `{med}`")))?;
        let e: f64 = e
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad effect `{e}`")))?;
        if !(0.0..=1.0).contains(&e) {
            return Err(parse_err(path, ln, format!("effect {e} outside [0, 1]")));
        }
        m.set(s, med, e);
    }
    Ok(m)
}

pub fn save_strata(
    path: &Path,
    strata: &RelevanceStrata,
    diseases: &Vocabulary,
    procedures: &Vocabulary,
    meds: &Vocabulary,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["kind", "source", "medication", "effect", "layer"])?;
    for p in &strata.pairs {
        let src = match p.kind {
            EntityKind::Disease => diseases.code(p.source)?,
            _ => procedures.code(p.source)?,
        };
        w.write_record([
            p.kind.as_str(),
            src,
            meds.code(p.medication)?,
            &format!("{:?}", p.effect),
            &p.layer.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_strata(
    path: &Path,
    n_layers: usize,
    gradient: f64,
    diseases: &Vocabulary,
    procedures: &Vocabulary,
    meds: &Vocabulary,
) -> Result<RelevanceStrata> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut pairs = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let ln = i + 2;
        if row.len() != 5 {
            return Err(parse_err(path, ln, "expected five columns"));
        }
        let kind = EntityKind::parse(&row[0])
            .filter(|k| matches!(k, EntityKind::Disease | EntityKind::Procedure))
            .ok_or_else(|| parse_err(path, ln, format!("bad kind `{}`", &row[0])))?;
        let vocab = if kind == EntityKind::Disease {
            diseases
        } else {
            procedures
        };
        let source = vocab
            .get(&row[1])
            .ok_or_else(|| parse_err(path, ln, format!("unknown source `{}`", &row[1])))?;
        let medication = meds
            .get(&row[2])
            .ok_or_else(|| parse_err(path, ln, format!("unknown medication `{}`", &row[2])))?;
        let effect: f64 = row[3]
            .parse()
            .map_err(|_| parse_err(path, ln, "bad effect"))?;
        let layer: usize = row[4]
            .parse()
            .map_err(|_| parse_err(path, ln, "bad layer"))?;
        pairs.push(StratifiedPair {
            kind,
            source,
            medication,
            effect,
            layer,
        });
    }
    RelevanceStrata::from_pairs(pairs, n_layers, gradient)
}
