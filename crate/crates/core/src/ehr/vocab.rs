use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Disease,
    Procedure,
    Medication,
    Molecule,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Disease => "disease",
            EntityKind::Procedure => "procedure",
            EntityKind::Medication => "medication",
            EntityKind::Molecule => "molecule",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "disease" => Some(EntityKind::Disease),
            "procedure" => Some(EntityKind::Procedure),
            "medication" => Some(EntityKind::Medication),
            "molecule" => Some(EntityKind::Molecule),
            _ => None,
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered, duplicate-free code list with its inverse index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    kind: EntityKind,
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    kind: EntityKind,
    codes: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_codes(repr.kind, repr.codes)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            kind: v.kind,
            codes: v.codes,
        }
    }
}

impl Vocabulary {
    pub fn new(kind: EntityKind) -> Self {
        Vocabulary {
            kind,
            codes: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Builds a vocabulary from a fixed code list, rejecting duplicates.
    pub fn from_codes<I, S>(kind: EntityKind, codes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::new(kind);
        for code in codes {
            let code = code.into();
            if vocab.index.contains_key(&code) {
                return Err(Error::Config(format!(
                    "duplicate {kind} code `{code}` in vocabulary"
                )));
            }
            vocab.push(code);
        }
        Ok(vocab)
    }

    fn push(&mut self, code: String) -> usize {
        let idx = self.codes.len();
        self.index.insert(code.clone(), idx);
        self.codes.push(code);
        idx
    }

    /// Returns the index of `code`, appending it when absent.
    pub fn intern(&mut self, code: &str) -> usize {
        match self.index.get(code) {
            Some(&i) => i,
            None => self.push(code.to_string()),
        }
    }

    pub fn get(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn lookup(&self, code: &str) -> Result<usize> {
        self.get(code).ok_or_else(|| Error::UnknownCode {
            kind: self.kind.as_str(),
            code: code.to_string(),
        })
    }

    pub fn code(&self, idx: usize) -> Result<&str> {
        self.codes
            .get(idx)
            .map(String::as_str)
            .ok_or(Error::Bounds {
                index: idx,
                len: self.codes.len(),
            })
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// The four vocabularies a dataset is indexed against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub diseases: Vocabulary,
    pub procedures: Vocabulary,
    pub medications: Vocabulary,
    pub molecules: Vocabulary,
}

impl Default for Vocabularies {
    fn default() -> Self {
        Vocabularies {
            diseases: Vocabulary::new(EntityKind::Disease),
            procedures: Vocabulary::new(EntityKind::Procedure),
            medications: Vocabulary::new(EntityKind::Medication),
            molecules: Vocabulary::new(EntityKind::Molecule),
        }
    }
}

impl Vocabularies {
    pub fn get(&self, kind: EntityKind) -> &Vocabulary {
        match kind {
            EntityKind::Disease => &self.diseases,
            EntityKind::Procedure => &self.procedures,
            EntityKind::Medication => &self.medications,
            EntityKind::Molecule => &self.molecules,
        }
    }

    pub fn get_mut(&mut self, kind: EntityKind) -> &mut Vocabulary {
        match kind {
            EntityKind::Disease => &mut self.diseases,
            EntityKind::Procedure => &mut self.procedures,
            EntityKind::Medication => &mut self.medications,
            EntityKind::Molecule => &mut self.molecules,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_a_bijection() {
        let v = Vocabulary::from_codes(EntityKind::Disease, ["a", "b", "c"]).unwrap();
        for (i, c) in v.codes().iter().enumerate() {
            assert_eq!(v.lookup(c).unwrap(), i);
            assert_eq!(v.code(i).unwrap(), c);
        }
    }

    #[test]
    fn duplicates_rejected() {
        assert!(Vocabulary::from_codes(EntityKind::Disease, ["a", "a"]).is_err());
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let v = Vocabulary::from_codes(EntityKind::Medication, ["m1", "m2"]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.lookup("m2").unwrap(), 1);
    }
}
