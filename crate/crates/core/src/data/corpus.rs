use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, Vocab, PAD_ID};
use crate::error::{invalid, LcmError, Result};

/// One line of a JSON-lines corpus: `text` or `features`, plus `label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    pub label: String,
}

impl RawRecord {
    pub fn text(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self { text: Some(text.into()), features: None, label: label.into() }
    }

    pub fn features(features: Vec<f64>, label: impl Into<String>) -> Self {
        Self { text: None, features: Some(features), label: label.into() }
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line)
            .map_err(|e| LcmError::Format { line: i + 1, message: e.to_string() })?;
        if rec.text.is_some() == rec.features.is_some() {
            return Err(LcmError::Format {
                line: i + 1,
                message: "exactly one of \"text\" or \"features\" is required".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Model input for one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    /// Token ids padded with [`PAD_ID`] to the corpus `max_len`; `len` is
    /// the true length used for pooling.
    Tokens { ids: Vec<u32>, len: usize },
    Features(Vec<f64>),
}

impl Input {
    pub fn token_ids(&self) -> Option<&[u32]> {
        match self {
            Input::Tokens { ids, len } => Some(&ids[..*len]),
            Input::Features(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Input,
    pub label: usize,
    /// Label before noise injection, when this example was flipped.
    pub original_label: Option<usize>,
}

impl Example {
    pub fn tokens(ids: Vec<u32>, label: usize) -> Self {
        let len = ids.len();
        Self { input: Input::Tokens { ids, len }, label, original_label: None }
    }

    pub fn features(v: Vec<f64>, label: usize) -> Self {
        Self { input: Input::Features(v), label, original_label: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputKind {
    Tokens { vocab_size: usize },
    Features { dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Class index `k` is `label_names[k]` everywhere downstream.
    pub label_names: Vec<String>,
    pub kind: InputKind,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Copy holding the examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            label_names: self.label_names.clone(),
            kind: self.kind,
            provenance: self.provenance.clone(),
        }
    }

    /// Rejects any example whose label is out of range.
    pub fn check_labels(&self) -> Result<()> {
        let c = self.num_classes();
        match self.examples.iter().position(|e| e.label >= c) {
            Some(i) => Err(invalid(format!(
                "example {i} has label id {} but only {c} classes exist",
                self.examples[i].label
            ))),
            None => Ok(()),
        }
    }

    /// Converts back to raw records; tokens are rendered through `vocab`.
    pub fn to_records(&self, vocab: Option<&Vocab>) -> Result<Vec<RawRecord>> {
        self.examples
            .iter()
            .map(|e| {
                let label = self.label_names[e.label].clone();
                match &e.input {
                    Input::Features(v) => Ok(RawRecord::features(v.clone(), label)),
                    Input::Tokens { ids, len } => {
                        let vocab = vocab.ok_or_else(|| invalid("token dataset needs a vocabulary"))?;
                        let words: Vec<&str> =
                            ids[..*len].iter().map(|&id| vocab.token(id).unwrap_or("<unk>")).collect();
                        Ok(RawRecord::text(words.join(" "), label))
                    }
                }
            })
            .collect()
    }
}

/// Sorted distinct labels of a record set.
pub fn label_names_of(records: &[RawRecord]) -> Vec<String> {
    records.iter().map(|r| r.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Encodes raw records into a [`Dataset`]. Text is tokenized, mapped
/// through `vocab` (unknown tokens become id 1), truncated to `max_len`
/// and padded with id 0. Feature records must share one dimension.
pub fn encode_corpus(
    records: &[RawRecord],
    vocab: &Vocab,
    label_names: &[String],
    max_len: usize,
) -> Result<Dataset> {
    if records.is_empty() {
        return Err(LcmError::EmptyInput("corpus has no records".into()));
    }
    if max_len == 0 {
        return Err(invalid("max_len must be positive"));
    }
    let index: BTreeMap<&str, usize> =
        label_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut examples = Vec::with_capacity(records.len());
    let mut kind = None;
    for (i, rec) in records.iter().enumerate() {
        let label = *index
            .get(rec.label.as_str())
            .ok_or_else(|| LcmError::UnknownLabel { index: i, label: rec.label.clone() })?;
        let (input, this_kind) = match (&rec.text, &rec.features) {
            (Some(text), None) => {
                let mut ids: Vec<u32> = tokenize(text).take(max_len).map(|t| vocab.id(&t)).collect();
                let len = ids.len();
                if len == 0 {
                    return Err(LcmError::EmptyInput(format!("record {i} has no tokens")));
                }
                ids.resize(max_len, PAD_ID);
                (Input::Tokens { ids, len }, InputKind::Tokens { vocab_size: vocab.len() })
            }
            (None, Some(v)) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(format!("record {i} has empty or non-finite features")));
                }
                (Input::Features(v.clone()), InputKind::Features { dim: v.len() })
            }
            _ => return Err(invalid(format!("record {i} needs exactly one of text or features"))),
        };
        match kind {
            None => kind = Some(this_kind),
            Some(k) if k != this_kind => {
                return Err(invalid(format!("record {i} input kind {this_kind:?} differs from {k:?}")))
            }
            _ => {}
        }
        examples.push(Example { input, label, original_label: None });
    }
    Ok(Dataset {
        examples,
        label_names: label_names.to_vec(),
        kind: kind.expect("non-empty corpus"),
        provenance: String::from("encoded corpus"),
    })
}

/// Label name to group name; noise only flips labels within a group.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupMap(pub BTreeMap<String, String>);

impl GroupMap {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Class indices per group, checking the map covers every label.
    pub fn class_groups(&self, label_names: &[String]) -> Result<BTreeMap<String, Vec<usize>>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (k, name) in label_names.iter().enumerate() {
            let g = self
                .0
                .get(name)
                .ok_or_else(|| invalid(format!("label {name:?} has no group")))?;
            out.entry(g.clone()).or_default().push(k);
        }
        Ok(out)
    }

    /// Group index of each class, in `label_names` order.
    pub fn group_of_classes(&self, label_names: &[String]) -> Result<Vec<usize>> {
        let groups = self.class_groups(label_names)?;
        let mut out = vec![0; label_names.len()];
        for (gi, members) in groups.values().enumerate() {
            for &k in members {
                out[k] = gi;
            }
        }
        Ok(out)
    }
}
