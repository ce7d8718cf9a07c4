//! On-disk formats: JSONL event corpora and parameter checkpoints.
//!
//! A corpus is one JSON object per line. The first line is a header with
//! the format version, the mark space, the observation window, and
//! optionally the classical process that generated the data (kept so the
//! evaluator can recompute the ground-truth intensity later). Every
//! following line is one sequence: `{"events": [[t, mark], ...]}` where a
//! mark is an integer type id or a real feature vector.
//!
//! Checkpoints are a single JSON document: format version, the model
//! configuration, the named segment table, and the flat parameter array.
//! Floats go through serde_json's shortest-round-trip formatting, so both
//! formats reload bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adjoint::enforce_strict_ordering;
use crate::classical::{ClassicalProcessSpec, EventSequence, Mark};
use crate::dynamics::{MarkSpace, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ParamVector;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format_version: u32,
    pub mark_space: MarkSpace,
    /// observation window shared by every sequence
    pub window: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<ClassicalProcessSpec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceRecord {
    events: Vec<(f64, Mark<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub sequences: Vec<EventSequence<f64>>,
}

impl Corpus {
    pub fn new(header: CorpusHeader, sequences: Vec<EventSequence<f64>>) -> Self {
        Corpus { header, sequences }
    }

    fn validate(&self) -> Result<()> {
        if self.header.format_version != CORPUS_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported corpus format_version {}",
                self.header.format_version
            )));
        }
        let (t0, t1) = self.header.window;
        if !(t0 < t1) && !(t0 == t1) {
            return Err(Error::Schema("corpus window is not ordered".into()));
        }
        for (i, seq) in self.sequences.iter().enumerate() {
            if seq.t0 != t0 || seq.t1 != t1 {
                return Err(Error::Schema(format!(
                    "sequence {i} window differs from the header"
                )));
            }
            seq.validate()
                .map_err(|e| Error::Schema(format!("sequence {i}: {e}")))?;
            for (t, mark) in &seq.events {
                if *t < t0 || *t >= t1 && *t != t1 {
                    return Err(Error::EventOutsideWindow {
                        t: *t,
                        t0,
                        t1,
                    });
                }
                let ok = match (&self.header.mark_space, mark) {
                    (MarkSpace::Discrete { num_types }, Mark::Type(k)) => k < num_types,
                    (MarkSpace::Continuous { dim, .. }, Mark::Features(v)) => v.len() == *dim,
                    _ => false,
                };
                if !ok {
                    return Err(Error::Schema(format!(
                        "sequence {i} mark does not match the corpus mark space"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    corpus.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &corpus.header)?;
    w.write_all(b"\n")?;
    for seq in &corpus.sequences {
        let rec = SequenceRecord {
            events: seq.events.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Load a corpus. Duplicate timestamps within a sequence are perturbed
/// into strict order; the number of perturbed events is returned alongside
/// so callers can warn.
pub fn read_corpus(path: &Path) -> Result<(Corpus, usize)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Schema("corpus file is empty".into()))??;
    let header: CorpusHeader = serde_json::from_str(&header_line)?;
    let (t0, t1) = header.window;
    let mut perturbed = 0;
    let mut sequences = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord = serde_json::from_str(&line)?;
        let mut seq = EventSequence {
            t0,
            t1,
            events: rec.events,
        };
        perturbed += enforce_strict_ordering(&mut seq);
        sequences.push(seq);
    }
    let corpus = Corpus { header, sequences };
    corpus.validate()?;
    Ok((corpus, perturbed))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    /// named (name, start, end) ranges into `params`
    pub segments: Vec<(String, usize, usize)>,
    pub params: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, model: &Model<f64>, params: &ParamVector<f64>) -> Result<()> {
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: model.config().clone(),
        segments: params
            .segments()
            .iter()
            .map(|(n, r)| (n.clone(), r.start, r.end))
            .collect(),
        params: params.as_slice().to_vec(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &ckpt)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Load a checkpoint and rebuild the model, verifying that the stored
/// segment table matches what the configuration implies.
pub fn read_checkpoint(path: &Path) -> Result<(Model<f64>, ParamVector<f64>)> {
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint format_version {}",
            ckpt.format_version
        )));
    }
    let model = Model::new(ckpt.model)?;
    let expected = model.zero_params();
    let expected_segments: Vec<(String, usize, usize)> = expected
        .segments()
        .iter()
        .map(|(n, r)| (n.clone(), r.start, r.end))
        .collect();
    if ckpt.segments != expected_segments {
        return Err(Error::Schema(
            "checkpoint segment table does not match its model configuration".into(),
        ));
    }
    if ckpt.params.len() != expected.len() {
        return Err(Error::Schema(format!(
            "checkpoint has {} parameters, model needs {}",
            ckpt.params.len(),
            expected.len()
        )));
    }
    let params = expected.with_data(ckpt.params)?;
    Ok((model, params))
}
