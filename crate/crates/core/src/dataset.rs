//! Fine-tuning corpus construction: labeling, deduplication, ratio sampling
//! and chat-format export.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::{check_pair, CheckConfig, ReasonSet, UnknownCause, Verdict};
use crate::ir::{parse_pair, print_function, ParseError, TransformationPair};
use crate::predictor::{decode_label, encode_assistant, encode_prompt, Label};

pub const SRC_SUFFIX: &str = ".src.mir.ll";
pub const TGT_SUFFIX: &str = ".tgt.mir.ll";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub pair: TransformationPair,
    pub label: Label,
    /// Empty iff `label` is `Sound`.
    pub reasons: ReasonSet,
    pub source_tag: String,
}

/// On-disk form of a [`DatasetRecord`], one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordLine {
    pub id: String,
    pub src: String,
    pub tgt: String,
    pub label: Label,
    #[serde(default)]
    pub reasons: ReasonSet,
    #[serde(default)]
    pub source_tag: String,
}

impl DatasetRecord {
    pub fn canonical_texts(&self) -> (String, String) {
        (
            print_function(&self.pair.src),
            print_function(&self.pair.tgt),
        )
    }

    pub fn to_line(&self) -> RecordLine {
        let (src, tgt) = self.canonical_texts();
        RecordLine {
            id: self.pair.id.clone(),
            src,
            tgt,
            label: self.label,
            reasons: self.reasons.clone(),
            source_tag: self.source_tag.clone(),
        }
    }

    pub fn from_line(line: RecordLine) -> Result<DatasetRecord, CorpusError> {
        let pair =
            parse_pair(&line.src, &line.tgt, &line.id).map_err(|error| CorpusError::Parse {
                id: line.id.clone(),
                error,
            })?;
        if (line.label == Label::Sound) != line.reasons.is_empty() {
            return Err(CorpusError::Format(format!(
                "record {}: reasons must be empty exactly when the label is sound",
                line.id
            )));
        }
        Ok(DatasetRecord {
            pair,
            label: line.label,
            reasons: line.reasons,
            source_tag: line.source_tag,
        })
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("pair {id}: {error}")]
    Parse { id: String, error: ParseError },
    #[error("pair {id}: missing {missing}")]
    MissingHalf { id: String, missing: PathBuf },
    #[error("{0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Deserialize)]
struct ManifestLine {
    id: String,
    src: String,
    tgt: String,
}

/// Loads pairs from a directory of `<id>.src.mir.ll` / `<id>.tgt.mir.ll`
/// files (sorted by id) or from a JSON-lines manifest of `{id, src, tgt}`.
pub fn load_corpus(path: &Path) -> Result<Vec<TransformationPair>, CorpusError> {
    if path.is_dir() {
        load_corpus_dir(path)
    } else {
        load_manifest(path)
    }
}

pub fn load_corpus_dir(dir: &Path) -> Result<Vec<TransformationPair>, CorpusError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if let Some(id) = entry
            .file_name()
            .to_str()
            .and_then(|n| n.strip_suffix(SRC_SUFFIX))
        {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let src_path = dir.join(format!("{id}{SRC_SUFFIX}"));
            let tgt_path = dir.join(format!("{id}{TGT_SUFFIX}"));
            if !tgt_path.exists() {
                return Err(CorpusError::MissingHalf {
                    id,
                    missing: tgt_path,
                });
            }
            let src = fs::read_to_string(&src_path).map_err(io_err(&src_path))?;
            let tgt = fs::read_to_string(&tgt_path).map_err(io_err(&tgt_path))?;
            parse_pair(&src, &tgt, &id).map_err(|error| CorpusError::Parse { id, error })
        })
        .collect()
}

pub fn load_manifest(path: &Path) -> Result<Vec<TransformationPair>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut pairs = Vec::new();
    for (n, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        pairs.push(
            parse_pair(&m.src, &m.tgt, &m.id)
                .map_err(|error| CorpusError::Parse { id: m.id, error })?,
        );
    }
    Ok(pairs)
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(DatasetRecord::from_line(rec)?);
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[DatasetRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &r.to_line())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeled {
    pub records: Vec<DatasetRecord>,
    /// Pairs the checker could not decide.
    pub skipped: Vec<(String, UnknownCause)>,
}

/// Labels every pair with the checker, in input order.
pub fn label_corpus(pairs: &[TransformationPair], cfg: &CheckConfig, source_tag: &str) -> Labeled {
    let verdicts: Vec<Verdict> = pairs.par_iter().map(|p| check_pair(p, cfg)).collect();
    let mut out = Labeled {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for (pair, verdict) in pairs.iter().zip(verdicts) {
        let (label, reasons) = match verdict {
            Verdict::Sound => (Label::Sound, ReasonSet::new()),
            Verdict::Unsound { reasons, .. } => (Label::Unsound, reasons),
            Verdict::Unknown { cause } => {
                out.skipped.push((pair.id.clone(), cause));
                continue;
            }
        };
        out.records.push(DatasetRecord {
            pair: pair.clone(),
            label,
            reasons,
            source_tag: source_tag.to_string(),
        });
    }
    out
}

/// Drops later duplicates of a (source, target) text pair, then sound
/// records whose two sides print identically.
pub fn dedupe(records: Vec<DatasetRecord>) -> Vec<DatasetRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| {
            let (src, tgt) = r.canonical_texts();
            let identical = src == tgt;
            seen.insert((src, tgt)) && !(identical && r.label == Label::Sound)
        })
        .collect()
}

/// Sound-to-unsound ratio such as `2:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub sound: u32,
    pub unsound: u32,
}

impl Ratio {
    pub const ONE_TO_ONE: Ratio = Ratio {
        sound: 1,
        unsound: 1,
    };

    pub fn new(sound: u32, unsound: u32) -> Option<Ratio> {
        (sound > 0 && unsound > 0).then_some(Ratio { sound, unsound })
    }

    /// Sound records to pair with `unsound` unsound ones, rounded down.
    pub fn sound_for(self, unsound: usize) -> usize {
        unsound * self.sound as usize / self.unsound as usize
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.sound, self.unsound)
    }
}

impl FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid ratio `{s}`, expected S:U with positive integers");
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        Ratio::new(a, b).ok_or_else(bad)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub ratio: Ratio,
    pub seed: u64,
    pub test_count: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            ratio: Ratio::ONE_TO_ONE,
            seed: 0,
            test_count: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("insufficient {label} records: need {needed}, have {available}")]
    InsufficientData {
        label: Label,
        needed: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// Holds out a label-balanced test set (the odd one, if any, is sound), then
/// builds the training set from every remaining unsound record plus
/// `ratio` times as many sound ones. Both sets are shuffled.
pub fn sample(records: &[DatasetRecord], cfg: &SampleConfig) -> Result<Split, SampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sound: Vec<&DatasetRecord> =
        records.iter().filter(|r| r.label == Label::Sound).collect();
    let mut unsound: Vec<&DatasetRecord> = records
        .iter()
        .filter(|r| r.label == Label::Unsound)
        .collect();
    let test_unsound = cfg.test_count / 2;
    let test_sound = cfg.test_count - test_unsound;
    for (label, pool, needed) in [
        (Label::Sound, &sound, test_sound),
        (Label::Unsound, &unsound, test_unsound),
    ] {
        if pool.len() < needed {
            return Err(SampleError::InsufficientData {
                label,
                needed,
                available: pool.len(),
            });
        }
    }
    sound.shuffle(&mut rng);
    unsound.shuffle(&mut rng);

    let mut test: Vec<DatasetRecord> = sound[..test_sound]
        .iter()
        .chain(&unsound[..test_unsound])
        .map(|r| (*r).clone())
        .collect();
    let train_unsound = &unsound[test_unsound..];
    let rest_sound = &sound[test_sound..];
    let needed = cfg.ratio.sound_for(train_unsound.len());
    if rest_sound.len() < needed {
        return Err(SampleError::InsufficientData {
            label: Label::Sound,
            needed: needed + test_sound,
            available: sound.len(),
        });
    }
    let mut train: Vec<DatasetRecord> = train_unsound
        .iter()
        .chain(&rest_sound[..needed])
        .map(|r| (*r).clone())
        .collect();
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(Split { train, test })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FineTuneExample {
    pub system: String,
    pub user: String,
    pub assistant: String,
}

#[derive(Serialize, Deserialize)]
struct ChatMessage {
    role: String,
    content: String,
}

#[derive(Serialize, Deserialize)]
struct ChatLine {
    messages: Vec<ChatMessage>,
}

impl FineTuneExample {
    pub fn from_record(r: &DatasetRecord) -> FineTuneExample {
        let prompt = encode_prompt(&r.pair);
        FineTuneExample {
            system: prompt.system,
            user: prompt.user,
            assistant: encode_assistant(r.label, &r.reasons),
        }
    }

    /// `{"messages":[system, user, assistant]}` on one line, without the newline.
    pub fn to_json_line(&self) -> String {
        let line = ChatLine {
            messages: [
                ("system", &self.system),
                ("user", &self.user),
                ("assistant", &self.assistant),
            ]
            .into_iter()
            .map(|(role, content)| ChatMessage {
                role: role.to_string(),
                content: content.clone(),
            })
            .collect(),
        };
        serde_json::to_string(&line).expect("chat line serializes")
    }

    pub fn from_json_line(line: &str) -> Result<FineTuneExample, CorpusError> {
        let chat: ChatLine =
            serde_json::from_str(line).map_err(|e| CorpusError::Format(e.to_string()))?;
        let roles: Vec<&str> = chat.messages.iter().map(|m| m.role.as_str()).collect();
        if roles != ["system", "user", "assistant"] {
            return Err(CorpusError::Format(format!(
                "unexpected message roles {roles:?}"
            )));
        }
        let mut it = chat.messages.into_iter().map(|m| m.content);
        Ok(FineTuneExample {
            system: it.next().unwrap_or_default(),
            user: it.next().unwrap_or_default(),
            assistant: it.next().unwrap_or_default(),
        })
    }

    pub fn label(&self) -> Option<(Label, ReasonSet)> {
        decode_label(&self.assistant).ok()
    }
}

/// Writes one chat-format line per record, in order.
pub fn emit_finetune<W: Write>(records: &[DatasetRecord], mut out: W) -> io::Result<()> {
    for r in records {
        out.write_all(FineTuneExample::from_record(r).to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
