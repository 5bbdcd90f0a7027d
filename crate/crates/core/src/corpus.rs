//! Report ingestion, paragraph-aligned chunking, dataset splits and JSONL
//! persistence.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{AttributeVector, Lexicon};
use crate::text::normalize_whitespace;

/// Default chunk upper limit in characters (roughly 512 tokens at ~4 chars/token).
pub const DEFAULT_MAX_CHARS: usize = 2000;
pub const MIN_MAX_CHARS: usize = 200;
const PARAGRAPH_JOIN: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sector {
    OilGas,
    Tech,
    Other,
}

impl Sector {
    pub fn as_str(self) -> &'static str {
        match self {
            Sector::OilGas => "oil-gas",
            Sector::Tech => "tech",
            Sector::Other => "other",
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "oil-gas" => Ok(Sector::OilGas),
            "tech" => Ok(Sector::Tech),
            "other" => Ok(Sector::Other),
            other => Err(Error::InvalidInput(format!("unknown sector {other:?}"))),
        }
    }
}

/// Sidecar metadata for a plain-text report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub company: String,
    pub sector: Sector,
    pub year: i32,
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<ReportMetadata> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    serde_json::from_str(&source).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// A report's extracted environmental sections as ordered paragraphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub company: String,
    pub sector: Sector,
    pub year: i32,
    pub paragraphs: Vec<String>,
}

impl Document {
    /// Whitespace-normalizes every paragraph and drops those left empty.
    pub fn new<I, S>(
        id: impl Into<String>,
        metadata: &ReportMetadata,
        paragraphs: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let id = id.into();
        if metadata.year < 2000 {
            return Err(Error::InvalidInput(format!(
                "report year {} is before 2000",
                metadata.year
            )));
        }
        let paragraphs: Vec<String> = paragraphs
            .into_iter()
            .map(|p| normalize_whitespace(p.as_ref()))
            .filter(|p| !p.is_empty())
            .collect();
        if paragraphs.is_empty() {
            return Err(Error::EmptyReport(id));
        }
        Ok(Document {
            id,
            company: metadata.company.clone(),
            sector: metadata.sector,
            year: metadata.year,
            paragraphs,
        })
    }
}

/// Splits plain text into paragraphs at blank lines.
pub fn split_paragraphs(source: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in source.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(normalize_whitespace(&current));
                current.clear();
            }
        } else {
            current.push(' ');
            current.push_str(line);
        }
    }
    if !current.trim().is_empty() {
        out.push(normalize_whitespace(&current));
    }
    out
}

/// Reads a UTF-8 report whose paragraphs are separated by blank lines. The
/// document id is the file stem.
pub fn ingest_report(path: impl AsRef<Path>, metadata: &ReportMetadata) -> Result<Document> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    let source = String::from_utf8(bytes).map_err(|_| Error::NotUtf8 { path: path.into() })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Document::new(id, metadata, split_paragraphs(&source))
}

/// A contiguous piece of one paragraph placed in a chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPiece {
    pub paragraph: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub id: String,
    pub document_id: String,
    pub index: usize,
    pub text: String,
    pub climate_related: bool,
    /// Set when the chunk is a single sentence longer than the limit.
    pub oversize: bool,
    pub pieces: Vec<ChunkPiece>,
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Sentence boundaries: `.`, `?` or `!` followed by whitespace and an
/// uppercase letter. Expects whitespace-normalized text; the separating
/// space is dropped, so joining the result with `" "` restores the input.
pub fn split_sentences(paragraph: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = paragraph.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '?' | '!') || i + 2 >= chars.len() {
            continue;
        }
        let (_, gap) = chars[i + 1];
        let (next_pos, next) = chars[i + 2];
        if gap.is_whitespace() && next.is_uppercase() {
            out.push(&paragraph[start..pos + c.len_utf8()]);
            start = next_pos;
        }
    }
    out.push(&paragraph[start..]);
    out
}

struct ChunkBuilder<'a> {
    doc: &'a Document,
    chunks: Vec<Chunk>,
    pending: Vec<ChunkPiece>,
    pending_len: usize,
}

impl ChunkBuilder<'_> {
    fn flush(&mut self, oversize: bool) {
        if self.pending.is_empty() {
            return;
        }
        let pieces = std::mem::take(&mut self.pending);
        self.pending_len = 0;
        let text = pieces
            .iter()
            .map(|p| p.text.as_str())
            .collect::<Vec<_>>()
            .join(PARAGRAPH_JOIN);
        let index = self.chunks.len();
        self.chunks.push(Chunk {
            id: format!("{}-{}", self.doc.id, index),
            document_id: self.doc.id.clone(),
            index,
            text,
            climate_related: true,
            oversize,
            pieces,
        });
    }

    fn push(&mut self, paragraph: usize, text: String, len: usize) {
        self.pending_len += if self.pending.is_empty() {
            len
        } else {
            PARAGRAPH_JOIN.len() + len
        };
        self.pending.push(ChunkPiece { paragraph, text });
    }
}

/// Greedily packs paragraphs (joined by a blank line) into chunks of at most
/// `max_chars` characters. A paragraph over the limit is split at sentence
/// boundaries into pieces that each become their own chunk; a single
/// sentence over the limit becomes an oversize-flagged chunk.
pub fn chunk_document(doc: &Document, max_chars: usize) -> Result<Vec<Chunk>> {
    if max_chars < MIN_MAX_CHARS {
        return Err(Error::InvalidInput(format!(
            "max_chars must be at least {MIN_MAX_CHARS}, got {max_chars}"
        )));
    }
    let mut b = ChunkBuilder {
        doc,
        chunks: Vec::new(),
        pending: Vec::new(),
        pending_len: 0,
    };
    for (pi, para) in doc.paragraphs.iter().enumerate() {
        let len = char_len(para);
        if len <= max_chars {
            let needed = if b.pending.is_empty() {
                len
            } else {
                b.pending_len + PARAGRAPH_JOIN.len() + len
            };
            if needed > max_chars {
                b.flush(false);
            }
            b.push(pi, para.clone(), len);
            continue;
        }

        b.flush(false);
        let mut piece = String::new();
        let mut piece_len = 0;
        for sentence in split_sentences(para) {
            let slen = char_len(sentence);
            if slen > max_chars {
                if !piece.is_empty() {
                    b.push(pi, std::mem::take(&mut piece), piece_len);
                    b.flush(false);
                }
                b.push(pi, sentence.to_string(), slen);
                b.flush(true);
                piece_len = 0;
                continue;
            }
            if !piece.is_empty() && piece_len + 1 + slen > max_chars {
                b.push(pi, std::mem::take(&mut piece), piece_len);
                b.flush(false);
                piece_len = 0;
            }
            if !piece.is_empty() {
                piece.push(' ');
                piece_len += 1;
            }
            piece.push_str(sentence);
            piece_len += slen;
        }
        if !piece.is_empty() {
            b.push(pi, piece, piece_len);
            b.flush(false);
        }
    }
    b.flush(false);
    Ok(b.chunks)
}

/// Rebuilds the paragraph list from chunk pieces; the inverse of
/// [`chunk_document`].
pub fn reassemble(chunks: &[Chunk]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut last = None;
    for piece in chunks.iter().flat_map(|c| &c.pieces) {
        if last == Some(piece.paragraph) {
            let para = out.last_mut().expect("paragraph started");
            para.push(' ');
            para.push_str(&piece.text);
        } else {
            out.push(piece.text.clone());
            last = Some(piece.paragraph);
        }
    }
    out
}

/// Marks chunks as climate-related only when they contain a gate phrase.
pub fn apply_climate_gate(chunks: &mut [Chunk], gate: &Lexicon) {
    for c in chunks {
        c.climate_related = gate.matches_any(&c.text);
    }
}

/// One labeled chunk as stored in dataset JSONL files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub document_id: String,
    pub index: usize,
    pub text: String,
    pub attributes: AttributeVector,
    #[serde(with = "crate::bit")]
    pub label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(with = "crate::bit")]
    pub climate_related: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub split: Split,
    pub records: Vec<DatasetRecord>,
}

impl LabeledDataset {
    pub fn new(split: Split, records: Vec<DatasetRecord>) -> Self {
        LabeledDataset { split, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of records labeled 1.
    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }
}

/// Shuffles with a seeded ChaCha8 generator and puts the first
/// `floor(train_fraction * n)` records in the training split.
pub fn split_dataset(
    records: Vec<DatasetRecord>,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = records.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "cannot split a dataset of {n} records"
        )));
    }
    // Guard against products like 0.29 * 100 = 28.999999999999996.
    let n_train = ((train_fraction * n as f64) + 1e-9).floor() as usize;
    let mut records = records;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    let validation = records.split_off(n_train);
    Ok((
        LabeledDataset::new(Split::Train, records),
        LabeledDataset::new(Split::Validation, validation),
    ))
}

pub fn persist_dataset(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::write(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::write(path, e))?;
    }
    w.flush().map_err(|e| Error::write(path, e))
}

pub fn parse_dataset(source: &str, context: &str) -> Result<Vec<DatasetRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            context: context.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    Ok(LabeledDataset::new(
        split,
        parse_dataset(&source, &path.display().to_string())?,
    ))
}
