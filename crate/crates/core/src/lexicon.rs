//! Phrase lexicons, hedging detection and attribute assembly.
//!
//! The hedging attribute is always computed from the deflection lexicon. The
//! other three attributes (sentiment, commitment, specificity) come from an
//! external score file when it covers the chunk, otherwise from small keyword
//! lexicons that exist only as test scaffolding.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

const DEFLECTION_PHRASES: &str = include_str!("../data/deflection_phrases.txt");
const FALLBACK_SENTIMENT: &str = include_str!("../data/fallback_sentiment.txt");
const FALLBACK_COMMITMENT: &str = include_str!("../data/fallback_commitment.txt");
const FALLBACK_SPECIFICITY: &str = include_str!("../data/fallback_specificity.txt");

const MAX_PHRASE_WORDS: usize = 6;

/// An immutable, case-folded, deduplicated list of phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    name: String,
    phrases: Vec<String>,
    // Tokenized form of each phrase, same order as `phrases`.
    tokens: Vec<Vec<String>>,
    // First token -> indices into `phrases`.
    index: HashMap<String, Vec<usize>>,
}

impl Lexicon {
    /// Builds a lexicon, lowercasing and trimming each phrase and keeping the
    /// first occurrence of duplicates.
    pub fn new<I, S>(name: impl Into<String>, phrases: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut tokens = Vec::new();
        for raw in phrases {
            let phrase = raw.as_ref().trim().to_lowercase();
            if phrase.is_empty() {
                continue;
            }
            let toks = tokenize(&phrase, true);
            if toks.is_empty() {
                return Err(Error::InvalidPhrase {
                    phrase,
                    reason: "contains no word characters",
                });
            }
            if toks.len() > MAX_PHRASE_WORDS {
                return Err(Error::InvalidPhrase {
                    phrase,
                    reason: "longer than 6 words",
                });
            }
            if seen.insert(phrase.clone()) {
                kept.push(phrase);
                tokens.push(toks);
            }
        }
        if kept.is_empty() {
            return Err(Error::EmptyLexicon);
        }
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, toks) in tokens.iter().enumerate() {
            index.entry(toks[0].clone()).or_default().push(i);
        }
        Ok(Lexicon {
            name: name.into(),
            phrases: kept,
            tokens,
            index,
        })
    }

    /// Parses the lexicon file format: one phrase per line, `#` comments.
    pub fn parse(name: impl Into<String>, source: &str) -> Result<Self> {
        let lines = source
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Lexicon::new(name, lines)
    }

    /// The shipped legal deflection lexicon.
    pub fn deflection() -> Self {
        Lexicon::parse("deflection", DEFLECTION_PHRASES).expect("shipped lexicon is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// Serializes to the lexicon file format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for p in &self.phrases {
            out.push_str(p);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::write(path, e))
    }

    /// Distinct phrases occurring in `text` as contiguous whole-token
    /// sequences, in lexicon order.
    pub fn find_matches(&self, text: &str) -> Vec<&str> {
        let toks = tokenize(text, true);
        let mut hit = vec![false; self.phrases.len()];
        for start in 0..toks.len() {
            let Some(candidates) = self.index.get(&toks[start]) else {
                continue;
            };
            for &i in candidates {
                let phrase = &self.tokens[i];
                if !hit[i] && toks[start..].starts_with(phrase) {
                    hit[i] = true;
                }
            }
        }
        hit.iter()
            .enumerate()
            .filter(|(_, h)| **h)
            .map(|(i, _)| self.phrases[i].as_str())
            .collect()
    }

    pub fn matches_any(&self, text: &str) -> bool {
        !self.find_matches(text).is_empty()
    }
}

/// Reads a lexicon file, named after the file stem.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    let source = String::from_utf8(bytes).map_err(|_| Error::NotUtf8 { path: path.into() })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Lexicon::parse(name, &source)
}

/// Outcome of hedging detection on one text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HedgingMatch {
    pub flag: bool,
    pub matches: Vec<String>,
}

pub fn detect_hedging(text: &str, lexicon: &Lexicon) -> HedgingMatch {
    let matches: Vec<String> = lexicon
        .find_matches(text)
        .into_iter()
        .map(String::from)
        .collect();
    HedgingMatch {
        flag: !matches.is_empty(),
        matches,
    }
}

/// The four attributes feeding the risk equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attribute {
    Sentiment,
    Commitment,
    Specificity,
    Hedging,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Sentiment,
        Attribute::Commitment,
        Attribute::Specificity,
        Attribute::Hedging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Sentiment => "sentiment",
            Attribute::Commitment => "commitment",
            Attribute::Specificity => "specificity",
            Attribute::Hedging => "hedging",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Binary attribute vector of a text chunk. `sentiment` is true for positive
/// sentiment, `commitment` for an explicit climate commitment, `specificity`
/// for specific language and `hedging` when a deflection phrase is present.
///
/// Serialized with each field as the integer 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AttributeVector {
    #[serde(with = "crate::bit")]
    pub sentiment: bool,
    #[serde(with = "crate::bit")]
    pub commitment: bool,
    #[serde(with = "crate::bit")]
    pub specificity: bool,
    #[serde(with = "crate::bit")]
    pub hedging: bool,
}

impl AttributeVector {
    pub fn new(sentiment: bool, commitment: bool, specificity: bool, hedging: bool) -> Self {
        AttributeVector {
            sentiment,
            commitment,
            specificity,
            hedging,
        }
    }

    /// Builds a vector from 0/1 integers; any nonzero value counts as 1.
    pub fn from_bits(bits: [u8; 4]) -> Self {
        AttributeVector::new(bits[0] != 0, bits[1] != 0, bits[2] != 0, bits[3] != 0)
    }

    /// All 16 binary attribute vectors, sentiment as the most significant bit.
    pub fn enumerate() -> impl Iterator<Item = AttributeVector> {
        (0u8..16).map(|m| AttributeVector::from_bits([m >> 3 & 1, m >> 2 & 1, m >> 1 & 1, m & 1]))
    }

    pub fn get(&self, attribute: Attribute) -> bool {
        match attribute {
            Attribute::Sentiment => self.sentiment,
            Attribute::Commitment => self.commitment,
            Attribute::Specificity => self.specificity,
            Attribute::Hedging => self.hedging,
        }
    }

    pub fn set(&mut self, attribute: Attribute, value: bool) {
        match attribute {
            Attribute::Sentiment => self.sentiment = value,
            Attribute::Commitment => self.commitment = value,
            Attribute::Specificity => self.specificity = value,
            Attribute::Hedging => self.hedging = value,
        }
    }

    /// Values as reals in (sentiment, commitment, specificity, hedging) order.
    pub fn as_reals(&self) -> [f64; 4] {
        Attribute::ALL.map(|a| if self.get(a) { 1.0 } else { 0.0 })
    }
}

impl fmt::Display for AttributeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = |v: bool| u8::from(v);
        write!(
            f,
            "({},{},{},{})",
            b(self.sentiment),
            b(self.commitment),
            b(self.specificity),
            b(self.hedging)
        )
    }
}

/// Externally produced scores for one chunk. Hedging is never ingested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PartialAttributes {
    pub sentiment: Option<bool>,
    pub commitment: Option<bool>,
    pub specificity: Option<bool>,
}

impl PartialAttributes {
    pub fn get(&self, attribute: Attribute) -> Option<bool> {
        match attribute {
            Attribute::Sentiment => self.sentiment,
            Attribute::Commitment => self.commitment,
            Attribute::Specificity => self.specificity,
            Attribute::Hedging => None,
        }
    }
}

pub type ScoreMap = HashMap<String, PartialAttributes>;

/// Parses external attribute scores from JSONL text. Blank lines are skipped.
pub fn parse_external_scores(source: &str, context: &str) -> Result<ScoreMap> {
    let mut map = ScoreMap::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            context: context.to_string(),
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("expected a JSON object".into()))?;
        let id = obj
            .get("id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| parse_err("missing string field \"id\"".into()))?
            .to_string();
        let mut record = PartialAttributes::default();
        for attr in [
            Attribute::Sentiment,
            Attribute::Commitment,
            Attribute::Specificity,
        ] {
            let Some(v) = obj.get(attr.name()) else {
                continue;
            };
            let bit = match v.as_u64() {
                Some(0) => false,
                Some(1) => true,
                _ => return Err(parse_err(format!("{attr} must be 0 or 1, got {v}"))),
            };
            match attr {
                Attribute::Sentiment => record.sentiment = Some(bit),
                Attribute::Commitment => record.commitment = Some(bit),
                Attribute::Specificity => record.specificity = Some(bit),
                Attribute::Hedging => unreachable!(),
            }
        }
        if map.insert(id.clone(), record).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(map)
}

pub fn load_external_scores(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    let source = String::from_utf8(bytes).map_err(|_| Error::NotUtf8 { path: path.into() })?;
    parse_external_scores(&source, &path.display().to_string())
}

/// Keyword lexicons used when an external score is missing.
#[derive(Debug, Clone, Default)]
pub struct FallbackLexicons {
    pub sentiment: Option<Lexicon>,
    pub commitment: Option<Lexicon>,
    pub specificity: Option<Lexicon>,
}

impl FallbackLexicons {
    /// The shipped keyword lists. These are test scaffolding, not models.
    pub fn shipped() -> Self {
        let load = |name, src| Some(Lexicon::parse(name, src).expect("shipped lexicon is valid"));
        FallbackLexicons {
            sentiment: load("fallback_sentiment", FALLBACK_SENTIMENT),
            commitment: load("fallback_commitment", FALLBACK_COMMITMENT),
            specificity: load("fallback_specificity", FALLBACK_SPECIFICITY),
        }
    }

    pub fn get(&self, attribute: Attribute) -> Option<&Lexicon> {
        match attribute {
            Attribute::Sentiment => self.sentiment.as_ref(),
            Attribute::Commitment => self.commitment.as_ref(),
            Attribute::Specificity => self.specificity.as_ref(),
            Attribute::Hedging => None,
        }
    }
}

/// Where an attribute value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    ExternalFile,
    FallbackLexicon,
    HedgingLexicon,
}

/// Per-attribute provenance of one scored chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSource {
    pub sentiment: SourceKind,
    pub commitment: SourceKind,
    pub specificity: SourceKind,
    pub hedging: SourceKind,
}

impl AttributeSource {
    pub fn get(&self, attribute: Attribute) -> SourceKind {
        match attribute {
            Attribute::Sentiment => self.sentiment,
            Attribute::Commitment => self.commitment,
            Attribute::Specificity => self.specificity,
            Attribute::Hedging => self.hedging,
        }
    }
}

/// Assembles attribute vectors for chunks.
#[derive(Debug, Clone)]
pub struct AttributeScorer {
    pub hedging: Lexicon,
    pub external: Option<ScoreMap>,
    pub fallbacks: FallbackLexicons,
}

impl AttributeScorer {
    pub fn new(hedging: Lexicon, external: Option<ScoreMap>, fallbacks: FallbackLexicons) -> Self {
        AttributeScorer {
            hedging,
            external,
            fallbacks,
        }
    }

    pub fn score(&self, chunk_id: &str, text: &str) -> Result<(AttributeVector, AttributeSource)> {
        let external = self.external.as_ref().and_then(|m| m.get(chunk_id));
        let mut vector = AttributeVector::default();
        let mut kinds = [SourceKind::HedgingLexicon; 4];
        for (slot, attr) in Attribute::ALL.into_iter().enumerate() {
            let (value, kind) = if attr == Attribute::Hedging {
                (
                    detect_hedging(text, &self.hedging).flag,
                    SourceKind::HedgingLexicon,
                )
            } else if let Some(v) = external.and_then(|e| e.get(attr)) {
                (v, SourceKind::ExternalFile)
            } else if let Some(lex) = self.fallbacks.get(attr) {
                (lex.matches_any(text), SourceKind::FallbackLexicon)
            } else {
                return Err(Error::UnresolvableAttribute {
                    chunk: chunk_id.to_string(),
                    attribute: attr.name(),
                });
            };
            vector.set(attr, value);
            kinds[slot] = kind;
        }
        let source = AttributeSource {
            sentiment: kinds[0],
            commitment: kinds[1],
            specificity: kinds[2],
            hedging: kinds[3],
        };
        Ok((vector, source))
    }
}
