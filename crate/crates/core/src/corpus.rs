//! Claim datasets: loading, filtering, sampling and prompt templates.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_CLAIM_CHARS: usize = 35;
pub const MAX_CLAIM_CHARS: usize = 120;
pub const PLACEHOLDER: &str = "x";
const INPUT_SLOT: &str = "$INPUT";

pub const SOURCE_TEMPLATE: &str = concat!(
    "<s>[INST] <<SYS>>\n",
    "You are a journalist with expertise in fact-checking. Your role is to evaluate the truthfulness of factual claims. ",
    "To uphold journalistic integrity, you must produce a report containing a binary assessment and all the factual ",
    "information that supports your evaluation. Each factual information should be presented  as zeroth-order logic propositions.\n",
    "<</SYS>>\n\n",
    "George W. Bush won a presidential election [/INST] ",
    r#"{"label": true, "facts": ["isPolitician(George W. Bush) ∧ isFormerUSPresident(George W. Bush)","ParticipatedIn(2000 United States presidential election, George W. Bush)","BecamePresidentOf(United States of America, George W. Bush)"]}"#,
    " </s><s>[INST] $INPUT [/INST]",
);

pub const TARGET_TEMPLATE: &str = concat!(
    "<s>[INST] <<SYS>>\n",
    "You are an assistant with expertise in fact-checking. Your role is to assess claims using zeroth-order logic propositions.\n",
    "<</SYS>>\n\n",
    "Berlin is the capital of Germany [/INST] ",
    r#"{"label": true, "facts": ["IsCity(Berlin) ∧ CountryOf(Berlin, Germany)", "IsCountry(Germany) ∧ CapitalOf(Germany, Berlin)"]}"#,
    " </s><s>[INST] Edgar Allan Poe wrote Hamlet [/INST] ",
    r#"{"label": false, "facts": ["isWriter(Edgar Allan Poe)", "IsPlay(Hamlet)", "AuthorOf(Hamlet, William Shakespeare) ∧ ¬AuthorOf(Hamlet, Edgar Allan Poe)"]}"#,
    " </s><s>[INST] The Beatles were a rock band from England [/INST] ",
    r#"{"label": true, "facts": ["IsBand(The Beatles) ∧ MusicGenreOf(The Beatles, Rock)", "OriginOf(The Beatles, Liverpool) ∧ CountryOf(Liverpool, England)"]}"#,
    " </s><s>[INST] x [/INST]",
);

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("{0}")]
    Argument(String),
    #[error("claim {id:?} contains the placeholder word {PLACEHOLDER:?}")]
    PlaceholderInClaim { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Supported,
    Refuted,
    NotEnoughInfo,
}

impl GoldLabel {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            GoldLabel::Supported => Some(true),
            GoldLabel::Refuted => Some(false),
            GoldLabel::NotEnoughInfo => None,
        }
    }
}

/// Accepted spellings, compared case-insensitively after mapping `-` and
/// `_` to spaces.
pub const LABEL_ALIASES: &[(&str, GoldLabel)] = &[
    ("supported", GoldLabel::Supported),
    ("supports", GoldLabel::Supported),
    ("true", GoldLabel::Supported),
    ("refuted", GoldLabel::Refuted),
    ("refutes", GoldLabel::Refuted),
    ("false", GoldLabel::Refuted),
    ("not enough info", GoldLabel::NotEnoughInfo),
    ("notenoughinfo", GoldLabel::NotEnoughInfo),
    ("nei", GoldLabel::NotEnoughInfo),
];

impl FromStr for GoldLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().replace(['_', '-'], " ").to_lowercase();
        LABEL_ALIASES
            .iter()
            .find(|(alias, _)| *alias == norm)
            .map(|&(_, l)| l)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub text: String,
    pub gold: GoldLabel,
}

impl ClaimRecord {
    pub fn char_count(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    claim: Option<String>,
    label: Option<serde_json::Value>,
}

fn parse_record(line: &str, n: usize) -> Result<ClaimRecord, CorpusError> {
    let err = |message: String| CorpusError::Record { line: n, message };
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(v)) => v.to_string(),
        Some(other) => return Err(err(format!("id must be a string or number, got {other}"))),
        None => return Err(err("missing field `id`".into())),
    };
    let text = raw.claim.ok_or_else(|| err("missing field `claim`".into()))?;
    if text.trim().is_empty() {
        return Err(err("empty claim".into()));
    }
    let gold = match raw.label {
        Some(serde_json::Value::String(s)) => s.parse().map_err(err)?,
        Some(serde_json::Value::Bool(b)) => if b { GoldLabel::Supported } else { GoldLabel::Refuted },
        Some(other) => return Err(err(format!("label must be a string, got {other}"))),
        None => return Err(err("missing field `label`".into())),
    };
    Ok(ClaimRecord { id, text, gold })
}

/// Line-delimited JSON with `id`, `claim` and `label` per record. Blank lines
/// are skipped; order is kept.
pub fn load_claims(path: &Path) -> Result<Vec<ClaimRecord>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if !line.trim().is_empty() {
            out.push(parse_record(&line, i + 1)?);
        }
    }
    Ok(out)
}

pub fn write_claims(records: &[ClaimRecord]) -> String {
    records
        .iter()
        .map(|r| {
            let label = match r.gold {
                GoldLabel::Supported => "supported",
                GoldLabel::Refuted => "refuted",
                GoldLabel::NotEnoughInfo => "not_enough_info",
            };
            serde_json::json!({"id": r.id, "claim": r.text, "label": label}).to_string() + "\n"
        })
        .collect()
}

/// Drops not-enough-info claims and keeps claims of 35 to 120 characters
/// (Unicode scalar values), inclusive.
pub fn filter_claims(records: &[ClaimRecord]) -> Vec<ClaimRecord> {
    records
        .iter()
        .filter(|r| r.gold != GoldLabel::NotEnoughInfo)
        .filter(|r| (MIN_CLAIM_CHARS..=MAX_CLAIM_CHARS).contains(&r.char_count()))
        .cloned()
        .collect()
}

/// `n` records uniformly without replacement, in sampled order.
pub fn sample_claims(records: &[ClaimRecord], n: usize, seed: u64) -> Result<Vec<ClaimRecord>, CorpusError> {
    if n > records.len() {
        return Err(CorpusError::Argument(format!(
            "cannot sample {n} claims from {}",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, records.len(), n)
        .into_iter()
        .map(|i| records[i].clone())
        .collect())
}

pub fn class_counts(records: &[ClaimRecord]) -> BTreeMap<GoldLabel, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.gold).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub claim_id: String,
    pub source_text: String,
    pub target_text: String,
    pub placeholder_marker: String,
    /// Claim position within `source_text`, in characters.
    pub input_span_hint: Range<usize>,
}

impl PromptBundle {
    pub fn claim_in_source(&self) -> String {
        self.source_text
            .chars()
            .skip(self.input_span_hint.start)
            .take(self.input_span_hint.len())
            .collect()
    }
}

/// Fills the source template with the claim. Claims containing the
/// stand-alone word `x` are rejected so the placeholder stays unambiguous.
pub fn build_prompts(claim: &ClaimRecord) -> Result<PromptBundle, CorpusError> {
    if claim.text.trim().is_empty() {
        return Err(CorpusError::Argument(format!("claim {:?} is empty", claim.id)));
    }
    if claim.text.split_whitespace().any(|w| w == PLACEHOLDER) {
        return Err(CorpusError::PlaceholderInClaim { id: claim.id.clone() });
    }
    let slot = SOURCE_TEMPLATE.find(INPUT_SLOT).expect("template has an input slot");
    let start = SOURCE_TEMPLATE[..slot].chars().count();
    Ok(PromptBundle {
        claim_id: claim.id.clone(),
        source_text: SOURCE_TEMPLATE.replacen(INPUT_SLOT, &claim.text, 1),
        target_text: TARGET_TEMPLATE.to_string(),
        placeholder_marker: PLACEHOLDER.to_string(),
        input_span_hint: start..start + claim.char_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(text: &str, gold: GoldLabel) -> ClaimRecord {
        ClaimRecord {
            id: "1".into(),
            text: text.into(),
            gold,
        }
    }

    #[test]
    fn aliases() {
        assert_eq!("SUPPORTS".parse::<GoldLabel>().unwrap(), GoldLabel::Supported);
        assert_eq!("REFUTES".parse::<GoldLabel>().unwrap(), GoldLabel::Refuted);
        assert_eq!("NOT ENOUGH INFO".parse::<GoldLabel>().unwrap(), GoldLabel::NotEnoughInfo);
        assert_eq!("NOT_ENOUGH_INFO".parse::<GoldLabel>().unwrap(), GoldLabel::NotEnoughInfo);
        assert_eq!("NotEnoughInfo".parse::<GoldLabel>().unwrap(), GoldLabel::NotEnoughInfo);
        assert!("DISPUTED".parse::<GoldLabel>().is_err());
    }

    #[test]
    fn filter_boundaries() {
        let recs: Vec<_> = [34, 35, 120, 121]
            .iter()
            .map(|&n| rec(&"é".repeat(n), GoldLabel::Refuted))
            .chain([rec(&"a".repeat(50), GoldLabel::NotEnoughInfo)])
            .collect();
        let kept: Vec<usize> = filter_claims(&recs).iter().map(ClaimRecord::char_count).collect();
        assert_eq!(kept, vec![35, 120]);
        let c = rec("Charlemagne was crowned emperor on Christmas Day", GoldLabel::Supported);
        assert_eq!(filter_claims(&[c]).len(), 1);
    }

    #[test]
    fn sampling() {
        let recs: Vec<_> = (0..20)
            .map(|i| ClaimRecord {
                id: i.to_string(),
                text: "t".into(),
                gold: GoldLabel::Supported,
            })
            .collect();
        let a = sample_claims(&recs, 5, 3).unwrap();
        assert_eq!(a, sample_claims(&recs, 5, 3).unwrap());
        assert_ne!(a, sample_claims(&recs, 5, 4).unwrap());
        let mut all: Vec<String> = sample_claims(&recs, 20, 1).unwrap().into_iter().map(|r| r.id).collect();
        all.sort_by_key(|s| s.parse::<u32>().unwrap());
        assert_eq!(all, (0..20).map(|i| i.to_string()).collect::<Vec<_>>());
        assert!(sample_claims(&recs, 21, 1).is_err());
    }

    #[test]
    fn prompts() {
        let c = rec("Berlin is the capital of Germany", GoldLabel::Supported);
        let b = build_prompts(&c).unwrap();
        assert_eq!(b.claim_in_source(), c.text);
        assert!(b.source_text.ends_with("</s><s>[INST] Berlin is the capital of Germany [/INST]"));
        assert_eq!(b.source_text.matches(&c.text).count(), 1);
        assert!(b.target_text.ends_with("[INST] x [/INST]"));
        assert!(build_prompts(&rec("Solve for x in the equation", GoldLabel::Refuted)).is_err());
    }

    #[test]
    fn record_errors_carry_line() {
        let e = parse_record(r#"{"id": 3, "label": "SUPPORTS"}"#, 7).unwrap_err();
        assert_eq!(e.to_string(), "line 7: missing field `claim`");
        let r = parse_record(r#"{"id": 75397, "claim": "c", "label": "REFUTES"}"#, 1).unwrap();
        assert_eq!(r.id, "75397");
    }
}
