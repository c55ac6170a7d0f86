//! Grammar of the structured model output (a truth label plus facts written
//! as conjunctions of ground literals) and its rewriting into triples.
//!
//! A well-formed output is a JSON-like object somewhere in the text:
//!
//! ```text
//! {"label": false, "facts": ["AuthorOf(Hamlet, William Shakespeare) ∧ ¬AuthorOf(Hamlet, Edgar Allan Poe)"]}
//! ```
//!
//! Prose around the object is ignored. Anything else is kept as
//! [`ParseOutcome::Invalid`] with the raw text and a reason code; parsing
//! never fails or panics.

mod envelope;
mod literal;
mod rewrite;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use envelope::Value;
pub use rewrite::{decamelize, entity_key, literal_to_triple, Polarity, SpoTriple};

use crate::layer::LayerTag;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundLiteral {
    pub negated: bool,
    pub predicate: String,
    pub args: Vec<String>,
}

impl fmt::Display for GroundLiteral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("¬")?;
        }
        write!(f, "{}({})", self.predicate, self.args.join(", "))
    }
}

/// One entry of the `facts` array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub text: String,
    pub literals: Vec<GroundLiteral>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub label: bool,
    pub facts: Vec<Fact>,
}

impl StructuredOutput {
    /// All literals, fact by fact, in order.
    pub fn literals(&self) -> impl Iterator<Item = &GroundLiteral> {
        self.facts.iter().flat_map(|f| f.literals.iter())
    }

    pub fn literal_count(&self) -> usize {
        self.facts.iter().map(|f| f.literals.len()).sum()
    }

    pub fn triples(&self, layer: LayerTag) -> Vec<SpoTriple> {
        self.literals()
            .map(|l| literal_to_triple(l).at_layer(layer))
            .collect()
    }

    /// Canonical text: single spaces, `∧` as conjunction, `¬` as negation.
    pub fn render(&self) -> String {
        let facts: Vec<String> = self
            .facts
            .iter()
            .map(|f| {
                let fact = f
                    .literals
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" ∧ ");
                serde_json::to_string(&fact).expect("strings always serialize")
            })
            .collect();
        format!("{{\"label\": {}, \"facts\": [{}]}}", self.label, facts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LiteralError {
    #[error("malformed literal at {position}: {detail}")]
    Malformed { position: usize, detail: String },
    #[error("predicate {predicate} has arity {arity}, expected 1 or 2")]
    Arity { predicate: String, arity: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum InvalidReason {
    /// No object with `label` and `facts` fields.
    NoObject,
    /// `label` is present but not a boolean.
    BadLabel,
    /// `facts` is present but not an array of strings.
    BadFacts,
    MalformedLiteral { fact: usize, detail: String },
    BadArity { fact: usize, predicate: String, arity: usize },
}

impl InvalidReason {
    pub fn code(&self) -> &'static str {
        match self {
            InvalidReason::NoObject => "no-object",
            InvalidReason::BadLabel => "bad-label",
            InvalidReason::BadFacts => "bad-facts",
            InvalidReason::MalformedLiteral { .. } => "malformed-literal",
            InvalidReason::BadArity { .. } => "bad-arity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ParseOutcome {
    Valid(StructuredOutput),
    Invalid { raw_text: String, reason: InvalidReason },
}

impl ParseOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, ParseOutcome::Valid(_))
    }

    pub fn output(&self) -> Option<&StructuredOutput> {
        match self {
            ParseOutcome::Valid(o) => Some(o),
            ParseOutcome::Invalid { .. } => None,
        }
    }

    pub fn label(&self) -> Option<bool> {
        self.output().map(|o| o.label)
    }
}

/// Parses one conjunction of literals.
pub fn parse_fact(text: &str) -> Result<Vec<GroundLiteral>, LiteralError> {
    literal::LiteralParser::new(text).fact()
}

/// Parses arbitrary model output.
pub fn parse_structured(text: &str) -> ParseOutcome {
    let invalid = |reason| ParseOutcome::Invalid {
        raw_text: text.to_string(),
        reason,
    };
    let chars: Vec<char> = text.chars().collect();
    let object = chars
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == '{')
        .filter_map(|(i, _)| envelope::object_at(&chars, i))
        .find(|map| map.contains_key("label") && map.contains_key("facts"));
    let Some(object) = object else {
        return invalid(InvalidReason::NoObject);
    };
    let Some(Value::Bool(label)) = object.get("label") else {
        return invalid(InvalidReason::BadLabel);
    };
    let Some(Value::Array(items)) = object.get("facts") else {
        return invalid(InvalidReason::BadFacts);
    };
    let mut facts = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let Value::String(fact) = item else {
            return invalid(InvalidReason::BadFacts);
        };
        match parse_fact(fact) {
            Ok(literals) => facts.push(Fact {
                text: fact.clone(),
                literals,
            }),
            Err(LiteralError::Malformed { detail, .. }) => {
                return invalid(InvalidReason::MalformedLiteral { fact: i, detail })
            }
            Err(LiteralError::Arity { predicate, arity }) => {
                return invalid(InvalidReason::BadArity {
                    fact: i,
                    predicate,
                    arity,
                })
            }
        }
    }
    ParseOutcome::Valid(StructuredOutput {
        label: *label,
        facts,
    })
}
