//! Rewriting of ground literals into subject–relation–object triples.

use serde::{Deserialize, Serialize};

use super::GroundLiteral;
use crate::layer::LayerTag;

const COPULAS: &[&str] = &["is", "was", "are", "were", "has", "had"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Asserted,
    Negated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpoTriple {
    pub subject: String,
    /// Relation text without negation.
    pub relation: String,
    pub object: String,
    pub polarity: Polarity,
    /// Unary rewriting: the relation is a copula and negation follows it.
    pub copular: bool,
    pub layer: Option<LayerTag>,
}

impl SpoTriple {
    /// Relation with negation applied: `not author of`, `is not`.
    pub fn rendered_relation(&self) -> String {
        match (self.polarity, self.copular) {
            (Polarity::Asserted, _) => self.relation.clone(),
            (Polarity::Negated, true) => format!("{} not", self.relation),
            (Polarity::Negated, false) => format!("not {}", self.relation),
        }
    }

    pub fn at_layer(mut self, layer: LayerTag) -> Self {
        self.layer = Some(layer);
        self
    }
}

/// Binary `R(a, b)` becomes `⟨a, r, b⟩`. Unary predicates whose first word is
/// a copula or auxiliary (`WasQueen`) split into `⟨a, was, queen⟩`; any other
/// unary predicate `P(a)` becomes `⟨a, is, p⟩`.
pub fn literal_to_triple(lit: &GroundLiteral) -> SpoTriple {
    let polarity = if lit.negated {
        Polarity::Negated
    } else {
        Polarity::Asserted
    };
    let words = decamelize(&lit.predicate);
    let (subject, relation, object, copular) = match lit.args.as_slice() {
        [a, b] => (a.clone(), words, b.clone(), false),
        [a] => match words.split_once(' ') {
            Some((head, rest)) if COPULAS.contains(&head) => (a.clone(), head.to_string(), rest.to_string(), true),
            _ => (a.clone(), "is".to_string(), words, true),
        },
        _ => unreachable!("literal arity is validated at parse time"),
    };
    SpoTriple {
        subject,
        relation,
        object,
        polarity,
        copular,
        layer: None,
    }
}

/// `MusicGenreOf` → `music genre of`; `isFormerUSPresident` →
/// `is former us president`; `Top10Songs` → `top 10 songs`.
pub fn decamelize(name: &str) -> String {
    let chars: Vec<char> = name.chars().collect();
    let mut words: Vec<String> = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        if let Some(&prev) = i.checked_sub(1).and_then(|j| chars.get(j)) {
            let next = chars.get(i + 1).copied();
            let boundary = (prev.is_lowercase() && c.is_uppercase())
                || (prev.is_alphabetic() && c.is_numeric())
                || (prev.is_numeric() && c.is_alphabetic())
                || (prev.is_uppercase() && c.is_uppercase() && next.is_some_and(char::is_lowercase));
            if boundary && !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.join(" ")
}

/// Node identity key: case-folded, trimmed, internal whitespace collapsed.
pub fn entity_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(neg: bool, p: &str, args: &[&str]) -> GroundLiteral {
        GroundLiteral {
            negated: neg,
            predicate: p.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn decamelize_cases() {
        assert_eq!(decamelize("MusicGenreOf"), "music genre of");
        assert_eq!(decamelize("is"), "is");
        assert_eq!(decamelize("BecamePresidentOf"), "became president of");
        assert_eq!(decamelize("isFormerUSPresident"), "is former us president");
        assert_eq!(decamelize("Top10Songs"), "top 10 songs");
        assert_eq!(decamelize("year_of_birth"), "year of birth");
    }

    #[test]
    fn decamelize_idempotent_on_output() {
        for s in ["MusicGenreOf", "isFormerUSPresident", "KilledByJoker", "A1B2"] {
            let once = decamelize(s);
            assert_eq!(decamelize(&once), once);
        }
    }

    #[test]
    fn negated_binary() {
        let t = literal_to_triple(&lit(true, "AuthorOf", &["Hamlet", "Edgar Allan Poe"]));
        assert_eq!(
            (t.subject.as_str(), t.rendered_relation().as_str(), t.object.as_str()),
            ("Hamlet", "not author of", "Edgar Allan Poe")
        );
        assert_eq!(t.relation, "author of");
    }

    #[test]
    fn unary_copula_split() {
        let t = literal_to_triple(&lit(false, "IsCity", &["Berlin"]));
        assert_eq!((t.subject.as_str(), t.relation.as_str(), t.object.as_str()), ("Berlin", "is", "city"));
        let t = literal_to_triple(&lit(false, "WasQueen", &["Mary Queen of Scots"]));
        assert_eq!(t.relation, "was");
        assert_eq!(t.object, "queen");
        let t = literal_to_triple(&lit(true, "isInEurope", &["Mexico"]));
        assert_eq!(t.rendered_relation(), "is not");
        assert_eq!(t.object, "in europe");
    }

    #[test]
    fn unary_without_copula_uses_is() {
        let t = literal_to_triple(&lit(false, "SuperheroOf", &["Robin"]));
        assert_eq!((t.relation.as_str(), t.object.as_str()), ("is", "superhero of"));
        let t = literal_to_triple(&lit(false, "Island", &["Crete"]));
        assert_eq!((t.relation.as_str(), t.object.as_str()), ("is", "island"));
        let t = literal_to_triple(&lit(false, "Is", &["X"]));
        assert_eq!((t.relation.as_str(), t.object.as_str()), ("is", "is"));
    }

    #[test]
    fn entity_key_normalizes() {
        assert_eq!(entity_key("  The   Joker "), "the joker");
        assert_eq!(entity_key("ILM"), "ilm");
    }
}
