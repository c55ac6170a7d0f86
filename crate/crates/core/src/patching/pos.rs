//! Part-of-speech driven token weights.

use std::collections::HashMap;
use std::ops::Range;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{PatchError, TokenWeightVector};

/// Coarse tag set; every tag other than `NOUN`, `PROPN` and `VERB` maps to
/// [`PosTag::Other`] (auxiliaries included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Propn,
    Verb,
    Other,
}

impl PosTag {
    /// Nouns, proper nouns and verbs receive weight.
    pub fn is_content(self) -> bool {
        matches!(self, PosTag::Noun | PosTag::Propn | PosTag::Verb)
    }
}

impl FromStr for PosTag {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "NOUN" => PosTag::Noun,
            "PROPN" => PosTag::Propn,
            "VERB" => PosTag::Verb,
            _ => PosTag::Other,
        })
    }
}

/// Weight 1 on the last token of every noun, proper noun and verb, 0
/// elsewhere. `alignment[i]` holds the absolute token range of `words[i]`.
pub fn compute_pos_weights(
    words: &[(String, PosTag)],
    alignment: &[Range<usize>],
    input_span: Range<usize>,
) -> Result<TokenWeightVector, PatchError> {
    if words.len() != alignment.len() {
        return Err(PatchError::Argument(format!(
            "{} words but {} alignment ranges",
            words.len(),
            alignment.len()
        )));
    }
    let mut weights = vec![0.0f32; input_span.len()];
    for ((word, tag), range) in words.iter().zip(alignment) {
        if range.is_empty() || range.start < input_span.start || range.end > input_span.end {
            return Err(PatchError::Argument(format!(
                "word {word:?} aligned to tokens {range:?}, outside input span {input_span:?}"
            )));
        }
        if tag.is_content() {
            weights[range.end - 1 - input_span.start] = 1.0;
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(PatchError::DegenerateWeights);
    }
    Ok(TokenWeightVector { weights })
}

fn starts_word(text: &str) -> bool {
    text.starts_with(|c: char| c.is_whitespace() || c == '▁' || c == 'Ġ')
}

fn is_wordlike(text: &str) -> bool {
    text.trim_start_matches(|c: char| c.is_whitespace() || c == '▁' || c == 'Ġ')
        .starts_with(|c: char| c.is_alphanumeric())
}

/// Groups tokens of `input_span` into words. A token opens a new word when it
/// starts with whitespace (or a SentencePiece/BPE space marker), is
/// punctuation, or follows punctuation.
pub fn words_from_tokens(token_texts: &[String], input_span: Range<usize>) -> Vec<(String, Range<usize>)> {
    let mut words: Vec<(String, Range<usize>)> = Vec::new();
    for i in input_span {
        let text = &token_texts[i];
        let clean = text.trim_start_matches(|c: char| c.is_whitespace() || c == '▁' || c == 'Ġ');
        if clean.is_empty() {
            continue;
        }
        let continues = !starts_word(text)
            && is_wordlike(text)
            && words
                .last()
                .is_some_and(|(w, r)| r.end == i && w.starts_with(|c: char| c.is_alphanumeric()));
        match words.last_mut() {
            Some((word, range)) if continues => {
                word.push_str(clean);
                range.end = i + 1;
            }
            _ => words.push((clean.to_string(), i..i + 1)),
        }
    }
    words
}

/// Dictionary tagger for fixtures and the toy pipeline. Unknown words are
/// tagged by shape: capitalized → `PROPN`, numeric → other, `-ed` → `VERB`,
/// everything else → `NOUN`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconTagger;

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "all", "each", "every", "no",
    "of", "in", "on", "at", "by", "for", "with", "from", "to", "into", "onto", "about", "as",
    "after", "before", "during", "over", "under", "between", "through", "against", "without",
    "within", "since", "until", "and", "or", "but", "nor", "so", "yet", "if", "than", "because",
    "while", "although", "is", "are", "was", "were", "be", "been", "being", "am", "has", "have",
    "had", "do", "does", "did", "will", "would", "can", "could", "may", "might", "must", "shall",
    "should", "not", "never", "also", "only", "very", "too", "just", "still", "even", "he", "she",
    "it", "they", "we", "you", "i", "his", "her", "its", "their", "our", "your", "my", "him",
    "them", "us", "me", "who", "whom", "whose", "which", "what", "where", "when", "how", "why",
    "there", "here", "one", "two", "three", "first", "second", "last", "many", "much", "more",
    "most", "few", "several", "big", "small", "large", "great", "new", "old", "american",
    "british", "french", "german", "english", "famous", "popular", "real", "best", "own", "s",
];

const VERBS: &[&str] = &[
    "wrote", "write", "writes", "won", "win", "wins", "moved", "move", "moves", "founded",
    "founds", "found", "murdered", "killed", "kills", "kill", "crowned", "born", "died", "dies",
    "starred", "stars", "directed", "directs", "played", "plays", "released", "sang", "sings",
    "made", "makes", "make", "became", "become", "becomes", "created", "creates", "married",
    "marries", "lives", "lived", "worked", "works", "increasing", "increases", "causes", "caused",
    "invented", "discovered", "built", "produced", "produces", "owns", "owned", "leads", "led",
    "joined", "left", "visited", "published", "developed", "received", "elected",
];

const NOUNS: &[&str] = &[
    "emperor", "empress", "day", "child", "children", "book", "band", "capital", "city", "country",
    "company", "effects", "effect", "election", "creator", "population", "people", "million",
    "energy", "investment", "jobs", "job", "warming", "magnitude", "frequency", "droughts",
    "floods", "film", "movie", "rock", "play", "writer", "singer", "actor", "actress", "president",
    "king", "queen", "war", "album", "song", "series", "show", "team", "player", "university",
    "river", "island", "state", "government", "climate", "temperature", "sea", "level", "ice",
];

fn lexicon() -> &'static HashMap<&'static str, PosTag> {
    static LEXICON: OnceLock<HashMap<&'static str, PosTag>> = OnceLock::new();
    LEXICON.get_or_init(|| {
        let mut m = HashMap::new();
        m.extend(FUNCTION_WORDS.iter().map(|w| (*w, PosTag::Other)));
        m.extend(VERBS.iter().map(|w| (*w, PosTag::Verb)));
        m.extend(NOUNS.iter().map(|w| (*w, PosTag::Noun)));
        m
    })
}

impl LexiconTagger {
    pub fn tag(&self, word: &str) -> PosTag {
        let lower = word.to_lowercase();
        if let Some(tag) = lexicon().get(lower.as_str()) {
            return *tag;
        }
        let first = word.chars().next();
        match first {
            None => PosTag::Other,
            Some(c) if !c.is_alphanumeric() => PosTag::Other,
            Some(c) if c.is_numeric() => PosTag::Other,
            Some(c) if c.is_uppercase() => PosTag::Propn,
            _ if lower.ends_with("ed") => PosTag::Verb,
            _ => PosTag::Noun,
        }
    }

    pub fn tag_words(&self, words: &[(String, Range<usize>)]) -> Vec<(String, PosTag)> {
        words.iter().map(|(w, _)| (w.clone(), self.tag(w))).collect()
    }
}
