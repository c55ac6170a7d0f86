//! Toy tokenizer and vocabulary.
//!
//! The vocabulary holds a fixed lexicon (specials, structured-output pieces,
//! predicate names, entity names, prose words, common prompt words) followed
//! by hash buckets for everything else. Words that are not in the lexicon are
//! cut into chunks of at most [`CHUNK_CHARS`] characters so that long words
//! span several tokens, as they would under a subword tokenizer.

use std::collections::HashMap;
use std::ops::Range;

use super::TokenSequence;

pub const UNK: u32 = 0;
pub const EOS: u32 = 1;
pub const CHUNK_CHARS: usize = 4;
/// Vocabularies with fewer free slots than this after the lexicon are "bare".
pub const MIN_BUCKETS: usize = 16;

pub const OPEN_OBJECT: &str = "{\"label\": ";
pub const FACTS_KEY: &str = ", \"facts\": [\"";
pub const NEGATION: &str = "¬";
pub const OPEN_PAREN: &str = "(";
pub const ARG_SEP: &str = ", ";
pub const CLOSE_PAREN: &str = ")";
pub const CONJUNCTION: &str = " ∧ ";
pub const FACT_SEP: &str = "\", \"";
pub const CLOSE_OBJECT: &str = "\"]}";

const STRUCTURAL: &[&str] = &[
    OPEN_OBJECT,
    "true",
    "false",
    FACTS_KEY,
    NEGATION,
    OPEN_PAREN,
    ARG_SEP,
    CLOSE_PAREN,
    CONJUNCTION,
    FACT_SEP,
    CLOSE_OBJECT,
];

const UNARY_PREDICATES: &[&str] = &[
    "IsPerson",
    "IsCity",
    "IsCountry",
    "IsBand",
    "IsPlay",
    "IsWriter",
    "IsCharacter",
    "IsShow",
    "WasQueen",
    "IsHistoricalFigure",
    "IsVillain",
    "IsSuperhero",
    "IsCompany",
    "IsEvent",
];

const BINARY_PREDICATES: &[&str] = &[
    "CountryOf",
    "CapitalOf",
    "AuthorOf",
    "MusicGenreOf",
    "OriginOf",
    "BornIn",
    "DiedIn",
    "MovedTo",
    "CreatorOf",
    "FounderOf",
    "KilledBy",
    "SpouseOf",
    "LocationOf",
    "MemberOf",
];

const ENTITIES: &[&str] = &[
    "Berlin",
    "Germany",
    "England",
    "France",
    "Hamlet",
    "William Shakespeare",
    "Edgar Allan Poe",
    "The Beatles",
    "Liverpool",
    "Rock",
    "Empress Matilda",
    "Mary Queen of Scots",
    "Scotland",
    "Charlemagne",
    "Batman",
    "Robin",
    "The Joker",
    "George Lucas",
    "Industrial Light & Magic",
    "ILM",
    "Christmas Day",
    "Rome",
    "Bojack Horseman",
    "Hollywood",
    "Mexico",
    "Theodora",
    "Constantinople",
    "United States",
    "Europe",
    "Coal",
];

const PROSE: &[&str] = &[
    " I", " apologize", ",", " but", " Here", " is", " the", " updated", " output", ":", " not",
    " sure", " understand", " what", " you", " are", " saying", ".", " Could", " explain", "?",
    " a", " valid", " name",
];

const PROMPT_WORDS: &[&str] = &[
    " x", "<", ">", "[", "]", "/", "s", "INST", "SYS", " [", " {\"", " of", " in", " was", " by",
    " to", " and", " The", " Is",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Unknown,
    EndOfText,
    Structural,
    UnaryPredicate,
    BinaryPredicate,
    Entity,
    Prose,
    PromptWord,
    Bucket,
}

#[derive(Debug, Clone)]
pub struct ToyVocab {
    texts: Vec<String>,
    kinds: Vec<TokenKind>,
    index: HashMap<String, u32>,
    lexicon_len: usize,
}

/// One pre-tokenized piece with its position in the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub id: u32,
    pub text: String,
    /// Character (Unicode scalar) offsets into the source text.
    pub chars: Range<usize>,
}

impl ToyVocab {
    pub fn new(vocab_size: usize) -> Self {
        let mut lexicon: Vec<(&str, TokenKind)> = vec![("<unk>", TokenKind::Unknown), ("<eos>", TokenKind::EndOfText)];
        lexicon.extend(STRUCTURAL.iter().map(|s| (*s, TokenKind::Structural)));
        lexicon.extend(UNARY_PREDICATES.iter().map(|s| (*s, TokenKind::UnaryPredicate)));
        lexicon.extend(BINARY_PREDICATES.iter().map(|s| (*s, TokenKind::BinaryPredicate)));
        lexicon.extend(ENTITIES.iter().map(|s| (*s, TokenKind::Entity)));
        lexicon.extend(PROSE.iter().map(|s| (*s, TokenKind::Prose)));
        lexicon.extend(PROMPT_WORDS.iter().map(|s| (*s, TokenKind::PromptWord)));

        let (texts, kinds, lexicon_len): (Vec<String>, Vec<TokenKind>, usize) =
            if vocab_size >= lexicon.len() + MIN_BUCKETS {
                let mut texts: Vec<String> = lexicon.iter().map(|(t, _)| t.to_string()).collect();
                let mut kinds: Vec<TokenKind> = lexicon.iter().map(|(_, k)| *k).collect();
                for b in 0..vocab_size - lexicon.len() {
                    texts.push(format!("<b{b}>"));
                    kinds.push(TokenKind::Bucket);
                }
                (texts, kinds, lexicon.len())
            } else {
                let mut texts = vec!["<unk>".to_string(), "<eos>".to_string()];
                let mut kinds = vec![TokenKind::Unknown, TokenKind::EndOfText];
                for id in 2..vocab_size {
                    texts.push(format!("<t{id}>"));
                    kinds.push(TokenKind::Bucket);
                }
                (texts, kinds, 2)
            };
        let index = texts[..lexicon_len]
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            texts,
            kinds,
            index,
            lexicon_len,
        }
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// Whether the structured-output lexicon fits into this vocabulary.
    pub fn has_lexicon(&self) -> bool {
        self.lexicon_len > 2
    }

    pub fn text(&self, id: u32) -> &str {
        &self.texts[id as usize]
    }

    pub fn kind(&self, id: u32) -> TokenKind {
        self.kinds[id as usize]
    }

    pub fn id_of(&self, text: &str) -> Option<u32> {
        self.index.get(text).copied()
    }

    fn bucket_id(&self, piece: &str) -> u32 {
        let buckets = self.texts.len() - self.lexicon_len;
        (self.lexicon_len + (fnv1a(piece.as_bytes()) % buckets as u64) as usize) as u32
    }

    fn piece_id(&self, piece: &str) -> u32 {
        self.id_of(piece).unwrap_or_else(|| self.bucket_id(piece))
    }

    /// Splits `text` into pieces. A single space directly before a word or
    /// symbol is attached to it; other whitespace forms its own piece.
    pub fn tokenize(&self, text: &str) -> Vec<Piece> {
        let chars: Vec<char> = text.chars().collect();
        let mut pieces = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                let mut j = i;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                let attach = chars[j - 1] == ' ' && j < chars.len();
                let ws_end = if attach { j - 1 } else { j };
                if ws_end > i {
                    self.push_piece(&mut pieces, &chars, i..ws_end);
                }
                if attach {
                    let end = word_end(&chars, j);
                    self.push_word(&mut pieces, &chars, j - 1..end);
                    i = end;
                } else {
                    i = j;
                }
            } else {
                let end = word_end(&chars, i);
                self.push_word(&mut pieces, &chars, i..end);
                i = end;
            }
        }
        pieces
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let pieces = self.tokenize(text);
        TokenSequence {
            token_ids: pieces.iter().map(|p| p.id).collect(),
            token_texts: pieces.into_iter().map(|p| p.text).collect(),
        }
    }

    /// Encodes `text` and returns the token range overlapping the character
    /// range `chars`.
    pub fn encode_with_span(&self, text: &str, chars: Range<usize>) -> (TokenSequence, Range<usize>) {
        let pieces = self.tokenize(text);
        let overlapping: Vec<usize> = pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| p.chars.start < chars.end && chars.start < p.chars.end)
            .map(|(i, _)| i)
            .collect();
        let span = match (overlapping.first(), overlapping.last()) {
            (Some(&a), Some(&b)) => a..b + 1,
            _ => 0..0,
        };
        let seq = TokenSequence {
            token_ids: pieces.iter().map(|p| p.id).collect(),
            token_texts: pieces.into_iter().map(|p| p.text).collect(),
        };
        (seq, span)
    }

    fn push_piece(&self, out: &mut Vec<Piece>, chars: &[char], range: Range<usize>) {
        let text: String = chars[range.clone()].iter().collect();
        out.push(Piece {
            id: self.piece_id(&text),
            text,
            chars: range,
        });
    }

    /// `range` covers an optional leading space plus one word or symbol.
    fn push_word(&self, out: &mut Vec<Piece>, chars: &[char], range: Range<usize>) {
        let text: String = chars[range.clone()].iter().collect();
        if self.id_of(&text).is_some() || !self.has_lexicon() {
            return self.push_piece(out, chars, range);
        }
        let lead = usize::from(chars[range.start] == ' ');
        let body = range.end - range.start - lead;
        if body <= CHUNK_CHARS {
            return self.push_piece(out, chars, range);
        }
        let mut start = range.start;
        let mut first_end = range.start + lead + CHUNK_CHARS;
        while start < range.end {
            let end = first_end.min(range.end);
            self.push_piece(out, chars, start..end);
            start = end;
            first_end = end + CHUNK_CHARS;
        }
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id != EOS)
            .map(|&id| self.text(id))
            .collect()
    }

    pub fn ids_of_kind(&self, kind: TokenKind) -> impl Iterator<Item = u32> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(move |(_, k)| **k == kind)
            .map(|(i, _)| i as u32)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn word_end(chars: &[char], start: usize) -> usize {
    let c = chars[start];
    if !is_word_char(c) {
        return start + 1;
    }
    let mut j = start;
    while j < chars.len() && is_word_char(chars[j]) {
        j += 1;
    }
    j
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Token-level grammar of the structured output, used for constrained
/// greedy decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrammarState {
    Start,
    LabelValue,
    FactsKey,
    LiteralStart,
    AfterNegation,
    OpenParen { binary: bool },
    FirstArg { binary: bool },
    AfterFirstArg { binary: bool },
    SecondArg,
    CloseParen,
    AfterLiteral,
    Done,
}

impl GrammarState {
    /// Fewest tokens needed to reach a complete output from this state.
    pub fn min_to_close(self) -> usize {
        use GrammarState::*;
        match self {
            Done => 0,
            AfterLiteral => 1,
            CloseParen => 2,
            SecondArg => 3,
            AfterFirstArg { binary: false } => 2,
            AfterFirstArg { binary: true } => 4,
            FirstArg { binary } => 1 + AfterFirstArg { binary }.min_to_close(),
            OpenParen { binary } => 1 + FirstArg { binary }.min_to_close(),
            LiteralStart | AfterNegation => 1 + OpenParen { binary: false }.min_to_close(),
            FactsKey => 1 + LiteralStart.min_to_close(),
            LabelValue => 1 + FactsKey.min_to_close(),
            Start => 1 + LabelValue.min_to_close(),
        }
    }

    /// Next state after emitting `id`, or `None` if the token is not allowed.
    pub fn advance(self, vocab: &ToyVocab, id: u32) -> Option<GrammarState> {
        use GrammarState::*;
        let kind = vocab.kind(id);
        let text = vocab.text(id);
        let is = |s: &str| kind == TokenKind::Structural && text == s;
        let predicate = || match kind {
            TokenKind::UnaryPredicate => Some(OpenParen { binary: false }),
            TokenKind::BinaryPredicate => Some(OpenParen { binary: true }),
            _ => None,
        };
        match self {
            Start if is(OPEN_OBJECT) => Some(LabelValue),
            LabelValue if is("true") || is("false") => Some(FactsKey),
            FactsKey if is(FACTS_KEY) => Some(LiteralStart),
            LiteralStart if is(NEGATION) => Some(AfterNegation),
            LiteralStart | AfterNegation => predicate(),
            OpenParen { binary } if is(OPEN_PAREN) => Some(FirstArg { binary }),
            FirstArg { binary } if kind == TokenKind::Entity => Some(AfterFirstArg { binary }),
            AfterFirstArg { binary: true } if is(ARG_SEP) => Some(SecondArg),
            AfterFirstArg { binary: false } if is(CLOSE_PAREN) => Some(AfterLiteral),
            SecondArg if kind == TokenKind::Entity => Some(CloseParen),
            CloseParen if is(CLOSE_PAREN) => Some(AfterLiteral),
            AfterLiteral if is(CONJUNCTION) || is(FACT_SEP) => Some(LiteralStart),
            AfterLiteral if is(CLOSE_OBJECT) => Some(Done),
            _ => None,
        }
    }
}
