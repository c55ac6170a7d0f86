use std::collections::BTreeSet;
use std::io::Write;

use latentkg::corpus::{
    build_prompts, class_counts, filter_claims, load_claims, sample_claims, write_claims, ClaimRecord, CorpusError,
    GoldLabel, SOURCE_TEMPLATE, TARGET_TEMPLATE,
};
use proptest::prelude::*;

#[path = "common/detex.rs"]
mod detex;
use detex::detex;

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn claim_of_len(id: &str, n: usize) -> ClaimRecord {
    let text: String = "Berlin lies in Germany and in Europe ".chars().cycle().take(n).collect();
    ClaimRecord {
        id: id.into(),
        text: text.trim_end().to_string() + &"e".repeat(n - text.trim_end().chars().count()),
        gold: GoldLabel::Supported,
    }
}

#[test]
fn length_filter_boundaries() {
    let records: Vec<ClaimRecord> = [34, 35, 120, 121].iter().map(|&n| claim_of_len(&n.to_string(), n)).collect();
    for r in &records {
        assert_eq!(r.char_count(), r.id.parse::<usize>().unwrap());
    }
    let kept: Vec<String> = filter_claims(&records).into_iter().map(|r| r.id).collect();
    assert_eq!(kept, vec!["35", "120"]);

    // Characters, not bytes.
    let accented = ClaimRecord {
        id: "a".into(),
        text: "é".repeat(35),
        gold: GoldLabel::Refuted,
    };
    assert_eq!(filter_claims(&[accented]).len(), 1);

    let nei = ClaimRecord {
        gold: GoldLabel::NotEnoughInfo,
        ..claim_of_len("n", 50)
    };
    assert!(filter_claims(&[nei]).is_empty());
}

#[test]
fn sampling_is_reproducible() {
    let records: Vec<ClaimRecord> = (0..500).map(|i| claim_of_len(&i.to_string(), 40)).collect();
    let a = sample_claims(&records, 50, 7).unwrap();
    let b = sample_claims(&records, 50, 7).unwrap();
    let c = sample_claims(&records, 50, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let ids: BTreeSet<&str> = a.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids.len(), 50);
    assert!(matches!(sample_claims(&records, 501, 7), Err(CorpusError::Argument(_))));
}

#[test]
fn fixture_corpus_loads() {
    let claims = load_claims(&fixture("claims10.jsonl")).unwrap();
    assert_eq!(claims.len(), 10);
    assert_eq!(filter_claims(&claims), claims);
    let counts = class_counts(&claims);
    assert!(counts[&GoldLabel::Supported] > 0 && counts[&GoldLabel::Refuted] > 0);
    for c in &claims {
        let bundle = build_prompts(c).unwrap();
        assert_eq!(bundle.claim_in_source(), c.text);
    }
}

#[test]
fn loader_reports_line_numbers_and_aliases() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, r#"{{"id": 1, "claim": "Paris is in France", "label": "SUPPORTS"}}"#).unwrap();
    writeln!(f).unwrap();
    writeln!(f, r#"{{"id": "b", "claim": "Paris is in Spain", "label": "refuted"}}"#).unwrap();
    writeln!(f, r#"{{"id": "c", "claim": "Paris is big", "label": "NOT ENOUGH INFO"}}"#).unwrap();
    let claims = load_claims(f.path()).unwrap();
    assert_eq!(claims.iter().map(|c| c.gold).collect::<Vec<_>>(), vec![GoldLabel::Supported, GoldLabel::Refuted, GoldLabel::NotEnoughInfo]);
    assert_eq!(claims[0].id, "1");

    writeln!(f, r#"{{"id": "d", "claim": "Paris is disputed", "label": "DISPUTED"}}"#).unwrap();
    match load_claims(f.path()) {
        Err(CorpusError::Record { line, .. }) => assert_eq!(line, 5),
        other => panic!("{other:?}"),
    }
}

#[test]
fn placeholder_word_is_rejected() {
    let bad = ClaimRecord {
        id: "p".into(),
        text: "The variable x is larger than the number seven".into(),
        gold: GoldLabel::Supported,
    };
    assert!(matches!(build_prompts(&bad), Err(CorpusError::PlaceholderInClaim { .. })));
    let fine = ClaimRecord {
        text: "Xavier was born in Texas before the year 1990".into(),
        ..bad
    };
    assert!(build_prompts(&fine).is_ok());
}

#[test]
fn templates_match_typeset_source() {
    let tex = std::fs::read_to_string(fixture("prompt_templates.tex")).unwrap();
    let (source, target) = tex.split_once("%% target\n").unwrap();
    let source = source.strip_prefix("%% source\n").unwrap();
    assert_eq!(detex(source), SOURCE_TEMPLATE);
    assert_eq!(detex(target), TARGET_TEMPLATE);
    assert!(SOURCE_TEMPLATE.contains("presented  as"));
}

#[test]
fn source_prompt_differs_only_at_input_slot() {
    let c = ClaimRecord {
        id: "q".into(),
        text: "The Eiffel Tower is located in Rome, Italy".into(),
        gold: GoldLabel::Refuted,
    };
    let b = build_prompts(&c).unwrap();
    let (head, tail) = SOURCE_TEMPLATE.split_once("$INPUT").unwrap();
    assert_eq!(b.source_text, format!("{head}{}{tail}", c.text));
    assert_eq!(b.target_text.as_bytes(), TARGET_TEMPLATE.as_bytes());
    assert!(b.target_text.ends_with("[INST] x [/INST]"));
}

proptest! {
    #[test]
    fn write_then_load_round_trips(texts in prop::collection::vec("[A-Za-z ,.']{1,60}", 1..10)) {
        let records: Vec<ClaimRecord> = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.trim().is_empty())
            .map(|(i, t)| ClaimRecord {
                id: format!("r{i}"),
                text: t.clone(),
                gold: if i % 2 == 0 { GoldLabel::Supported } else { GoldLabel::Refuted },
            })
            .collect();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(write_claims(&records).as_bytes()).unwrap();
        prop_assert_eq!(load_claims(f.path()).unwrap(), records);
    }
}
