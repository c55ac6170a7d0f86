//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use latentkg::cluster::{estimate_bandwidth, mean_shift, MeanShiftParams};
use latentkg::corpus::{
    build_prompts, filter_claims, sample_claims, ClaimRecord, GoldLabel, SOURCE_TEMPLATE, TARGET_TEMPLATE,
};
use latentkg::embedsim::{graph_similarity, DiffusionEmbedder, NodeEmbedder, NodeEmbeddingMatrix};
use latentkg::kgraph::LayerGraph;
use latentkg::layer::LayerTag;
use latentkg::literalparse::{literal_to_triple, parse_structured, GroundLiteral, ParseOutcome, Polarity, SpoTriple};
use latentkg::metrics::{compute_report, roc_auc, self_consistency, LabeledPrediction, Predicted};
use latentkg::patching::{build_patch_plan, claim_weights, find_placeholder, merge_activations, sweep_layers, MergeOptions};
use latentkg::trace::{run_with_trace, substituted_embeddings, LanguageModel, ModelConfig, ToyModel};
use latentkg::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[path = "../../core/tests/common/detex.rs"]
mod detex;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn within(limit: Duration, start: Instant) -> Check {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(())
}

fn c1_rewriting() -> Check {
    const COPULAS: &[&str] = &["is", "was", "are", "has"];
    const WORDS: &[&str] = &["author", "of", "capital", "born", "in", "genre", "city", "member"];
    const ENTITIES: &[&str] = &["Berlin", "Germany", "Edgar Allan Poe", "The Beatles", "Hamlet"];
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..50 {
        let mut words: Vec<&str> = Vec::new();
        if rng.gen_bool(0.3) {
            words.push(COPULAS.choose(&mut rng).unwrap());
        }
        for _ in 0..rng.gen_range(1..=3) {
            words.push(WORDS.choose(&mut rng).unwrap());
        }
        let args: Vec<String> = (0..rng.gen_range(1..=2)).map(|_| ENTITIES.choose(&mut rng).unwrap().to_string()).collect();
        let negated = rng.gen_bool(0.5);
        let predicate: String = words
            .iter()
            .enumerate()
            .map(|(i, w)| if i == 0 { w.to_string() } else { w[..1].to_uppercase() + &w[1..] })
            .collect();
        let t = literal_to_triple(&GroundLiteral { negated, predicate, args: args.clone() });
        let joined = words.join(" ");
        let (r, o) = if args.len() == 2 {
            (if negated { format!("not {joined}") } else { joined }, args[1].clone())
        } else if COPULAS.contains(&words[0]) && words.len() > 1 {
            (if negated { format!("{} not", words[0]) } else { words[0].to_string() }, words[1..].join(" "))
        } else {
            ((if negated { "is not" } else { "is" }).to_string(), joined)
        };
        let got = format!("{}|{}|{}", t.subject, t.rendered_relation(), t.object);
        if got != format!("{}|{r}|{o}", args[0]) || (t.polarity == Polarity::Negated) != negated {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} mismatches");
    within(Duration::from_secs(1), start)
}

fn shape(o: &ParseOutcome) -> Option<(bool, usize, usize)> {
    o.output().map(|s| (s.label, s.facts.len(), s.literal_count()))
}

fn in_context(template: &str) -> Vec<Option<(bool, usize, usize)>> {
    template
        .split("[/INST]")
        .skip(1)
        .filter_map(|seg| seg.split("</s>").next())
        .filter(|seg| seg.contains("\"label\""))
        .map(|seg| shape(&parse_structured(seg)))
        .collect()
}

fn c2_fixtures() -> Check {
    let a = in_context(SOURCE_TEMPLATE);
    ensure!(a == vec![Some((true, 3, 4))], "source example: {a:?}");
    let b = in_context(TARGET_TEMPLATE);
    let want = vec![Some((true, 2, 4)), Some((false, 3, 4)), Some((true, 2, 4))];
    ensure!(b == want, "target examples: {b:?}");
    let text = std::fs::read_to_string(core_fixture("appendix_d.jsonl")).map_err(|e| e.to_string())?;
    let mut italic = 0;
    for line in text.lines() {
        let row: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let structured = row["structured"].as_bool().unwrap();
        let valid = parse_structured(row["text"].as_str().unwrap()).is_valid();
        ensure!(valid == structured, "claim {} layer {}", row["claim"], row["layer"]);
        italic += usize::from(!structured);
    }
    ensure!(italic > 0, "no italic rows in fixture");
    Ok(())
}

fn c3_merge() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.gen_range(1..20);
        let d = rng.gen_range(1..40);
        let h = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-3.0f32..3.0)).collect()).unwrap();
        let k = rng.gen_range(0..n);
        let mut one_hot = vec![0.0f32; n];
        one_hot[k] = 1.0;
        let row = merge_activations(&h, &one_hot, MergeOptions::default()).map_err(|e| e.to_string())?;
        ensure!(bits(&row) == bits(h.row(k)), "one-hot row {k}");
        let w: Vec<f32> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let merged = merge_activations(&h, &w, MergeOptions::default()).map_err(|e| e.to_string())?;
        for j in 0..d {
            let mut acc = 0.0f32;
            for i in 0..n {
                acc += w[i] * h.get(i, j);
            }
            ensure!(merged[j].to_bits() == acc.to_bits(), "column {j}");
        }
    }
    Ok(())
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn c4_patching() -> Check {
    let start = Instant::now();
    let toy = || {
        ToyModel::new(ModelConfig { layer_count: 4, hidden_dim: 32, seed: 7, ..ModelConfig::default() }).unwrap()
    };
    let model = toy();
    let target = model.tokenize(TARGET_TEMPLATE);
    let k = find_placeholder(&target).map_err(|e| e.to_string())?;
    let plain = model.run_embeddings(&model.input_embeddings(&target).unwrap()).unwrap();
    let own = model.embedding_row(target.token_ids[k]).to_vec();
    let identity = model.generate_substituted(&target, k, &own).unwrap();
    ensure!(identity.as_bytes() == plain.generated_text.as_bytes(), "identity patch changed the text");

    let full_run = |model: &ToyModel| {
        let claim = ClaimRecord {
            id: "a".into(),
            text: "Empress Matilda moved to Germany as a child".into(),
            gold: GoldLabel::Supported,
        };
        let bundle = build_prompts(&claim).unwrap();
        let (source, span) = model.vocab().encode_with_span(&bundle.source_text, bundle.input_span_hint.clone());
        let trace = run_with_trace(model, &source, span).unwrap();
        let weights = claim_weights(&trace, false).unwrap();
        let plan = build_patch_plan(&trace, &weights, &target, false, MergeOptions::default()).unwrap();
        let outputs = sweep_layers(model, &plan).unwrap();
        (trace, plan, outputs)
    };
    let (trace, plan, outputs) = full_run(&model);
    let patched = model
        .run_embeddings(&substituted_embeddings(&model, &plan.target, k, plan.vector(2).unwrap()).unwrap())
        .unwrap();
    let differing: Vec<usize> =
        (0..target.len()).filter(|&i| plain.layers[0].row(i) != patched.layers[0].row(i)).collect();
    ensure!(differing == vec![k], "layer 0 differs at {differing:?}, placeholder {k}");
    let layers: Vec<usize> = outputs.outputs.keys().copied().collect();
    ensure!(layers == vec![1, 2, 3, 4], "swept layers {layers:?}");

    let again = toy();
    ensure!(again.weights_checksum() == model.weights_checksum(), "weights differ");
    let (trace2, plan2, outputs2) = full_run(&again);
    ensure!(trace == trace2 && plan == plan2 && outputs == outputs2, "second run differs");
    within(Duration::from_secs(10), start)
}

fn graph_of(triples: &[(String, &str, String)]) -> LayerGraph {
    let mut g = LayerGraph::empty(LayerTag::Layer(1));
    for (s, r, o) in triples {
        g.add_triple(&SpoTriple {
            subject: s.clone(),
            relation: r.to_string(),
            object: o.clone(),
            polarity: Polarity::Asserted,
            copular: false,
            layer: None,
        });
    }
    g
}

fn c5_similarity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.gen_range(1..=20);
        let names: Vec<String> = (0..n).map(|i| format!("Entity {i}")).collect();
        let mut triples: Vec<_> = (0..n).map(|i| (names[i].clone(), "related to", names[(i + 1) % n].clone())).collect();
        for _ in 0..rng.gen_range(0..n) {
            triples.push((names[rng.gen_range(0..n)].clone(), "member of", names[rng.gen_range(0..n)].clone()));
        }
        let g = graph_of(&triples);
        ensure!(g.node_count() <= 20, "graph too large");
        let z: NodeEmbeddingMatrix<f64> = DiffusionEmbedder::default().embed(&g).map_err(|e| e.to_string())?;
        let s = graph_similarity(&z, &z).map_err(|e| e.to_string())?;
        ensure!((s - 1.0).abs() <= 1e-6, "self-similarity {s}");

        let mut perm: Vec<usize> = (0..z.matrix.rows()).collect();
        perm.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| z.matrix.row(i).to_vec()).collect();
        let zp = NodeEmbeddingMatrix { matrix: Matrix::from_rows(&rows).unwrap() };
        let other = NodeEmbeddingMatrix { matrix: Matrix::from_rows(&rows[..1]).unwrap() };
        let a = graph_similarity(&z, &other).unwrap();
        let b = graph_similarity(&zp, &other).unwrap();
        ensure!(a.to_bits() == b.to_bits(), "not permutation invariant: {a} vs {b}");
    }
    let v = [0.6f64, 0.8, 0.0];
    let w = [0.0f64, 0.0, 1.0];
    let one = NodeEmbeddingMatrix { matrix: Matrix::from_rows(&[v]).unwrap() };
    let two = NodeEmbeddingMatrix { matrix: Matrix::from_rows(&[v, w]).unwrap() };
    let fwd = graph_similarity(&one, &two).unwrap();
    let back = graph_similarity(&two, &one).unwrap();
    ensure!((fwd - 1.0).abs() < 1e-12 && back < 1.0, "asymmetry fixture gave {fwd}, {back}");
    Ok(())
}

fn c6_clustering() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..60 {
        let n = rng.gen_range(2..=50);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let q = rng.gen_range(0.01..=1.0);
        let k = ((q * n as f64).floor() as usize).clamp(1, n - 1);
        let mut total = 0.0;
        for (i, p) in pts.iter().enumerate() {
            let mut d: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| o.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            total += d[k - 1];
        }
        let want = total / n as f64;
        let got = estimate_bandwidth(&Matrix::from_rows(&pts).unwrap(), q).map_err(|e| e.to_string())?;
        ensure!((got - want).abs() <= 1e-12, "bandwidth {got} vs {want}");
    }

    let bw = 0.1;
    let mut pts = Vec::new();
    for i in 0..20 {
        let cx = if i % 2 == 0 { 0.0 } else { 10.0 * bw };
        pts.push(vec![cx + rng.gen_range(-0.2..0.2) * bw, rng.gen_range(-0.2..0.2) * bw]);
    }
    let r = mean_shift(&Matrix::from_rows(&pts).unwrap(), bw, MeanShiftParams::default()).map_err(|e| e.to_string())?;
    let truth: Vec<usize> = (0..20).map(|i| i % 2).collect();
    ensure!(r.cluster_count() == 2 && r.labels == truth, "blobs: {:?}", r.labels);

    let square: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let r = mean_shift(&Matrix::from_rows(&square).unwrap(), 2f64.sqrt() * 1.01, MeanShiftParams::default()).unwrap();
    ensure!(r.cluster_count() == 1, "wide bandwidth gave {} clusters", r.cluster_count());
    Ok(())
}

fn c7_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let gold: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.4)).collect();
    let scores: Vec<f64> = (0..200).map(|_| f64::from(rng.gen_range(0..12)) / 4.0).collect();
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..200 {
        for j in 0..200 {
            if gold[i] && !gold[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    let auc = roc_auc(&gold, &scores).ok_or("AUC undefined")?;
    ensure!((auc - wins / pairs).abs() <= 1e-9, "AUC {auc} vs {}", wins / pairs);

    let pred = |i: usize, gold: bool, p: Predicted| LabeledPrediction {
        claim_id: i.to_string(),
        gold,
        predicted: p,
        score: None,
    };
    let mut preds = Vec::new();
    for i in 0..1000 {
        preds.push(pred(i, true, if i < 456 { Predicted::True } else { Predicted::False }));
        preds.push(pred(1000 + i, false, if i < 912 { Predicted::False } else { Predicted::True }));
    }
    for i in 0..50 {
        preds.push(pred(2000 + i, i % 2 == 0, Predicted::Invalid));
    }
    let r = compute_report(&preds[..2000]).map_err(|e| e.to_string())?;
    ensure!((r.roc_auc.unwrap() - 0.684).abs() < 1e-3, "inference AUC {:?}", r.roc_auc);
    let layers: BTreeMap<u32, Predicted> =
        [(1, Predicted::True), (2, Predicted::True), (3, Predicted::False), (4, Predicted::True)].into();
    let sc = self_consistency(&layers, true).map_err(|e| e.to_string())?;
    ensure!(sc == 0.75, "self-consistency {sc}");
    let r = compute_report(&preds).map_err(|e| e.to_string())?;
    let total: usize = r.confusion.iter().flatten().sum();
    ensure!(total == preds.len() && r.n == preds.len(), "confusion sums to {total}");
    Ok(())
}

fn c8_corpus() -> Check {
    let claim = |n: usize| ClaimRecord {
        id: n.to_string(),
        text: "a".repeat(n),
        gold: GoldLabel::Refuted,
    };
    let kept: Vec<String> = filter_claims(&[claim(34), claim(35), claim(120), claim(121)]).into_iter().map(|c| c.id).collect();
    ensure!(kept == ["35", "120"], "kept {kept:?}");
    let pool: Vec<ClaimRecord> = (40..100).map(claim).collect();
    let a = sample_claims(&pool, 10, 7).map_err(|e| e.to_string())?;
    ensure!(a == sample_claims(&pool, 10, 7).unwrap(), "sampling not reproducible");

    let tex = std::fs::read_to_string(core_fixture("prompt_templates.tex")).map_err(|e| e.to_string())?;
    let (source, target) = tex.split_once("%% target\n").ok_or("fixture layout")?;
    let source = source.strip_prefix("%% source\n").ok_or("fixture layout")?;
    ensure!(detex::detex(source) == SOURCE_TEMPLATE, "source template differs from typeset text");
    ensure!(detex::detex(target) == TARGET_TEMPLATE, "target template differs from typeset text");
    let c = ClaimRecord { id: "q".into(), text: "The Eiffel Tower is located in Rome, Italy".into(), gold: GoldLabel::Refuted };
    let b = build_prompts(&c).map_err(|e| e.to_string())?;
    ensure!(b.source_text == SOURCE_TEMPLATE.replace("$INPUT", &c.text), "substituted source prompt");
    ensure!(b.target_text == TARGET_TEMPLATE, "target prompt");
    Ok(())
}

fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn c9_end_to_end() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_latentkg"))
            .args(["run-all", "--model", "toy", "--seed", "7", "--dataset"])
            .arg(core_fixture("claims10.jsonl"))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "run {run}: {}", String::from_utf8_lossy(&status.stderr));
        trees.push(tree_hashes(&out));
    }
    ensure!(trees[0].len() > 20, "only {} files", trees[0].len());
    ensure!(trees[0].contains_key("report/table.csv"), "no report");
    ensure!(trees[0] == trees[1], "output trees differ");
    within(Duration::from_secs(120), start)
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("literal rewriting oracle", c1_rewriting),
        ("appendix fixtures", c2_fixtures),
        ("weighted merge", c3_merge),
        ("patching invariants", c4_patching),
        ("graph similarity", c5_similarity),
        ("bandwidth and mean shift", c6_clustering),
        ("metrics", c7_metrics),
        ("corpus and templates", c8_corpus),
        ("end-to-end determinism", c9_end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let ms = start.elapsed().as_millis();
        match result {
            Ok(()) => println!("criterion {}: PASS  {name} ({ms} ms)", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({ms} ms): {e}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
