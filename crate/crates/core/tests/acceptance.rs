//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line, even when all pass.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::mock::MockServer;
use common::oracles;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use typescore::chat::{BackendError, ChatClient, ChatConfig};
use typescore::corpus::{sample_corpus, Instruction};
use typescore::corruption::{corrupt_item, generate_pairs, CorruptionSpec};
use typescore::extraction::{parse_quoted_response, Backend, BackendConfig, BackendKind, ImageData, OcrAdapter};
use typescore::meta_eval::{
    aggregate_votes, alignment_accuracy, pearson, Aggregation, Answer, BootstrapOptions, Label, PreferencePair,
    Question, ScoreMap, Side,
};
use typescore::metrics::{self, lcs_len, levenshtein, smith_waterman_score, MetricKind};
use typescore::pipeline::{score_run, GeneratedImage, ScoreOptions};
use typescore::{normalize_text, AlignmentParams};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ensemble_of(reference: &str, candidate: &str) -> f64 {
    let p = AlignmentParams::default();
    metrics::score(
        MetricKind::Ensemble,
        &normalize_text(reference, true),
        &normalize_text(candidate, true),
        &p,
    )
    .value
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(11);
    let alphabet = ['a', 'c', 'g', 't'];
    let params = AlignmentParams::default();
    let mut mismatches = Vec::new();
    for i in 0..1000 {
        let word = |rng: &mut StdRng| -> Vec<char> {
            let len = rng.random_range(0..=12);
            (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
        };
        let (a, b) = (word(&mut rng), word(&mut rng));
        let lev = (levenshtein(&a, &b), oracles::levenshtein(&a, &b));
        let lcs = (lcs_len(&a, &b), oracles::lcs_len(&a, &b));
        let sw = (
            smith_waterman_score(&a, &b, &params),
            oracles::smith_waterman(&a, &b, 2, -1, -1),
        );
        if lev.0 != lev.1 || lcs.0 != lcs.1 || sw.0 != sw.1 {
            mismatches.push(i);
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches.is_empty() && elapsed < Duration::from_secs(10),
        format!("1000 pairs, {} mismatches, {:.2?}", mismatches.len(), elapsed),
    )
}

fn random_unicode(rng: &mut StdRng) -> String {
    const POOL: &[char] = &[
        'a', 'b', 'Z', 'q', '7', ' ', ' ', '-', '!', '@', 'é', 'ß', 'Ω', 'ж', 'ي', '中', '文', 'ト', '😀', '🎉',
        '\u{301}', '\t', 'Å', 'ﬁ',
    ];
    let len = rng.random_range(1..=24);
    let mut s: String = (0..len).map(|_| *POOL.choose(rng).unwrap()).collect();
    // guarantee at least one visible character survives normalization
    s.push(*['x', 'é', '中', '😀'].choose(rng).unwrap());
    s
}

fn range_and_identity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(12);
    let params = AlignmentParams::default();
    let strings: Vec<String> = (0..500).map(|_| random_unicode(&mut rng)).collect();
    let empty = normalize_text("", true);
    let mut problems = Vec::new();
    let mut worst_gap = 0.0f64;
    for (i, s) in strings.iter().enumerate() {
        let a = normalize_text(s, true);
        let b = normalize_text(&strings[(i + 1) % strings.len()], true);
        for kind in MetricKind::ALL {
            let cross = metrics::score(kind, &a, &b, &params).value;
            let same = metrics::score(kind, &a, &a, &params).value;
            let e1 = metrics::score(kind, &a, &empty, &params).value;
            let e2 = metrics::score(kind, &empty, &a, &params).value;
            if !(0.0..=1.0).contains(&cross) || same != 1.0 || e1 != 0.0 || e2 != 0.0 {
                problems.push(format!("{kind} on #{i}"));
            }
        }
        let mean = MetricKind::ENSEMBLE_COMPONENTS
            .iter()
            .map(|&k| metrics::score(k, &a, &b, &params).value)
            .sum::<f64>()
            / 3.0;
        worst_gap = worst_gap.max((metrics::ensemble(&a, &b, &params).value - mean).abs());
    }
    check(
        problems.is_empty() && worst_gap <= 1e-12,
        format!(
            "500 strings x 6 metrics, {} violations, max |ensemble - mean| = {worst_gap:.1e}",
            problems.len()
        ),
    )
}

fn corruption_monotonicity() -> Outcome {
    let start = Instant::now();
    let corpus = sample_corpus();
    let rates = [0.0, 0.05, 0.1, 0.2, 0.4];
    let specs: Vec<_> = rates.iter().map(|&r| CorruptionSpec::uniform(r, 2024)).collect();
    let pairs = generate_pairs(&corpus, &specs).map_err(|e| e.to_string())?;
    let mut means = vec![0.0; rates.len()];
    for p in &pairs {
        means[p.spec_index] += ensemble_of(&p.quote, &p.corrupted);
    }
    for m in means.iter_mut() {
        *m /= corpus.len() as f64;
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let rho = oracles::spearman(&rates, &means);
    let elapsed = start.elapsed();
    check(
        corpus.len() == 118 && decreasing && rho <= -0.95 && elapsed < Duration::from_secs(30),
        format!(
            "{} items, means {:?}, spearman {rho:.3}, {:.2?}",
            corpus.len(),
            means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            elapsed
        ),
    )
}

fn synthetic_model(corpus: &[Instruction], model_id: &str, rate: f64, seed: u64) -> (Backend, Vec<GeneratedImage>) {
    let spec = CorruptionSpec::uniform(rate, seed);
    let mut texts = HashMap::new();
    let mut images = Vec::new();
    for (i, instr) in corpus.iter().enumerate() {
        let image_id = format!("{model_id}-{}", instr.id);
        texts.insert(image_id.clone(), corrupt_item(&instr.quote, &spec, i as u64));
        images.push(GeneratedImage {
            image_id,
            instruction_id: instr.id.clone(),
            model_id: model_id.to_owned(),
            path: PathBuf::from(format!("{model_id}/{}.png", instr.id)),
        });
    }
    (Backend::oracle("ORACLE_FILE", texts, true), images)
}

fn synthetic_ranking(rt: &tokio::runtime::Runtime) -> Outcome {
    let corpus = sample_corpus();
    let opts = ScoreOptions::default();
    let (good_backend, good_images) = synthetic_model(&corpus, "careful", 0.05, 1);
    let (bad_backend, bad_images) = synthetic_model(&corpus, "sloppy", 0.30, 2);
    let good = rt
        .block_on(score_run(&corpus, &good_images, &good_backend, &opts))
        .map_err(|e| e.to_string())?;
    let bad = rt
        .block_on(score_run(&corpus, &bad_images, &bad_backend, &opts))
        .map_err(|e| e.to_string())?;
    let g = good.aggregates[&MetricKind::Ensemble];
    let b = bad.aggregates[&MetricKind::Ensemble];
    check(
        g.mean > b.mean && !g.overlaps(&b),
        format!(
            "rate 0.05: {:.3} ± {:.3}, rate 0.30: {:.3} ± {:.3}",
            g.mean, g.sem, b.mean, b.sem
        ),
    )
}

fn synthetic_alignment() -> Outcome {
    let corpus = sample_corpus();
    let levels = [0.0, 0.1, 0.2, 0.3, 0.4];
    let mut rng = StdRng::seed_from_u64(15);
    let mut pairs = Vec::new();
    let mut ensemble_scores = ScoreMap::new();
    let mut constant_scores = ScoreMap::new();
    for i in 0..200 {
        let (item, instr) = (i % corpus.len(), &corpus[i % corpus.len()]);
        let l = rng.random_range(0..levels.len());
        let mut r = rng.random_range(0..levels.len() - 1);
        if r >= l {
            r += 1;
        }
        let side = |level: usize, tag: &str| Side {
            model_id: format!("noise-{:.1}", levels[level]),
            image_id: format!("pair-{i}-{tag}"),
        };
        let (left, right) = (side(l, "l"), side(r, "r"));
        for (s, level) in [(&left, l), (&right, r)] {
            let text = corrupt_item(&instr.quote, &CorruptionSpec::uniform(levels[level], 100 + i as u64), item as u64);
            let key = (s.model_id.clone(), s.image_id.clone());
            ensemble_scores.insert(key.clone(), ensemble_of(&instr.quote, &text));
            constant_scores.insert(key, 0.5);
        }
        // less noise is what the oracle rater prefers
        let label = if l < r { Label::Left } else { Label::Right };
        pairs.push(PreferencePair {
            pair_id: format!("pair-{i}"),
            instruction_id: instr.id.clone(),
            left,
            right,
            human_label: BTreeMap::from([(Question::TextFidelity, label)]),
            status: None,
            judgments: 3,
        });
    }
    let boot = BootstrapOptions::default();
    let ens = alignment_accuracy(&pairs, &ensemble_scores, Question::TextFidelity, &boot).map_err(|e| e.to_string())?;
    let flat = alignment_accuracy(&pairs, &constant_scores, Question::TextFidelity, &boot).map_err(|e| e.to_string())?;
    check(
        ens.n_pairs == 200 && ens.accuracy >= 0.90 && flat.accuracy == 0.5,
        format!(
            "{} pairs, ensemble {:.3} ± {:.3}, constant metric {}",
            ens.n_pairs, ens.accuracy, ens.sem, flat.accuracy
        ),
    )
}

fn length_insensitivity() -> Outcome {
    let vocabulary: Vec<String> = {
        let mut words: Vec<String> = sample_corpus()
            .iter()
            .flat_map(|i| i.quote.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
            .collect();
        words.sort();
        words.dedup();
        words
    };
    let mut rng = StdRng::seed_from_u64(16);
    let mut counts = Vec::new();
    let mut scores = Vec::new();
    let mut item = 0u64;
    for n in 2..=30 {
        for _ in 0..12 {
            let quote: Vec<&str> = (0..n).map(|_| vocabulary.choose(&mut rng).unwrap().as_str()).collect();
            let quote = quote.join(" ");
            let noisy = corrupt_item(&quote, &CorruptionSpec::uniform(0.1, 16), item);
            item += 1;
            counts.push(n as f64);
            scores.push(ensemble_of(&quote, &noisy));
        }
    }
    let r = pearson(&counts, &scores).map_err(|e| e.to_string())?.r;
    check(
        r.abs() < 0.15,
        format!("{} quotes of 2-30 words, pearson r = {r:.3}", counts.len()),
    )
}

fn judgment_fixtures() -> Outcome {
    use Answer::{Left as L, Right as R, Tie as T};
    let fixtures: [(&[Answer], Label); 3] = [
        (&[L, L, R], Label::Left),
        (&[L, R, T, L, L], Label::Left),
        (&[L, R, T, L, R], Label::Unresolved),
    ];
    let mut wrong = Vec::new();
    for (votes, want) in fixtures {
        let got = aggregate_votes(votes).map_err(|e| e.to_string())?;
        if got != Aggregation::Decided(want) {
            wrong.push(format!("{votes:?} gave {got:?}"));
        }
    }
    check(wrong.is_empty(), format!("3 fixtures, {} wrong {}", wrong.len(), wrong.join("; ")))
}

const VLM_PROMPT: &str = "Identify the main text contained in this image, and output it between quotes, without correcting any typos or issues you may encounter. Do not output anything else.";
const REFINE_PROMPT: &str = "This image contains a main quote and it might contain additional text. We already extracted both the main quote and any additional text from the image, and it follows: MENU Soup 3$. We want to isolate only the main quote. From this text, identify the main quote and extract it in the right order, without correcting any typos or issues you may encounter, and without adding any new words. Output the main quote between quotes and do not output anything else.";

async fn wire_contract() -> Outcome {
    let mut failures = Vec::new();
    let image = ImageData::new(vec![0x89, b'P', b'N', b'G'], "image/png");

    // prompts byte-for-byte
    let server = MockServer::start("\"Soup\"").await;
    let chat = Arc::new(ChatClient::new(ChatConfig::new(server.endpoint(), "m", "k")).map_err(|e| e.to_string())?);
    Backend::vlm("VLM:m", chat.clone(), true)
        .extract_vlm("a", &image)
        .await
        .map_err(|e| e.to_string())?;
    let ocr = OcrAdapter::in_process(|_| Ok(vec!["MENU".into(), "Soup 3$".into()]));
    Backend::ocr_refine("OCR_REFINE:m", ocr, chat, true)
        .extract_ocr_refine("a", &image)
        .await
        .map_err(|e| e.to_string())?;
    let seen = server.captured();
    if seen[0].body["messages"][0]["content"][0]["text"] != VLM_PROMPT {
        failures.push("VLM prompt differs");
    }
    if seen[1].body["messages"][0]["content"] != REFINE_PROMPT {
        failures.push("refinement prompt differs");
    }

    // 429, 429, 200 with the default one-second backoff base
    let server = MockServer::start("\"ok\"").await;
    server.push(429, "");
    server.push(429, "");
    let client = ChatClient::new(ChatConfig::new(server.endpoint(), "m", "k")).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = Backend::vlm("VLM:m", Arc::new(client), true)
        .extract_vlm("a", &image)
        .await
        .map_err(|e| e.to_string())?;
    let waited = start.elapsed();
    if out.retries_used != 2 || waited < Duration::from_secs(3) {
        failures.push("retry/backoff");
    }

    // concurrency bound
    let server = MockServer::start("\"ok\"").await;
    server.set_delay(Duration::from_millis(50));
    let mut cfg = ChatConfig::new(server.endpoint(), "m", "k");
    cfg.max_concurrency = 2;
    let backend = Arc::new(Backend::vlm("VLM:m", Arc::new(ChatClient::new(cfg).map_err(|e| e.to_string())?), true));
    let calls = (0..8).map(|i| {
        let (backend, image) = (backend.clone(), image.clone());
        async move { backend.extract_vlm(&format!("{i}"), &image).await }
    });
    let results = futures::future::join_all(calls).await;
    if results.iter().any(Result::is_err) || server.peak_in_flight() != 2 {
        failures.push("concurrency bound");
    }

    // parse fixtures
    let fixtures = [
        ("\"Grand Opening\"", "Grand Opening"),
        ("Sure! \"Fresh Bread\"", "Fresh Bread"),
        ("no quotes", "no quotes"),
    ];
    if fixtures.iter().any(|(raw, want)| parse_quoted_response(raw) != *want) {
        failures.push("response parsing");
    }

    // missing key
    let mut cfg = BackendConfig::new(BackendKind::Vlm);
    cfg.endpoint = Some(server.endpoint());
    cfg.model_name = Some("m".into());
    cfg.api_key_env = "TYPESCORE_ACCEPTANCE_UNSET_KEY".into();
    let before = server.captured().len();
    if !matches!(Backend::from_config(&cfg), Err(BackendError::Auth(_))) || server.captured().len() != before {
        failures.push("missing key");
    }

    check(
        failures.is_empty(),
        format!(
            "prompts, retries ({waited:.1?} over 2 retries), peak in flight {}, parsing, auth; failed: {:?}",
            server.peak_in_flight(),
            failures
        ),
    )
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("metric range and identity", Box::new(range_and_identity)),
        ("corruption monotonicity", Box::new(corruption_monotonicity)),
        ("synthetic model ranking", Box::new(|| synthetic_ranking(&rt))),
        ("synthetic alignment accuracy", Box::new(synthetic_alignment)),
        ("length insensitivity", Box::new(length_insensitivity)),
        ("judgment aggregation fixtures", Box::new(judgment_fixtures)),
        ("extraction wire contract", Box::new(|| rt.block_on(wire_contract()))),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
