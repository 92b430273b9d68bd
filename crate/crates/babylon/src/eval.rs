//! Evaluation metrics and the per-sample report.
//!
//! Exact match compares canonical token sequences. Semantic accuracy parses
//! each prediction and compares reduced order states, so clause reorderings
//! that leave the order unchanged still count as hits while unparseable or
//! unexecutable predictions count as misses. BLEU and ROUGE-L are kept for
//! comparison; both are pure functions of the token sequences.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::datagen::{Sample, Tag, World};
use crate::error::{BabylonError, DataError};
use crate::menu::Menu;
use crate::model::Model;
use crate::par;
use crate::phoneme::SourceVocab;
use crate::tensor::Params;
use crate::transcode::{self, semantically_equal, IntentProgram, TranscodeVocab};

/// Fraction of prediction/gold pairs with identical token sequences.
/// Empty inputs have no misses and score 1.
pub fn exact_match_accuracy<T: PartialEq>(predictions: &[Vec<T>], golds: &[Vec<T>]) -> f64 {
    assert_eq!(predictions.len(), golds.len(), "prediction/gold count mismatch");
    if predictions.is_empty() {
        return 1.0;
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    hits as f64 / predictions.len() as f64
}

/// Fraction of predictions that parse and reduce to the gold order state.
/// Predictions that fail to parse, or parse to a program that is not
/// executable, count as misses.
pub fn semantic_accuracy(
    predictions: &[Vec<String>],
    golds: &[IntentProgram],
    menu: &Menu,
) -> f64 {
    assert_eq!(predictions.len(), golds.len(), "prediction/gold count mismatch");
    if predictions.is_empty() {
        return 1.0;
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| prediction_matches(p, g, menu))
        .count();
    hits as f64 / predictions.len() as f64
}

fn prediction_matches(pred: &[String], gold: &IntentProgram, menu: &Menu) -> bool {
    match transcode::parse(pred, menu) {
        Ok(prog) => semantically_equal(&prog, gold).unwrap_or(false),
        Err(_) => false,
    }
}

/// Sentence BLEU over n-gram orders 1..=4 with uniform weights, clipped
/// counts, a brevity penalty, and no smoothing: any scored order with zero
/// matches zeroes the whole score. Orders longer than the hypothesis
/// contribute no n-grams and are dropped from the geometric mean, so
/// identity scores 1 even for sequences shorter than four tokens.
pub fn bleu<T: Hash + Eq>(reference: &[T], hypothesis: &[T]) -> f64 {
    if reference.is_empty() || hypothesis.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=4usize {
        if hypothesis.len() < n {
            break;
        }
        let mut budget: HashMap<&[T], usize> = HashMap::new();
        if reference.len() >= n {
            for gram in reference.windows(n) {
                *budget.entry(gram).or_insert(0) += 1;
            }
        }
        let total = hypothesis.len() - n + 1;
        let mut matched = 0usize;
        for gram in hypothesis.windows(n) {
            if let Some(left) = budget.get_mut(gram) {
                if *left > 0 {
                    *left -= 1;
                    matched += 1;
                }
            }
        }
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
        orders += 1;
    }
    let bp = if hypothesis.len() < reference.len() {
        (1.0 - reference.len() as f64 / hypothesis.len() as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / orders as f64).exp()
}

/// ROUGE-L: F1 of longest-common-subsequence precision (against the
/// hypothesis length) and recall (against the reference length).
pub fn rouge_l<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> f64 {
    if reference.is_empty() || hypothesis.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(reference, hypothesis);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hypothesis.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0usize;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// One evaluated sample, in input order. Serialized as one JSON object per
/// line in the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub tags: Vec<String>,
    pub gold: String,
    pub predicted: String,
    pub exact: bool,
    pub semantic: bool,
    pub bleu: f64,
    pub rouge_l: f64,
    pub truncated: bool,
}

/// Accuracy within the subset of samples carrying one tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagBreakdown {
    pub tag: String,
    pub count: usize,
    pub exact_match_accuracy: f64,
    pub semantic_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub exact_match_accuracy: f64,
    pub semantic_accuracy: f64,
    pub bleu: f64,
    pub rouge_l: f64,
    pub per_tag: Vec<TagBreakdown>,
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    /// Aggregates records into a report. Accuracies are hit fractions, BLEU
    /// and ROUGE-L are means of the per-sample sentence scores, and the tag
    /// breakdown covers every tag present, in the generator's tag order.
    pub fn from_records(records: Vec<SampleRecord>) -> EvalReport {
        let n = records.len();
        if n == 0 {
            return EvalReport {
                samples: 0,
                exact_match_accuracy: 0.0,
                semantic_accuracy: 0.0,
                bleu: 0.0,
                rouge_l: 0.0,
                per_tag: Vec::new(),
                records,
            };
        }
        let frac = |pred: &dyn Fn(&SampleRecord) -> bool, set: &[&SampleRecord]| {
            set.iter().filter(|r| pred(r)).count() as f64 / set.len() as f64
        };
        let all: Vec<&SampleRecord> = records.iter().collect();
        let mut tag_order: Vec<String> = Tag::ALL.iter().map(|t| t.as_str().to_string()).collect();
        let extras: BTreeSet<&String> = records
            .iter()
            .flat_map(|r| r.tags.iter())
            .filter(|t| !tag_order.contains(t))
            .collect();
        tag_order.extend(extras.into_iter().cloned());
        let mut per_tag = Vec::new();
        for tag in tag_order {
            let subset: Vec<&SampleRecord> = records
                .iter()
                .filter(|r| r.tags.iter().any(|t| *t == tag))
                .collect();
            if subset.is_empty() {
                continue;
            }
            per_tag.push(TagBreakdown {
                count: subset.len(),
                exact_match_accuracy: frac(&|r| r.exact, &subset),
                semantic_accuracy: frac(&|r| r.semantic, &subset),
                tag,
            });
        }
        EvalReport {
            samples: n,
            exact_match_accuracy: frac(&|r| r.exact, &all),
            semantic_accuracy: frac(&|r| r.semantic, &all),
            bleu: records.iter().map(|r| r.bleu).sum::<f64>() / n as f64,
            rouge_l: records.iter().map(|r| r.rouge_l).sum::<f64>() / n as f64,
            per_tag,
            records,
        }
    }

    /// Records the model got wrong at the exact-match level.
    pub fn errors(&self) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| !r.exact).collect()
    }

    /// Human-readable summary, one `key: value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("samples: {}\n", self.samples));
        out.push_str(&format!(
            "exact_match_accuracy: {:.6}\n",
            self.exact_match_accuracy
        ));
        out.push_str(&format!("semantic_accuracy: {:.6}\n", self.semantic_accuracy));
        out.push_str(&format!("bleu: {:.6}\n", self.bleu));
        out.push_str(&format!("rouge_l: {:.6}\n", self.rouge_l));
        out.push_str(&format!("errors: {}\n", self.errors().len()));
        for t in &self.per_tag {
            out.push_str(&format!("tag.{}.count: {}\n", t.tag, t.count));
            out.push_str(&format!(
                "tag.{}.exact_match_accuracy: {:.6}\n",
                t.tag, t.exact_match_accuracy
            ));
            out.push_str(&format!(
                "tag.{}.semantic_accuracy: {:.6}\n",
                t.tag, t.semantic_accuracy
            ));
        }
        out
    }

    /// Machine-readable report: one JSON record per sample, one per line.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Greedy-decodes every sample and scores the predictions. Pure given the
/// parameters: records come back in input order and the aggregates are
/// order-independent, so parallel and sequential runs agree.
pub fn evaluate(
    world: &World,
    model: &Model<f32>,
    params: &Params<f32>,
    samples: &[Sample],
    noisy: bool,
    parallel: bool,
) -> Result<EvalReport, BabylonError> {
    if samples.is_empty() {
        return Err(BabylonError::Data(DataError::Config(
            "evaluation set is empty".into(),
        )));
    }
    let src_vocab = SourceVocab::new(world.alphabet.clone());
    let tgt_vocab = TranscodeVocab::from_menu(&world.menu);
    let max_len = model.config().max_target_len;
    let results: Vec<Result<SampleRecord, BabylonError>> =
        par::map_indexed(samples.len(), parallel, |i| {
            let s = &samples[i];
            let seq = if noisy { &s.noisy } else { &s.clean };
            let src = src_vocab.encode_framed(seq);
            let decoded = model.greedy_decode(params, &src, max_len)?;
            let predicted = tgt_vocab
                .decode(&decoded.ids)
                .map_err(BabylonError::Transcode)?;
            let gold_tokens = s.gold.serialize();
            Ok(SampleRecord {
                index: i,
                tags: s.tags.iter().map(|t| t.as_str().to_string()).collect(),
                gold: s.gold.to_line(),
                predicted: predicted.join(" "),
                exact: predicted == gold_tokens,
                semantic: prediction_matches(&predicted, &s.gold, &world.menu),
                bleu: bleu(&gold_tokens, &predicted),
                rouge_l: rouge_l(&gold_tokens, &predicted),
                truncated: decoded.truncated,
            })
        });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenConfig};
    use crate::model::{Arch, ModelConfig};
    use crate::transcode::{parse_line, Action, Clause};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn two_add_pair() -> (Vec<String>, Vec<String>) {
        let a = toks(&[
            "new_item", "1", "chocolate fudge", "add_item",
            "new_item", "1", "chocolate chip cookie", "add_item",
        ]);
        let b = toks(&[
            "new_item", "1", "chocolate chip cookie", "add_item",
            "new_item", "1", "chocolate fudge", "add_item",
        ]);
        (a, b)
    }

    #[test]
    fn bleu_matches_hand_counted_values() {
        let (a, b) = two_add_pair();
        assert_eq!(bleu(&a, &a), 1.0);
        // Swapping the two clauses keeps every unigram and bigram (8/8 and
        // 7/7) but breaks one trigram (5/6) and three 4-grams (2/5), so the
        // geometric mean is (5/6 * 2/5)^(1/4) = (1/3)^(1/4).
        let swapped = bleu(&a, &b);
        assert!((swapped - (1.0f64 / 3.0).powf(0.25)).abs() < 1e-12);
        assert!(swapped > 0.0 && swapped < 1.0);
        // One appended token: the hypothesis trigram has no reference match,
        // and unsmoothed BLEU zeroes on any empty order.
        let short_ref = toks(&["yes", "polar_answer"]);
        let padded = toks(&["yes", "polar_answer", "no"]);
        assert_eq!(bleu(&short_ref, &padded), 0.0);
        // Orders longer than the hypothesis are vacuous, not zero.
        assert_eq!(bleu(&short_ref, &short_ref), 1.0);
        assert_eq!(bleu(&a, &[]), 0.0);
        assert_eq!(bleu(&Vec::<String>::new(), &a), 0.0);
    }

    #[test]
    fn bleu_applies_the_brevity_penalty() {
        let long = toks(&["a", "b", "c", "d", "e", "f"]);
        let prefix = toks(&["a", "b", "c", "d"]);
        // All clipped precisions are 1, so the score is exactly the penalty.
        let expected = (1.0f64 - 6.0 / 4.0).exp();
        assert!((bleu(&long, &prefix) - expected).abs() < 1e-12);
        // A longer hypothesis pays through precision, not the penalty.
        assert!(bleu(&prefix, &long) < 1.0);
    }

    fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
        let mut it = of.iter();
        sub.iter().all(|x| it.by_ref().any(|y| y == *x))
    }

    fn brute_lcs(a: &[String], b: &[String]) -> usize {
        assert!(a.len() <= 12, "exhaustive oracle only scales to short refs");
        let mut best = 0usize;
        for mask in 0u32..(1u32 << a.len()) {
            let sub: Vec<&String> = (0..a.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| &a[i])
                .collect();
            if sub.len() > best && is_subsequence(&sub, b) {
                best = sub.len();
            }
        }
        best
    }

    #[test]
    fn rouge_l_matches_the_exhaustive_oracle() {
        let (a, b) = two_add_pair();
        assert_eq!(brute_lcs(&a, &b), 6);
        // LCS 6 over lengths 8/8 gives precision = recall = 0.75.
        assert_eq!(rouge_l(&a, &b), 0.75);
        assert_eq!(rouge_l(&a, &a), 1.0);
        assert_eq!(rouge_l(&a, &toks(&["x", "y"])), 0.0);
        assert_eq!(rouge_l(&a, &[]), 0.0);

        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let alphabet = ["p", "q", "r", "s"];
        for _ in 0..60 {
            let la = rng.gen_range(1..=9usize);
            let lb = rng.gen_range(1..=9usize);
            let a: Vec<String> = (0..la)
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
                .collect();
            let b: Vec<String> = (0..lb)
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
                .collect();
            let lcs = brute_lcs(&a, &b);
            let expected = if lcs == 0 {
                0.0
            } else {
                let p = lcs as f64 / b.len() as f64;
                let r = lcs as f64 / a.len() as f64;
                2.0 * p * r / (p + r)
            };
            assert!((rouge_l(&a, &b) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn semantic_accuracy_forgives_clause_swaps_but_not_garbage() {
        let menu = Menu::builtin();
        let (gold_tokens, swapped) = two_add_pair();
        let gold = parse_line(&gold_tokens.join(" "), &menu).unwrap();
        let golds = vec![gold.clone(), gold.clone(), gold.clone(), gold];
        let preds = vec![
            gold_tokens.clone(),        // identical
            swapped,                    // same order state, different text
            toks(&["new_item", "1"]),   // does not parse
            toks(&["new_item", "1", "chocolate fudge", "add_item"]), // wrong order
        ];
        let gold_token_sets: Vec<Vec<String>> = vec![gold_tokens; 4];
        let exact = exact_match_accuracy(&preds, &gold_token_sets);
        let semantic = semantic_accuracy(&preds, &golds, &menu);
        assert_eq!(exact, 0.25);
        assert_eq!(semantic, 0.5);
        assert!(semantic >= exact);
        // Parseable but unexecutable output is a miss, not an error.
        let delete_only = vec![toks(&["new_item", "1", "coffee", "delete_item"])];
        assert_eq!(semantic_accuracy(&delete_only, &golds[..1], &menu), 0.0);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = vec![Vec::new()];
        for k in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..=p.len()).map(move |i| {
                        let mut q = p.clone();
                        q.insert(i, k);
                        q
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn semantics_preserving_clause_permutations_always_lower_bleu() {
        let world = World::builtin();
        let cfg = GenConfig {
            sample_count: 250,
            seed: 9,
            ..GenConfig::default()
        };
        let samples = generate(&cfg, &world).unwrap();
        let mut witnessed = 0usize;
        for s in &samples {
            let clauses = s.gold.clauses();
            let distinct: std::collections::HashSet<&Clause> = clauses.iter().collect();
            if clauses.len() < 2 || clauses.len() > 4 || distinct.len() < 2 {
                continue;
            }
            let gold_tokens = s.gold.serialize();
            let mut found = false;
            for perm in permutations(clauses.len()) {
                let reordered: Vec<Clause> =
                    perm.iter().map(|&i| clauses[i].clone()).collect();
                let prog = IntentProgram::new(reordered, &world.menu).unwrap();
                let tokens = prog.serialize();
                if tokens == gold_tokens {
                    continue;
                }
                if let Ok(true) = semantically_equal(&prog, &s.gold) {
                    assert!(
                        bleu(&gold_tokens, &tokens) < 1.0,
                        "reordered clauses must not score 1: {}",
                        s.gold.to_line()
                    );
                    found = true;
                }
            }
            // Pure-add programs always commute, so a witness must exist
            // there. Deletes and updates can pin the clause order, in which
            // case no comparable permutation needs to exist.
            let all_adds = clauses
                .iter()
                .all(|c| matches!(c, Clause::Item(ic) if ic.action == Action::Add));
            if all_adds {
                assert!(found, "no commuting permutation for {}", s.gold.to_line());
            }
            witnessed += usize::from(found);
        }
        assert!(witnessed >= 10, "corpus produced too few reorderable golds");
    }

    #[test]
    fn evaluate_reports_are_deterministic_and_internally_consistent() {
        let world = World::builtin();
        let samples = generate(
            &GenConfig {
                sample_count: 16,
                seed: 5,
                ..GenConfig::default()
            },
            &world,
        )
        .unwrap();
        let src_vocab = SourceVocab::new(world.alphabet.clone());
        let max_src = samples
            .iter()
            .map(|s| src_vocab.encode_framed(&s.noisy).len())
            .max()
            .unwrap();
        let max_tgt = samples.iter().map(|s| s.gold.serialize().len()).max().unwrap();
        let mut cfg = ModelConfig::preset(
            Arch::Camelot,
            src_vocab.size(),
            TranscodeVocab::from_menu(&world.menu).len(),
        );
        cfg.d_model = 16;
        cfg.heads = 2;
        cfg.enc_layers = 1;
        cfg.dec_layers = 1;
        cfg.d_ffn = 32;
        cfg.dropout = 0.0;
        cfg.max_source_len = max_src;
        cfg.max_target_len = max_tgt + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = Params::new();
        let model = Model::build(&cfg, &mut params, &mut rng).unwrap();

        let report = evaluate(&world, &model, &params, &samples, true, false).unwrap();
        assert_eq!(report.samples, 16);
        assert_eq!(report.records.len(), 16);
        assert!(report.semantic_accuracy >= report.exact_match_accuracy);
        for r in &report.records {
            assert!(!(r.exact && !r.semantic), "exact hit must be semantic hit");
            assert!((0.0..=1.0).contains(&r.bleu));
            assert!((0.0..=1.0).contains(&r.rouge_l));
        }
        // Aggregates are exactly the record means.
        let n = report.records.len() as f64;
        let exact = report.records.iter().filter(|r| r.exact).count() as f64 / n;
        let bleu_mean = report.records.iter().map(|r| r.bleu).sum::<f64>() / n;
        assert_eq!(report.exact_match_accuracy, exact);
        assert_eq!(report.bleu, bleu_mean);
        for t in &report.per_tag {
            assert!(t.count > 0);
            assert!(t.semantic_accuracy >= t.exact_match_accuracy);
        }

        // Same inputs, same report, byte for byte.
        let again = evaluate(&world, &model, &params, &samples, true, false).unwrap();
        assert_eq!(report, again);
        assert_eq!(report.to_text(), again.to_text());
        assert_eq!(report.records_jsonl(), again.records_jsonl());

        // Input order permutes the records but not any per-sample result.
        let mut reversed: Vec<Sample> = samples.clone();
        reversed.reverse();
        let rev = evaluate(&world, &model, &params, &reversed, true, false).unwrap();
        for (i, r) in rev.records.iter().enumerate() {
            let orig = &report.records[report.records.len() - 1 - i];
            assert_eq!(r.predicted, orig.predicted);
            assert_eq!(r.bleu, orig.bleu);
        }
        assert!((rev.bleu - report.bleu).abs() < 1e-12);
        assert_eq!(rev.exact_match_accuracy, report.exact_match_accuracy);

        // The JSONL stream round-trips record for record.
        for (line, rec) in report.records_jsonl().lines().zip(&report.records) {
            let back: SampleRecord = serde_json::from_str(line).unwrap();
            assert_eq!(&back, rec);
        }
        let text = report.to_text();
        assert!(text.starts_with("samples: 16\n"));
        assert!(text.contains("exact_match_accuracy: "));

        // Empty sets are refused rather than reported as vacuously perfect.
        assert!(evaluate(&world, &model, &params, &[], true, false).is_err());
    }
}
