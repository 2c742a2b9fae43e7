//! Scoring: format check, reference check, BLEU, ROUGE-1/2/L, perplexity,
//! and per-(model, prompt) aggregation.
//!
//! Similarity metrics compare the extracted command against the gold command,
//! not the whole generation — reasoning traces would otherwise dominate the
//! n-gram statistics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::command::{extract_command, parse_command};
use crate::dataset::FireballRecord;
use crate::inference::GenerationResult;
use crate::state::{reference_check, ReferenceOutcome, Verdict};

/// Lowercases and splits on whitespace. Punctuation stays inside tokens:
/// commands are symbol-dense and `-t` must survive.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and the candidate-side total.
fn clipped_matches(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let total: usize = cand.values().sum();
    let matches: usize =
        cand.iter().map(|(gram, count)| (*count).min(refs.get(gram).copied().unwrap_or(0))).sum();
    (matches, total)
}

/// Sentence-level BLEU up to 4-grams with uniform weights, brevity penalty,
/// and add-one smoothing on the higher-order precisions so short commands do
/// not zero out. An empty candidate scores 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (matches, total) = clipped_matches(&cand, &refs, n);
        let precision = if n == 1 {
            if matches == 0 {
                return 0.0;
            }
            matches as f64 / total as f64
        } else {
            (matches + 1) as f64 / (total + 1) as f64
        };
        log_sum += 0.25 * precision.ln();
    }
    let brevity = if cand.len() >= refs.len() {
        1.0
    } else {
        (1.0 - refs.len() as f64 / cand.len() as f64).exp()
    };
    brevity * log_sum.exp()
}

/// Classic corpus-level BLEU: clipped matches and totals pooled over all
/// pairs before the precisions are formed, brevity penalty over summed
/// lengths, no smoothing. Zero matches at any order zero the score.
pub fn corpus_bleu<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> f64 {
    let tokenized: Vec<(Vec<String>, Vec<String>)> =
        pairs.into_iter().map(|(c, r)| (tokenize(c), tokenize(r))).collect();
    let cand_len: usize = tokenized.iter().map(|(c, _)| c.len()).sum();
    let ref_len: usize = tokenized.iter().map(|(_, r)| r.len()).sum();
    if cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let mut matches = 0usize;
        let mut total = 0usize;
        for (cand, refs) in &tokenized {
            let (m, t) = clipped_matches(cand, refs, n);
            matches += m;
            total += t;
        }
        if matches == 0 || total == 0 {
            return 0.0;
        }
        log_sum += 0.25 * (matches as f64 / total as f64).ln();
    }
    let brevity =
        if cand_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    brevity * log_sum.exp()
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// ROUGE-N F1 over n-gram multiset overlap; 0 when either side has no
/// n-grams.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> f64 {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    let (matches, cand_total) = clipped_matches(&cand, &refs, n);
    let ref_total = refs.len().saturating_sub(n.saturating_sub(1));
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    f1(matches as f64 / cand_total as f64, matches as f64 / ref_total as f64)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(curr[j]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from longest-common-subsequence length over token sequences.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&cand, &refs) as f64;
    f1(lcs / cand.len() as f64, lcs / refs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot compute perplexity over an empty token sequence")]
pub struct EmptySequence;

/// `exp(-mean(token_logprobs))` over natural-log probabilities.
///
/// The mean is computed incrementally, which keeps it exact for constant
/// sequences regardless of length.
pub fn perplexity(token_logprobs: &[f64]) -> Result<f64, EmptySequence> {
    if token_logprobs.is_empty() {
        return Err(EmptySequence);
    }
    let mut mean = 0.0;
    for (idx, lp) in token_logprobs.iter().enumerate() {
        mean += (lp - mean) / (idx + 1) as f64;
    }
    Ok((-mean).exp())
}

/// Per-instance metric outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub instance_id: String,
    pub model_name: String,
    pub template_id: u8,
    pub extracted_command: Option<String>,
    pub format_pass: bool,
    pub reference: ReferenceOutcome,
    pub bleu: f64,
    pub rouge1_f1: f64,
    pub rouge2_f1: f64,
    pub rouge_l_f1: f64,
    pub perplexity: Option<f64>,
}

/// Template id encoded in an `record:template` instance id.
pub fn template_id_of(instance_id: &str) -> Option<u8> {
    instance_id.rsplit(':').next()?.parse().ok()
}

/// Scores one generation against the record its prompt was built from:
/// extract → format check → parse → reference check → similarity against the
/// gold command → perplexity from the captured logprobs.
pub fn score_row(result: &GenerationResult, record: &FireballRecord) -> EvalRow {
    let extracted = extract_command(&result.raw_text);
    let parsed = extracted.as_deref().and_then(|text| parse_command(text).ok());
    let format_pass = parsed.is_some();
    let reference = reference_check(parsed.as_ref(), &record.current_actor, &record.combat_state);
    let (bleu_score, r1, r2, rl) = match extracted.as_deref() {
        Some(cand) => (
            bleu(cand, &record.gold_command),
            rouge_n(cand, &record.gold_command, 1),
            rouge_n(cand, &record.gold_command, 2),
            rouge_l(cand, &record.gold_command),
        ),
        None => (0.0, 0.0, 0.0, 0.0),
    };
    EvalRow {
        instance_id: result.instance_id.clone(),
        model_name: result.model_name.clone(),
        template_id: template_id_of(&result.instance_id).unwrap_or(0),
        extracted_command: extracted,
        format_pass,
        reference,
        bleu: bleu_score,
        rouge1_f1: r1,
        rouge2_f1: r2,
        rouge_l_f1: rl,
        perplexity: result
            .token_logprobs
            .as_deref()
            .and_then(|lps| perplexity(lps).ok()),
    }
}

/// Aggregates for one (model, prompt) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub model_name: String,
    pub template_id: u8,
    pub rows: usize,
    pub format_rate: f64,
    pub reference_rate: f64,
    pub mean_perplexity: Option<f64>,
    pub mean_rouge1: f64,
    pub mean_rouge2: f64,
    pub mean_rouge_l: f64,
    pub mean_bleu: f64,
    pub verdict_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub groups: Vec<GroupSummary>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Groups rows by (model, template). Rows are folded in instance-id order so
/// the result is identical under any input permutation.
pub fn aggregate(rows: &[EvalRow]) -> ReportSummary {
    let mut groups: BTreeMap<(String, u8), Vec<&EvalRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.model_name.clone(), row.template_id)).or_default().push(row);
    }
    let summaries = groups
        .into_iter()
        .map(|((model_name, template_id), mut members)| {
            members.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
            let count = members.len();
            let mut verdict_counts: BTreeMap<String, usize> = BTreeMap::new();
            for row in &members {
                *verdict_counts.entry(row.reference.verdict.label().to_string()).or_insert(0) += 1;
            }
            GroupSummary {
                model_name,
                template_id,
                rows: count,
                format_rate: members.iter().filter(|r| r.format_pass).count() as f64 / count as f64,
                reference_rate: members.iter().filter(|r| r.reference.verdict == Verdict::Pass).count()
                    as f64
                    / count as f64,
                mean_perplexity: mean(members.iter().filter_map(|r| r.perplexity)),
                mean_rouge1: mean(members.iter().map(|r| r.rouge1_f1)).unwrap_or(0.0),
                mean_rouge2: mean(members.iter().map(|r| r.rouge2_f1)).unwrap_or(0.0),
                mean_rouge_l: mean(members.iter().map(|r| r.rouge_l_f1)).unwrap_or(0.0),
                mean_bleu: mean(members.iter().map(|r| r.bleu)).unwrap_or(0.0),
                verdict_counts,
            }
        })
        .collect();
    ReportSummary { groups: summaries }
}

fn fmt_metric(value: f64) -> String {
    format!("{value:.6}")
}

/// Table-shaped CSV: one row per (model, prompt), pinned column set.
pub fn summary_to_csv(summary: &ReportSummary) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "model", "prompt", "format", "reference", "perplexity", "rouge1", "rouge2", "rougeL",
            "bleu",
        ])
        .expect("csv header");
    for group in &summary.groups {
        writer
            .write_record([
                group.model_name.clone(),
                group.template_id.to_string(),
                fmt_metric(group.format_rate),
                fmt_metric(group.reference_rate),
                group.mean_perplexity.map(fmt_metric).unwrap_or_default(),
                fmt_metric(group.mean_rouge1),
                fmt_metric(group.mean_rouge2),
                fmt_metric(group.mean_rouge_l),
                fmt_metric(group.mean_bleu),
            ])
            .expect("csv record");
    }
    String::from_utf8(writer.into_inner().expect("csv flush")).expect("csv utf8")
}

/// Bar-chart-ready JSON: reference-check rate per prompt, one series per
/// model, plus the full per-group summaries.
pub fn summary_to_json(summary: &ReportSummary) -> serde_json::Value {
    let mut template_ids: Vec<u8> = summary.groups.iter().map(|g| g.template_id).collect();
    template_ids.sort_unstable();
    template_ids.dedup();
    let mut models: Vec<String> = summary.groups.iter().map(|g| g.model_name.clone()).collect();
    models.sort();
    models.dedup();
    let series: Vec<serde_json::Value> = models
        .iter()
        .map(|model| {
            let values: Vec<serde_json::Value> = template_ids
                .iter()
                .map(|tid| {
                    summary
                        .groups
                        .iter()
                        .find(|g| &g.model_name == model && g.template_id == *tid)
                        .map(|g| serde_json::json!(g.reference_rate))
                        .unwrap_or(serde_json::Value::Null)
                })
                .collect();
            serde_json::json!({ "model": model, "values": values })
        })
        .collect();
    serde_json::json!({
        "reference_check": {
            "prompts": template_ids.iter().map(|t| format!("Prompt{t}")).collect::<Vec<_>>(),
            "series": series,
        },
        "groups": summary.groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::GenerationResult;
    use crate::state::{Actor, CombatState, Inventory};
    use proptest::prelude::*;

    fn result_for(instance_id: &str, text: &str, logprobs: Option<Vec<f64>>) -> GenerationResult {
        GenerationResult {
            instance_id: instance_id.to_string(),
            raw_text: text.to_string(),
            token_logprobs: logprobs,
            finish_reason: "stop".to_string(),
            latency_ms: 0,
            model_name: "test-model".to_string(),
        }
    }

    fn record() -> FireballRecord {
        let mut actor = Actor::named("Emma Thornwall");
        actor.spells = Some(Inventory::from_raw("Raulothim's Psychic Lance, Hex"));
        actor.attacks = Some(Inventory::from_raw("Dagger"));
        FireballRecord {
            record_id: "r1".into(),
            current_actor: actor.clone(),
            combat_state: CombatState { actors: vec![actor, Actor::named("BA1")] },
            utterance_history: vec![],
            gold_command: "!cast psychic -t ba1".into(),
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("!cast psychic -t ba1"), vec!["!cast", "psychic", "-t", "ba1"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("!Attack  Dagger"), vec!["!attack", "dagger"]);
    }

    #[test]
    fn bleu_identity_and_empty() {
        assert_eq!(bleu("!cast psychic -t ba1", "!cast psychic -t ba1"), 1.0);
        assert_eq!(bleu("x", "x"), 1.0);
        assert_eq!(bleu("", "!attack longbow"), 0.0);
        assert_eq!(bleu("!cast a", "!attack b"), 0.0);
    }

    #[test]
    fn bleu_matches_frozen_oracle_value() {
        // Independently computed with a brute-force n-gram implementation.
        let value = bleu("!cast psychic -t ba1", "!attack longbow -t WY1");
        assert!((value - 0.319_471_552_123_136_27).abs() < 1e-9, "got {value}");
    }

    #[test]
    fn corpus_bleu_pools_counts() {
        assert_eq!(corpus_bleu([("!a x -t y", "!a x -t y"), ("!c v -t w", "!c v -t w")]), 1.0);
        assert_eq!(corpus_bleu([("", "")]), 0.0);
        // One perfect 4-token pair carries a disjoint one: pooled unigram
        // precision 4/8, pooled bigram (3+1)/6 etc.; all orders stay nonzero
        // because the perfect pair contributes matches at every n.
        let mixed = corpus_bleu([("!a x -t y", "!a x -t y"), ("!c v -t w", "!b q -s r")]);
        assert!(mixed > 0.0 && mixed < 1.0);
        // Fully disjoint corpus zeroes out without smoothing.
        assert_eq!(corpus_bleu([("!c v", "!b q")]), 0.0);
    }

    #[test]
    fn rouge1_hand_count() {
        let value = rouge_n("!cast psychic -t ba1", "!cast fireball -t ba1", 1);
        assert!((value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rouge_identities_and_zeros() {
        assert_eq!(rouge_n("!a x -t y", "!a x -t y", 2), 1.0);
        assert_eq!(rouge_n("a b", "c d", 1), 0.0);
        assert_eq!(rouge_l("!a x", "!a x"), 1.0);
        assert_eq!(rouge_l("", "a b"), 0.0);
        assert_eq!(rouge_n("a", "a b", 2), 0.0, "candidate lacks bigrams");
    }

    #[test]
    fn rouge_l_hand_dp() {
        // LCS("a b c", "a c") = 2; P = 2/3, R = 1, F1 = 0.8.
        let value = rouge_l("a b c", "a c");
        assert!((value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rouge2_can_exceed_rouge1_on_rotated_repeats() {
        // "a b a" vs "b a b" share both bigrams but only two of three
        // unigrams; F1 ordering between ROUGE-1 and ROUGE-2 is not a theorem.
        let r1 = rouge_n("a b a", "b a b", 1);
        let r2 = rouge_n("a b a", "b a b", 2);
        assert!(r2 > r1);
    }

    #[test]
    fn perplexity_examples() {
        assert_eq!(perplexity(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        let ln2 = std::f64::consts::LN_2;
        for k in [1usize, 5, 50] {
            assert_eq!(perplexity(&vec![-ln2; k]).unwrap(), 2.0, "k = {k}");
        }
        let two = perplexity(&[-0.1, -0.3]).unwrap();
        assert!((two - 0.2f64.exp()).abs() < 1e-9);
        assert_eq!(perplexity(&[]), Err(EmptySequence));
    }

    #[test]
    fn score_row_gold_echo_passes_everything() {
        let result = result_for("r1:3", "{{!cast psychic -t ba1}}", Some(vec![-0.1, -0.2]));
        let row = score_row(&result, &record());
        assert!(row.format_pass);
        assert_eq!(row.reference.verdict, Verdict::Pass);
        assert_eq!(row.rouge1_f1, 1.0);
        assert_eq!(row.rouge2_f1, 1.0);
        assert_eq!(row.rouge_l_f1, 1.0);
        assert_eq!(row.bleu, 1.0);
        assert_eq!(row.template_id, 3);
        assert!(row.perplexity.unwrap() > 1.0);
    }

    #[test]
    fn score_row_spell_verb_is_format_pass_reference_fail() {
        let result = result_for("r1:1", "{{!spell Healing Word -t Inquisitus}}", None);
        let row = score_row(&result, &record());
        assert!(row.format_pass);
        assert_eq!(row.reference.verdict, Verdict::UnknownVerb);
        assert!(row.perplexity.is_none());
    }

    #[test]
    fn score_row_empty_generation() {
        let result = result_for("r1:2", "", None);
        let row = score_row(&result, &record());
        assert!(!row.format_pass);
        assert_eq!(row.reference.verdict, Verdict::NoCommand);
        assert_eq!(row.bleu, 0.0);
        assert_eq!(row.rouge1_f1, 0.0);
        assert!(row.extracted_command.is_none());
    }

    #[test]
    fn score_row_unparseable_extraction_still_gets_similarity() {
        let result = result_for("r1:2", "{{cast psychic -t ba1}}", None);
        let row = score_row(&result, &record());
        assert!(!row.format_pass);
        assert_eq!(row.reference.verdict, Verdict::NoCommand);
        assert!(row.rouge1_f1 > 0.0, "similarity is computed on the extracted string");
    }

    fn synthetic_row(model: &str, template: u8, idx: usize, pass: bool) -> EvalRow {
        EvalRow {
            instance_id: format!("r{idx}:{template}"),
            model_name: model.to_string(),
            template_id: template,
            extracted_command: Some("!a x".into()),
            format_pass: pass,
            reference: ReferenceOutcome {
                verdict: if pass { Verdict::Pass } else { Verdict::SpellMismatch },
                detail: String::new(),
            },
            bleu: 0.5,
            rouge1_f1: 0.5,
            rouge2_f1: 0.25,
            rouge_l_f1: 0.5,
            perplexity: Some(1.2),
        }
    }

    #[test]
    fn aggregate_rates() {
        let rows: Vec<EvalRow> =
            (0..10).map(|i| synthetic_row("m", 1, i, i != 3)).collect();
        let summary = aggregate(&rows);
        assert_eq!(summary.groups.len(), 1);
        let group = &summary.groups[0];
        assert!((group.format_rate - 0.9).abs() < 1e-12);
        assert!((group.reference_rate - 0.9).abs() < 1e-12);
        assert_eq!(group.verdict_counts["pass"], 9);
        assert_eq!(group.verdict_counts["spell_mismatch"], 1);
    }

    #[test]
    fn aggregate_groups_models_by_template() {
        let mut rows = Vec::new();
        for model in ["instruct", "r1-distill"] {
            for template in 1..=5u8 {
                rows.push(synthetic_row(model, template, template as usize, true));
            }
        }
        let summary = aggregate(&rows);
        assert_eq!(summary.groups.len(), 10);
    }

    #[test]
    fn aggregate_reference_rate_matches_synthesized_best_cell() {
        // 916 of 1000 passing rows reproduces the strongest observed
        // reference-check cell rate exactly.
        let rows: Vec<EvalRow> =
            (0..1000).map(|i| synthetic_row("instruct", 3, i, i < 916)).collect();
        let summary = aggregate(&rows);
        assert!((summary.groups[0].reference_rate - 0.916).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let mut rows: Vec<EvalRow> = (0..50)
            .map(|i| {
                let mut row = synthetic_row("m", (i % 5) as u8 + 1, i, i % 3 == 0);
                row.bleu = (i as f64) / 49.0;
                row.perplexity = if i % 4 == 0 { None } else { Some(1.0 + i as f64 / 10.0) };
                row
            })
            .collect();
        let forward = aggregate(&rows);
        rows.reverse();
        rows.swap(0, 25);
        assert_eq!(aggregate(&rows), forward);
    }

    #[test]
    fn csv_schema_is_pinned() {
        let summary = aggregate(&[synthetic_row("m", 1, 0, true)]);
        let csv = summary_to_csv(&summary);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,prompt,format,reference,perplexity,rouge1,rouge2,rougeL,bleu"
        );
        assert_eq!(lines.next().unwrap(), "m,1,1.000000,1.000000,1.200000,0.500000,0.250000,0.500000,0.500000");
    }

    #[test]
    fn json_series_shape() {
        let mut rows = Vec::new();
        for template in 1..=5u8 {
            rows.push(synthetic_row("instruct", template, template as usize, true));
        }
        let summary = aggregate(&rows);
        let json = summary_to_json(&summary);
        assert_eq!(json["reference_check"]["prompts"][2], "Prompt3");
        assert_eq!(json["reference_check"]["series"][0]["model"], "instruct");
        assert_eq!(json["reference_check"]["series"][0]["values"].as_array().unwrap().len(), 5);
    }

    fn distinct_tokens() -> impl Strategy<Value = Vec<String>> {
        // Sampling without replacement: repeated tokens inside one sequence
        // are what lets ROUGE-2 overtake ROUGE-1.
        prop::sample::subsequence(
            (0..24).map(|i| format!("w{i}")).collect::<Vec<_>>(),
            0..=12,
        )
        .prop_shuffle()
    }

    proptest! {
        #[test]
        fn similarity_scores_stay_in_unit_interval(a in "\\PC{0,40}", b in "\\PC{0,40}") {
            for value in [bleu(&a, &b), rouge_n(&a, &b, 1), rouge_n(&a, &b, 2), rouge_l(&a, &b)] {
                prop_assert!((0.0..=1.0).contains(&value), "value {} out of range", value);
            }
        }

        #[test]
        fn identity_scores_one(text in "[a-z!\\-]{1,8}( [a-z!\\-]{1,8}){0,6}") {
            prop_assert_eq!(bleu(&text, &text), 1.0);
            prop_assert_eq!(rouge_n(&text, &text, 1), 1.0);
            prop_assert_eq!(rouge_l(&text, &text), 1.0);
        }

        #[test]
        fn rouge1_dominates_rouge2_for_distinct_tokens(a in distinct_tokens(), b in distinct_tokens()) {
            let a = a.join(" ");
            let b = b.join(" ");
            prop_assert!(rouge_n(&a, &b, 1) >= rouge_n(&a, &b, 2) - 1e-12);
        }

        #[test]
        fn perplexity_at_least_one(lps in prop::collection::vec(-8.0f64..=0.0, 1..40)) {
            let value = perplexity(&lps).unwrap();
            prop_assert!(value >= 1.0);
        }
    }
}
