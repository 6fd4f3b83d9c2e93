//! Question-level F1, MRR and Hits@K over a linker, macro-averaged.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::entity::is_absolute_iri;
use crate::pipeline::{LinkMode, Linker, LinkingResult};

pub const DEFAULT_HITS: [usize; 3] = [1, 5, 10];

/// Printed above every text report so the numbers can be read correctly.
pub const CONVENTIONS: &str = "\
conventions: predicted set = top-1 IRI of each mention; precision/recall/F1 compare it with the gold set;
  per gold IRI the best reciprocal rank over all mentions' lists counts (0 when absent), question MRR = mean;
  Hits@K = share of gold IRIs within the top K of any mention; recall@n = share of gold IRIs retrieved at all;
  all metrics are macro-averaged over questions; IRIs match exactly after trailing-slash removal";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question_id: String,
    pub question: String,
    pub gold_entities: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DatasetFile {
    Bare(Vec<RawItem>),
    Wrapped { questions: Vec<RawItem> },
}

#[derive(Debug, Deserialize)]
struct RawItem {
    #[serde(alias = "id")]
    question_id: serde_json::Value,
    question: String,
    #[serde(default, alias = "entities")]
    gold_entities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<EvalItem>,
    /// One message per skipped item.
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: line {line}, column {column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}: dataset has no usable questions")]
    Empty(String),
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, &path.display().to_string())
}

/// Parses a JSON array of items, or an object with a `questions` array.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Dataset, DatasetError> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let raw = match file {
        DatasetFile::Bare(v) | DatasetFile::Wrapped { questions: v } => v,
    };
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (pos, r) in raw.into_iter().enumerate() {
        let id = match r.question_id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        if r.gold_entities.is_empty() {
            warnings.push(format!("item {pos} ({id}): no gold entities, skipped"));
            continue;
        }
        if let Some(bad) = r.gold_entities.iter().find(|g| !is_absolute_iri(g)) {
            warnings.push(format!("item {pos} ({id}): invalid gold IRI {bad:?}, skipped"));
            continue;
        }
        if !seen.insert(id.clone()) {
            warnings.push(format!("item {pos} ({id}): duplicate question id, skipped"));
            continue;
        }
        items.push(EvalItem {
            question_id: id,
            question: r.question,
            gold_entities: r.gold_entities,
        });
    }
    if items.is_empty() {
        return Err(DatasetError::Empty(origin.to_string()));
    }
    Ok(Dataset { items, warnings })
}

fn norm_iri(iri: &str) -> &str {
    iri.trim_end_matches('/')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub question: String,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mrr: f64,
    /// K -> Hits@K
    pub hits: BTreeMap<usize, f64>,
    pub retrieval_recall: f64,
    /// Best 1-based rank of each gold IRI; `None` when never ranked.
    pub gold_ranks: BTreeMap<String, Option<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Scores one linking result against its gold set. `hits` must be sorted.
///
/// Ranked lists hold every retrieved candidate in either mode, so
/// retrieval recall is read off their full length.
pub fn score_question(result: &LinkingResult, gold: &[String], hits: &[usize]) -> QuestionRecord {
    let gold_set: BTreeSet<&str> = gold.iter().map(|g| norm_iri(g)).collect();
    let lists: Vec<Vec<&str>> = result
        .ranked
        .values()
        .map(|l| l.iter().map(|c| norm_iri(&c.candidate.entity_iri)).collect())
        .collect();
    let predicted: BTreeSet<&str> = lists.iter().filter_map(|l| l.first().copied()).collect();

    let tp = predicted.intersection(&gold_set).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { tp / predicted.len() as f64 };
    let recall = tp / gold_set.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };

    let mut gold_ranks = BTreeMap::new();
    let mut rr_sum = 0.0;
    let mut hit_counts = vec![0usize; hits.len()];
    for g in &gold_set {
        let best = lists
            .iter()
            .filter_map(|l| l.iter().position(|iri| iri == g).map(|p| p + 1))
            .min();
        if let Some(rank) = best {
            rr_sum += 1.0 / rank as f64;
            for (count, k) in hit_counts.iter_mut().zip(hits) {
                if rank <= *k {
                    *count += 1;
                }
            }
        }
        gold_ranks.insert(g.to_string(), best);
    }
    let denom = gold_set.len() as f64;
    let retrieved = gold_ranks.values().filter(|r| r.is_some()).count() as f64;

    QuestionRecord {
        question_id: String::new(),
        question: result.input_text.clone(),
        gold: gold_set.iter().map(|g| g.to_string()).collect(),
        predicted: predicted.iter().map(|p| p.to_string()).collect(),
        precision,
        recall,
        f1,
        mrr: rr_sum / denom,
        hits: hits.iter().zip(hit_counts).map(|(k, c)| (*k, c as f64 / denom)).collect(),
        retrieval_recall: retrieved / denom,
        gold_ranks,
        error: None,
    }
}

fn failed_record(item: &EvalItem, hits: &[usize], error: String) -> QuestionRecord {
    QuestionRecord {
        question_id: item.question_id.clone(),
        question: item.question.clone(),
        gold: item.gold_entities.iter().map(|g| norm_iri(g).to_string()).collect(),
        predicted: Vec::new(),
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        mrr: 0.0,
        hits: hits.iter().map(|k| (*k, 0.0)).collect(),
        retrieval_recall: 0.0,
        gold_ranks: item.gold_entities.iter().map(|g| (norm_iri(g).to_string(), None)).collect(),
        error: Some(error),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: LinkMode,
    pub questions: usize,
    pub errored: usize,
    pub f1: f64,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub retrieval_recall_at_n: f64,
    pub conventions: String,
    pub per_question: Vec<QuestionRecord>,
}

impl Metrics {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CONVENTIONS}\n");
        let mut header = format!("{:<12} {:>8} {:>8}", "question", "F1", "MRR");
        for k in self.hits.keys() {
            let _ = write!(header, " {:>8}", format!("Hits@{k}"));
        }
        let _ = write!(header, " {:>9}", "Recall@n");
        let _ = writeln!(out, "{header}");
        let row = |out: &mut String, name: &str, f1: f64, mrr: f64, hits: &BTreeMap<usize, f64>, rec: f64, note: &str| {
            let _ = write!(out, "{name:<12} {f1:>8.4} {mrr:>8.4}");
            for v in hits.values() {
                let _ = write!(out, " {v:>8.4}");
            }
            let _ = writeln!(out, " {rec:>9.4}{note}");
        };
        for q in &self.per_question {
            let note = q.error.as_deref().map(|e| format!("  error: {e}")).unwrap_or_default();
            row(&mut out, &q.question_id, q.f1, q.mrr, &q.hits, q.retrieval_recall, &note);
        }
        let _ = writeln!(out, "{}", "-".repeat(header.len()));
        let label = format!("{} ({})", "macro", self.mode);
        row(&mut out, &label, self.f1, self.mrr, &self.hits, self.retrieval_recall_at_n, "");
        let _ = writeln!(out, "questions: {}, errored: {}", self.questions, self.errored);
        out
    }
}

/// Macro-averages records, which must already be ordered by question id.
pub fn aggregate_records(mode: LinkMode, hits: &[usize], per_question: Vec<QuestionRecord>) -> Metrics {
    let n = per_question.len().max(1) as f64;
    let mean = |f: &dyn Fn(&QuestionRecord) -> f64| per_question.iter().map(f).sum::<f64>() / n;
    Metrics {
        mode,
        questions: per_question.len(),
        errored: per_question.iter().filter(|q| q.error.is_some()).count(),
        f1: mean(&|q| q.f1),
        mrr: mean(&|q| q.mrr),
        hits: hits.iter().map(|k| (*k, mean(&|q| q.hits[k]))).collect(),
        retrieval_recall_at_n: mean(&|q| q.retrieval_recall),
        conventions: CONVENTIONS.to_string(),
        per_question,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub mode: LinkMode,
    pub hits: Vec<usize>,
    /// Questions linked concurrently.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: LinkMode::Full,
            hits: DEFAULT_HITS.to_vec(),
            jobs: 1,
        }
    }
}

pub async fn evaluate(items: &[EvalItem], linker: &dyn Linker, options: &EvalOptions) -> Metrics {
    let mut hits = options.hits.clone();
    hits.sort_unstable();
    hits.dedup();
    let hits_ref = &hits;
    let mut per_question: Vec<QuestionRecord> = futures::stream::iter(items)
        .map(|item| async move {
            let result = linker.link(&item.question, options.mode).await;
            if result.errors.is_empty() {
                let mut rec = score_question(&result, &item.gold_entities, hits_ref);
                rec.question_id = item.question_id.clone();
                rec
            } else {
                let msg = result
                    .errors
                    .iter()
                    .map(|e| format!("{}: {}", e.stage.as_str(), e.message))
                    .collect::<Vec<_>>()
                    .join("; ");
                failed_record(item, hits_ref, msg)
            }
        })
        .buffer_unordered(options.jobs.max(1))
        .collect()
        .await;
    per_question.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    aggregate_records(options.mode, &hits, per_question)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::KgType;
    use crate::index::EntityCandidate;
    use crate::scoring::ScoredCandidate;
    use async_trait::async_trait;
    use proptest::prelude::*;

    fn result(lists: &[&[&str]]) -> LinkingResult {
        let mut r: LinkingResult = serde_json::from_value(serde_json::json!({
            "input_text": "q", "mode": "text_only", "mentions": [], "ranked": {}
        }))
        .unwrap();
        for (span, list) in lists.iter().enumerate() {
            let cands = list
                .iter()
                .enumerate()
                .map(|(i, iri)| {
                    ScoredCandidate::unscored(EntityCandidate {
                        entity_iri: iri.to_string(),
                        label: iri.to_string(),
                        kg_type: KgType::Creator,
                        retrieval_score: 1.0,
                        retrieval_rank: i + 1,
                    })
                })
                .collect();
            r.ranked.insert(span, cands);
        }
        r
    }

    fn gold(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    const A: &str = "https://e.org/A";
    const B: &str = "https://e.org/B";
    const C: &str = "https://e.org/C";
    const X: &str = "https://e.org/X";

    #[test]
    fn perfect_case() {
        let q = score_question(&result(&[&[A], &[B], &[C]]), &gold(&[A, B, C]), &DEFAULT_HITS);
        assert_eq!((q.f1, q.mrr, q.hits[&1]), (1.0, 1.0, 1.0));
    }

    #[test]
    fn gold_at_rank_two() {
        let q = score_question(&result(&[&[X, A]]), &gold(&[A]), &DEFAULT_HITS);
        assert_eq!((q.hits[&1], q.hits[&5], q.mrr), (0.0, 1.0, 0.5));
    }

    #[test]
    fn half_right_predictions() {
        let q = score_question(&result(&[&[A], &[X]]), &gold(&[A, B]), &DEFAULT_HITS);
        assert_eq!((q.precision, q.recall, q.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn best_rank_across_mentions_and_trailing_slash() {
        let q = score_question(&result(&[&[X, B, A], &[A]]), &gold(&["https://e.org/A/"]), &DEFAULT_HITS);
        assert_eq!(q.gold_ranks["https://e.org/A"], Some(1));
        assert_eq!(q.mrr, 1.0);
    }

    #[test]
    fn no_mentions_scores_zero() {
        let q = score_question(&result(&[]), &gold(&[A]), &DEFAULT_HITS);
        assert_eq!((q.f1, q.mrr, q.retrieval_recall), (0.0, 0.0, 0.0));
    }

    struct Fixed;

    #[async_trait]
    impl Linker for Fixed {
        async fn link(&self, text: &str, _mode: LinkMode) -> LinkingResult {
            match text {
                "good" => result(&[&[A]]),
                "bad" => result(&[&[X]]),
                _ => {
                    let mut r = result(&[]);
                    r.errors.push(crate::pipeline::StageError {
                        stage: crate::pipeline::Stage::Extracting,
                        span_id: None,
                        message: "boom".into(),
                    });
                    r
                }
            }
        }
    }

    fn item(id: &str, q: &str) -> EvalItem {
        EvalItem {
            question_id: id.into(),
            question: q.into(),
            gold_entities: gold(&[A]),
        }
    }

    #[tokio::test]
    async fn macro_average_of_hit_and_miss() {
        let m = evaluate(&[item("b", "bad"), item("a", "good")], &Fixed, &EvalOptions::default()).await;
        assert_eq!((m.f1, m.mrr), (0.5, 0.5));
        assert!(m.hits.values().all(|h| *h == 0.5));
        assert_eq!(m.per_question[0].question_id, "a");
    }

    #[tokio::test]
    async fn linker_failures_are_zeros_and_counted() {
        let opts = EvalOptions {
            jobs: 4,
            ..EvalOptions::default()
        };
        let m = evaluate(&[item("a", "good"), item("z", "explode")], &Fixed, &opts).await;
        assert_eq!(m.errored, 1);
        assert_eq!(m.f1, 0.5);
        assert_eq!(m.per_question[1].error.as_deref(), Some("extracting: boom"));
        assert!(m.to_table().contains("error: extracting: boom"));
    }

    #[test]
    fn dataset_parsing() {
        let text = r#"[
            {"question_id": "q1", "question": "a", "gold_entities": ["https://e.org/A"]},
            {"question_id": "q2", "question": "b", "gold_entities": []},
            {"question_id": 3, "question": "c", "gold_entities": ["https://e.org/C"]},
            {"question_id": "q4", "question": "d", "gold_entities": ["not an iri"]}
        ]"#;
        let d = parse_dataset(text, "t").unwrap();
        assert_eq!(d.items.len(), 2);
        assert_eq!(d.items[1].question_id, "3");
        assert_eq!(d.warnings.len(), 2);

        let wrapped = r#"{"questions": [{"id": "x", "question": "q", "entities": ["https://e.org/A"]}]}"#;
        assert_eq!(parse_dataset(wrapped, "t").unwrap().items.len(), 1);
        assert!(matches!(parse_dataset("[]", "t"), Err(DatasetError::Empty(_))));
        match parse_dataset("[\n  {\"question\": }\n]", "t") {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synthetic_fixture_loads() {
        let d = parse_dataset(include_str!("../../../fixtures/eval_synthetic.json"), "fixture").unwrap();
        assert_eq!(d.items.len(), 20);
        assert!(d.warnings.is_empty());
    }

    proptest! {
        #[test]
        fn hits_monotone_and_bounded(
            lists in prop::collection::vec(prop::collection::vec(0u8..12, 0..10), 0..4),
            gold_ids in prop::collection::btree_set(0u8..12, 1..4),
        ) {
            let iris: Vec<Vec<String>> = lists.iter()
                .map(|l| {
                    let mut seen = BTreeSet::new();
                    l.iter().filter(|i| seen.insert(**i)).map(|i| format!("https://e.org/{i}")).collect()
                })
                .collect();
            let refs: Vec<Vec<&str>> = iris.iter().map(|l| l.iter().map(String::as_str).collect()).collect();
            let slices: Vec<&[&str]> = refs.iter().map(Vec::as_slice).collect();
            let g: Vec<String> = gold_ids.iter().map(|i| format!("https://e.org/{i}")).collect();
            let q = score_question(&result(&slices), &g, &[1, 5, 10]);
            prop_assert!(q.hits[&1] <= q.hits[&5] && q.hits[&5] <= q.hits[&10]);
            for v in [q.f1, q.mrr, q.precision, q.recall, q.retrieval_recall] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if g.len() == 1 && q.hits[&1] == 1.0 {
                prop_assert_eq!(q.mrr, 1.0);
            }
        }
    }
}
