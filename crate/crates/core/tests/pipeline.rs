use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use kglink_core::index::{read_ntriples_labels, LabelIndex};
use kglink_core::kg::{FixtureStore, KgError, KnowledgeGraph, Triple};
use kglink_core::llm::MockLlm;
use kglink_core::pipeline::{result_rows, Stage, StageEvent};
use kglink_core::scoring::EMPTY_EVIDENCE;
use kglink_core::{LinkMode, Linker, Pipeline, PipelineSettings};

const RUNNING_EXAMPLE: &str =
    "Who are the co-authors of Ashish Vaswani in the 'attention is all you need' paper in neurips?";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn pipeline_with(kg: Arc<dyn KnowledgeGraph>, settings: PipelineSettings) -> Pipeline {
    let nt = std::fs::read(fixture("kg.nt")).unwrap();
    let (records, errors) = read_ntriples_labels(nt.as_slice());
    assert!(errors.is_empty());
    let mut index = LabelIndex::new();
    index.ingest(records);
    let llm = MockLlm::from_file(&fixture("mock_rules.json")).unwrap();
    Pipeline::new(Arc::new(llm), Arc::new(index), kg, settings)
}

fn pipeline() -> Pipeline {
    let kg = FixtureStore::from_file(&fixture("kg.nt")).unwrap();
    pipeline_with(Arc::new(kg), PipelineSettings::default())
}

#[tokio::test]
async fn running_example_links_all_three_spans() {
    let result = pipeline().link(RUNNING_EXAMPLE, LinkMode::Full).await;
    assert!(result.errors.is_empty(), "{:?}", result.errors);
    assert_eq!(result.mentions.len(), 3);
    assert_eq!(result.top1(0), Some("https://dblp.org/pid/c01"));
    assert_eq!(result.top1(1), Some("https://dblp.org/rec/p01"));
    assert_eq!(result.top1(2), Some("https://dblp.org/streams/s01"));
    let top = &result.ranked[&0][0];
    assert!(top.aggregate_score.unwrap() > result.ranked[&0][1].aggregate_score.unwrap());
    assert_eq!(top.evidence_sentence, "Ashish Vaswani - authored - attention is all you need");
}

#[tokio::test]
async fn output_is_deterministic() {
    let p = pipeline();
    let a = serde_json::to_string(&p.link(RUNNING_EXAMPLE, LinkMode::Full).await.without_timings()).unwrap();
    let b = serde_json::to_string(&p.link(RUNNING_EXAMPLE, LinkMode::Full).await.without_timings()).unwrap();
    assert_eq!(a, b);
}

#[tokio::test]
async fn text_only_keeps_retrieval_order() {
    let result = pipeline().link(RUNNING_EXAMPLE, LinkMode::TextOnly).await;
    for list in result.ranked.values() {
        let ranks: Vec<usize> = list.iter().map(|c| c.candidate.retrieval_rank).collect();
        assert_eq!(ranks, (1..=list.len()).collect::<Vec<_>>());
        assert!(list.iter().all(|c| c.aggregate_score.is_none() && c.evidence_sentence == EMPTY_EVIDENCE));
    }
    let rows = result_rows(&result);
    assert_eq!(rows[0].span_id, 0);
    assert!(rows.iter().all(|r| r.logprob_score.is_none()));
}

#[tokio::test]
async fn full_mode_permutes_retrieved_candidates() {
    let p = pipeline();
    let full = p.link(RUNNING_EXAMPLE, LinkMode::Full).await;
    let text = p.link(RUNNING_EXAMPLE, LinkMode::TextOnly).await;
    for (span, list) in &full.ranked {
        let mut a: Vec<_> = list.iter().map(|c| &c.candidate.entity_iri).collect();
        let mut b: Vec<_> = text.ranked[span].iter().map(|c| &c.candidate.entity_iri).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}

#[tokio::test]
async fn stage_events_in_order() {
    let events = Mutex::new(Vec::<StageEvent>::new());
    let sink = |e: StageEvent| events.lock().unwrap().push(e);
    pipeline().link_with_progress(RUNNING_EXAMPLE, LinkMode::Full, &sink).await;
    let stages: Vec<Stage> = events.lock().unwrap().iter().map(|e| e.stage).collect();
    use Stage::*;
    assert_eq!(stages, [Extracting, Extracted, Retrieving, Retrieved, Expanding, Scoring, Ranked]);

    let events = Mutex::new(Vec::<StageEvent>::new());
    let sink = |e: StageEvent| events.lock().unwrap().push(e);
    pipeline().link_with_progress(RUNNING_EXAMPLE, LinkMode::TextOnly, &sink).await;
    let stages: Vec<Stage> = events.lock().unwrap().iter().map(|e| e.stage).collect();
    assert_eq!(stages, [Extracting, Extracted, Retrieving, Retrieved, Ranked]);
}

#[tokio::test]
async fn call_budget_aborts_scoring() {
    let kg = FixtureStore::from_file(&fixture("kg.nt")).unwrap();
    let settings = PipelineSettings {
        call_budget: 5,
        ..PipelineSettings::default()
    };
    let result = pipeline_with(Arc::new(kg), settings).link(RUNNING_EXAMPLE, LinkMode::Full).await;
    assert_eq!(result.errors.len(), 1);
    assert!(result.errors[0].message.contains("call budget"));
    assert!(result.ranked.values().all(Vec::is_empty));
}

#[tokio::test]
async fn unknown_sentence_is_an_extraction_error() {
    let result = pipeline().link("nothing scripted for this", LinkMode::Full).await;
    assert_eq!(result.errors[0].stage, Stage::Extracting);
    assert!(result.ranked.is_empty());
}

struct DownGraph;

#[async_trait::async_trait]
impl KnowledgeGraph for DownGraph {
    async fn fetch_neighborhood(&self, _iri: &str, _k: usize) -> Result<Vec<Triple>, KgError> {
        Err(KgError::Unreachable("connection refused".into()))
    }
}

#[tokio::test]
async fn unreachable_graph_fails_each_mention() {
    let result = pipeline_with(Arc::new(DownGraph), PipelineSettings::default())
        .link(RUNNING_EXAMPLE, LinkMode::Full)
        .await;
    assert_eq!(result.errors.len(), 3);
    assert!(result.errors.iter().all(|e| e.stage == Stage::Expanding));
    assert!(result.ranked.values().all(Vec::is_empty));
}
