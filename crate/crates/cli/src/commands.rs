//! One handler per subcommand. Each handler validates every input it needs
//! before the first backend call, then writes its outputs into the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::Serialize;

use rehab_vlm::activity::{accuracy_and_matrix, classify_corpus, ActivityCatalog, ActivityClass};
use rehab_vlm::fma::{
    aggregate_scorecard, build_scripts, load_clip_manifest, load_questions, load_truth_totals, scatter_csv, ClipSet,
    FmaItemScript, FmaScorer, ItemScore,
};
use rehab_vlm::ingest::{Manifest, VideoEntry};
use rehab_vlm::metrics::{evaluate_corpus, CorpusReport, EvalPair, MeanSem};
use rehab_vlm::output::{file_stem, load_predictions, metrics_csv, per_primitive_csv, read_sequence};
use rehab_vlm::par::Executor;
use rehab_vlm::primpipe::{one_hand_active_segments, Pipeline, PipelineConfig, PromptingMode, ProbeItem, VideoJob};
use rehab_vlm::reconstruct::{estimate_transitions, markov_baseline, midpoint_states, omniscient_baseline, TransitionModel};
use rehab_vlm::types::{Hand, Primitive, PrimitiveSequence, SegmentGrid};
use rehab_vlm::vlm::VlmClient;
use rehab_vlm::Error;

use crate::runtime::{annotation_for, duration_of, load_manifest, video_job, video_ref, Runtime};

const TRANSCRIPT: &str = "transcript.jsonl";

fn write_transcripts(rt: &Runtime, client: &VlmClient, video_ids: &[String]) -> Result<()> {
    for id in video_ids {
        rt.out.write_transcript(id, &client.transcript().records_for(id))?;
    }
    client.transcript().write_jsonl(&rt.out.path(TRANSCRIPT))?;
    Ok(())
}

fn pipeline_grid(pcfg: &PipelineConfig, entry: &VideoEntry) -> Result<SegmentGrid> {
    Ok(SegmentGrid::new(pcfg.sampling_rate_hz, pcfg.frames_per_segment, duration_of(entry)?, entry.native_fps)?)
}

fn mean_sem_json(m: &Option<MeanSem>) -> serde_json::Value {
    serde_json::to_value(m).unwrap_or(serde_json::Value::Null)
}

fn corpus_json(report: &CorpusReport) -> serde_json::Value {
    serde_json::json!({
        "edit_score": mean_sem_json(&report.edit_score),
        "action_error_rate": mean_sem_json(&report.action_error_rate),
        "relative_counting_error": mean_sem_json(&report.relative_counting_error),
        "per_primitive_rce": report.per_primitive_rce.iter().map(|(p, v)| (p.as_str(), *v)).collect::<BTreeMap<_, _>>(),
    })
}

pub fn activity_id(rt: &Runtime, manifest: &Path, catalog: &str) -> Result<()> {
    let m = load_manifest(manifest)?;
    let catalog = match ActivityCatalog::builtin(catalog) {
        Some(c) => c,
        None => ActivityCatalog::load(Path::new(catalog))?,
    };
    let videos = m
        .entries
        .iter()
        .map(|e| {
            let truth: ActivityClass = e.activity.parse().with_context(|| format!("video {}", e.video_id))?;
            Ok((video_ref(e)?, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let client = rt.client()?;
    let frames = rt.frames();
    let results = classify_corpus(&client, frames.as_ref(), &catalog, &videos, &rt.exec)?;
    let report = accuracy_and_matrix(&results)?;

    let mut csv = String::from("video_id,truth,predicted,correct\n");
    for r in &results {
        let predicted = r.predicted.map(|p| p.label()).unwrap_or("");
        csv.push_str(&format!("{},{},{predicted},{}\n", r.video_id, r.truth.label(), r.predicted == Some(r.truth)));
    }
    rt.out.write_text("activity.csv", &csv)?;
    rt.out.write_text("confusion.csv", &report.matrix.to_csv(false))?;
    rt.out.write_text("confusion_normalized.csv", &report.matrix.to_csv(true))?;
    client.transcript().write_jsonl(&rt.out.path(TRANSCRIPT))?;

    println!(
        "accuracy {:.4} ({}/{}), majority baseline {:.4}, unparsed {}",
        report.accuracy, report.correct, report.total, report.majority_baseline, report.unparsed
    );
    let mut summary = rt.summary("activity-id");
    summary.backend = Some(client.identity());
    summary.catalog_version = Some(catalog.name.clone());
    summary.catalog_digest = Some(catalog.digest());
    summary.videos = results.len();
    summary.unparsed_answers = report.unparsed;
    summary.results = serde_json::to_value(&report)?;
    rt.finish(summary)
}

fn jobs_for(m: &Manifest, cropping: bool) -> Result<Vec<VideoJob>> {
    m.entries.iter().map(|e| video_job(e, cropping)).collect()
}

pub fn infer_primitives(rt: &Runtime, manifest: &Path, mode: PromptingMode, crop: bool) -> Result<()> {
    let m = load_manifest(manifest)?;
    let pcfg = PipelineConfig { mode, cropping: crop, ..rt.cfg.pipeline_config() };
    let jobs = jobs_for(&m, crop)?;
    for job in &jobs {
        pcfg.grid(job)?;
    }
    let client = rt.client()?;
    let catalog = rt.catalog()?;
    let frames = rt.frames();
    let pipeline = Pipeline::new(&client, frames.as_ref(), &catalog);
    let outputs = if mode == PromptingMode::Contextual {
        // Each contextual video is a sequential chain, so videos run side by side.
        rt.exec.try_map_range(jobs.len(), |i| pipeline.run(&jobs[i], &pcfg, &Executor::sequential()))?
    } else {
        jobs.iter().map(|j| pipeline.run(j, &pcfg, &rt.exec)).collect::<rehab_vlm::Result<Vec<_>>>()?
    };

    let mut unparsed = 0;
    let mut per_video = BTreeMap::new();
    for out in &outputs {
        rt.out.write_sequence(&out.sequence)?;
        if let Some(track) = &out.track {
            rt.out.write_track(&out.video_id, track)?;
        }
        unparsed += out.unparsed.len();
        per_video.insert(out.video_id.clone(), out.sequence.to_line());
    }
    let ids: Vec<String> = outputs.iter().map(|o| o.video_id.clone()).collect();
    write_transcripts(rt, &client, &ids)?;

    println!("{} videos, {} model calls, {unparsed} unparsed answers", outputs.len(), client.transcript().len());
    let mut summary = rt.summary("infer-primitives");
    summary.backend = Some(client.identity());
    summary.catalog_version = Some(catalog.version().to_string());
    summary.catalog_digest = Some(catalog.digest().to_string());
    summary.videos = outputs.len();
    summary.unparsed_answers = unparsed;
    summary.results = serde_json::json!({ "mode": mode.as_str(), "cropping": crop, "sequences": per_video });
    rt.finish(summary)
}

pub fn primrs(rt: &Runtime, manifest: &Path, crop: bool, postprocess: bool) -> Result<()> {
    let m = load_manifest(manifest)?;
    let cfg = rehab_vlm::primrs::PrimRsConfig { cropping: crop, postprocess, ..rt.cfg.primrs_config() };
    let jobs = jobs_for(&m, crop)?;
    for job in &jobs {
        cfg.grid(job)?;
    }
    let client = rt.client()?;
    let catalog = rt.catalog()?;
    let frames = rt.frames();
    let pipeline = Pipeline::new(&client, frames.as_ref(), &catalog);
    // PRIM-RS parallelises inside each video; videos run in turn.
    let outputs = jobs.iter().map(|j| pipeline.run_primrs(j, &cfg)).collect::<rehab_vlm::Result<Vec<_>>>()?;

    let mut unparsed = 0;
    let mut per_video = BTreeMap::new();
    for out in &outputs {
        rt.out.write_sequence(&out.sequence)?;
        rt.out.write_json(&format!("{}.provenance.json", file_stem(&out.video_id)), out)?;
        unparsed += out.unparsed.len();
        per_video.insert(out.video_id.clone(), out.sequence.to_line());
    }
    let ids: Vec<String> = outputs.iter().map(|o| o.video_id.clone()).collect();
    write_transcripts(rt, &client, &ids)?;

    println!("{} videos, {} model calls, {unparsed} unparsed answers", outputs.len(), client.transcript().len());
    let mut summary = rt.summary("primrs");
    summary.backend = Some(client.identity());
    summary.catalog_version = Some(catalog.version().to_string());
    summary.catalog_digest = Some(catalog.digest().to_string());
    summary.videos = outputs.len();
    summary.unparsed_answers = unparsed;
    summary.results = serde_json::json!({ "cropping": crop, "postprocess": postprocess, "sequences": per_video });
    rt.finish(summary)
}

/// Where the Markov chain's transition matrix comes from.
pub enum TransitionSource {
    File(PathBuf),
    Train(PathBuf),
    /// Estimated from the evaluation manifest's own annotations.
    Manifest,
}

fn estimate_from(m: &Manifest, pcfg: &PipelineConfig) -> Result<TransitionModel> {
    let tracks = m
        .entries
        .iter()
        .map(|e| {
            let ann = annotation_for(e, e.hand)?;
            let grid = pipeline_grid(pcfg, e)?;
            midpoint_states(&ann, &grid).with_context(|| format!("video {}", e.video_id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(estimate_transitions(tracks.iter().map(Vec::as_slice))?)
}

pub fn baseline_markov(rt: &Runtime, manifest: &Path, source: TransitionSource) -> Result<()> {
    let m = load_manifest(manifest)?;
    let pcfg = rt.cfg.pipeline_config();
    let model = match source {
        TransitionSource::File(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let parsed: TransitionModel =
                serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?;
            TransitionModel::new(parsed.matrix)?
        }
        TransitionSource::Train(p) => estimate_from(&load_manifest(&p)?, &pcfg)?,
        TransitionSource::Manifest => estimate_from(&m, &pcfg)?,
    };
    let grids = m.entries.iter().map(|e| pipeline_grid(&pcfg, e)).collect::<Result<Vec<_>>>()?;
    let seed = rt.cfg.run.seed;
    let sequences = rt.exec.try_map_range(m.len(), |i| {
        let recon = pcfg.reconstruction(&grids[i])?;
        markov_baseline(&model, grids[i].segment_count(), seed, i as u64, &recon, &m.entries[i].video_id)
    })?;
    for s in &sequences {
        rt.out.write_sequence(s)?;
    }
    rt.out.write_json("transitions.json", &model)?;

    println!("{} sequences sampled with seed {seed}", sequences.len());
    let mut summary = rt.summary("baseline markov");
    summary.backend = Some("none".into());
    summary.videos = sequences.len();
    summary.results = serde_json::json!({ "transitions": model.matrix });
    rt.finish(summary)
}

pub fn baseline_omniscient(rt: &Runtime, manifest: &Path) -> Result<()> {
    let m = load_manifest(manifest)?;
    let pcfg = rt.cfg.pipeline_config();
    let sequences = m
        .entries
        .iter()
        .map(|e| {
            let ann = annotation_for(e, e.hand)?;
            let grid = pipeline_grid(&pcfg, e)?;
            let recon = pcfg.reconstruction(&grid)?;
            omniscient_baseline(&ann, &grid, &recon, &e.video_id).with_context(|| format!("video {}", e.video_id))
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &sequences {
        rt.out.write_sequence(s)?;
    }
    println!("{} sequences reconstructed", sequences.len());
    let mut summary = rt.summary("baseline omniscient");
    summary.seed = None;
    summary.backend = Some("none".into());
    summary.videos = sequences.len();
    rt.finish(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmaMethod {
    Qa,
    Cot,
}

/// Clip keys an item needs; a missing one leaves the item unscored.
fn missing_clips(script: &FmaItemScript, clips: &ClipSet, method: FmaMethod, speed: bool) -> Vec<String> {
    let questions = if method == FmaMethod::Cot && !speed { &script.questions[..1] } else { &script.questions[..] };
    let mut missing: Vec<String> =
        questions.iter().filter(|q| !clips.contains_key(&q.fm_video)).map(|q| q.fm_video.to_string()).collect();
    missing.dedup();
    missing
}

pub fn fma(rt: &Runtime, method: FmaMethod, clips: &Path, questions: &Path, truth: Option<&Path>) -> Result<()> {
    let scripts = build_scripts(&load_questions(questions)?)?;
    let subjects = load_clip_manifest(clips)?;
    let truth = truth.map(load_truth_totals).transpose()?.unwrap_or_default();
    let fcfg = rt.cfg.fma_config();
    for set in subjects.values() {
        for clip in set.values() {
            if clip.duration_s() > 10.0 {
                log::warn!("clip {} of {} lasts {:.1} s", clip.key, clip.video.id, clip.duration_s());
            }
        }
    }
    let client = rt.client()?;
    let catalog = rt.catalog()?;
    let frames = rt.frames();
    let scorer = FmaScorer::new(&client, frames.as_ref(), &catalog, fcfg);
    let subject_ids: Vec<&String> = subjects.keys().collect();
    let cards = rt.exec.try_map_range(subject_ids.len(), |i| -> rehab_vlm::Result<_> {
        let subject = subject_ids[i];
        let set = &subjects[subject];
        let mut items = Vec::with_capacity(scripts.len());
        for script in &scripts {
            let speed = fcfg.speed_item == Some(script.item);
            let missing = missing_clips(script, set, method, speed);
            let score = if !missing.is_empty() {
                ItemScore::unscored(script.item, Vec::new(), format!("no clip for {}", missing.join(", ")))
            } else if speed {
                scorer.score_speed(script, set)?
            } else if method == FmaMethod::Cot {
                scorer.run_cot(script, set)?
            } else {
                scorer.run_qa_chain(script, set)?
            };
            items.push(score);
        }
        aggregate_scorecard(subject, items)
    })?;

    let mut unscored = 0;
    for card in &cards {
        rt.out.write_text(&format!("{}.scorecard.csv", file_stem(&card.subject)), &card.to_csv())?;
        unscored += card.unscored.len();
        println!("{}: {} / {}", card.subject, card.total, card.max_achievable);
    }
    rt.out.write_text("scatter.csv", &scatter_csv(&cards, &truth))?;
    rt.out.write_json("scorecards.json", &cards)?;
    client.transcript().write_jsonl(&rt.out.path(TRANSCRIPT))?;

    let mut summary = rt.summary(match method {
        FmaMethod::Qa => "fma qa",
        FmaMethod::Cot => "fma cot",
    });
    summary.backend = Some(client.identity());
    summary.catalog_version = Some(catalog.version().to_string());
    summary.catalog_digest = Some(catalog.digest().to_string());
    summary.videos = cards.len();
    summary.unparsed_answers = unscored;
    summary.results = serde_json::json!({
        "totals": cards.iter().map(|c| (c.subject.clone(), c.total)).collect::<BTreeMap<_, _>>(),
    });
    rt.finish(summary)
}

/// Ground truth and prediction for every manifest video. A video without a
/// prediction file is scored against an empty prediction.
fn manifest_pairs(m: &Manifest, predictions: &Path) -> Result<Vec<EvalPair>> {
    let preds = load_predictions(predictions)?;
    m.entries
        .iter()
        .map(|e| {
            let gt = annotation_for(e, e.hand)?.sequence(&e.video_id);
            let prediction = match preds.get(&file_stem(&e.video_id)) {
                Some(p) => p.items.clone(),
                None => {
                    log::warn!("video {}: no prediction in {}; scoring it as empty", e.video_id, predictions.display());
                    Vec::new()
                }
            };
            Ok(EvalPair { video_id: e.video_id.clone(), ground_truth: gt.items, prediction })
        })
        .collect()
}

/// Sources for the `metrics` command.
pub enum MetricsInput {
    Files { gt: PathBuf, pred: PathBuf },
    Manifest { manifest: PathBuf, predictions: PathBuf },
}

pub fn metrics(rt: &Runtime, input: MetricsInput) -> Result<()> {
    let pairs = match input {
        MetricsInput::Files { gt, pred } => {
            let id = gt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "video".into());
            let id = id.strip_suffix(".sequence").unwrap_or(&id).to_string();
            let g: PrimitiveSequence = read_sequence(&gt, &id)?;
            let p = read_sequence(&pred, &id)?;
            vec![EvalPair { video_id: id, ground_truth: g.items, prediction: p.items }]
        }
        MetricsInput::Manifest { manifest, predictions } => manifest_pairs(&load_manifest(&manifest)?, &predictions)?,
    };
    let report = evaluate_corpus(&pairs, &rt.exec)?;
    rt.out.write_text("metrics.csv", &metrics_csv(&report))?;
    rt.out.write_text("per_primitive.csv", &per_primitive_csv(&report))?;
    if let (Some(es), Some(aer), Some(rce)) = (&report.edit_score, &report.action_error_rate, &report.relative_counting_error)
    {
        println!(
            "ES {:.2} ± {:.2}, AER {:.3} ± {:.3}, RCE {:.3} ± {:.3} over {} videos",
            es.mean, es.sem, aer.mean, aer.sem, rce.mean, rce.sem, es.n
        );
    }
    let mut summary = rt.summary("metrics");
    summary.seed = None;
    summary.backend = Some("none".into());
    summary.videos = report.videos.len();
    summary.results = corpus_json(&report);
    rt.finish(summary)
}

pub fn probe_cross_hand(rt: &Runtime, manifest: &Path, crop: bool) -> Result<()> {
    let m = load_manifest(manifest)?;
    let pcfg = PipelineConfig { cropping: crop, ..rt.cfg.pipeline_config() };
    let jobs = jobs_for(&m, crop)?;
    let mut segments = Vec::new();
    for (i, e) in m.entries.iter().enumerate() {
        let left = annotation_for(e, Hand::Left)?;
        let right = annotation_for(e, Hand::Right)?;
        let grid = pcfg.grid(&jobs[i])?;
        for (segment, active) in one_hand_active_segments(&left, &right, &grid) {
            segments.push((i, segment, active));
        }
    }
    if segments.is_empty() {
        return Err(Error::invalid("no segment has exactly one moving hand").into());
    }
    let items: Vec<ProbeItem> =
        segments.iter().map(|&(i, segment, active)| ProbeItem { job: &jobs[i], segment, active }).collect();
    let client = rt.client()?;
    let catalog = rt.catalog()?;
    let frames = rt.frames();
    let pipeline = Pipeline::new(&client, frames.as_ref(), &catalog);
    let report = pipeline.cross_hand_probe(&items, &pcfg, &rt.exec)?;
    rt.out.write_json("probe.json", &report)?;
    client.transcript().write_jsonl(&rt.out.path(TRANSCRIPT))?;

    let rate = |r: Option<f64>| r.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    println!(
        "{} segments: active hand detected {}, still hand reported moving {}",
        items.len(),
        rate(report.active_detect.rate),
        rate(report.inactive_false.rate)
    );
    let mut summary = rt.summary("probe cross-hand");
    summary.backend = Some(client.identity());
    summary.catalog_version = Some(catalog.version().to_string());
    summary.catalog_digest = Some(catalog.digest().to_string());
    summary.videos = m.len();
    summary.unparsed_answers = report.unparsed;
    summary.results = serde_json::to_value(report)?;
    rt.finish(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Impairment,
    Activity,
    Subject,
}

impl GroupBy {
    fn key(self, e: &VideoEntry) -> String {
        match self {
            GroupBy::Impairment => e.impairment.code().to_string(),
            GroupBy::Activity => e.activity.clone(),
            GroupBy::Subject => e.subject_id.clone(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            GroupBy::Impairment => "impairment",
            GroupBy::Activity => "activity",
            GroupBy::Subject => "subject",
        }
    }
}

#[derive(Serialize)]
struct GroupRow {
    group: String,
    videos: usize,
    metrics: serde_json::Value,
}

fn fmt_opt(m: &Option<MeanSem>) -> (String, String) {
    match m {
        Some(m) => (format!("{:.6}", m.mean), format!("{:.6}", m.sem)),
        None => (String::new(), String::new()),
    }
}

pub fn report(rt: &Runtime, manifest: &Path, predictions: &Path, by: GroupBy) -> Result<()> {
    let m = load_manifest(manifest)?;
    let pairs = manifest_pairs(&m, predictions)?;
    let mut groups: BTreeMap<String, Vec<EvalPair>> = BTreeMap::new();
    for (e, pair) in m.entries.iter().zip(pairs) {
        groups.entry(by.key(e)).or_default().push(pair);
    }
    let mut csv = String::from("group,videos,es_mean,es_sem,aer_mean,aer_sem,rce_mean,rce_sem");
    for p in Primitive::ALL {
        csv.push_str(&format!(",rce_{}", p.as_str()));
    }
    csv.push('\n');
    let mut rows = Vec::new();
    for (group, pairs) in &groups {
        let r = evaluate_corpus(pairs, &rt.exec)?;
        let (es, es_sem) = fmt_opt(&r.edit_score);
        let (aer, aer_sem) = fmt_opt(&r.action_error_rate);
        let (rce, rce_sem) = fmt_opt(&r.relative_counting_error);
        csv.push_str(&format!("{group},{},{es},{es_sem},{aer},{aer_sem},{rce},{rce_sem}", pairs.len()));
        for p in Primitive::ALL {
            csv.push_str(&r.per_primitive_rce.get(&p).map(|v| format!(",{v:.6}")).unwrap_or_else(|| ",".into()));
        }
        csv.push('\n');
        rows.push(GroupRow { group: group.clone(), videos: pairs.len(), metrics: corpus_json(&r) });
    }
    let name = format!("report_by_{}.csv", by.name());
    rt.out.write_text(&name, &csv)?;
    print!("{csv}");
    let mut summary = rt.summary("report");
    summary.seed = None;
    summary.backend = Some("none".into());
    summary.videos = m.len();
    summary.results = serde_json::json!({ "group_by": by.name(), "groups": rows });
    rt.finish(summary)
}
