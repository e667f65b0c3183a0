mod common;

use rehab_vlm::ingest::SyntheticFrames;
use rehab_vlm::par::Executor;
use rehab_vlm::primpipe::{Pipeline, PipelineConfig, PromptingMode};
use rehab_vlm::primrs::{PrimRsConfig, StateSource};
use rehab_vlm::types::Primitive::*;
use rehab_vlm::vlm::PromptCatalog;

use common::*;

#[test]
fn primrs_golden_sequence() {
    let client = primrs_golden_client();
    let catalog = PromptCatalog::builtin();
    let pipeline = Pipeline::new(&client, &SyntheticFrames, &catalog);
    let out = pipeline.run_primrs(&primrs_golden_job(), &PrimRsConfig::default()).unwrap();

    assert_eq!(out.sequence.items, vec![Idle, Reach, Transport, Stabilize, Reposition, Idle]);
    assert_eq!(out.raw.len(), 25);
    assert!(out.unparsed.is_empty());
    let quick = out.raw.iter().filter(|s| s.source == StateSource::PoseQuick).count();
    assert_eq!(quick, 11);
    // Only still and moderately moving segments reach the model, two questions each.
    assert_eq!(client.transcript().len(), 2 * (25 - quick));
    let prov = out.provenance.unwrap();
    assert!(prov.insertions.is_empty());
    assert!(prov.idle_flips.is_empty());
}

#[test]
fn primrs_golden_is_reproducible() {
    let catalog = PromptCatalog::builtin();
    let run = || {
        let client = primrs_golden_client();
        let pipeline = Pipeline::new(&client, &SyntheticFrames, &catalog);
        let out = pipeline.run_primrs(&primrs_golden_job(), &PrimRsConfig::default()).unwrap();
        (out.sequence, client.transcript().to_jsonl())
    };
    assert_eq!(run(), run());
}

#[test]
fn primrs_without_cropping_asks_every_segment() {
    let client = primrs_golden_client();
    let catalog = PromptCatalog::builtin();
    let pipeline = Pipeline::new(&client, &SyntheticFrames, &catalog);
    let cfg = PrimRsConfig { cropping: false, ..PrimRsConfig::default() };
    let out = pipeline.run_primrs(&primrs_golden_job(), &cfg).unwrap();
    assert!(out.raw.iter().all(|s| s.source == StateSource::Vlm));
    assert_eq!(client.transcript().len(), 50);
}

#[test]
fn decomposed_golden_sequence() {
    let client = decomposed_golden_client();
    let catalog = PromptCatalog::builtin();
    let pipeline = Pipeline::new(&client, &SyntheticFrames, &catalog);
    let cfg = PipelineConfig { mode: PromptingMode::Decomposed, ..PipelineConfig::default() };
    let out = pipeline.run(&decomposed_golden_job(), &cfg, &Executor::default()).unwrap();
    assert_eq!(out.per_segment, vec![Reach, Transport, Stabilize, Idle]);
    assert_eq!(out.sequence.items, out.per_segment);
    assert_eq!(out.sequence.to_line(), "reach,transport,stabilize,idle");
    assert_eq!(client.transcript().len(), 8);
}

#[test]
fn decomposed_transcript_is_identical_across_executors() {
    let catalog = PromptCatalog::builtin();
    let cfg = PipelineConfig::default();
    let run = |exec: Executor| {
        let client = decomposed_golden_client();
        let pipeline = Pipeline::new(&client, &SyntheticFrames, &catalog);
        let out = pipeline.run(&decomposed_golden_job(), &cfg, &exec).unwrap();
        (out.sequence, client.transcript().to_jsonl())
    };
    let seq = run(Executor::sequential());
    assert_eq!(seq, run(Executor::with_threads(4)));
    assert_eq!(seq, run(Executor::sequential()));
}
