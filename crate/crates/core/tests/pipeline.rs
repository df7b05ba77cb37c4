mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use autoprep::audio::{read_wav, write_wav};
use autoprep::backends::mocks::{IdentityEnhancer, ScoreFixtureRow, ScriptedScorer};
use autoprep::backends::BackendSet;
use autoprep::config::{PipelineConfig, StageToggles};
use autoprep::filter::FilterReport;
use autoprep::pipeline::{read_manifest, run_pipeline, stats_for_dir, PipelineError, RunOptions, Stage};
use autoprep::types::AudioBuffer;
use common::{backends, expected_segments, write_corpus, Who};

fn run(config: &PipelineConfig, input: &Path, out: &Path, set: &BackendSet, options: RunOptions) -> Result<autoprep::pipeline::RunSummary, PipelineError> {
    run_pipeline(config, input, out, set, &options)
}

fn fresh(config: &PipelineConfig, input: &Path, out: &Path) -> autoprep::pipeline::RunSummary {
    run(config, input, out, &backends(), RunOptions::default()).unwrap()
}

#[test]
fn end_to_end_two_planted_speakers() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let out = tmp.path().join("out");
    let summary = fresh(&PipelineConfig::default(), &corpus.manifest, &out);

    let records = read_manifest(&out.join("manifest.jsonl")).unwrap();
    let unlabeled = read_manifest(&out.join("manifest.unlabeled.jsonl")).unwrap();
    let expected = expected_segments();

    // Every planted single-speaker region comes back as one segment; the
    // mixed one is routed to the unlabeled manifest.
    let mut by_speaker: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (id, range, who) in &expected {
        let pool = if *who == Who::Mixed { &unlabeled } else { &records };
        let hit = pool
            .iter()
            .find(|r| r.recording_id == *id && (r.start_s - range.start_s).abs() < 1e-6 && (r.end_s - range.end_s).abs() < 1e-6)
            .unwrap_or_else(|| panic!("missing segment {id} {range:?}"));
        if *who != Who::Mixed {
            by_speaker
                .entry(format!("{who:?}"))
                .or_default()
                .insert(hit.speaker_label.unwrap().to_string());
        } else {
            assert_eq!(hit.speaker_label, None);
            assert_eq!(hit.cluster_similarity, None);
        }
    }
    assert_eq!(records.len() + unlabeled.len(), expected.len());
    assert_eq!(by_speaker["A"].len(), 1);
    assert_eq!(by_speaker["B"].len(), 1);
    assert_ne!(by_speaker["A"], by_speaker["B"]);
    assert_eq!(summary.stats.num_speakers, 2);
    assert_eq!(summary.segments, records.len());
    assert_eq!(summary.unlabeled_segments, 1);

    // Sorted by (recording, start); labeled rows carry every stage flag.
    let keys: Vec<(String, f64)> = records.iter().map(|r| (r.recording_id.clone(), r.start_s)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    assert_eq!(keys, sorted);
    for r in &records {
        assert_eq!(r.stage_flags, Stage::ORDER.to_vec());
        assert_eq!(r.transcript.as_deref(), Some("hello"));
        assert_eq!(r.ovrl_score, Some(3.5));
        assert!(r.end_s > r.start_s);
    }
    assert!(!unlabeled[0].stage_flags.contains(&Stage::Tse));

    // Persisted audio is the TSE output: the source slice times the gain.
    let r = &records[0];
    let persisted = read_wav(&out.join(&r.audio_path)).unwrap();
    let source = read_wav(&corpus.dir.join(format!("{}.wav", r.recording_id))).unwrap();
    let a = (r.start_s * f64::from(common::RATE) + 0.5).floor() as usize;
    assert_eq!(persisted.len(), (r.duration_s() * f64::from(common::RATE)).round() as usize);
    for (k, &x) in persisted.samples().iter().enumerate() {
        assert_eq!(x, source.samples()[a + k] * common::TSE_GAIN);
    }
    // Unlabeled audio skips TSE.
    let u = &unlabeled[0];
    let ua = read_wav(&out.join(&u.audio_path)).unwrap();
    let ustart = (u.start_s * f64::from(common::RATE) + 0.5).floor() as usize;
    let usrc = read_wav(&corpus.dir.join(format!("{}.wav", u.recording_id))).unwrap();
    assert_eq!(ua.samples(), &usrc.samples()[ustart..ustart + ua.len()]);

    let report: FilterReport = serde_json::from_slice(&std::fs::read(out.join("filter_report.json")).unwrap()).unwrap();
    assert!(report.reconciles());
    assert_eq!(report.dropped_by_rule.unlabeled, 1);

    let stats = stats_for_dir(&out).unwrap();
    assert_eq!(stats, summary.stats);
    let retention: Vec<usize> = stats.retention.iter().map(|r| r.segments).collect();
    assert!(retention.windows(2).all(|w| w[0] >= w[1]), "{retention:?}");
    assert!(stats.retention.iter().all(|r| r.duration_h <= summary.input_duration_h));
}

#[test]
fn output_is_deterministic_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let mut manifests = Vec::new();
    for workers in [1, 2, 3] {
        let out = tmp.path().join(format!("out{workers}"));
        run(
            &PipelineConfig::default(),
            &corpus.manifest,
            &out,
            &backends(),
            RunOptions {
                workers,
                ..Default::default()
            },
        )
        .unwrap();
        manifests.push(std::fs::read(out.join("manifest.jsonl")).unwrap());
    }
    assert!(manifests.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn every_interruption_point_resumes_to_the_same_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let cfg = PipelineConfig::default();
    let reference_dir = tmp.path().join("ref");
    let total = fresh(&cfg, &corpus.manifest, &reference_dir).checkpoints_written;
    let reference = std::fs::read(reference_dir.join("manifest.jsonl")).unwrap();
    assert!(total > 20);

    for budget in 0..total {
        let out = tmp.path().join(format!("int{budget}"));
        let err = run(
            &cfg,
            &corpus.manifest,
            &out,
            &backends(),
            RunOptions {
                checkpoint_budget: Some(budget),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::Interrupted { .. }), "{err}");
        assert!(!out.join("manifest.jsonl").exists());
        // A second interruption partway through the remainder.
        let _ = run(
            &cfg,
            &corpus.manifest,
            &out,
            &backends(),
            RunOptions {
                resume: true,
                checkpoint_budget: Some((total - budget) / 2),
                ..Default::default()
            },
        );
        run(
            &cfg,
            &corpus.manifest,
            &out,
            &backends(),
            RunOptions {
                resume: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(std::fs::read(out.join("manifest.jsonl")).unwrap(), reference, "budget {budget}");
    }
}

#[test]
fn deleting_half_the_checkpoints_reproduces_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let cfg = PipelineConfig::default();
    let out = tmp.path().join("out");
    fresh(&cfg, &corpus.manifest, &out);
    let reference = std::fs::read(out.join("manifest.jsonl")).unwrap();
    let mut shards: Vec<_> = std::fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    shards.sort();
    for p in shards.iter().step_by(2) {
        std::fs::remove_file(p).unwrap();
    }
    std::fs::remove_file(out.join("manifest.jsonl")).unwrap();
    let resumed = run(&cfg, &corpus.manifest, &out, &backends(), RunOptions { resume: true, ..Default::default() }).unwrap();
    assert!(resumed.checkpoints_written > 0);
    assert_eq!(std::fs::read(out.join("manifest.jsonl")).unwrap(), reference);
}

#[test]
fn resume_with_changed_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let out = tmp.path().join("out");
    fresh(&PipelineConfig::default(), &corpus.manifest, &out);
    let cfg = PipelineConfig {
        rng_seed: 7,
        ..Default::default()
    };
    let err = run(&cfg, &corpus.manifest, &out, &backends(), RunOptions { resume: true, ..Default::default() }).unwrap_err();
    assert_eq!(err.kind(), "fingerprint");
    // Without --resume the directory is cleared and the run proceeds.
    fresh(&cfg, &corpus.manifest, &out);
}

#[test]
fn persist_only_mirrors_input_segmentation() {
    let tmp = tempfile::tempdir().unwrap();
    let audio = AudioBuffer::new((0..16_000 * 10).map(|i| ((i % 97) as f32 / 97.0) - 0.5).collect(), 16_000).unwrap();
    write_wav(&tmp.path().join("x.wav"), &audio).unwrap();
    let manifest = tmp.path().join("in.jsonl");
    std::fs::write(
        &manifest,
        "{\"recording_id\":\"x\",\"path\":\"x.wav\",\"segments\":[[5.0,7.25],[0.5,2.0]]}\n",
    )
    .unwrap();
    let cfg = PipelineConfig {
        stages: StageToggles::from_list("").unwrap(),
        ..Default::default()
    };
    let out = tmp.path().join("out");
    run(&cfg, &manifest, &out, &BackendSet::default(), RunOptions::default()).unwrap();
    let records = read_manifest(&out.join("manifest.jsonl")).unwrap();
    let spans: Vec<(f64, f64)> = records.iter().map(|r| (r.start_s, r.end_s)).collect();
    assert_eq!(spans, vec![(0.5, 2.0), (5.0, 7.25)]);
    for r in &records {
        assert_eq!(r.stage_flags, vec![Stage::Persist]);
        assert_eq!(r.speaker_label, None);
        let a = read_wav(&out.join(&r.audio_path)).unwrap();
        assert_eq!(a.samples(), audio.slice(autoprep::types::TimeRange::new(r.start_s, r.end_s).unwrap()).samples());
    }
    assert_eq!(std::fs::read(out.join("manifest.unlabeled.jsonl")).unwrap(), b"");
}

#[test]
fn missing_backend_aborts_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let out = tmp.path().join("out");
    let mut set = backends();
    set.scorer = None;
    let err = run(&PipelineConfig::default(), &corpus.manifest, &out, &set, RunOptions::default()).unwrap_err();
    assert_eq!(err.kind(), "missing_backend");
    assert!(!out.join("checkpoints").exists());
}

#[test]
fn capability_mismatch_aborts_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let out = tmp.path().join("out");
    let mut set = backends();
    set.enhancer = Some(Arc::new(IdentityEnhancer::with_rates(vec![8_000])));
    let err = run(&PipelineConfig::default(), &corpus.manifest, &out, &set, RunOptions::default()).unwrap_err();
    assert_eq!(err.kind(), "capability");
    assert!(err.to_string().contains("16000"));
    assert!(!out.join("checkpoints").exists());
}

#[test]
fn unreadable_audio_skips_the_recording() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    std::fs::write(corpus.dir.join("rec_b.wav"), b"not a wav").unwrap();
    let out = tmp.path().join("out");
    let summary = fresh(&PipelineConfig::default(), &corpus.manifest, &out);
    assert_eq!(summary.skipped.len(), 1);
    assert_eq!(summary.skipped[0].recording_id, "rec_b");
    let records = read_manifest(&out.join("manifest.jsonl")).unwrap();
    assert!(records.iter().all(|r| r.recording_id != "rec_b"));
    assert_eq!(summary.stats.num_speakers, 2);
}

#[test]
fn scorer_failures_and_low_scores_are_dropped_and_counted() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let mut rows = Vec::new();
    for (i, (id, range, _)) in expected_segments().into_iter().enumerate() {
        let (ovrl, error) = match i {
            0 => (Some(2.4), None),
            1 => (Some(2.39), None),
            2 => (None, Some("boom".to_string())),
            _ => (Some(3.0), None),
        };
        rows.push(ScoreFixtureRow {
            recording_id: id,
            start_s: range.start_s,
            ovrl,
            pdnsmos: None,
            error,
        });
    }
    let mut set = backends();
    set.scorer = Some(Arc::new(ScriptedScorer::from_rows(rows)));
    let out = tmp.path().join("out");
    run(&PipelineConfig::default(), &corpus.manifest, &out, &set, RunOptions::default()).unwrap();
    let report: FilterReport = serde_json::from_slice(&std::fs::read(out.join("filter_report.json")).unwrap()).unwrap();
    assert_eq!(report.dropped_by_rule.quality_score, 1);
    assert_eq!(report.dropped_by_rule.scorer_error, 1);
    assert!(report.reconciles());
    let records = read_manifest(&out.join("manifest.jsonl")).unwrap();
    let first = &expected_segments()[0];
    assert!(records.iter().any(|r| r.recording_id == first.0 && r.ovrl_score == Some(2.4)));
    assert!(records.iter().all(|r| r.ovrl_score.unwrap() >= 2.4));
}

#[test]
fn embeddings_export_covers_every_chunk() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = write_corpus(&tmp.path().join("corpus"));
    let out = tmp.path().join("out");
    fresh(&PipelineConfig::default(), &corpus.manifest, &out);
    let n = autoprep::pipeline::export_embeddings(&out).unwrap();
    assert_eq!(n, common::embedding_rows().len());
    let f = std::fs::File::open(out.join("embeddings/batch-0000.tsv")).unwrap();
    let rows = autoprep::diarize::read_embedding_rows(std::io::BufReader::new(f)).unwrap();
    assert_eq!(rows.len(), n);
    assert!(rows.iter().all(|r| r.cluster < 2 && r.vector.len() == 8));
}
