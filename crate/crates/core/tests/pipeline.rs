use std::collections::BTreeMap;

use automixer::corpus::{Corpus, Sample};
use automixer::mixer::DataGroup;
use automixer::par::Exec;
use automixer::pipeline::{
    build_groups, final_train_and_eval, influence_columns, joint_column, mixture_spec, ppl_columns, uniform_manifest,
    Pipeline, PipelineConfig, Strategy,
};
use automixer::mixer::MixtureManifest;
use automixer::proxylm::ModelParams;
use automixer::simulator::{
    build_progression_table, evaluate_all, select_task_checkpoints, train_in_order, Checkpoint, SelectedCheckpointSet,
};

fn small_config(dir: &std::path::Path, seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed: Some(seed),
        out_dir: dir.to_path_buf(),
        per_task_docs: 40,
        steps: 300,
        checkpoint_every: 50,
        probe_size: 32,
        seq_len: 24,
        token_budget: 3000,
        repeats: 1,
        ..PipelineConfig::default()
    }
}

#[test]
fn cached_rerun_recomputes_nothing_and_matches() {
    let dir = tempfile::tempdir().unwrap();
    let first = Pipeline::new(small_config(dir.path(), 11), Exec::default());
    let report = first.report().unwrap();
    assert!(first.computed_stages().iter().any(|s| s == "simulate"));
    let bytes = std::fs::read(first.layout.report()).unwrap();

    let second = Pipeline::new(small_config(dir.path(), 11), Exec::default());
    assert_eq!(second.report().unwrap(), report);
    assert_eq!(second.computed_stages(), Vec::<String>::new());
    assert_eq!(std::fs::read(second.layout.report()).unwrap(), bytes);

    // changing a late key only reruns the stages downstream of it
    let cfg = PipelineConfig {
        final_lr: 0.3,
        ..small_config(dir.path(), 11)
    };
    let third = Pipeline::new(cfg, Exec::default());
    third.report().unwrap();
    let computed = third.computed_stages();
    assert!(computed.iter().all(|s| s.starts_with("train-eval")), "{computed:?}");
    assert!(!computed.is_empty());
}

#[test]
fn shared_peak_collapses_to_one_group_with_full_weight() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    let p = Pipeline::new(cfg.clone(), Exec::default());
    let (corpus, probes) = p.inputs().unwrap();
    let ckpts = p.checkpoints().unwrap();
    let last = ckpts.last().unwrap();
    let eval: BTreeMap<String, f64> = cfg.tasks.iter().map(|t| (t.clone(), 1.0)).collect();
    let fixed = vec![Checkpoint { eval, ..last.clone() }];
    let table = build_progression_table(&fixed, cfg.steps).unwrap();
    let selection = select_task_checkpoints(&table).unwrap();
    assert_eq!(selection.k(), 1);
    assert_eq!(selection.checkpoints[0].alpha, 1.0);
    assert_eq!(selection.checkpoints[0].probe_tasks, cfg.tasks);

    let columns = influence_columns(&corpus, &probes, &fixed, &selection, cfg.lambda_multiplier, Exec::default()).unwrap();
    let joint = joint_column(&columns, &selection).unwrap();
    assert_eq!(joint, columns[0].1);
    let groups = build_groups(&cfg, &corpus, &columns, &joint).unwrap();
    let spec = mixture_spec(&cfg, &groups).unwrap();
    assert_eq!(spec.weights, vec![(last.id.clone(), 1.0)]);
}

#[test]
fn uniform_baseline_covers_corpus_under_large_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        token_budget: 10_000_000,
        ..small_config(dir.path(), 4)
    };
    let p = Pipeline::new(cfg.clone(), Exec::default());
    let (corpus, _) = p.inputs().unwrap();
    let m = uniform_manifest(&cfg, &corpus).unwrap();
    assert_eq!(m.entries.len(), corpus.len());
    assert_eq!(m.total_tokens(), corpus.total_tokens());
    let mut ids: Vec<&str> = m.sample_ids().collect();
    ids.sort_unstable();
    let mut want: Vec<&str> = corpus.samples().iter().map(|s| s.id.as_str()).collect();
    want.sort_unstable();
    assert_eq!(ids, want);
}

#[test]
fn memorized_sample_has_best_perplexity_utility() {
    let samples: Vec<Sample> = (0..6u32)
        .map(|i| Sample::new(format!("t/{i}"), "src", (0..16).map(|k| (k * (i + 1) + i) % 8).collect()).unwrap())
        .collect();
    let corpus = Corpus::new(8, samples.clone()).unwrap();
    let params = train_in_order(ModelParams::random(8, 8, 1), &samples[3..4], 1, 400, 0.5).unwrap();
    let ckpt = Checkpoint {
        id: "c".into(),
        step: 10,
        params,
        eval: BTreeMap::new(),
    };
    let selection = SelectedCheckpointSet::from_parts(vec![("c".into(), 10, vec![])], BTreeMap::new()).unwrap();
    let cols = ppl_columns(&corpus, &[ckpt], &selection, Exec::default()).unwrap();
    let col = &cols[0].1;
    let best = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
    assert_eq!(best, 3, "{col:?}");
}

#[test]
fn empty_manifest_evaluates_untrained_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 5);
    let p = Pipeline::new(cfg.clone(), Exec::default());
    let (corpus, probes) = p.inputs().unwrap();
    let empty = MixtureManifest {
        token_budget: 10,
        weights: vec![],
        caps: BTreeMap::new(),
        entries: vec![],
    };
    let acc = final_train_and_eval(&empty, &corpus, &probes, &cfg).unwrap();
    let init = ModelParams::random(
        corpus.vocab_size(),
        cfg.dim,
        automixer::rng::derive_seed(5, "final-init", 0),
    );
    assert_eq!(acc, evaluate_all(&init, &probes));
}

#[test]
fn automixer_groups_track_selected_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path(), 9), Exec::default());
    let selection = p.selection(Strategy::AutoMixer).unwrap();
    let groups: Vec<DataGroup> = p.groups(Strategy::AutoMixer).unwrap();
    let ids: Vec<&str> = groups.iter().map(|g| g.group_id.as_str()).collect();
    assert_eq!(ids, selection.ids());
    let spec = p.weights(Strategy::AutoMixer).unwrap();
    let sum: f64 = spec.weights.iter().map(|(_, w)| w).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    let m = p.manifest(Strategy::AutoMixer).unwrap();
    assert!(m.total_tokens() <= p.cfg.token_budget);
}
