//! Pure stage functions. The cached, artifact-backed orchestration lives in
//! [`super::Pipeline`]; everything here is a function of its arguments.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;

use super::config::{DensityMode, PipelineConfig};
use crate::corpus::{self, is_distractor, Corpus, Sample, TaskProbe};
use crate::error::{Error, Result};
use crate::influence::{joint_scores, score_checkpoint};
use crate::mixer::{
    percentile_filter, regroup, sample_mixture, sampling_weights, scale_group_scores, DataGroup, GroupMember,
    MixtureManifest, MixtureSpec,
};
use crate::par::Exec;
use crate::proxylm::ModelParams;
use crate::rng;
use crate::simulator::{evaluate_all, train_in_order, Checkpoint, ProgressionTable, SelectedCheckpointSet};

pub fn generate_inputs(cfg: &PipelineConfig) -> Result<(Corpus, Vec<TaskProbe>)> {
    let specs = cfg.task_specs()?;
    let corpus = corpus::generate_corpus(&specs, &cfg.corpus_params()?)?;
    let seed = cfg.require_seed("gen-corpus")?;
    let probes = specs
        .iter()
        .enumerate()
        .map(|(i, s)| corpus::generate_probe(s, cfg.probe_size, cfg.seq_len, rng::derive_seed(seed, "probes", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((corpus, probes))
}

/// Probe samples of `tasks`, concatenated in the given order.
pub fn validation_set(probes: &[TaskProbe], tasks: &[String]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for t in tasks {
        let probe = probes
            .iter()
            .find(|p| &p.task_id == t)
            .ok_or_else(|| Error::Integrity(format!("no probe for task `{t}`")))?;
        out.extend(probe.samples.iter().cloned());
    }
    if out.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    Ok(out)
}

fn find_checkpoint<'a>(checkpoints: &'a [Checkpoint], id: &str) -> Result<&'a Checkpoint> {
    checkpoints
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::Integrity(format!("selected checkpoint `{id}` is not in the checkpoint store")))
}

/// One DataInf score column per selected checkpoint, each against the
/// concatenated probes of the checkpoint's tasks.
pub fn influence_columns(
    corpus: &Corpus,
    probes: &[TaskProbe],
    checkpoints: &[Checkpoint],
    selection: &SelectedCheckpointSet,
    multiplier: f64,
    exec: Exec,
) -> Result<Vec<(String, Vec<f64>)>> {
    selection
        .checkpoints
        .iter()
        .map(|sel| {
            let ckpt = find_checkpoint(checkpoints, &sel.id)?;
            let validation = validation_set(probes, &sel.probe_tasks)?;
            Ok((sel.id.clone(), score_checkpoint(&ckpt.params, &validation, corpus, multiplier, exec)?))
        })
        .collect()
}

/// `−perplexity` of every sample under each selected checkpoint.
pub fn ppl_columns(
    corpus: &Corpus,
    checkpoints: &[Checkpoint],
    selection: &SelectedCheckpointSet,
    exec: Exec,
) -> Result<Vec<(String, Vec<f64>)>> {
    selection
        .checkpoints
        .iter()
        .map(|sel| {
            let ckpt = find_checkpoint(checkpoints, &sel.id)?;
            let col = exec
                .map(corpus.samples(), |s| ckpt.params.perplexity(s).map(|p| -p))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Ok((sel.id.clone(), col))
        })
        .collect()
}

pub fn joint_column(columns: &[(String, Vec<f64>)], selection: &SelectedCheckpointSet) -> Result<Vec<f64>> {
    let map: BTreeMap<String, Vec<f64>> = columns.iter().cloned().collect();
    joint_scores(&map, &selection.alphas())
}

/// Regroups, applies the optional percentile filter and the density-mode
/// scaling. Groups emptied by the filter are dropped.
pub fn build_groups(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    columns: &[(String, Vec<f64>)],
    joint: &[f64],
) -> Result<Vec<DataGroup>> {
    let mut groups = regroup(corpus, columns, joint, cfg.retention)?;
    if let Some(p) = cfg.percentile_threshold {
        let keep: BTreeSet<usize> = percentile_filter(joint, p)?.into_iter().collect();
        for g in &mut groups {
            g.members.retain(|m| keep.contains(&m.index));
        }
    }
    groups.retain(|g| {
        if g.is_empty() {
            warn!("group `{}` is empty after filtering and is dropped", g.group_id);
        }
        !g.is_empty()
    });
    if groups.is_empty() {
        return Err(Error::Empty("data groups"));
    }
    match cfg.density_mode {
        DensityMode::Raw => Ok(groups),
        DensityMode::Scaled => match scale_group_scores(&groups) {
            Ok(scaled) => Ok(scaled),
            Err(Error::AllScoresEqual) => {
                warn!("all joint scores are equal; group scores set to zero, weights fall back to uniform");
                for g in &mut groups {
                    for m in &mut g.members {
                        m.score = 0.0;
                    }
                }
                Ok(groups)
            }
            Err(e) => Err(e),
        },
    }
}

pub fn mixture_spec(cfg: &PipelineConfig, groups: &[DataGroup]) -> Result<MixtureSpec> {
    let spec = sampling_weights(groups, cfg.token_budget)?;
    let ids: Vec<String> = spec.weights.iter().map(|(g, _)| g.clone()).collect();
    Ok(spec.with_caps(cfg.group_caps(&ids)))
}

pub fn draw(groups: &[DataGroup], spec: &MixtureSpec, cfg: &PipelineConfig) -> Result<MixtureManifest> {
    sample_mixture(groups, spec, rng::derive_seed(cfg.require_seed("sample")?, "sample", 0))
}

/// The whole corpus as one equal-score group, so a draw is a seeded
/// uniform shuffle cut at the budget.
pub fn uniform_group(corpus: &Corpus) -> DataGroup {
    DataGroup {
        group_id: "uniform".into(),
        members: corpus
            .samples()
            .iter()
            .enumerate()
            .map(|(index, s)| GroupMember {
                index,
                sample_id: s.id.clone(),
                token_count: s.token_count(),
                score: 1.0,
            })
            .collect(),
    }
}

pub fn uniform_manifest(cfg: &PipelineConfig, corpus: &Corpus) -> Result<MixtureManifest> {
    let group = uniform_group(corpus);
    let spec = MixtureSpec::uniform(std::slice::from_ref(&group), cfg.token_budget);
    draw(&[group], &spec, cfg)
}

pub fn manifest_samples(manifest: &MixtureManifest, corpus: &Corpus) -> Result<Vec<Sample>> {
    let by_id: HashMap<&str, &Sample> = corpus.samples().iter().map(|s| (s.id.as_str(), s)).collect();
    manifest
        .sample_ids()
        .map(|id| {
            by_id
                .get(id)
                .map(|s| (*s).clone())
                .ok_or_else(|| Error::Integrity(format!("manifest sample `{id}` is not in the corpus")))
        })
        .collect()
}

/// Trains a fresh model per repeat on the manifest in manifest order and
/// returns the mean per-task probe accuracy.
pub fn final_train_and_eval(
    manifest: &MixtureManifest,
    corpus: &Corpus,
    probes: &[TaskProbe],
    cfg: &PipelineConfig,
) -> Result<BTreeMap<String, f64>> {
    let seed = cfg.require_seed("train-eval")?;
    let samples = manifest_samples(manifest, corpus)?;
    if samples.is_empty() {
        warn!("empty manifest: evaluating untrained models");
    }
    let mut sum: BTreeMap<String, f64> = BTreeMap::new();
    for r in 0..cfg.repeats {
        let init = ModelParams::random(corpus.vocab_size(), cfg.dim, rng::derive_seed(seed, "final-init", r as u64));
        let params = train_in_order(init, &samples, cfg.batch_size, cfg.final_epochs, cfg.final_lr)?;
        for (task, acc) in evaluate_all(&params, probes) {
            *sum.entry(task).or_default() += acc;
        }
    }
    Ok(sum.into_iter().map(|(t, s)| (t, s / cfg.repeats as f64)).collect())
}

/// Last checkpoint only, validated on every probe.
pub fn last_only_selection(checkpoints: &[Checkpoint], tasks: &[String]) -> Result<SelectedCheckpointSet> {
    let last = checkpoints.iter().max_by_key(|c| c.step).ok_or(Error::Empty("checkpoint list"))?;
    SelectedCheckpointSet::from_parts(
        vec![(last.id.clone(), last.step, tasks.to_vec())],
        tasks.iter().map(|t| (t.clone(), last.id.clone())).collect(),
    )
}

/// Every saved checkpoint, each validated on every probe; tasks stay
/// assigned to their table-best checkpoint.
pub fn all_checkpoints_selection(
    checkpoints: &[Checkpoint],
    table: &ProgressionTable,
    tasks: &[String],
) -> Result<SelectedCheckpointSet> {
    SelectedCheckpointSet::from_parts(
        checkpoints.iter().map(|c| (c.id.clone(), c.step, tasks.to_vec())).collect(),
        table
            .rows
            .iter()
            .map(|r| (r.task_id.clone(), r.best_checkpoint_id.clone()))
            .collect(),
    )
}

/// Distinct samples over all groups.
pub fn retained_ids(groups: &[DataGroup]) -> BTreeSet<&str> {
    groups.iter().flat_map(|g| g.members.iter().map(|m| m.sample_id.as_str())).collect()
}

pub fn distractor_share<'a>(ids: impl IntoIterator<Item = &'a str>) -> f64 {
    let (mut noise, mut total) = (0usize, 0usize);
    for id in ids {
        noise += usize::from(is_distractor(id));
        total += 1;
    }
    if total == 0 {
        0.0
    } else {
        noise as f64 / total as f64
    }
}

/// Token share of distractors in a manifest.
pub fn manifest_distractor_share(manifest: &MixtureManifest) -> f64 {
    let total = manifest.total_tokens();
    if total == 0 {
        return 0.0;
    }
    let noise: usize = manifest
        .entries
        .iter()
        .filter(|e| is_distractor(&e.sample_id))
        .map(|e| e.tokens)
        .sum();
    noise as f64 / total as f64
}
