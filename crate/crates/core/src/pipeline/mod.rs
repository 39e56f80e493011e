//! End-to-end orchestration: every stage reads its inputs from and writes
//! its outputs to the artifact directory, and is skipped when a content hash
//! of its inputs and config keys matches the recorded one.

mod artifacts;
mod config;
mod report;
mod stages;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use log::info;

pub use artifacts::{
    accuracies_to_string, groups_to_string, is_fresh, load_accuracies, load_checkpoints, load_groups, load_selection,
    load_spec, record_key, save_checkpoints, spec_to_string, Layout, StageKey,
};
pub use config::{parse_key_value, DensityMode, KeyKind, PipelineConfig, CONFIG_KEYS};
pub use report::{deltas, emit_report, mean, Accuracies, ExperimentReport};
pub use stages::{
    all_checkpoints_selection, build_groups, distractor_share, draw, final_train_and_eval, generate_inputs,
    influence_columns, joint_column, last_only_selection, manifest_distractor_share, manifest_samples, mixture_spec,
    ppl_columns, retained_ids, uniform_group, uniform_manifest, validation_set,
};

use crate::corpus::{is_distractor, load_corpus, load_probes, save_corpus, save_probes, Corpus, TaskProbe};
use crate::error::{Error, Result};
use crate::influence::{load_scores, save_scores, InfluenceRecord};
use crate::mixer::{bucket_stats, overlap_analysis, DataGroup, MixtureManifest, MixtureSpec};
use crate::par::Exec;
use crate::simulator::{
    build_progression_table, run_simulation_with, select_task_checkpoints, Checkpoint, ProgressionTable,
    SelectedCheckpointSet,
};

/// A mixture-building strategy. `TaskBest` with influence utility is the
/// AutoMixer mixture; the ablation's task-best row reuses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    AutoMixer,
    Ppl,
    LastOnly,
    AllCheckpoints,
    Uniform,
}

impl Strategy {
    pub const ABLATION: [Strategy; 3] = [Strategy::LastOnly, Strategy::AllCheckpoints, Strategy::AutoMixer];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::AutoMixer => "automixer",
            Strategy::Ppl => "ppl",
            Strategy::LastOnly => "last",
            Strategy::AllCheckpoints => "all",
            Strategy::Uniform => "uniform",
        }
    }

    /// Row label in the ablation table.
    pub fn ablation_label(self) -> &'static str {
        match self {
            Strategy::AutoMixer => "task-best",
            s => s.name(),
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Strategy::AutoMixer,
            Strategy::Ppl,
            Strategy::LastOnly,
            Strategy::AllCheckpoints,
            Strategy::Uniform,
        ]
        .into_iter()
        .find(|s| s.name() == name)
    }

    fn uses_perplexity(self) -> bool {
        self == Strategy::Ppl
    }

    /// Name of the selection artifact this strategy reads.
    fn selection_name(self) -> &'static str {
        match self {
            Strategy::AutoMixer | Strategy::Ppl => "task-best",
            s => s.name(),
        }
    }
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    pub exec: Exec,
    /// Stages that were recomputed rather than served from the cache.
    computed: std::cell::RefCell<Vec<String>>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, exec: Exec) -> Self {
        let layout = Layout::new(cfg.out_dir.clone());
        Pipeline {
            cfg,
            layout,
            exec,
            computed: Default::default(),
        }
    }

    /// Stages recomputed so far, in order, as `stage[:strategy]`.
    pub fn computed_stages(&self) -> Vec<String> {
        self.computed.borrow().clone()
    }

    /// Stage key over the listed config keys and input files; `None` when a
    /// stochastic stage has no seed to key on.
    fn key(&self, stage: &str, tag: &str, keys: &[&str], inputs: &[PathBuf], stochastic: bool) -> Result<Option<String>> {
        if stochastic && self.cfg.seed.is_none() {
            return Ok(None);
        }
        let table: toml::Table = toml::from_str(&self.cfg.to_toml()).expect("config round-trips through toml");
        let mut k = StageKey::new(stage);
        k.text(tag);
        for key in keys.iter().chain(stochastic.then_some(&"seed")) {
            k.text(key);
            k.text(&table.get(*key).map_or_else(|| "none".to_string(), ToString::to_string));
        }
        for p in inputs {
            k.file(p)?;
        }
        Ok(Some(k.finish()))
    }

    /// Serves `load` when the stage is fresh, else runs `compute` (which
    /// writes the outputs), records the key and reloads, so cached and
    /// recomputed runs see identical values.
    fn cached<T>(
        &self,
        stage: &'static str,
        tag: &str,
        key: Option<String>,
        outputs: &[PathBuf],
        load: impl Fn() -> Result<T>,
        compute: impl FnOnce() -> Result<()>,
    ) -> Result<T> {
        let run = || -> Result<T> {
            self.layout.ensure()?;
            let record = if tag.is_empty() { stage.to_string() } else { format!("{stage}-{tag}") };
            let fresh = match &key {
                Some(k) => is_fresh(&self.layout, &record, k, outputs),
                None => outputs.iter().all(|p| p.exists()),
            };
            if fresh {
                return load();
            }
            info!("running stage {record}");
            compute()?;
            if let Some(k) = &key {
                record_key(&self.layout, &record, k)?;
            }
            self.computed.borrow_mut().push(record);
            load()
        };
        run().map_err(|e| e.in_stage(stage))
    }

    pub fn tasks(&self) -> Vec<String> {
        self.cfg.tasks.clone()
    }

    pub fn inputs(&self) -> Result<(Corpus, Vec<TaskProbe>)> {
        let l = &self.layout;
        let key = self.key(
            "gen-corpus",
            "",
            &[
                "tasks",
                "noise_rates",
                "vocab_size",
                "band_overlap",
                "max_band_overlap",
                "per_task_docs",
                "distractor_fraction",
                "seq_len",
                "source_tags",
                "probe_size",
            ],
            &[],
            true,
        )?;
        self.cached(
            "gen-corpus",
            "",
            key,
            &[l.corpus(), l.probes()],
            || Ok((load_corpus(&l.corpus())?, load_probes(&l.probes())?.1)),
            || {
                let (corpus, probes) = generate_inputs(&self.cfg)?;
                save_corpus(&corpus, &l.corpus())?;
                save_probes(&probes, corpus.vocab_size(), &l.probes())
            },
        )
    }

    pub fn checkpoints(&self) -> Result<Vec<Checkpoint>> {
        self.inputs()?;
        let l = &self.layout;
        let key = self.key(
            "simulate",
            "",
            &["steps", "batch_size", "checkpoint_every", "lr", "dim"],
            &[l.corpus(), l.probes()],
            true,
        )?;
        self.cached(
            "simulate",
            "",
            key,
            &[l.checkpoint_index()],
            || load_checkpoints(l),
            || {
                let (corpus, probes) = self.inputs()?;
                let ckpts = run_simulation_with(&corpus, &probes, &self.cfg.simulation()?, self.exec)?;
                save_checkpoints(l, &ckpts)
            },
        )
    }

    pub fn run_label(&self) -> String {
        format!("proxy-d{}", self.cfg.dim)
    }

    pub fn progression(&self) -> Result<ProgressionTable> {
        let ckpts = self.checkpoints()?;
        let l = &self.layout;
        let key = self.key("progression", "", &["steps", "dim"], &[l.checkpoint_index()], false)?;
        let table = || build_progression_table(&ckpts, self.cfg.steps);
        self.cached("progression", "", key, &[l.progression()], table, || {
            artifacts::write(&l.progression(), &table()?.to_tsv(&self.run_label()))
        })
    }

    fn selection_path(&self, strategy: Strategy) -> PathBuf {
        match strategy.selection_name() {
            "task-best" => self.layout.selection(),
            name => self.layout.strategy_file(name, "selection"),
        }
    }

    pub fn selection(&self, strategy: Strategy) -> Result<SelectedCheckpointSet> {
        if strategy == Strategy::Uniform {
            return Err(Error::Config("the uniform baseline selects no checkpoints".into()).in_stage("select"));
        }
        let table = self.progression()?;
        let ckpts = self.checkpoints()?;
        let l = &self.layout;
        let path = self.selection_path(strategy);
        let tag = strategy.selection_name();
        let key = self.key("select", tag, &["steps"], &[l.checkpoint_index()], false)?;
        self.cached(
            "select",
            tag,
            key,
            std::slice::from_ref(&path),
            || load_selection(&path),
            || {
                let tasks = self.tasks();
                let set = match strategy {
                    Strategy::LastOnly => last_only_selection(&ckpts, &tasks)?,
                    Strategy::AllCheckpoints => all_checkpoints_selection(&ckpts, &table, &tasks)?,
                    _ => select_task_checkpoints(&table)?,
                };
                artifacts::write(&path, &set.to_tsv())
            },
        )
    }

    /// Per-checkpoint utility columns in corpus order: DataInf scores, or
    /// `−perplexity` for the ppl baseline.
    pub fn scores(&self, strategy: Strategy) -> Result<Vec<(String, Vec<f64>)>> {
        let selection = self.selection(strategy)?;
        let (corpus, probes) = self.inputs()?;
        let ckpts = self.checkpoints()?;
        let l = &self.layout;
        let path = l.strategy_file(strategy.name(), "scores");
        let key = self.key(
            "score",
            strategy.name(),
            &["lambda_multiplier"],
            &[l.corpus(), l.probes(), l.checkpoint_index(), self.selection_path(strategy)],
            false,
        )?;
        let load = || columns_from_records(&load_scores(&path)?, &corpus, &selection);
        self.cached("score", strategy.name(), key, std::slice::from_ref(&path), load, || {
            let columns = if strategy.uses_perplexity() {
                ppl_columns(&corpus, &ckpts, &selection, self.exec)?
            } else {
                influence_columns(&corpus, &probes, &ckpts, &selection, self.cfg.lambda_multiplier, self.exec)?
            };
            save_scores(&records_from_columns(&columns, &corpus), &path)
        })
    }

    /// Joint score per corpus sample.
    pub fn joint(&self, strategy: Strategy) -> Result<Vec<f64>> {
        let columns = self.scores(strategy)?;
        joint_column(&columns, &self.selection(strategy)?).map_err(|e| e.in_stage("regroup"))
    }

    pub fn groups(&self, strategy: Strategy) -> Result<Vec<DataGroup>> {
        if strategy == Strategy::Uniform {
            let (corpus, _) = self.inputs()?;
            return Ok(vec![uniform_group(&corpus)]);
        }
        let columns = self.scores(strategy)?;
        let joint = self.joint(strategy)?;
        let (corpus, _) = self.inputs()?;
        let l = &self.layout;
        let path = l.strategy_file(strategy.name(), "groups");
        let key = self.key(
            "regroup",
            strategy.name(),
            &["retention", "percentile_threshold", "density_mode"],
            &[l.corpus(), l.strategy_file(strategy.name(), "scores"), self.selection_path(strategy)],
            false,
        )?;
        self.cached(
            "regroup",
            strategy.name(),
            key,
            std::slice::from_ref(&path),
            || load_groups(&path),
            || {
                let groups = build_groups(&self.cfg, &corpus, &columns, &joint)?;
                artifacts::write(&path, &groups_to_string(&groups))
            },
        )
    }

    pub fn weights(&self, strategy: Strategy) -> Result<MixtureSpec> {
        let groups = self.groups(strategy)?;
        if strategy == Strategy::Uniform {
            return Ok(MixtureSpec::uniform(&groups, self.cfg.token_budget));
        }
        let l = &self.layout;
        let path = l.strategy_file(strategy.name(), "weights");
        let key = self.key(
            "reweight",
            strategy.name(),
            &["token_budget", "group_cap_tokens"],
            &[l.strategy_file(strategy.name(), "groups")],
            false,
        )?;
        self.cached(
            "reweight",
            strategy.name(),
            key,
            std::slice::from_ref(&path),
            || load_spec(&path),
            || artifacts::write(&path, &spec_to_string(&mixture_spec(&self.cfg, &groups)?)),
        )
    }

    pub fn manifest(&self, strategy: Strategy) -> Result<MixtureManifest> {
        let spec = self.weights(strategy)?;
        let groups = self.groups(strategy)?;
        let l = &self.layout;
        let path = l.strategy_file(strategy.name(), "manifest");
        let mut inputs = vec![l.corpus()];
        if strategy != Strategy::Uniform {
            inputs.push(l.strategy_file(strategy.name(), "groups"));
            inputs.push(l.strategy_file(strategy.name(), "weights"));
        }
        let key = self.key("sample", strategy.name(), &["token_budget"], &inputs, true)?;
        self.cached(
            "sample",
            strategy.name(),
            key,
            std::slice::from_ref(&path),
            || MixtureManifest::load(&path),
            || draw(&groups, &spec, &self.cfg)?.save(&path),
        )
    }

    pub fn evaluation(&self, strategy: Strategy) -> Result<Accuracies> {
        let manifest = self.manifest(strategy)?;
        let (corpus, probes) = self.inputs()?;
        let l = &self.layout;
        let path = l.strategy_file(strategy.name(), "eval");
        let key = self.key(
            "train-eval",
            strategy.name(),
            &["dim", "batch_size", "final_epochs", "final_lr", "repeats"],
            &[l.corpus(), l.probes(), l.strategy_file(strategy.name(), "manifest")],
            true,
        )?;
        self.cached(
            "train-eval",
            strategy.name(),
            key,
            std::slice::from_ref(&path),
            || load_accuracies(&path),
            || {
                let acc = final_train_and_eval(&manifest, &corpus, &probes, &self.cfg)?;
                artifacts::write(&path, &accuracies_to_string(&acc))
            },
        )
    }

    pub fn run_automixer(&self) -> Result<(MixtureManifest, Accuracies)> {
        Ok((self.manifest(Strategy::AutoMixer)?, self.evaluation(Strategy::AutoMixer)?))
    }

    pub fn run_uniform_baseline(&self) -> Result<(MixtureManifest, Accuracies)> {
        let run = || Ok((self.manifest(Strategy::Uniform)?, self.evaluation(Strategy::Uniform)?));
        run().map_err(|e: Error| e.in_stage("baseline"))
    }

    pub fn run_ppl_baseline(&self) -> Result<(MixtureManifest, Accuracies)> {
        let run = || Ok((self.manifest(Strategy::Ppl)?, self.evaluation(Strategy::Ppl)?));
        run().map_err(|e: Error| e.in_stage("baseline"))
    }

    /// Accuracies of the last-only, all-checkpoints and task-best mixtures.
    pub fn run_ablation_checkpoint_strategies(&self) -> Result<Vec<(String, Accuracies)>> {
        let run = || {
            let mut rows = Vec::new();
            for s in Strategy::ABLATION {
                rows.push((s.ablation_label().to_string(), self.evaluation(s)?));
            }
            let mut table = String::from("strategy\tcheckpoints\tmean_accuracy\n");
            for (s, (label, acc)) in Strategy::ABLATION.iter().zip(&rows) {
                table.push_str(&format!(
                    "{label}\t{}\t{:?}\n",
                    self.selection(*s)?.ids().join(","),
                    ExperimentReport::mean_accuracy(acc)
                ));
            }
            artifacts::write(&self.layout.root.join("ablation.tsv"), &table)?;
            Ok(rows)
        };
        run().map_err(|e: Error| e.in_stage("ablate"))
    }

    /// Runs every stage and writes `report.tsv`.
    pub fn report(&self) -> Result<ExperimentReport> {
        let uniform = self.run_uniform_baseline()?.1;
        let (automixer_manifest, automixer) = self.run_automixer()?;
        let mut strategies = vec![(Strategy::AutoMixer.name().to_string(), automixer)];
        let with_ppl = self.cfg.baselines.iter().any(|b| b == "ppl");
        if with_ppl {
            strategies.push((Strategy::Ppl.name().to_string(), self.run_ppl_baseline()?.1));
        }
        let ablation = self.run_ablation_checkpoint_strategies()?;
        let progression = self.progression()?;
        let groups = self.groups(Strategy::AutoMixer)?;
        let joint = self.joint(Strategy::AutoMixer)?;
        let uniform_manifest = self.manifest(Strategy::Uniform)?;

        let build = || -> Result<ExperimentReport> {
            let (corpus, _) = self.inputs()?;
            let tokens: Vec<usize> = corpus.samples().iter().map(|s| s.token_count()).collect();
            let quality: Vec<f64> = corpus
                .samples()
                .iter()
                .map(|s| if is_distractor(&s.id) { 0.0 } else { 1.0 })
                .collect();
            let buckets = bucket_stats(&joint, &tokens, Some(&quality), &self.cfg.bucket_edges)?;
            let overlap = if with_ppl {
                let ppl = self.joint(Strategy::Ppl)?;
                let ids = corpus.samples().iter().map(|s| s.id.clone());
                let a: BTreeMap<String, f64> = ids.clone().zip(joint.iter().copied()).collect();
                let b: BTreeMap<String, f64> = ids.zip(ppl).collect();
                Some(overlap_analysis(&a, &b, self.cfg.overlap_buckets)?)
            } else {
                None
            };
            let distractors = vec![
                ("corpus".to_string(), distractor_share(corpus.samples().iter().map(|s| s.id.as_str()))),
                ("automixer retained set".to_string(), distractor_share(retained_ids(&groups))),
                ("automixer manifest tokens".to_string(), manifest_distractor_share(&automixer_manifest)),
                ("uniform manifest tokens".to_string(), manifest_distractor_share(&uniform_manifest)),
            ];
            let report = ExperimentReport {
                tasks: self.tasks(),
                run_label: self.run_label(),
                uniform,
                strategies,
                ablation,
                progression,
                buckets,
                overlap,
                distractors,
            };
            emit_report(&report, &self.layout.report())?;
            Ok(report)
        };
        build().map_err(|e| e.in_stage("report"))
    }
}

fn records_from_columns(columns: &[(String, Vec<f64>)], corpus: &Corpus) -> Vec<InfluenceRecord> {
    corpus
        .samples()
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            columns.iter().map(move |(ckpt, col)| InfluenceRecord {
                sample_id: s.id.clone(),
                checkpoint_id: ckpt.clone(),
                score: col[i],
            })
        })
        .collect()
}

/// Rebuilds selection-ordered score columns from a score file, requiring
/// exactly one record per (sample, selected checkpoint).
fn columns_from_records(
    records: &[InfluenceRecord],
    corpus: &Corpus,
    selection: &SelectedCheckpointSet,
) -> Result<Vec<(String, Vec<f64>)>> {
    let pos: HashMap<&str, usize> = corpus.samples().iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let ckpt_pos: HashMap<&str, usize> = selection.ids().into_iter().enumerate().map(|(i, c)| (c, i)).collect();
    let n = corpus.len();
    let mut cols: Vec<Vec<Option<f64>>> = vec![vec![None; n]; ckpt_pos.len()];
    for r in records {
        let (Some(&i), Some(&j)) = (pos.get(r.sample_id.as_str()), ckpt_pos.get(r.checkpoint_id.as_str())) else {
            return Err(Error::Integrity(format!(
                "score record ({}, {}) does not match the corpus and selection",
                r.sample_id, r.checkpoint_id
            )));
        };
        if cols[j][i].replace(r.score).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate score for ({}, {})",
                r.sample_id, r.checkpoint_id
            )));
        }
    }
    selection
        .ids()
        .into_iter()
        .zip(cols)
        .map(|(id, col)| {
            let col = col
                .into_iter()
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Integrity(format!("scores for checkpoint `{id}` do not cover the corpus")))?;
            Ok((id.to_string(), col))
        })
        .collect()
}
