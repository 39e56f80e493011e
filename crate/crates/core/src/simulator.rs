//! Simulation run, checkpoint evaluation, the progression table and
//! task-best checkpoint selection with step-proportional blending factors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::corpus::{Corpus, Sample, TaskProbe};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::proxylm::ModelParams;
use crate::rng::{self, StageRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub id: String,
    pub step: u64,
    pub params: ModelParams,
    /// Task id -> probe accuracy.
    pub eval: BTreeMap<String, f64>,
}

pub fn checkpoint_id(step: u64) -> String {
    format!("ckpt-{step:07}")
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub lr: f64,
    pub dim: usize,
    pub seed: u64,
}

/// Endless stream of batches: the corpus is reshuffled at every epoch
/// boundary from a seeded stream.
pub struct BatchStream<'a> {
    samples: &'a [Sample],
    order: Vec<usize>,
    pos: usize,
    rng: StageRng,
}

impl<'a> BatchStream<'a> {
    pub fn new(samples: &'a [Sample], seed: u64) -> Self {
        let mut s = BatchStream {
            samples,
            order: (0..samples.len()).collect(),
            pos: 0,
            rng: rng::stream(seed, "batches", 0),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<Sample> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            batch.push(self.samples[self.order[self.pos]].clone());
            self.pos += 1;
        }
        batch
    }
}

/// Trains from a fresh seeded model, snapshotting every `checkpoint_every`
/// steps, and evaluates every snapshot on every probe.
pub fn run_simulation(corpus: &Corpus, probes: &[TaskProbe], cfg: &SimulationConfig) -> Result<Vec<Checkpoint>> {
    run_simulation_with(corpus, probes, cfg, Exec::default())
}

pub fn run_simulation_with(
    corpus: &Corpus,
    probes: &[TaskProbe],
    cfg: &SimulationConfig,
    exec: Exec,
) -> Result<Vec<Checkpoint>> {
    if cfg.checkpoint_every == 0 || cfg.steps / cfg.checkpoint_every < 2 {
        return Err(Error::Config(format!(
            "checkpoint_every={} must fit into steps={} at least twice",
            cfg.checkpoint_every, cfg.steps
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("simulation corpus"));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("lr must be > 0, got {}", cfg.lr)));
    }
    let mut params = ModelParams::random(corpus.vocab_size(), cfg.dim, rng::derive_seed(cfg.seed, "simulation", 0));
    let mut batches = BatchStream::new(corpus.samples(), rng::derive_seed(cfg.seed, "simulation", 1));
    let mut snapshots = Vec::new();
    for step in 1..=cfg.steps {
        let batch = batches.next_batch(cfg.batch_size);
        params = params.sgd_step(&batch, cfg.lr).map_err(|e| match e {
            Error::NonFinite(what) => Error::Divergence { step, what },
            e => e,
        })?;
        if step % cfg.checkpoint_every == 0 {
            snapshots.push((step, params.clone()));
        }
    }
    Ok(exec.map(&snapshots, |(step, params)| Checkpoint {
        id: checkpoint_id(*step),
        step: *step,
        eval: evaluate_all(params, probes),
        params: params.clone(),
    }))
}

/// Fraction of probe transitions whose argmax prediction (lowest id on ties)
/// is the true next token.
pub fn evaluate_checkpoint(params: &ModelParams, probe: &TaskProbe) -> f64 {
    let mut cache: Vec<Option<u32>> = vec![None; params.vocab()];
    let (mut hits, mut total) = (0usize, 0usize);
    for s in &probe.samples {
        for w in s.tokens.windows(2) {
            let pred = *cache[w[0] as usize].get_or_insert_with(|| params.predict_next(w[0]));
            hits += usize::from(pred == w[1]);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn evaluate_all(params: &ModelParams, probes: &[TaskProbe]) -> BTreeMap<String, f64> {
    probes
        .iter()
        .map(|p| (p.task_id.clone(), evaluate_checkpoint(params, p)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskProgress {
    pub task_id: String,
    pub best_checkpoint_id: String,
    pub best_step: u64,
    pub best_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressionTable {
    pub total_steps: u64,
    /// One row per task, sorted by task id.
    pub rows: Vec<TaskProgress>,
}

impl ProgressionTable {
    pub fn ratio(&self, row: &TaskProgress) -> f64 {
        row.best_step as f64 / self.total_steps as f64
    }

    /// `best_step` as a percentage of the run, e.g. `5` for step 5000 of
    /// 100000.
    pub fn percent(&self, row: &TaskProgress) -> f64 {
        row.best_step as f64 * 100.0 / self.total_steps as f64
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.task_id.as_str())
    }

    /// Table with one row per run and one percentage cell per task.
    pub fn to_tsv(&self, run_label: &str) -> String {
        let mut out = String::from("run");
        for r in &self.rows {
            let _ = write!(out, "\t{}", r.task_id);
        }
        let _ = write!(out, "\n{run_label}");
        for r in &self.rows {
            let _ = write!(out, "\t{}%", format_percent(self.percent(r)));
        }
        out.push('\n');
        out
    }
}

/// Up to two decimals, trailing zeros dropped.
pub fn format_percent(p: f64) -> String {
    let s = format!("{p:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Per task, the earliest checkpoint reaching that task's maximum accuracy.
pub fn build_progression_table(checkpoints: &[Checkpoint], total_steps: u64) -> Result<ProgressionTable> {
    if checkpoints.is_empty() {
        return Err(Error::Empty("checkpoint list"));
    }
    let tasks: BTreeSet<&str> = checkpoints.iter().flat_map(|c| c.eval.keys().map(String::as_str)).collect();
    if tasks.is_empty() {
        return Err(Error::Integrity("checkpoints carry no evaluation results".into()));
    }
    let mut ordered: Vec<&Checkpoint> = checkpoints.iter().collect();
    ordered.sort_by_key(|c| c.step);
    for c in &ordered {
        if c.step == 0 || c.step > total_steps {
            return Err(Error::Integrity(format!(
                "checkpoint `{}` step {} outside (0, {total_steps}]",
                c.id, c.step
            )));
        }
        if let Some(t) = tasks.iter().find(|t| !c.eval.contains_key(**t)) {
            return Err(Error::Integrity(format!("checkpoint `{}` is not evaluated on task `{t}`", c.id)));
        }
    }
    let rows = tasks
        .into_iter()
        .map(|task| {
            let mut best = ordered[0];
            for c in &ordered[1..] {
                if c.eval[task] > best.eval[task] {
                    best = c;
                }
            }
            TaskProgress {
                task_id: task.to_string(),
                best_checkpoint_id: best.id.clone(),
                best_step: best.step,
                best_accuracy: best.eval[task],
            }
        })
        .collect();
    Ok(ProgressionTable { total_steps, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedCheckpoint {
    pub id: String,
    pub step: u64,
    pub alpha: f64,
    /// Tasks whose probes form this checkpoint's validation set.
    pub probe_tasks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedCheckpointSet {
    /// Sorted by step.
    pub checkpoints: Vec<SelectedCheckpoint>,
    pub task_assignment: BTreeMap<String, String>,
}

impl SelectedCheckpointSet {
    pub fn k(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn alphas(&self) -> BTreeMap<String, f64> {
        self.checkpoints.iter().map(|c| (c.id.clone(), c.alpha)).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.checkpoints.iter().map(|c| c.id.as_str()).collect()
    }

    /// Builds a set over explicit `(id, step)` pairs, each validated against
    /// the probes of `probe_tasks`.
    pub fn from_parts(
        parts: Vec<(String, u64, Vec<String>)>,
        task_assignment: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut parts = parts;
        parts.sort_by_key(|p| p.1);
        let steps: Vec<u64> = parts.iter().map(|p| p.1).collect();
        let alphas = blending_factors(&steps)?;
        let checkpoints = parts
            .into_iter()
            .zip(alphas)
            .map(|((id, step, probe_tasks), alpha)| SelectedCheckpoint {
                id,
                step,
                alpha,
                probe_tasks,
            })
            .collect();
        Ok(SelectedCheckpointSet {
            checkpoints,
            task_assignment,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("checkpoint_id\tstep\talpha\ttasks\n");
        for c in &self.checkpoints {
            let _ = writeln!(out, "{}\t{}\t{:.12e}\t{}", c.id, c.step, c.alpha, c.probe_tasks.join(","));
        }
        out
    }
}

/// Distinct task-best checkpoints; tasks sharing a best checkpoint collapse
/// onto it, so `k <= m`.
pub fn select_task_checkpoints(table: &ProgressionTable) -> Result<SelectedCheckpointSet> {
    let mut by_ckpt: BTreeMap<(u64, &str), Vec<String>> = BTreeMap::new();
    for row in &table.rows {
        by_ckpt
            .entry((row.best_step, row.best_checkpoint_id.as_str()))
            .or_default()
            .push(row.task_id.clone());
    }
    let assignment = table
        .rows
        .iter()
        .map(|r| (r.task_id.clone(), r.best_checkpoint_id.clone()))
        .collect();
    let parts = by_ckpt
        .into_iter()
        .map(|((step, id), tasks)| (id.to_string(), step, tasks))
        .collect();
    SelectedCheckpointSet::from_parts(parts, assignment)
}

/// `α_j = (s_j / s_max) / Σ_i (s_i / s_max)`.
pub fn blending_factors(steps: &[u64]) -> Result<Vec<f64>> {
    let s_max = *steps.iter().max().ok_or(Error::Empty("checkpoint steps"))?;
    if steps.contains(&0) {
        return Err(Error::Config("checkpoint steps must be positive".into()));
    }
    let normalized: Vec<f64> = steps.iter().map(|&s| s as f64 / s_max as f64).collect();
    let total: f64 = normalized.iter().sum();
    Ok(normalized.into_iter().map(|s| s / total).collect())
}

/// Trains `params` on `samples` in the given order, `epochs` passes of
/// consecutive batches (the last batch of a pass may be short).
pub fn train_in_order(
    mut params: ModelParams,
    samples: &[Sample],
    batch_size: usize,
    epochs: usize,
    lr: f64,
) -> Result<ModelParams> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut step = 0u64;
    for _ in 0..epochs {
        for batch in samples.chunks(batch_size) {
            step += 1;
            params = params.sgd_step(batch, lr).map_err(|e| match e {
                Error::NonFinite(what) => Error::Divergence { step, what },
                e => e,
            })?;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, generate_probe, CorpusParams, SyntheticTaskSpec};

    fn ckpt(step: u64, eval: &[(&str, f64)]) -> Checkpoint {
        Checkpoint {
            id: checkpoint_id(step),
            step,
            params: ModelParams::zeros(2, 1),
            eval: eval.iter().map(|(t, a)| (t.to_string(), *a)).collect(),
        }
    }

    fn small_setup() -> (Corpus, Vec<TaskProbe>) {
        let specs = vec![
            SyntheticTaskSpec::cyclic("a", 0..6, 0.0, 1).unwrap(),
            SyntheticTaskSpec::cyclic("b", 6..12, 0.0, 2).unwrap(),
        ];
        let params = CorpusParams {
            vocab_size: 16,
            per_task_docs: 20,
            distractor_fraction: 0.2,
            seq_len: 12,
            seed: 3,
            source_tags: vec!["s0".into(), "s1".into()],
            max_band_overlap: 0.0,
        };
        let corpus = generate_corpus(&specs, &params).unwrap();
        let probes = specs.iter().map(|s| generate_probe(s, 5, 12, 3).unwrap()).collect();
        (corpus, probes)
    }

    #[test]
    fn blending_factor_examples() {
        assert_eq!(blending_factors(&[700]).unwrap(), vec![1.0]);
        for a in blending_factors(&[5, 5, 5, 5]).unwrap() {
            assert!((a - 0.25).abs() < 1e-15);
        }
        let a = blending_factors(&[25_000, 50_000, 100_000]).unwrap();
        for (x, want) in a.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((x - want).abs() < 1e-12);
        }
        assert!(blending_factors(&[]).is_err());
        assert!(blending_factors(&[0, 3]).is_err());
    }

    #[test]
    fn progression_percent_convention() {
        let cks = vec![ckpt(5_000, &[("hellaswag", 0.4)]), ckpt(100_000, &[("hellaswag", 0.3)])];
        let table = build_progression_table(&cks, 100_000).unwrap();
        assert_eq!(table.percent(&table.rows[0]), 5.0);
        assert_eq!(table.ratio(&table.rows[0]), 0.05);
        assert_eq!(table.to_tsv("run-1"), "run\thellaswag\nrun-1\t5%\n");
        assert_eq!(format_percent(12.5), "12.5");
        assert_eq!(format_percent(100.0), "100");
    }

    #[test]
    fn progression_tie_and_monotone_rules() {
        let flat = vec![ckpt(10, &[("a", 0.5)]), ckpt(20, &[("a", 0.5)]), ckpt(30, &[("a", 0.5)])];
        let t = build_progression_table(&flat, 30).unwrap();
        assert_eq!(t.rows[0].best_step, 10);

        let rising = vec![ckpt(30, &[("a", 0.9)]), ckpt(10, &[("a", 0.1)]), ckpt(20, &[("a", 0.5)])];
        let t = build_progression_table(&rising, 30).unwrap();
        assert_eq!(t.rows[0].best_step, 30);
        assert_eq!(format_percent(t.percent(&t.rows[0])), "100");

        let missing = vec![ckpt(10, &[("a", 0.1), ("b", 0.2)]), ckpt(20, &[("a", 0.5)])];
        assert!(matches!(build_progression_table(&missing, 30), Err(Error::Integrity(_))));
    }

    #[test]
    fn selection_collapses_shared_peaks() {
        let cks = vec![
            ckpt(40, &[("A", 0.9), ("B", 0.8), ("C", 0.1)]),
            ckpt(80, &[("A", 0.7), ("B", 0.6), ("C", 0.5)]),
        ];
        let table = build_progression_table(&cks, 100).unwrap();
        let sel = select_task_checkpoints(&table).unwrap();
        assert_eq!(sel.k(), 2);
        assert_eq!(sel.task_assignment["A"], checkpoint_id(40));
        assert_eq!(sel.task_assignment["B"], checkpoint_id(40));
        assert_eq!(sel.task_assignment["C"], checkpoint_id(80));
        assert_eq!(sel.checkpoints[0].probe_tasks, vec!["A", "B"]);
        assert!((sel.checkpoints[0].alpha - 1.0 / 3.0).abs() < 1e-12);

        let same = vec![ckpt(40, &[("A", 0.9), ("B", 0.8)]), ckpt(80, &[("A", 0.7), ("B", 0.6)])];
        let sel = select_task_checkpoints(&build_progression_table(&same, 80).unwrap()).unwrap();
        assert_eq!(sel.k(), 1);
        assert_eq!(sel.checkpoints[0].alpha, 1.0);
    }

    #[test]
    fn uniform_logits_accuracy_follows_tie_rule() {
        let mut p = ModelParams::random(16, 4, 1);
        p.output.iter_mut().for_each(|w| *w = 0.0);
        let probe = TaskProbe {
            task_id: "t".into(),
            samples: vec![Sample::new("x", "p", vec![3, 0, 5, 0, 0]).unwrap()],
        };
        assert_eq!(evaluate_checkpoint(&p, &probe), 0.75);
    }

    #[test]
    fn simulation_cadence_and_determinism() {
        let (corpus, probes) = small_setup();
        let cfg = SimulationConfig {
            steps: 2,
            batch_size: 4,
            checkpoint_every: 1,
            lr: 0.1,
            dim: 4,
            seed: 9,
        };
        let a = run_simulation(&corpus, &probes, &cfg).unwrap();
        assert_eq!(a.iter().map(|c| c.step).collect::<Vec<_>>(), vec![1, 2]);
        assert!(a.iter().all(|c| c.eval.len() == 2));
        let b = run_simulation_with(&corpus, &probes, &cfg, Exec::Sequential).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.params.to_bytes(), y.params.to_bytes());
            assert_eq!(x.eval, y.eval);
        }
        let bad = SimulationConfig { checkpoint_every: 2, ..cfg };
        assert!(run_simulation(&corpus, &probes, &bad).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let (corpus, probes) = small_setup();
        let cfg = SimulationConfig {
            steps: 4,
            batch_size: 2,
            checkpoint_every: 2,
            lr: 1e308,
            dim: 4,
            seed: 1,
        };
        match run_simulation(&corpus, &probes, &cfg) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_noise_rule_is_learned_to_full_accuracy() {
        let (corpus, probes) = small_setup();
        let cfg = SimulationConfig {
            steps: 1500,
            batch_size: 8,
            checkpoint_every: 750,
            lr: 1.0,
            dim: 8,
            seed: 2,
        };
        let cks = run_simulation(&corpus, &probes, &cfg).unwrap();
        let last = cks.last().unwrap();
        assert!(last.eval.values().all(|&a| a == 1.0), "{:?}", last.eval);
    }
}
