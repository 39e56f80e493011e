//! Corpus data model, the synthetic multi-skill corpus generator and the
//! plain-text corpus/probe file formats.
//!
//! A synthetic task is a deterministic next-token rule over a contiguous band
//! of token ids, corrupted by uniform in-band noise. Task membership is never
//! stored on a [`Sample`]; the mixer has to rediscover it through influence.
//! Sample ids do encode their origin (`<task>/<n>` or `noise/<n>`) so that
//! evaluation code can measure how well it did, see [`sample_origin`].

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub type TokenId = u32;

/// Id prefix of pure-noise distractor samples.
pub const DISTRACTOR_TAG: &str = "noise";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub source_id: String,
    pub tokens: Vec<TokenId>,
}

impl Sample {
    pub fn new(id: impl Into<String>, source_id: impl Into<String>, tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::SequenceTooShort(tokens.len()));
        }
        Ok(Sample {
            id: id.into(),
            source_id: source_id.into(),
            tokens,
        })
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn transitions(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        if self.tokens.len() < 2 {
            return Err(Error::SequenceTooShort(self.tokens.len()));
        }
        match self.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            Some(&token) => Err(Error::TokenOutOfRange {
                token,
                vocab: vocab_size,
            }),
            None => Ok(()),
        }
    }
}

/// Task that produced a sample, or `None` for distractors and foreign ids.
pub fn sample_origin(id: &str) -> Option<&str> {
    let (tag, _) = id.rsplit_once('/')?;
    (tag != DISTRACTOR_TAG).then_some(tag)
}

pub fn is_distractor(id: &str) -> bool {
    id.rsplit_once('/').is_some_and(|(tag, _)| tag == DISTRACTOR_TAG)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    vocab_size: usize,
    samples: Vec<Sample>,
}

impl Corpus {
    pub fn new(vocab_size: usize, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            s.check_vocab(vocab_size)?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(Corpus { vocab_size, samples })
    }

    pub fn empty(vocab_size: usize) -> Self {
        Corpus {
            vocab_size,
            samples: Vec::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.samples.iter().map(Sample::token_count).sum()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskProbe {
    pub task_id: String,
    pub samples: Vec<Sample>,
}

impl TaskProbe {
    pub fn q(&self) -> usize {
        self.samples.len()
    }

    pub fn transitions(&self) -> usize {
        self.samples.iter().map(Sample::transitions).sum()
    }
}

/// A deterministic next-token rule over `band`, plus uniform in-band noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub task_id: String,
    band_start: TokenId,
    /// `rule[t - band_start]` is the successor of token `t`.
    rule: Vec<TokenId>,
    pub noise_rate: f64,
}

impl SyntheticTaskSpec {
    pub fn with_rule(task_id: impl Into<String>, band_start: TokenId, rule: Vec<TokenId>, noise_rate: f64) -> Result<Self> {
        let task_id = task_id.into();
        validate_task_id(&task_id)?;
        if rule.is_empty() {
            return Err(Error::Config(format!("task `{task_id}` has an empty vocab band")));
        }
        if !(0.0..1.0).contains(&noise_rate) {
            return Err(Error::Config(format!(
                "task `{task_id}`: noise_rate must be in [0, 1), got {noise_rate}"
            )));
        }
        let band = band_start..band_start + rule.len() as TokenId;
        if let Some(bad) = rule.iter().find(|t| !band.contains(t)) {
            return Err(Error::Config(format!(
                "task `{task_id}`: rule output {bad} leaves band {band:?}"
            )));
        }
        Ok(SyntheticTaskSpec {
            task_id,
            band_start,
            rule,
            noise_rate,
        })
    }

    /// A rule that walks the whole band as one seeded cycle.
    pub fn cyclic(task_id: impl Into<String>, band: Range<TokenId>, noise_rate: f64, seed: u64) -> Result<Self> {
        let task_id = task_id.into();
        let mut order: Vec<TokenId> = band.clone().collect();
        let mut rng = rng::stream(seed, "task-rule", u64::from(band.start));
        order.shuffle(&mut rng);
        let mut rule = vec![0; order.len()];
        for (i, &t) in order.iter().enumerate() {
            rule[(t - band.start) as usize] = order[(i + 1) % order.len()];
        }
        Self::with_rule(task_id, band.start, rule, noise_rate)
    }

    pub fn band(&self) -> Range<TokenId> {
        self.band_start..self.band_start + self.rule.len() as TokenId
    }

    pub fn band_len(&self) -> usize {
        self.rule.len()
    }

    /// Successor of `token` under the rule, `None` outside the band.
    pub fn next_token(&self, token: TokenId) -> Option<TokenId> {
        token
            .checked_sub(self.band_start)
            .and_then(|off| self.rule.get(off as usize))
            .copied()
    }

    fn overlap_fraction(&self, other: &SyntheticTaskSpec) -> f64 {
        let (a, b) = (self.band(), other.band());
        let shared = a.end.min(b.end).saturating_sub(a.start.max(b.start));
        f64::from(shared) / self.band_len().min(other.band_len()) as f64
    }

    fn generate_tokens<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<TokenId> {
        let band = self.band();
        let mut tokens = Vec::with_capacity(len);
        let mut cur = rng.random_range(band.clone());
        tokens.push(cur);
        while tokens.len() < len {
            cur = if self.noise_rate > 0.0 && rng.random::<f64>() < self.noise_rate {
                rng.random_range(band.clone())
            } else {
                self.next_token(cur).expect("token stays inside band")
            };
            tokens.push(cur);
        }
        tokens
    }
}

fn validate_task_id(id: &str) -> Result<()> {
    if id.is_empty() || id == DISTRACTOR_TAG || id.contains(|c: char| c == '/' || c.is_whitespace()) {
        return Err(Error::Config(format!(
            "invalid task id `{id}`: must be non-empty, not `{DISTRACTOR_TAG}`, without `/` or whitespace"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CorpusParams {
    pub vocab_size: usize,
    pub per_task_docs: usize,
    pub distractor_fraction: f64,
    pub seq_len: usize,
    pub seed: u64,
    pub source_tags: Vec<String>,
    /// Largest allowed shared fraction of the smaller band for any task pair.
    pub max_band_overlap: f64,
}

impl CorpusParams {
    pub fn distractor_count(&self, task_docs: usize) -> usize {
        let f = self.distractor_fraction;
        (task_docs as f64 * f / (1.0 - f)).round() as usize
    }
}

/// Generates the synthetic corpus. Pure function of `(specs, params)`.
///
/// Sources are assigned round-robin over each task's own document ordinal, so
/// every task is spread over all sources with per-source counts differing by
/// at most one.
pub fn generate_corpus(specs: &[SyntheticTaskSpec], params: &CorpusParams) -> Result<Corpus> {
    if params.seq_len < 2 {
        return Err(Error::Config(format!("seq_len must be >= 2, got {}", params.seq_len)));
    }
    if params.per_task_docs == 0 {
        return Err(Error::Config("per_task_docs must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&params.distractor_fraction) {
        return Err(Error::Config(format!(
            "distractor_fraction must be in [0, 1), got {}",
            params.distractor_fraction
        )));
    }
    if params.source_tags.is_empty() {
        return Err(Error::Config("at least one source tag is required".into()));
    }
    validate_specs(specs, params.vocab_size, params.max_band_overlap)?;

    let tags = &params.source_tags;
    let mut samples = Vec::new();
    for (t, spec) in specs.iter().enumerate() {
        let mut rng = rng::stream(params.seed, "corpus-task", t as u64);
        for j in 0..params.per_task_docs {
            let tokens = spec.generate_tokens(params.seq_len, &mut rng);
            samples.push(Sample::new(
                format!("{}/{j:06}", spec.task_id),
                tags[j % tags.len()].clone(),
                tokens,
            )?);
        }
    }
    let distractors = params.distractor_count(samples.len());
    let mut rng = rng::stream(params.seed, "corpus-noise", 0);
    for j in 0..distractors {
        let tokens = (0..params.seq_len)
            .map(|_| rng.random_range(0..params.vocab_size as TokenId))
            .collect();
        samples.push(Sample::new(
            format!("{DISTRACTOR_TAG}/{j:06}"),
            tags[j % tags.len()].clone(),
            tokens,
        )?);
    }
    samples.shuffle(&mut rng::stream(params.seed, "corpus-order", 0));
    Corpus::new(params.vocab_size, samples)
}

pub fn validate_specs(specs: &[SyntheticTaskSpec], vocab_size: usize, max_band_overlap: f64) -> Result<()> {
    let mut ids = HashSet::new();
    for spec in specs {
        if spec.band().end as usize > vocab_size {
            return Err(Error::Config(format!(
                "task `{}` band {:?} exceeds vocabulary size {vocab_size}",
                spec.task_id,
                spec.band()
            )));
        }
        if !ids.insert(spec.task_id.as_str()) {
            return Err(Error::Config(format!("duplicate task id `{}`", spec.task_id)));
        }
    }
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            let overlap = a.overlap_fraction(b);
            if overlap > max_band_overlap + 1e-12 {
                return Err(Error::Config(format!(
                    "tasks `{}` and `{}` share {:.3} of their vocab bands, above the allowed {max_band_overlap}",
                    a.task_id, b.task_id, overlap
                )));
            }
        }
    }
    Ok(())
}

/// Held-out probe samples for one task, drawn from a seed stream that no
/// corpus stage uses.
pub fn generate_probe(spec: &SyntheticTaskSpec, q: usize, seq_len: usize, seed: u64) -> Result<TaskProbe> {
    if q == 0 {
        return Err(Error::Config("probe size q must be >= 1".into()));
    }
    if seq_len < 2 {
        return Err(Error::Config(format!("seq_len must be >= 2, got {seq_len}")));
    }
    let mut rng = rng::stream(seed, &format!("probe:{}", spec.task_id), 0);
    let samples = (0..q)
        .map(|j| {
            let tokens = spec.generate_tokens(seq_len, &mut rng);
            Sample::new(format!("probe-{}-{j:06}", spec.task_id), "probe", tokens)
        })
        .collect::<Result<_>>()?;
    Ok(TaskProbe {
        task_id: spec.task_id.clone(),
        samples,
    })
}

fn write_tokens(out: &mut String, tokens: &[TokenId]) {
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{t}");
    }
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut out = format!("vocab_size={}\n", corpus.vocab_size);
    for s in &corpus.samples {
        let _ = write!(out, "{}\t{}\t", s.id, s.source_id);
        write_tokens(&mut out, &s.tokens);
        out.push('\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    fs::write(path, corpus_to_string(corpus)).map_err(|e| Error::io(path, e))
}

struct LineReader<'a> {
    path: &'a Path,
    vocab_size: Option<usize>,
}

impl LineReader<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    fn header(&mut self, lineno: usize, line: &str) -> Result<()> {
        let v = line
            .strip_prefix("vocab_size=")
            .ok_or_else(|| self.err(lineno, "expected header `vocab_size=<V>`"))?;
        self.vocab_size = Some(
            v.trim()
                .parse()
                .map_err(|_| self.err(lineno, format!("bad vocab size `{v}`")))?,
        );
        Ok(())
    }

    fn sample(&self, lineno: usize, id: &str, source: &str, toks: &str) -> Result<Sample> {
        let vocab = self.vocab_size.expect("header parsed first");
        if id.is_empty() {
            return Err(self.err(lineno, "empty sample id"));
        }
        let tokens = toks
            .split_ascii_whitespace()
            .map(|t| t.parse::<TokenId>().map_err(|_| self.err(lineno, format!("bad token `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        let sample = Sample::new(id, source, tokens).map_err(|e| self.err(lineno, e.to_string()))?;
        sample.check_vocab(vocab).map_err(|e| {
            Error::Integrity(format!("{}:{lineno}: {e}", self.path.display()))
        })?;
        Ok(sample)
    }
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let mut reader = LineReader { path, vocab_size: None };
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if reader.vocab_size.is_none() {
            reader.header(lineno, line)?;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, source, toks] = fields[..] else {
            return Err(reader.err(lineno, format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let sample = reader.sample(lineno, id, source, toks)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Integrity(format!(
                "{}:{lineno}: duplicate sample id `{}`",
                path.display(),
                sample.id
            )));
        }
        samples.push(sample);
    }
    match reader.vocab_size {
        Some(v) => Corpus::new(v, samples),
        None => Ok(Corpus::empty(0)),
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn save_probes(probes: &[TaskProbe], vocab_size: usize, path: &Path) -> Result<()> {
    let mut out = format!("vocab_size={vocab_size}\n");
    for p in probes {
        for s in &p.samples {
            let _ = write!(out, "{}\t{}\t{}\t", p.task_id, s.id, s.source_id);
            write_tokens(&mut out, &s.tokens);
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a probe file. Tasks are returned in order of first appearance.
pub fn load_probes(path: &Path) -> Result<(usize, Vec<TaskProbe>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = LineReader { path, vocab_size: None };
    let mut probes: Vec<TaskProbe> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if reader.vocab_size.is_none() {
            reader.header(lineno, line)?;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [task, id, source, toks] = fields[..] else {
            return Err(reader.err(lineno, format!("expected 4 tab-separated fields, got {}", fields.len())));
        };
        let sample = reader.sample(lineno, id, source, toks)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Integrity(format!("{}:{lineno}: duplicate probe id `{id}`", path.display())));
        }
        match probes.iter_mut().find(|p| p.task_id == task) {
            Some(p) => p.samples.push(sample),
            None => probes.push(TaskProbe {
                task_id: task.to_string(),
                samples: vec![sample],
            }),
        }
    }
    Ok((reader.vocab_size.unwrap_or(0), probes))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn params(per_task_docs: usize, distractor_fraction: f64, seq_len: usize, seed: u64) -> CorpusParams {
        CorpusParams {
            vocab_size: 32,
            per_task_docs,
            distractor_fraction,
            seq_len,
            seed,
            source_tags: vec!["crawl-a".into(), "crawl-b".into(), "crawl-c".into(), "crawl-d".into()],
            max_band_overlap: 0.25,
        }
    }

    fn three_tasks() -> Vec<SyntheticTaskSpec> {
        vec![
            SyntheticTaskSpec::cyclic("alpha", 0..10, 0.1, 1).unwrap(),
            SyntheticTaskSpec::cyclic("beta", 10..20, 0.1, 2).unwrap(),
            SyntheticTaskSpec::cyclic("gamma", 20..30, 0.1, 3).unwrap(),
        ]
    }

    #[test]
    fn zero_noise_single_task_follows_rule() {
        let spec = SyntheticTaskSpec::cyclic("alpha", 4..12, 0.0, 9).unwrap();
        let corpus = generate_corpus(std::slice::from_ref(&spec), &params(1, 0.0, 4, 5)).unwrap();
        assert_eq!(corpus.len(), 1);
        let s = &corpus.samples()[0];
        assert_eq!(s.token_count(), 4);
        for w in s.tokens.windows(2) {
            assert_eq!(spec.next_token(w[0]), Some(w[1]));
        }
    }

    #[test]
    fn distractor_count_arithmetic() {
        let corpus = generate_corpus(&three_tasks(), &params(100, 0.25, 8, 1)).unwrap();
        assert_eq!(corpus.len(), 400);
        let noise = corpus.samples().iter().filter(|s| is_distractor(&s.id)).count();
        assert_eq!(noise, 100);
        assert_eq!(corpus.total_tokens(), 400 * 8);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&three_tasks(), &params(20, 0.25, 6, 11)).unwrap();
        let b = generate_corpus(&three_tasks(), &params(20, 0.25, 6, 11)).unwrap();
        assert_eq!(corpus_to_string(&a), corpus_to_string(&b));
        let c = generate_corpus(&three_tasks(), &params(20, 0.25, 6, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sources_cross_cut_tasks() {
        let corpus = generate_corpus(&three_tasks(), &params(101, 0.25, 4, 3)).unwrap();
        let mut counts: HashMap<(String, String), usize> = HashMap::new();
        for s in corpus.samples() {
            let task = sample_origin(&s.id).unwrap_or(DISTRACTOR_TAG).to_string();
            *counts.entry((task, s.source_id.clone())).or_default() += 1;
        }
        for task in ["alpha", "beta", "gamma", DISTRACTOR_TAG] {
            let per_source: Vec<usize> = ["crawl-a", "crawl-b", "crawl-c", "crawl-d"]
                .iter()
                .map(|src| counts.get(&(task.to_string(), src.to_string())).copied().unwrap_or(0))
                .collect();
            let (lo, hi) = (per_source.iter().min().unwrap(), per_source.iter().max().unwrap());
            assert!(hi - lo <= 1, "{task}: {per_source:?}");
        }
    }

    #[test]
    fn band_overlap_beyond_limit_is_rejected() {
        let specs = vec![
            SyntheticTaskSpec::cyclic("a", 0..10, 0.0, 1).unwrap(),
            SyntheticTaskSpec::cyclic("b", 5..15, 0.0, 2).unwrap(),
        ];
        let err = generate_corpus(&specs, &params(2, 0.0, 4, 1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let mut p = params(2, 0.0, 4, 1);
        p.max_band_overlap = 0.5;
        assert!(generate_corpus(&specs, &p).is_ok());
    }

    #[test]
    fn invalid_parameters() {
        let specs = three_tasks();
        assert!(generate_corpus(&specs, &params(1, 0.0, 1, 1)).is_err());
        assert!(generate_corpus(&specs, &params(0, 0.0, 4, 1)).is_err());
        assert!(generate_corpus(&specs, &params(1, 1.0, 4, 1)).is_err());
        assert!(SyntheticTaskSpec::cyclic("x", 0..4, 1.0, 1).is_err());
        assert!(SyntheticTaskSpec::cyclic("noise", 0..4, 0.0, 1).is_err());
        assert!(generate_probe(&specs[0], 0, 4, 1).is_err());
    }

    #[test]
    fn probes_obey_rule_and_are_disjoint() {
        let spec = SyntheticTaskSpec::cyclic("alpha", 0..16, 0.0, 4).unwrap();
        let probe = generate_probe(&spec, 50, 10, 7).unwrap();
        assert_eq!(probe.q(), 50);
        for s in &probe.samples {
            for w in s.tokens.windows(2) {
                assert_eq!(spec.next_token(w[0]), Some(w[1]));
            }
        }
        assert_eq!(probe, generate_probe(&spec, 50, 10, 7).unwrap());
        assert_eq!(generate_probe(&spec, 1, 10, 7).unwrap().q(), 1);

        let corpus = generate_corpus(std::slice::from_ref(&spec), &params(50, 0.2, 10, 7)).unwrap();
        let ids: HashSet<&str> = corpus.samples().iter().map(|s| s.id.as_str()).collect();
        assert!(probe.samples.iter().all(|s| !ids.contains(s.id.as_str())));
    }

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let corpus = Corpus::new(
            8,
            vec![
                Sample::new("a", "s0", vec![1, 2, 3]).unwrap(),
                Sample::new("b", "s1", vec![7, 0]).unwrap(),
                Sample::new("c", "s0", vec![4, 4, 4, 4]).unwrap(),
            ],
        )
        .unwrap();
        save_corpus(&corpus, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), corpus);

        fs::write(&path, "").unwrap();
        let empty = load_corpus(&path).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.total_tokens(), 0);

        fs::write(&path, "vocab_size=8\na\ts\t1 8\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Integrity(_))));

        fs::write(&path, "vocab_size=8\na\ts\t1 2\na\ts\t3 4\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Integrity(_))));

        fs::write(&path, "vocab_size=8\na\ts\t1 2\nb\ts\t3 x\n").unwrap();
        match load_corpus(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&path, "vocab_size=8\na\ts\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn probe_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        let specs = three_tasks();
        let probes: Vec<TaskProbe> = specs.iter().map(|s| generate_probe(s, 3, 5, 1).unwrap()).collect();
        save_probes(&probes, 32, &path).unwrap();
        let (vocab, loaded) = load_probes(&path).unwrap();
        assert_eq!(vocab, 32);
        assert_eq!(loaded, probes);
    }

    #[test]
    fn origin_parsing() {
        assert_eq!(sample_origin("alpha/000001"), Some("alpha"));
        assert_eq!(sample_origin("noise/000001"), None);
        assert_eq!(sample_origin("plain"), None);
        assert!(is_distractor("noise/000003"));
    }
}
