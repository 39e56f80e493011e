//! On-disk artifact layout, the plain-text formats not owned by other
//! modules, and content-hash keys for stage caching.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mixer::{DataGroup, GroupMember, MixtureSpec};
use crate::proxylm::ModelParams;
use crate::simulator::{Checkpoint, SelectedCheckpoint, SelectedCheckpointSet};

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn ensure(&self) -> Result<()> {
        for dir in [self.root.clone(), self.checkpoint_dir(), self.stage_dir()] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.txt")
    }
    pub fn probes(&self) -> PathBuf {
        self.root.join("probes.txt")
    }
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint_index(&self) -> PathBuf {
        self.checkpoint_dir().join("index.tsv")
    }
    pub fn checkpoint_params(&self, id: &str) -> PathBuf {
        self.checkpoint_dir().join(format!("{id}.bin"))
    }
    pub fn progression(&self) -> PathBuf {
        self.root.join("progression.tsv")
    }
    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.tsv")
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.tsv")
    }
    pub fn utilities(&self) -> PathBuf {
        self.root.join("ppl-utility.tsv")
    }
    /// Per-strategy files: `groups`, `weights`, `manifest`, `eval`.
    pub fn strategy_file(&self, strategy: &str, kind: &str) -> PathBuf {
        let ext = if kind == "manifest" { "txt" } else { "tsv" };
        self.root.join(format!("{kind}-{strategy}.{ext}"))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.tsv")
    }
    pub fn stage_dir(&self) -> PathBuf {
        self.root.join("stages")
    }
    pub fn stage_key(&self, stage: &str) -> PathBuf {
        self.stage_dir().join(format!("{stage}.key"))
    }
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(path, line, format!("bad number `{s}`")))
}

/// SHA-256 over labelled parts, hex encoded.
#[derive(Default)]
pub struct StageKey(Sha256);

impl StageKey {
    pub fn new(stage: &str) -> Self {
        let mut k = StageKey(Sha256::new());
        k.text(stage);
        k
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(&bytes);
        Ok(self)
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// True when the recorded key for `stage` equals `key` and all `outputs`
/// exist.
pub fn is_fresh(layout: &Layout, stage: &str, key: &str, outputs: &[PathBuf]) -> bool {
    fs::read_to_string(layout.stage_key(stage)).is_ok_and(|k| k.trim() == key) && outputs.iter().all(|p| p.exists())
}

pub fn record_key(layout: &Layout, stage: &str, key: &str) -> Result<()> {
    write(&layout.stage_key(stage), &format!("{key}\n"))
}

/// Index line per checkpoint: `id step task=acc ...`, accuracies in
/// shortest round-trip form.
pub fn save_checkpoints(layout: &Layout, checkpoints: &[Checkpoint]) -> Result<()> {
    let mut index = String::from("checkpoint_id\tstep\taccuracies\n");
    for c in checkpoints {
        c.params.save(&layout.checkpoint_params(&c.id))?;
        let accs: Vec<String> = c.eval.iter().map(|(t, a)| format!("{t}={a:?}")).collect();
        let _ = writeln!(index, "{}\t{}\t{}", c.id, c.step, accs.join(" "));
    }
    write(&layout.checkpoint_index(), &index)
}

pub fn load_checkpoints(layout: &Layout) -> Result<Vec<Checkpoint>> {
    let path = layout.checkpoint_index();
    let text = read(&path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [id, step, accs] = f[..] else {
            return Err(parse_err(&path, i + 1, "expected checkpoint_id, step, accuracies"));
        };
        let mut eval = BTreeMap::new();
        for kv in accs.split_whitespace() {
            let (t, a) = kv
                .split_once('=')
                .ok_or_else(|| parse_err(&path, i + 1, format!("bad accuracy `{kv}`")))?;
            eval.insert(t.to_string(), parse_num(&path, i + 1, a)?);
        }
        out.push(Checkpoint {
            id: id.to_string(),
            step: parse_num(&path, i + 1, step)?,
            params: ModelParams::load(&layout.checkpoint_params(id))?,
            eval,
        });
    }
    Ok(out)
}

pub fn load_selection(path: &Path) -> Result<SelectedCheckpointSet> {
    let text = read(path)?;
    let mut checkpoints = Vec::new();
    let mut task_assignment = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [id, step, alpha, tasks] = f[..] else {
            return Err(parse_err(path, i + 1, "expected checkpoint_id, step, alpha, tasks"));
        };
        let probe_tasks: Vec<String> = tasks.split(',').filter(|t| !t.is_empty()).map(String::from).collect();
        for t in &probe_tasks {
            task_assignment.insert(t.clone(), id.to_string());
        }
        checkpoints.push(SelectedCheckpoint {
            id: id.to_string(),
            step: parse_num(path, i + 1, step)?,
            alpha: parse_num(path, i + 1, alpha)?,
            probe_tasks,
        });
    }
    if checkpoints.is_empty() {
        return Err(Error::Empty("checkpoint selection"));
    }
    Ok(SelectedCheckpointSet {
        checkpoints,
        task_assignment,
    })
}

/// `group_id, corpus index, sample_id, tokens, score` per member, in member
/// order.
pub fn groups_to_string(groups: &[DataGroup]) -> String {
    let mut out = String::from("group_id\tindex\tsample_id\ttokens\tscore\n");
    for g in groups {
        for m in &g.members {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{:?}", g.group_id, m.index, m.sample_id, m.token_count, m.score);
        }
    }
    out
}

pub fn load_groups(path: &Path) -> Result<Vec<DataGroup>> {
    let text = read(path)?;
    let mut groups: Vec<DataGroup> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [gid, index, sample_id, tokens, score] = f[..] else {
            return Err(parse_err(path, i + 1, "expected group_id, index, sample_id, tokens, score"));
        };
        let member = GroupMember {
            index: parse_num(path, i + 1, index)?,
            sample_id: sample_id.to_string(),
            token_count: parse_num(path, i + 1, tokens)?,
            score: parse_num(path, i + 1, score)?,
        };
        match groups.last_mut() {
            Some(g) if g.group_id == gid => g.members.push(member),
            _ => {
                if groups.iter().any(|g| g.group_id == gid) {
                    return Err(parse_err(path, i + 1, format!("group `{gid}` is not contiguous")));
                }
                groups.push(DataGroup {
                    group_id: gid.to_string(),
                    members: vec![member],
                });
            }
        }
    }
    Ok(groups)
}

pub fn spec_to_string(spec: &MixtureSpec) -> String {
    let mut out = format!("token_budget={}\n", spec.token_budget);
    for (g, w) in &spec.weights {
        let _ = writeln!(out, "weight\t{g}\t{w:?}");
    }
    for (g, c) in &spec.caps {
        let _ = writeln!(out, "cap\t{g}\t{c}");
    }
    out
}

pub fn load_spec(path: &Path) -> Result<MixtureSpec> {
    let text = read(path)?;
    let mut spec = MixtureSpec {
        weights: Vec::new(),
        token_budget: 0,
        caps: BTreeMap::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        match f[..] {
            [""] => {}
            ["weight", g, w] => spec.weights.push((g.to_string(), parse_num(path, i + 1, w)?)),
            ["cap", g, c] => {
                spec.caps.insert(g.to_string(), parse_num(path, i + 1, c)?);
            }
            [kv] if kv.starts_with("token_budget=") => {
                spec.token_budget = parse_num(path, i + 1, &kv["token_budget=".len()..])?;
            }
            _ => return Err(parse_err(path, i + 1, format!("unrecognised line `{line}`"))),
        }
    }
    Ok(spec)
}

/// `task accuracy` lines, shortest round-trip floats.
pub fn accuracies_to_string(acc: &BTreeMap<String, f64>) -> String {
    let mut out = String::from("task\taccuracy\n");
    for (t, a) in acc {
        let _ = writeln!(out, "{t}\t{a:?}");
    }
    out
}

pub fn load_accuracies(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = read(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (t, a) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, i + 1, "expected task, accuracy"))?;
        out.insert(t.to_string(), parse_num(path, i + 1, a)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::checkpoint_id;

    #[test]
    fn formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        layout.ensure().unwrap();

        let ckpts = vec![Checkpoint {
            id: checkpoint_id(10),
            step: 10,
            params: ModelParams::random(5, 2, 1),
            eval: [("a".to_string(), 0.1 + 0.2), ("b".to_string(), 1.0)].into_iter().collect(),
        }];
        save_checkpoints(&layout, &ckpts).unwrap();
        assert_eq!(load_checkpoints(&layout).unwrap(), ckpts);

        let sel = SelectedCheckpointSet::from_parts(
            vec![("c1".into(), 10, vec!["a".into()]), ("c2".into(), 30, vec!["b".into(), "c".into()])],
            [("a", "c1"), ("b", "c2"), ("c", "c2")]
                .into_iter()
                .map(|(t, c)| (t.to_string(), c.to_string()))
                .collect(),
        )
        .unwrap();
        write(&layout.selection(), &sel.to_tsv()).unwrap();
        let back = load_selection(&layout.selection()).unwrap();
        assert_eq!(back.task_assignment, sel.task_assignment);
        assert_eq!(back.ids(), sel.ids());
        for (x, y) in back.checkpoints.iter().zip(&sel.checkpoints) {
            assert!((x.alpha - y.alpha).abs() < 1e-12);
        }

        let groups = vec![
            DataGroup {
                group_id: "g1".into(),
                members: vec![GroupMember {
                    index: 3,
                    sample_id: "t/000003".into(),
                    token_count: 7,
                    score: 1.0 / 3.0,
                }],
            },
            DataGroup {
                group_id: "g2".into(),
                members: vec![],
            },
        ];
        let p = layout.strategy_file("x", "groups");
        write(&p, &groups_to_string(&groups)).unwrap();
        // empty groups leave no lines behind
        assert_eq!(load_groups(&p).unwrap(), groups[..1].to_vec());

        let spec = MixtureSpec {
            weights: vec![("g1".into(), 0.3), ("g2".into(), 0.7)],
            token_budget: 99,
            caps: [("g2".to_string(), 40)].into_iter().collect(),
        };
        let p = layout.strategy_file("x", "weights");
        write(&p, &spec_to_string(&spec)).unwrap();
        assert_eq!(load_spec(&p).unwrap(), spec);

        let acc: BTreeMap<String, f64> = [("a".to_string(), 0.123456789)].into_iter().collect();
        let p = layout.strategy_file("x", "eval");
        write(&p, &accuracies_to_string(&acc)).unwrap();
        assert_eq!(load_accuracies(&p).unwrap(), acc);
    }

    #[test]
    fn stage_keys() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        layout.ensure().unwrap();
        let f = dir.path().join("input");
        fs::write(&f, "abc").unwrap();
        let key = |s: &str| {
            let mut k = StageKey::new("s");
            k.text(s).file(&f).unwrap();
            k.finish()
        };
        assert_eq!(key("x"), key("x"));
        assert_ne!(key("x"), key("y"));
        let k = key("x");
        assert!(!is_fresh(&layout, "s", &k, &[]));
        record_key(&layout, "s", &k).unwrap();
        assert!(is_fresh(&layout, "s", &k, std::slice::from_ref(&f)));
        assert!(!is_fresh(&layout, "s", &k, &[dir.path().join("missing")]));
        fs::write(&f, "abd").unwrap();
        assert_ne!(key("x"), k);
    }
}
