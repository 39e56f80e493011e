//! Token-budgeted mixture draw.
//!
//! Each group is turned into a seeded weighted random order without
//! replacement (Efraimidis–Spirakis keys `u^(1/score)`), so higher scoring
//! members tend to come first. Groups are then interleaved: every round the
//! active group with the largest token deficit `w'_g · D − D_g` supplies its
//! next sample, where `D` is the token total drawn from active groups and
//! `w'_g` is the weight renormalised over active groups. A group leaves the
//! active set when none of its remaining samples fits under the budget or its
//! cap, or when it runs dry; the remaining groups then share its weight in
//! proportion to their own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;

use super::groups::{DataGroup, MixtureSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Floor on member draw weights so zero-scored members remain drawable.
pub const MIN_DRAW_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub group_id: String,
    pub tokens: usize,
    pub cumulative_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureManifest {
    pub token_budget: usize,
    pub weights: Vec<(String, f64)>,
    pub caps: BTreeMap<String, usize>,
    pub entries: Vec<ManifestEntry>,
}

impl MixtureManifest {
    pub fn total_tokens(&self) -> usize {
        self.entries.last().map_or(0, |e| e.cumulative_tokens)
    }

    /// Tokens drawn per group, in weight order.
    pub fn group_tokens(&self) -> Vec<(String, usize)> {
        self.weights
            .iter()
            .map(|(g, _)| {
                let t = self.entries.iter().filter(|e| &e.group_id == g).map(|e| e.tokens).sum();
                (g.clone(), t)
            })
            .collect()
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.sample_id.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("token_budget={}\ntotal_tokens={}\n", self.token_budget, self.total_tokens());
        for ((g, w), (_, t)) in self.weights.iter().zip(self.group_tokens()) {
            let _ = writeln!(out, "weight\t{g}\t{w:?}\t{t}");
        }
        for (g, c) in &self.caps {
            let _ = writeln!(out, "cap\t{g}\t{c}");
        }
        out.push_str("samples\n");
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.sample_id, e.group_id, e.cumulative_tokens);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut m = MixtureManifest {
            token_budget: 0,
            weights: Vec::new(),
            caps: BTreeMap::new(),
            entries: Vec::new(),
        };
        let mut in_samples = false;
        let mut prev = 0usize;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(lineno, format!("bad integer `{s}`")));
            if in_samples {
                let [sample_id, group_id, cum] = f[..] else {
                    return Err(err(lineno, "expected sample_id, group_id, cumulative tokens".into()));
                };
                let cumulative_tokens = num(cum)?;
                if cumulative_tokens < prev {
                    return Err(err(lineno, "cumulative token count decreases".into()));
                }
                m.entries.push(ManifestEntry {
                    sample_id: sample_id.into(),
                    group_id: group_id.into(),
                    tokens: cumulative_tokens - prev,
                    cumulative_tokens,
                });
                prev = cumulative_tokens;
                continue;
            }
            match f[..] {
                ["samples"] => in_samples = true,
                ["weight", g, w, _] => m.weights.push((
                    g.into(),
                    w.parse().map_err(|_| err(lineno, format!("bad weight `{w}`")))?,
                )),
                ["cap", g, c] => {
                    m.caps.insert(g.into(), num(c)?);
                }
                [kv] => match kv.split_once('=') {
                    Some(("token_budget", v)) => m.token_budget = num(v)?,
                    Some(("total_tokens", _)) => {}
                    _ => return Err(err(lineno, format!("unknown header line `{kv}`"))),
                },
                _ => return Err(err(lineno, format!("unknown header line `{line}`"))),
            }
        }
        if !in_samples {
            return Err(err(text.lines().count(), "missing `samples` section".into()));
        }
        Ok(m)
    }
}

struct GroupCursor<'a> {
    group: &'a DataGroup,
    weight: f64,
    cap: usize,
    /// Member indices still undrawn, in draw order.
    remaining: Vec<usize>,
    drawn: usize,
    active: bool,
}

fn weighted_order<R: Rng>(group: &DataGroup, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = group
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let w = m.score.max(0.0) + MIN_DRAW_WEIGHT;
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Draws a budgeted manifest from `groups` according to `spec`. Pure
/// function of `(groups, spec, seed)`.
pub fn sample_mixture(groups: &[DataGroup], spec: &MixtureSpec, seed: u64) -> Result<MixtureManifest> {
    let sum: f64 = spec.weights.iter().map(|(_, w)| w).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("mixture weights sum to {sum}, expected 1")));
    }
    if spec.token_budget == 0 {
        return Err(Error::Config("token budget must be > 0".into()));
    }
    let mut cursors = Vec::with_capacity(spec.weights.len());
    for (gi, (gid, w)) in spec.weights.iter().enumerate() {
        let group = groups
            .iter()
            .find(|g| &g.group_id == gid)
            .ok_or_else(|| Error::Integrity(format!("weight for unknown group `{gid}`")))?;
        if !(*w > 0.0) {
            return Err(Error::Config(format!("weight of group `{gid}` must be > 0, got {w}")));
        }
        let mut rng = rng::stream(seed, "mixture", gi as u64);
        cursors.push(GroupCursor {
            group,
            weight: *w,
            cap: spec.caps.get(gid).copied().unwrap_or(usize::MAX),
            remaining: weighted_order(group, &mut rng),
            drawn: 0,
            active: true,
        });
    }

    let budget = spec.token_budget;
    let mut total = 0usize;
    let mut entries = Vec::new();
    loop {
        let (active_weight, active_drawn) = cursors
            .iter()
            .filter(|c| c.active)
            .fold((0.0, 0usize), |(w, d), c| (w + c.weight, d + c.drawn));
        let pick = cursors
            .iter()
            .enumerate()
            .filter(|(_, c)| c.active)
            .map(|(i, c)| (i, c.weight / active_weight * active_drawn as f64 - c.drawn as f64))
            .fold(None::<(usize, f64)>, |best, (i, deficit)| match best {
                Some((_, d)) if d >= deficit => best,
                _ => Some((i, deficit)),
            });
        let Some((gi, _)) = pick else { break };
        let cur = &mut cursors[gi];
        let room = (budget - total).min(cur.cap - cur.drawn);
        match cur
            .remaining
            .iter()
            .position(|&m| cur.group.members[m].token_count <= room)
        {
            Some(pos) => {
                let member = &cur.group.members[cur.remaining.remove(pos)];
                cur.drawn += member.token_count;
                total += member.token_count;
                entries.push(ManifestEntry {
                    sample_id: member.sample_id.clone(),
                    group_id: cur.group.group_id.clone(),
                    tokens: member.token_count,
                    cumulative_tokens: total,
                });
            }
            None => cur.active = false,
        }
    }
    if entries.is_empty() {
        warn!("mixture draw produced an empty manifest: no group had a sample fitting the budget");
    }
    Ok(MixtureManifest {
        token_budget: budget,
        weights: spec.weights.clone(),
        caps: spec.caps.clone(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixer::groups::GroupMember;

    fn uniform_group(id: &str, n: usize, tokens: usize) -> DataGroup {
        DataGroup {
            group_id: id.into(),
            members: (0..n)
                .map(|i| GroupMember {
                    index: i,
                    sample_id: format!("{id}-{i}"),
                    token_count: tokens,
                    score: 0.5,
                })
                .collect(),
        }
    }

    fn spec(weights: &[(&str, f64)], budget: usize) -> MixtureSpec {
        MixtureSpec {
            weights: weights.iter().map(|(g, w)| (g.to_string(), *w)).collect(),
            token_budget: budget,
            caps: BTreeMap::new(),
        }
    }

    #[test]
    fn single_group_smaller_than_budget_is_taken_whole() {
        let g = uniform_group("a", 7, 13);
        let m = sample_mixture(std::slice::from_ref(&g), &spec(&[("a", 1.0)], 10_000), 1).unwrap();
        assert_eq!(m.entries.len(), 7);
        assert_eq!(m.total_tokens(), g.total_tokens());
    }

    #[test]
    fn three_to_one_split() {
        let groups = vec![uniform_group("a", 200, 10), uniform_group("b", 200, 10)];
        let m = sample_mixture(&groups, &spec(&[("a", 0.75), ("b", 0.25)], 1000), 4).unwrap();
        let counts = m.group_tokens();
        assert_eq!(m.total_tokens(), 1000);
        assert!((counts[0].1 as i64 / 10 - 75).abs() <= 1, "{counts:?}");
        assert!((counts[1].1 as i64 / 10 - 25).abs() <= 1, "{counts:?}");
    }

    #[test]
    fn cap_redistributes_proportionally() {
        let groups = vec![uniform_group("a", 200, 10), uniform_group("b", 200, 10), uniform_group("c", 200, 10)];
        let s = spec(&[("a", 0.5), ("b", 0.25), ("c", 0.25)], 1000)
            .with_caps([("a".to_string(), 100)].into_iter().collect());
        let m = sample_mixture(&groups, &s, 2).unwrap();
        let t = m.group_tokens();
        assert_eq!(t[0].1, 100);
        assert_eq!(t[1].1, 450);
        assert_eq!(t[2].1, 450);
    }

    #[test]
    fn nothing_fits() {
        let g = uniform_group("a", 3, 50);
        let m = sample_mixture(std::slice::from_ref(&g), &spec(&[("a", 1.0)], 10), 1).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.total_tokens(), 0);
    }

    #[test]
    fn invalid_specs() {
        let g = uniform_group("a", 3, 5);
        assert!(sample_mixture(std::slice::from_ref(&g), &spec(&[("a", 0.5)], 10), 1).is_err());
        assert!(sample_mixture(std::slice::from_ref(&g), &spec(&[("zz", 1.0)], 10), 1).is_err());
        assert!(sample_mixture(std::slice::from_ref(&g), &spec(&[("a", 1.0)], 0), 1).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let groups = vec![uniform_group("a", 20, 7), uniform_group("b", 20, 9)];
        let s = spec(&[("a", 0.6), ("b", 0.4)], 150).with_caps([("b".to_string(), 50)].into_iter().collect());
        let m = sample_mixture(&groups, &s, 8).unwrap();
        let back = MixtureManifest::parse(&m.to_text(), Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert!(MixtureManifest::parse("token_budget=3\n", Path::new("m")).is_err());
    }
}
