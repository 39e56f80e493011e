use std::collections::BTreeMap;

use log::warn;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::stats::{argsort_descending, nearest_rank, percentile_nearest_rank};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMember {
    /// Position of the sample in the corpus.
    pub index: usize,
    pub sample_id: String,
    pub token_count: usize,
    /// Joint score used for ordering and density; min-max scaled once
    /// [`scale_group_scores`] has run.
    pub score: f64,
}

/// A checkpoint-aligned subset of the corpus, members sorted by descending
/// joint score.
#[derive(Debug, Clone, PartialEq)]
pub struct DataGroup {
    pub group_id: String,
    pub members: Vec<GroupMember>,
}

impl DataGroup {
    pub fn total_tokens(&self) -> usize {
        self.members.iter().map(|m| m.token_count).sum()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Sum of member scores.
    pub fn aggregate_score(&self) -> f64 {
        self.members.iter().map(|m| m.score).sum()
    }
}

/// Number of members kept per group: `ceil(retention · n)`.
pub fn retained_count(retention: f64, n: usize) -> usize {
    nearest_rank(retention * 100.0, n)
}

/// One group per checkpoint. Membership is the top `retention` fraction of
/// the corpus under that checkpoint's own score; members are then ordered by
/// joint score. A sample may belong to several groups.
pub fn regroup(
    corpus: &Corpus,
    per_checkpoint: &[(String, Vec<f64>)],
    joint: &[f64],
    retention: f64,
) -> Result<Vec<DataGroup>> {
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::Config(format!("retention must be in (0, 1], got {retention}")));
    }
    let n = corpus.len();
    if joint.len() != n {
        return Err(Error::Integrity(format!("{} joint scores for {n} samples", joint.len())));
    }
    let keep = retained_count(retention, n);
    per_checkpoint
        .iter()
        .map(|(id, scores)| {
            if scores.len() != n {
                return Err(Error::Integrity(format!(
                    "checkpoint `{id}` has {} scores for {n} samples",
                    scores.len()
                )));
            }
            let mut chosen: Vec<usize> = argsort_descending(scores).into_iter().take(keep).collect();
            chosen.sort_by(|&a, &b| joint[b].total_cmp(&joint[a]).then(a.cmp(&b)));
            let members = chosen
                .into_iter()
                .map(|i| GroupMember {
                    index: i,
                    sample_id: corpus.samples()[i].id.clone(),
                    token_count: corpus.samples()[i].token_count(),
                    score: joint[i],
                })
                .collect();
            Ok(DataGroup {
                group_id: id.clone(),
                members,
            })
        })
        .collect()
}

/// Min-max scaling to `[0, 1]`.
pub fn scale_influences(scores: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = min_max(scores).ok_or(Error::Empty("scores"))?;
    if hi <= lo {
        return Err(Error::AllScoresEqual);
    }
    Ok(scores.iter().map(|s| (s - lo) / (hi - lo)).collect())
}

fn min_max(scores: &[f64]) -> Option<(f64, f64)> {
    scores.iter().fold(None, |acc, &s| match acc {
        None => Some((s, s)),
        Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
    })
}

/// Rescales member scores with min/max taken over every member of every
/// group.
pub fn scale_group_scores(groups: &[DataGroup]) -> Result<Vec<DataGroup>> {
    let all: Vec<f64> = groups.iter().flat_map(|g| g.members.iter().map(|m| m.score)).collect();
    let scaled = scale_influences(&all)?;
    let mut it = scaled.into_iter();
    Ok(groups
        .iter()
        .map(|g| DataGroup {
            group_id: g.group_id.clone(),
            members: g
                .members
                .iter()
                .map(|m| GroupMember {
                    score: it.next().expect("one scaled score per member"),
                    ..m.clone()
                })
                .collect(),
        })
        .collect())
}

/// `Σ_i score_i · s_i`.
pub fn influence_token_product(group: &DataGroup) -> f64 {
    group.members.iter().map(|m| m.score * m.token_count as f64).sum()
}

/// Token-weighted mean member score, `ρ_g = (1/T_g) Σ_i score_i · s_i`.
pub fn influence_density(group: &DataGroup) -> Result<f64> {
    let t = group.total_tokens();
    if group.is_empty() || t == 0 {
        return Err(Error::Empty("data group"));
    }
    Ok(influence_token_product(group) / t as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    /// `(group_id, w_g)` in group order.
    pub weights: Vec<(String, f64)>,
    pub token_budget: usize,
    /// Optional per-group token caps.
    pub caps: BTreeMap<String, usize>,
}

impl MixtureSpec {
    pub fn uniform(groups: &[DataGroup], token_budget: usize) -> Self {
        let w = 1.0 / groups.len() as f64;
        MixtureSpec {
            weights: groups.iter().map(|g| (g.group_id.clone(), w)).collect(),
            token_budget,
            caps: BTreeMap::new(),
        }
    }

    pub fn weight(&self, group_id: &str) -> Option<f64> {
        self.weights.iter().find(|(g, _)| g == group_id).map(|&(_, w)| w)
    }

    pub fn with_caps(mut self, caps: BTreeMap<String, usize>) -> Self {
        self.caps = caps;
        self
    }
}

/// `w_g = ρ_g / Σ ρ`. Groups with zero density get no weight and are left
/// out of the spec; an all-zero density vector falls back to uniform weights.
pub fn sampling_weights(groups: &[DataGroup], token_budget: usize) -> Result<MixtureSpec> {
    if groups.is_empty() {
        return Err(Error::Empty("group list"));
    }
    let densities = groups.iter().map(influence_density).collect::<Result<Vec<_>>>()?;
    weights_from_densities(groups, &densities, token_budget)
}

pub fn weights_from_densities(groups: &[DataGroup], densities: &[f64], token_budget: usize) -> Result<MixtureSpec> {
    if let Some(d) = densities.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::Config(format!(
            "group densities must be finite and non-negative to form weights, got {d}"
        )));
    }
    let total: f64 = densities.iter().sum();
    if total <= 0.0 {
        warn!("all group densities are zero; falling back to uniform weights");
        return Ok(MixtureSpec::uniform(groups, token_budget));
    }
    let mut weights = Vec::with_capacity(groups.len());
    for (g, &d) in groups.iter().zip(densities) {
        if d > 0.0 {
            weights.push((g.group_id.clone(), d / total));
        } else {
            warn!("group `{}` has zero influence density and is dropped from the mixture", g.group_id);
        }
    }
    Ok(MixtureSpec {
        weights,
        token_budget,
        caps: BTreeMap::new(),
    })
}

/// Indices of samples scoring at or above the nearest-rank `percentile`.
pub fn percentile_filter(scores: &[f64], percentile: f64) -> Result<Vec<usize>> {
    if !(0.0..100.0).contains(&percentile) {
        return Err(Error::Config(format!("percentile must be in [0, 100), got {percentile}")));
    }
    let Some(threshold) = percentile_nearest_rank(scores, percentile) else {
        return Ok(Vec::new());
    };
    Ok((0..scores.len()).filter(|&i| scores[i] >= threshold).collect())
}

/// When the groups hold more than `budget` tokens, gives each group
/// `budget · aggregate_g / Σ aggregate` tokens, filled with its highest
/// scoring members in order until the next member no longer fits.
pub fn subsample_to_budget(groups: &[DataGroup], budget: usize) -> Result<Vec<DataGroup>> {
    if budget == 0 {
        return Err(Error::Config("subsample budget must be > 0".into()));
    }
    let total: usize = groups.iter().map(DataGroup::total_tokens).sum();
    if total <= budget {
        return Ok(groups.to_vec());
    }
    let aggregates: Vec<f64> = groups.iter().map(DataGroup::aggregate_score).collect();
    if let Some(a) = aggregates.iter().find(|a| **a < 0.0) {
        return Err(Error::Config(format!("aggregate influence must be non-negative, got {a}")));
    }
    let sum: f64 = aggregates.iter().sum();
    Ok(groups
        .iter()
        .zip(&aggregates)
        .map(|(g, &a)| {
            let allocation = if sum > 0.0 {
                budget as f64 * a / sum
            } else {
                budget as f64 / groups.len() as f64
            };
            let mut used = 0usize;
            let members = g
                .members
                .iter()
                .take_while(|m| {
                    let fits = (used + m.token_count) as f64 <= allocation + 1e-9;
                    if fits {
                        used += m.token_count;
                    }
                    fits
                })
                .cloned()
                .collect();
            DataGroup {
                group_id: g.group_id.clone(),
                members,
            }
        })
        .collect())
}

/// Per-group token allocations used by [`subsample_to_budget`].
pub fn budget_allocations(groups: &[DataGroup], budget: usize) -> Vec<f64> {
    let aggregates: Vec<f64> = groups.iter().map(DataGroup::aggregate_score).collect();
    let sum: f64 = aggregates.iter().sum();
    aggregates.iter().map(|a| budget as f64 * a / sum).collect()
}
