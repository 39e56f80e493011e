//! Percentile-bucket summaries and cross-scorer overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::stats::{argsort_ascending, argsort_descending, nearest_rank};

pub const DEFAULT_BUCKET_EDGES: [f64; 10] = [0.0, 5.0, 25.0, 50.0, 75.0, 80.0, 85.0, 90.0, 95.0, 100.0];

#[derive(Debug, Clone, PartialEq)]
pub struct BucketStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bucket.
    pub mean_score: Option<f64>,
    pub mean_quality: Option<f64>,
    pub mean_tokens: Option<f64>,
    pub sum_tokens: usize,
}

impl BucketStats {
    pub fn label(&self) -> String {
        format!("p{}-p{}", percent_label(self.lo), percent_label(self.hi))
    }
}

fn percent_label(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{:02}", p as u64)
    } else {
        format!("{p}")
    }
}

/// Statistics per percentile bucket of the ascending score order. Bucket
/// `[a, b)` holds ranks `nearest_rank(a)..nearest_rank(b)`; ties are ordered
/// by sample index.
pub fn bucket_stats(
    scores: &[f64],
    token_counts: &[usize],
    quality: Option<&[f64]>,
    edges: &[f64],
) -> Result<Vec<BucketStats>> {
    let n = scores.len();
    if token_counts.len() != n || quality.is_some_and(|q| q.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: if token_counts.len() != n {
                token_counts.len()
            } else {
                quality.map_or(0, <[f64]>::len)
            },
        });
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges[0] < 0.0 || edges[edges.len() - 1] > 100.0 {
        return Err(Error::Config(format!(
            "bucket edges must be strictly increasing within [0, 100], got {edges:?}"
        )));
    }
    let order = argsort_ascending(scores);
    Ok(edges
        .windows(2)
        .map(|w| {
            let members = &order[nearest_rank(w[0], n)..nearest_rank(w[1], n)];
            let count = members.len();
            let mean = |f: &dyn Fn(usize) -> f64| (count > 0).then(|| members.iter().map(|&i| f(i)).sum::<f64>() / count as f64);
            let sum_tokens = members.iter().map(|&i| token_counts[i]).sum();
            BucketStats {
                lo: w[0],
                hi: w[1],
                count,
                mean_score: mean(&|i| scores[i]),
                mean_quality: quality.and_then(|q| mean(&|i| q[i])),
                mean_tokens: mean(&|i| token_counts[i] as f64),
                sum_tokens,
            }
        })
        .collect())
}

/// Groups the integer part of a non-negative number in thousands.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// `1698.4666` → `1,698.47`.
pub fn thousands_2dp(x: f64) -> String {
    let cents = (x.abs() * 100.0).round() as u64;
    let sign = if x < 0.0 && cents > 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", thousands(cents / 100), cents % 100)
}

/// Tab-separated table with the columns of the percentile summary table.
pub fn bucket_table(stats: &[BucketStats]) -> String {
    let with_quality = stats.iter().any(|s| s.mean_quality.is_some());
    let mut out = String::from("Range\tCount");
    if with_quality {
        out.push_str("\tMean Quality");
    }
    out.push_str("\tMean Influence\tMean Token Count\tSum Token Count\n");
    let opt = |v: Option<f64>, f: &dyn Fn(f64) -> String| v.map_or_else(|| "-".to_string(), f);
    for s in stats {
        let _ = write!(out, "{}\t{}", s.label(), s.count);
        if with_quality {
            let _ = write!(out, "\t{}", opt(s.mean_quality, &|q| format!("{q:.2}")));
        }
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}",
            opt(s.mean_score, &|v| format!("{v:.4e}")),
            opt(s.mean_tokens, &thousands_2dp),
            thousands(s.sum_tokens as u64)
        );
    }
    out
}

fn top_buckets(map: &BTreeMap<String, f64>, num_buckets: usize) -> Vec<BTreeSet<&str>> {
    let ids: Vec<&str> = map.keys().map(String::as_str).collect();
    let values: Vec<f64> = map.values().copied().collect();
    let order = argsort_descending(&values);
    let n = ids.len();
    (0..num_buckets)
        .map(|b| {
            let lo = nearest_rank(100.0 * b as f64 / num_buckets as f64, n);
            let hi = nearest_rank(100.0 * (b + 1) as f64 / num_buckets as f64, n);
            order[lo..hi].iter().map(|&i| ids[i]).collect()
        })
        .collect()
}

/// For each top-down bucket of `a`, the percentage of its members that fall
/// in the same bucket of `b`. Empty buckets report 0.
pub fn overlap_analysis(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>, num_buckets: usize) -> Result<Vec<f64>> {
    if num_buckets == 0 {
        return Err(Error::Config("overlap analysis needs at least one bucket".into()));
    }
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let missing = a.keys().find(|k| !b.contains_key(*k)).or_else(|| b.keys().find(|k| !a.contains_key(*k)));
        return Err(Error::Integrity(format!(
            "overlap analysis score maps cover different samples (first difference: {})",
            missing.map_or("?", String::as_str)
        )));
    }
    let ba = top_buckets(a, num_buckets);
    let bb = top_buckets(b, num_buckets);
    Ok(ba
        .iter()
        .zip(&bb)
        .map(|(x, y)| {
            if x.is_empty() {
                0.0
            } else {
                100.0 * x.intersection(y).count() as f64 / x.len() as f64
            }
        })
        .collect())
}

pub fn overlap_table(overlaps: &[f64]) -> String {
    let k = overlaps.len();
    let mut out = String::from("Bucket\tOverlap %\n");
    for (b, o) in overlaps.iter().enumerate() {
        let lo = 100.0 * b as f64 / k as f64;
        let hi = 100.0 * (b + 1) as f64 / k as f64;
        let _ = writeln!(out, "top p{}-p{}\t{o:.2}", percent_label(lo), percent_label(hi));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bucket_is_corpus_mean() {
        let tokens = [3, 5, 10, 2];
        let s = bucket_stats(&[0.4, 0.1, 0.9, 0.2], &tokens, None, &[0.0, 100.0]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_tokens, Some(5.0));
        assert_eq!(s[0].sum_tokens, 20);
    }

    #[test]
    fn constant_scores_split_by_index() {
        let s = bucket_stats(&[1.0; 5], &[1, 2, 3, 4, 5], None, &[0.0, 50.0, 100.0]).unwrap();
        assert_eq!((s[0].count, s[1].count), (3, 2));
        assert_eq!(s[0].sum_tokens, 6);
        assert_eq!(s[1].sum_tokens, 9);
    }

    #[test]
    fn empty_bucket_is_reported() {
        let s = bucket_stats(&[1.0, 2.0], &[1, 1], Some(&[0.5, 0.7]), &[0.0, 10.0, 20.0, 100.0]).unwrap();
        assert_eq!(s[1].count, 0);
        assert_eq!(s[1].mean_tokens, None);
        let table = bucket_table(&s);
        assert!(table.starts_with("Range\tCount\tMean Quality\tMean Influence"));
        assert!(table.contains("p10-p20\t0\t-\t-\t-\t0\n"));
        assert!(bucket_stats(&[1.0], &[1], None, &[50.0, 10.0]).is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(thousands(1_345_066_462), "1,345,066,462");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands_2dp(397.05), "397.05");
        assert_eq!(thousands_2dp(1698.466), "1,698.47");
        let b = BucketStats {
            lo: 5.0,
            hi: 25.0,
            count: 0,
            mean_score: None,
            mean_quality: None,
            mean_tokens: None,
            sum_tokens: 0,
        };
        assert_eq!(b.label(), "p05-p25");
    }

    fn map(values: &[f64]) -> BTreeMap<String, f64> {
        values.iter().enumerate().map(|(i, &v)| (format!("s{i:04}"), v)).collect()
    }

    #[test]
    fn overlap_extremes() {
        let a = map(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(overlap_analysis(&a, &a, 3).unwrap(), vec![100.0; 3]);
        let rev = map(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(overlap_analysis(&a, &rev, 2).unwrap(), vec![0.0, 0.0]);
        let mut other = a.clone();
        other.insert("extra".into(), 0.0);
        assert!(matches!(overlap_analysis(&a, &other, 2), Err(Error::Integrity(_))));
    }

    #[test]
    fn independent_scores_overlap_near_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = map(&(0..1000).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let b = map(&(0..1000).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let o = overlap_analysis(&a, &b, 10).unwrap();
        let mean = o.iter().sum::<f64>() / 10.0;
        assert!((mean - 10.0).abs() <= 3.0, "{mean}");
    }
}
