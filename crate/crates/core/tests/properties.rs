use std::collections::BTreeMap;

use proptest::prelude::*;

use automixer::corpus::{Corpus, Sample};
use automixer::mixer::{
    regroup, sample_mixture, sampling_weights, scale_influences, DataGroup, GroupMember, MixtureManifest, MixtureSpec,
};
use automixer::simulator::blending_factors;
use automixer::stats::spearman;

fn groups_strategy() -> impl Strategy<Value = Vec<DataGroup>> {
    prop::collection::vec(prop::collection::vec((1usize..60, 0.0f64..1.0), 1..30), 1..5).prop_map(|gs| {
        gs.into_iter()
            .enumerate()
            .map(|(g, members)| DataGroup {
                group_id: format!("g{g}"),
                members: members
                    .into_iter()
                    .enumerate()
                    .map(|(i, (token_count, score))| GroupMember {
                        index: i,
                        sample_id: format!("g{g}/{i}"),
                        token_count,
                        score,
                    })
                    .collect(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn weights_form_a_distribution(groups in groups_strategy()) {
        let spec = sampling_weights(&groups, 100).unwrap();
        let sum: f64 = spec.weights.iter().map(|(_, w)| w).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(spec.weights.iter().all(|(_, w)| *w > 0.0));
    }

    #[test]
    fn draws_respect_budget_and_caps(groups in groups_strategy(), budget in 1usize..5000, cap in proptest::option::of(1usize..500), seed in any::<u64>()) {
        let spec = sampling_weights(&groups, budget).unwrap();
        let caps: BTreeMap<String, usize> = match cap {
            Some(c) => spec.weights.iter().map(|(g, _)| (g.clone(), c)).collect(),
            None => BTreeMap::new(),
        };
        let spec = spec.with_caps(caps.clone());
        let m = sample_mixture(&groups, &spec, seed).unwrap();
        prop_assert!(m.total_tokens() <= budget);
        for (g, t) in m.group_tokens() {
            if let Some(c) = caps.get(&g) {
                prop_assert!(t <= *c);
            }
        }
        let last = m.entries.last().map_or(0, |e| e.cumulative_tokens);
        prop_assert_eq!(last, m.total_tokens());
        let again = sample_mixture(&groups, &spec, seed).unwrap();
        prop_assert_eq!(&again, &m);
        let parsed = MixtureManifest::parse(&m.to_text(), std::path::Path::new("m")).unwrap();
        prop_assert_eq!(parsed, m);
    }

    #[test]
    fn regroup_keeps_ceil_fraction(scores in prop::collection::vec(-10.0f64..10.0, 1..80), r in 0.01f64..=1.0) {
        let n = scores.len();
        let samples = (0..n).map(|i| Sample::new(format!("s/{i}"), "x", vec![0, 1]).unwrap()).collect();
        let corpus = Corpus::new(2, samples).unwrap();
        let joint: Vec<f64> = scores.iter().map(|s| -s).collect();
        let groups = regroup(&corpus, &[("c".into(), scores.clone())], &joint, r).unwrap();
        prop_assert_eq!(groups[0].len(), (r * n as f64 - 1e-9).ceil() as usize);
        prop_assert!(groups[0].members.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn min_max_scaling_preserves_order(scores in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        prop_assume!(scores.iter().any(|s| *s != scores[0]));
        let scaled = scale_influences(&scores).unwrap();
        prop_assert!(scaled.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert!((spearman(&scores, &scaled) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blending_factors_sum_to_one(steps in prop::collection::vec(1u64..1_000_000, 1..10)) {
        let a = blending_factors(&steps).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let max = *steps.iter().max().unwrap();
        let i = steps.iter().position(|s| *s == max).unwrap();
        prop_assert!(a.iter().all(|x| *x <= a[i]));
    }
}

#[test]
fn uniform_spec_splits_evenly() {
    let g = |id: &str| DataGroup {
        group_id: id.into(),
        members: vec![],
    };
    let spec = MixtureSpec::uniform(&[g("a"), g("b"), g("c"), g("d")], 10);
    assert!(spec.weights.iter().all(|(_, w)| *w == 0.25));
}
