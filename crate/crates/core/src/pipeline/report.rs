use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::mixer::{bucket_table, overlap_table, BucketStats};
use crate::simulator::ProgressionTable;

/// Per-task accuracies of one mixture, mean over final-training repeats.
pub type Accuracies = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub tasks: Vec<String>,
    pub run_label: String,
    pub uniform: Accuracies,
    /// AutoMixer first, then the configured non-uniform baselines.
    pub strategies: Vec<(String, Accuracies)>,
    /// Checkpoint-strategy ablation rows.
    pub ablation: Vec<(String, Accuracies)>,
    pub progression: ProgressionTable,
    pub buckets: Vec<BucketStats>,
    /// Joint influence vs. perplexity utility, when the ppl baseline ran.
    pub overlap: Option<Vec<f64>>,
    /// `(label, distractor share)`: corpus prior, retained set, manifests.
    pub distractors: Vec<(String, f64)>,
}

/// `strategy − uniform` per task, in percentage points.
pub fn deltas(strategy: &Accuracies, uniform: &Accuracies, tasks: &[String]) -> Vec<f64> {
    tasks
        .iter()
        .map(|t| 100.0 * (strategy.get(t).copied().unwrap_or(0.0) - uniform.get(t).copied().unwrap_or(0.0)))
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl ExperimentReport {
    pub fn mean_accuracy(acc: &Accuracies) -> f64 {
        mean(&acc.values().copied().collect::<Vec<_>>())
    }

    pub fn strategy(&self, name: &str) -> Option<&Accuracies> {
        self.strategies.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    fn header(&self, first: &str, last: &str) -> String {
        format!("{first}\t{}\t{last}\n", self.tasks.join("\t"))
    }

    pub fn accuracy_table(&self) -> String {
        let mut out = self.header("Strategy", "Avg.");
        let rows = std::iter::once(("uniform", &self.uniform)).chain(self.strategies.iter().map(|(n, a)| (n.as_str(), a)));
        for (name, acc) in rows {
            let vals: Vec<f64> = self.tasks.iter().map(|t| 100.0 * acc.get(t).copied().unwrap_or(0.0)).collect();
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:.2}")).collect();
            let _ = writeln!(out, "{name}\t{}\t{:.2}", cells.join("\t"), mean(&vals));
        }
        out
    }

    pub fn improvement_table(&self) -> String {
        let mut out = self.header("Strategy", "Avg.");
        for (name, acc) in &self.strategies {
            let d = deltas(acc, &self.uniform, &self.tasks);
            let cells: Vec<String> = d.iter().map(|v| format!("{v:+.2}")).collect();
            let _ = writeln!(out, "{name}\t{}\t{:+.2}", cells.join("\t"), mean(&d));
        }
        out
    }

    pub fn ablation_table(&self) -> String {
        let mut out = String::from("Checkpoint Strategy\tAvg. Improvement\n");
        for (name, acc) in &self.ablation {
            let _ = writeln!(out, "{name}\t{:+.2}", mean(&deltas(acc, &self.uniform, &self.tasks)));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = |title: &str, body: &str| {
            let _ = write!(out, "# {title}\n{body}\n");
        };
        section("Accuracy (%)", &self.accuracy_table());
        section("Improvements over the uniform baseline (accuracy %)", &self.improvement_table());
        section("Checkpoint strategy ablation", &self.ablation_table());
        section("Progression (best checkpoint, % of steps)", &self.progression.to_tsv(&self.run_label));
        section("Joint influence by percentile range", &bucket_table(&self.buckets));
        if let Some(o) = &self.overlap {
            section("Overlap of joint influence and perplexity utility buckets", &overlap_table(o));
        }
        let mut d = String::from("Set\tDistractor share\n");
        for (label, share) in &self.distractors {
            let _ = writeln!(d, "{label}\t{share:.4}");
        }
        section("Distractors", &d);
        out
    }
}

pub fn emit_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    super::artifacts::write(path, &report.to_text())
}
