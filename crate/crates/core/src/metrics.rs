//! Evaluation metrics for incremental runs.
//!
//! After every step the whole seen test set is scored. `Avg` is the mean of
//! those per-step overall accuracies; `Last` is the final one. The accuracy
//! matrix row for step s holds one entry per task seen so far, so forgetting
//! is readable directly from columns. All accuracies are percentages.

use crate::tensor::{mean, std_dev};
use serde::{Deserialize, Serialize};

/// Ground-truth-logit statistics of one task at one evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitStat {
    pub task: usize,
    /// Mean ground-truth-class logit over the task's samples.
    pub mean: f64,
    /// Population standard deviation of the same.
    pub std: f64,
    /// Accuracy (%) on the task's samples.
    pub acc: f64,
}

/// Everything measured after one incremental step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based step index.
    pub step: usize,
    pub seen_classes: usize,
    /// Accuracy (%) over the union of all seen test data.
    pub overall_acc: f64,
    /// Accuracy (%) per task (index = task number - 1).
    pub per_task_acc: Vec<f64>,
    /// Accuracy (%) per class id.
    pub per_class_acc: Vec<f64>,
    /// |mean accuracy of old tasks − accuracy of the newest task|; 0 at step 1.
    pub old_new_gap: f64,
    /// Table-1-style ground-truth logit statistics per task (training data).
    pub logit_stats: Vec<LogitStat>,
}

/// One controller decision, as traced to the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerRow {
    pub step: usize,
    /// Fine-tuning epoch within the step; 0 is the probe epoch.
    pub epoch: u64,
    pub delta: f64,
    pub gamma: f64,
    pub delta_var: f64,
    pub delta_start: f64,
    pub updated: bool,
}

/// Complete record of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub steps: Vec<StepMetrics>,
    /// `acc_matrix[s][k]` = accuracy on task k+1 after step s+1.
    pub acc_matrix: Vec<Vec<f64>>,
    pub avg_incremental: f64,
    pub last: f64,
    pub controller_trace: Vec<ControllerRow>,
}

impl MetricsRecord {
    pub fn from_steps(steps: Vec<StepMetrics>, controller_trace: Vec<ControllerRow>) -> Self {
        let acc_matrix: Vec<Vec<f64>> = steps.iter().map(|s| s.per_task_acc.clone()).collect();
        let overall: Vec<f64> = steps.iter().map(|s| s.overall_acc).collect();
        let avg_incremental = mean(&overall);
        let last = overall.last().copied().unwrap_or(0.0);
        Self {
            steps,
            acc_matrix,
            avg_incremental,
            last,
            controller_trace,
        }
    }

    /// Mean of per-step overall accuracies, recomputed from scratch.
    pub fn recompute_avg(&self) -> f64 {
        mean(&self.steps.iter().map(|s| s.overall_acc).collect::<Vec<_>>())
    }

    /// Largest minus smallest per-task ground-truth logit mean at the final
    /// step — the Table-1-style imbalance measure.
    pub fn final_logit_mean_spread(&self) -> f64 {
        let Some(last) = self.steps.last() else {
            return 0.0;
        };
        let means: Vec<f64> = last.logit_stats.iter().map(|s| s.mean).collect();
        match (
            means.iter().cloned().reduce(f64::min),
            means.iter().cloned().reduce(f64::max),
        ) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }

    pub fn final_old_new_gap(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.old_new_gap)
    }
}

/// Mean ± population-std aggregation of several runs' headline numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub avg_mean: f64,
    pub avg_std: f64,
    pub last_mean: f64,
    pub last_std: f64,
}

pub fn aggregate(records: &[MetricsRecord]) -> Aggregate {
    let avgs: Vec<f64> = records.iter().map(|r| r.avg_incremental).collect();
    let lasts: Vec<f64> = records.iter().map(|r| r.last).collect();
    Aggregate {
        runs: records.len(),
        avg_mean: mean(&avgs),
        avg_std: std_dev(&avgs),
        last_mean: mean(&lasts),
        last_std: std_dev(&lasts),
    }
}
