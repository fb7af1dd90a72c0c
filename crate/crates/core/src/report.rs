//! Run reports: a versioned JSON-lines log, a flat CSV projection, and
//! plain-text tables for the terminal.
//!
//! `metrics.jsonl` schema (version 1) — one object per line, discriminated
//! by `kind`:
//!
//! | kind         | payload                                              |
//! |--------------|------------------------------------------------------|
//! | `meta`       | `schema`, step/controller row counts                 |
//! | `step`       | one [`StepMetrics`] per completed step, in order     |
//! | `controller` | one [`ControllerRow`] per fine-tuning epoch, in order|
//! | `summary`    | `avg`, `last`, `final_logit_spread`, `final_gap`     |
//!
//! Numbers are written with shortest-round-trip formatting, so parsing the
//! file back reproduces every value bit-exactly. `metrics.csv` is a fixed
//! four-column projection (`record,step,index,value`) of the same data for
//! spreadsheet/plotting use; it is a write-only view.

use crate::error::{Error, Result};
use crate::metrics::{ControllerRow, MetricsRecord, StepMetrics};
use crate::train::VariantResult;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Version written into and required from the `meta` line.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Meta {
        schema: u32,
        steps: usize,
        controller_rows: usize,
    },
    Step(StepMetrics),
    Controller(ControllerRow),
    Summary {
        avg: f64,
        last: f64,
        final_logit_spread: f64,
        final_gap: f64,
    },
}

/// Write the JSON-lines log for a finished (or partial) run.
pub fn write_jsonl(rec: &MetricsRecord, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let emit = |out: &mut dyn std::io::Write, line: &Line| -> Result<()> {
        let text = serde_json::to_string(line)
            .map_err(|e| Error::Format(format!("serializing report line: {e}")))?;
        writeln!(out, "{text}")?;
        Ok(())
    };
    emit(
        &mut out,
        &Line::Meta {
            schema: SCHEMA_VERSION,
            steps: rec.steps.len(),
            controller_rows: rec.controller_trace.len(),
        },
    )?;
    for s in &rec.steps {
        emit(&mut out, &Line::Step(s.clone()))?;
    }
    for c in &rec.controller_trace {
        emit(&mut out, &Line::Controller(c.clone()))?;
    }
    emit(
        &mut out,
        &Line::Summary {
            avg: rec.avg_incremental,
            last: rec.last,
            final_logit_spread: rec.final_logit_mean_spread(),
            final_gap: rec.final_old_new_gap(),
        },
    )?;
    out.flush()?;
    Ok(())
}

/// Parse a JSON-lines log back into the record it was written from.
pub fn read_jsonl(path: &Path) -> Result<MetricsRecord> {
    let text = std::fs::read_to_string(path)?;
    let mut steps = Vec::new();
    let mut trace = Vec::new();
    let mut meta_seen = false;
    let mut summary: Option<(f64, f64)> = None;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        match line {
            Line::Meta { schema, .. } => {
                if schema != SCHEMA_VERSION {
                    return Err(Error::Format(format!(
                        "unsupported report schema {schema}, expected {SCHEMA_VERSION}"
                    )));
                }
                meta_seen = true;
            }
            Line::Step(s) => steps.push(s),
            Line::Controller(c) => trace.push(c),
            Line::Summary { avg, last, .. } => summary = Some((avg, last)),
        }
    }
    if !meta_seen {
        return Err(Error::Format(format!(
            "{}: missing meta line",
            path.display()
        )));
    }
    let rec = MetricsRecord::from_steps(steps, trace);
    if let Some((avg, last)) = summary {
        if (rec.avg_incremental - avg).abs() > 1e-9 || (rec.last - last).abs() > 1e-9 {
            return Err(Error::Format(
                "summary line disagrees with step records".into(),
            ));
        }
    }
    Ok(rec)
}

/// Write the four-column CSV projection: `record,step,index,value`.
///
/// Records: `overall` (index 0), `acc` (accuracy matrix; index = task),
/// `gap` (old/new accuracy gap; index 0), `logit_mean`/`logit_std`/
/// `logit_acc` (per task), `gamma`/`delta` (per controller epoch), and the
/// run-level `avg`/`last` (step 0, index 0).
pub fn write_csv(rec: &MetricsRecord, path: &Path) -> Result<()> {
    let mut out = String::from("record,step,index,value\n");
    for s in &rec.steps {
        let _ = writeln!(out, "overall,{},0,{}", s.step, s.overall_acc);
        for (t, a) in s.per_task_acc.iter().enumerate() {
            let _ = writeln!(out, "acc,{},{},{}", s.step, t + 1, a);
        }
        let _ = writeln!(out, "gap,{},0,{}", s.step, s.old_new_gap);
        for ls in &s.logit_stats {
            let _ = writeln!(out, "logit_mean,{},{},{}", s.step, ls.task, ls.mean);
            let _ = writeln!(out, "logit_std,{},{},{}", s.step, ls.task, ls.std);
            let _ = writeln!(out, "logit_acc,{},{},{}", s.step, ls.task, ls.acc);
        }
    }
    for c in &rec.controller_trace {
        let _ = writeln!(out, "gamma,{},{},{}", c.step, c.epoch, c.gamma);
        let _ = writeln!(out, "delta,{},{},{}", c.step, c.epoch, c.delta);
    }
    let _ = writeln!(out, "avg,0,0,{}", rec.avg_incremental);
    let _ = writeln!(out, "last,0,0,{}", rec.last);
    std::fs::write(path, out)?;
    Ok(())
}

/// Write `metrics.jsonl` and `metrics.csv` into `dir`.
pub fn emit_report(rec: &MetricsRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(rec, &dir.join("metrics.jsonl"))?;
    write_csv(rec, &dir.join("metrics.csv"))?;
    Ok(())
}

/// Human-readable per-step table plus summary (used by `train`/`analyze`).
pub fn render_table(rec: &MetricsRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "step  seen  overall%   gap%   per-task accuracy%");
    for s in &rec.steps {
        let tasks: Vec<String> = s.per_task_acc.iter().map(|a| format!("{a:6.2}")).collect();
        let _ = writeln!(
            out,
            "{:>4}  {:>4}  {:>8.3}  {:>5.2}   [{}]",
            s.step,
            s.seen_classes,
            s.overall_acc,
            s.old_new_gap,
            tasks.join(" ")
        );
    }
    let _ = writeln!(
        out,
        "Avg {:.3}%  Last {:.3}%  final-gap {:.3}%  final-logit-spread {:.4}",
        rec.avg_incremental,
        rec.last,
        rec.final_old_new_gap(),
        rec.final_logit_mean_spread()
    );
    if !rec.controller_trace.is_empty() {
        let _ = writeln!(out, "controller: step epoch     delta     gamma upd");
        for c in &rec.controller_trace {
            let _ = writeln!(
                out,
                "            {:>4} {:>5} {:>9.4} {:>9.4}  {}",
                c.step,
                c.epoch,
                c.delta,
                c.gamma,
                if c.updated { "*" } else { "-" }
            );
        }
    }
    out
}

/// Table for the comparative grid.
pub fn render_comparison(rows: &[VariantResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10}  {:>8}  {:>8}  {:>12}  {:>10}",
        "variant", "avg%", "last%", "logit-spread", "final-gap%"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10}  {:>8.3}  {:>8.3}  {:>12.4}  {:>10.3}",
            r.name, r.avg, r.last, r.final_logit_spread, r.final_old_new_gap
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LogitStat;

    fn sample_record() -> MetricsRecord {
        let steps = vec![
            StepMetrics {
                step: 1,
                seen_classes: 2,
                overall_acc: 97.519_284_712_3,
                per_task_acc: vec![97.519_284_712_3],
                per_class_acc: vec![98.0, 97.038_569_424_6],
                old_new_gap: 0.0,
                logit_stats: vec![LogitStat {
                    task: 1,
                    mean: 4.218_281_828,
                    std: 0.318_309_886,
                    acc: 99.0,
                }],
            },
            StepMetrics {
                step: 2,
                seen_classes: 4,
                overall_acc: 88.111_111_111_1,
                per_task_acc: vec![85.0, 91.222_222_222_2],
                per_class_acc: vec![84.0, 86.0, 90.444_444_444_4, 92.0],
                old_new_gap: 6.222_222_222_2,
                logit_stats: vec![
                    LogitStat {
                        task: 1,
                        mean: 3.1,
                        std: 0.4,
                        acc: 85.0,
                    },
                    LogitStat {
                        task: 2,
                        mean: 7.9,
                        std: 0.6,
                        acc: 91.0,
                    },
                ],
            },
        ];
        let trace = vec![
            ControllerRow {
                step: 2,
                epoch: 0,
                delta: 4.0,
                gamma: 0.0,
                delta_var: 0.0,
                delta_start: 4.0,
                updated: false,
            },
            ControllerRow {
                step: 2,
                epoch: 1,
                delta: 3.9,
                gamma: 0.0,
                delta_var: 0.1,
                delta_start: 4.0,
                updated: false,
            },
        ];
        MetricsRecord::from_steps(steps, trace)
    }

    #[test]
    fn jsonl_round_trip_recovers_identical_numbers() {
        let rec = sample_record();
        let dir = std::env::temp_dir().join(format!("spikecil-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.jsonl");
        write_jsonl(&rec, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(rec, back, "round trip must be exact, not approximate");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_has_fixed_column_count() {
        let rec = sample_record();
        let dir = std::env::temp_dir().join(format!("spikecil-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.csv");
        write_csv(&rec, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "record,step,index,value");
        let mut rows = 0;
        for line in lines {
            assert_eq!(line.split(',').count(), 4, "row {line:?}");
            rows += 1;
        }
        // 2 overall + 3 acc + 2 gap + 9 logit + 4 controller + avg + last.
        assert_eq!(rows, 22);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn schema_mismatch_and_corruption_are_format_errors() {
        let dir = std::env::temp_dir().join(format!("spikecil-badrep-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.jsonl");
        std::fs::write(
            &path,
            "{\"kind\":\"meta\",\"schema\":99,\"steps\":0,\"controller_rows\":0}\n",
        )
        .unwrap();
        assert!(matches!(read_jsonl(&path), Err(Error::Format(_))));
        std::fs::write(&path, "not json at all\n").unwrap();
        assert!(matches!(read_jsonl(&path), Err(Error::Format(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn avg_recomputed_from_emitted_matrix_matches() {
        let rec = sample_record();
        let dir = std::env::temp_dir().join(format!("spikecil-avg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        emit_report(&rec, &dir).unwrap();
        let back = read_jsonl(&dir.join("metrics.jsonl")).unwrap();
        assert!((back.recompute_avg() - back.avg_incremental).abs() < 1e-9);
        std::fs::remove_dir_all(&dir).ok();
    }
}
