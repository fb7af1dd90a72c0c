//! The two-stage incremental training loop and experiment driver.
//!
//! Each step trains in two stages. *Representation*: expand the network
//! (steps ≥ 2), freeze old extractors, optionally pin the old-features→
//! new-classes head block to zero, and minimize the combined temporal +
//! auxiliary + distillation loss on the new data plus rehearsal memory.
//! *Classifier*: freeze every extractor, release the pin, and fine-tune the
//! head alone on a class-balanced subset with rate cross-entropy; from the
//! second step on the alignment controller measures the old/new logit gap
//! each epoch and adjusts the correction term. Afterwards the exemplar
//! memory is rebuilt by herding and all seen test data is scored.
//!
//! Every random choice draws from a named stream keyed by (master seed,
//! purpose, step/epoch), so a run resumed from a step-boundary checkpoint
//! replays the remaining steps bit-exactly.

use crate::align::{init_alignment, AlignmentState, LogitAccumulator};
use crate::cil::{balanced_subset, ExemplarMemory, ExpandableNetwork, TaskStream};
use crate::config::{DataKind, ExperimentConfig};
use crate::data::{generate_gaussian_tasks, load_raw_dataset, split_stream, LabeledDataset,
                  SyntheticTaskConfig};
use crate::error::{Error, Result};
use crate::losses::{aux_tet_loss, kd_loss, rate_ce_loss, tet_loss, total_representation_loss,
                    CorrectionMask};
use crate::metrics::{ControllerRow, LogitStat, MetricsRecord, StepMetrics};
use crate::rng::stream_rng;
use crate::snn::{argmax_rows, mean_tensors};
use crate::tape::{affine_kernel, Tape, Var};
use crate::tensor::{mean, select_rows, std_dev, Tensor};
use rand::Rng;
use std::ops::Range;

/// Moments a stage observer is invited to look at the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageEvent {
    Expanded,
    RepresentationDone,
    ClassifierDone,
    StepDone,
}

/// Read-only inspection callback between stages (used by contract tests).
pub type StageObserver<'a> =
    &'a mut dyn FnMut(usize, StageEvent, &ExpandableNetwork, &ExemplarMemory);

/// How the per-step training deviates from the standard recipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainingVariant {
    /// The full recipe as configured.
    Standard,
    /// Standard expansion, but the chosen head blocks stay pinned at zero
    /// through both stages (the connection-ablation arms of the analysis
    /// grid). Overrides the suppression toggle.
    PersistentMask {
        zero_old_to_new: bool,
        zero_new_to_old: bool,
    },
    /// Expandable network trained on *all* seen data instead of new data
    /// plus memory; rehearsal memory is unused.
    AllData,
    /// Ideal reference: one never-frozen extractor, retrained on all seen
    /// data each step; no auxiliary head, distillation, or suppression.
    Oracle,
}

/// Mutable training state threaded across steps.
pub struct RunHandle {
    pub net: ExpandableNetwork,
    pub memory: ExemplarMemory,
    pub steps: Vec<StepMetrics>,
    pub trace: Vec<ControllerRow>,
    pub steps_completed: usize,
    /// Final controller state of the latest completed step, if any.
    pub last_controller: Option<AlignmentState>,
}

/// Build the task stream described by the configuration.
pub fn build_stream(cfg: &ExperimentConfig) -> Result<TaskStream> {
    let (train, test) = match cfg.data_kind {
        DataKind::Synthetic => generate_gaussian_tasks(&SyntheticTaskConfig {
            n_classes: cfg.synthetic_classes,
            dim: cfg.synthetic_dim,
            samples_per_class: cfg.synthetic_samples_per_class,
            cluster_spread: cfg.synthetic_spread,
            seed: cfg.effective_data_seed(),
        })?,
        DataKind::File => {
            let ds = load_raw_dataset(std::path::Path::new(&cfg.data_path), cfg.data_format)?;
            // Deterministic stratified 80/20 split, same rule as synthetic.
            let mut train_idx = Vec::new();
            let mut test_idx = Vec::new();
            for class in 0..ds.class_count() {
                let rows = ds.indices_of_class(class);
                if rows.is_empty() {
                    return Err(Error::Data(format!("class {class} has no samples")));
                }
                let cut = (rows.len() * 4) / 5;
                let cut = cut.max(1).min(rows.len().saturating_sub(1)).max(1);
                train_idx.extend_from_slice(&rows[..cut]);
                test_idx.extend_from_slice(&rows[cut..]);
            }
            (ds.subset(&train_idx), ds.subset(&test_idx))
        }
    };
    split_stream(
        &train,
        &test,
        cfg.stream_steps,
        cfg.stream_base_classes,
        cfg.effective_order_seed(),
    )
}

/// Fresh state for step 1.
pub fn init_run(cfg: &ExperimentConfig, stream: &TaskStream) -> Result<RunHandle> {
    let input_dim = stream.steps[0].train.dim();
    let n_first = stream.steps[0].classes.len();
    let net = ExpandableNetwork::new(&cfg.extractor_spec(input_dim), n_first, cfg.seed_master)?;
    let memory = if cfg.memory_per_class > 0 {
        ExemplarMemory::with_per_class(cfg.memory_budget, cfg.memory_per_class)
    } else {
        ExemplarMemory::new(cfg.memory_budget)
    };
    Ok(RunHandle {
        net,
        memory,
        steps: Vec::new(),
        trace: Vec::new(),
        steps_completed: 0,
        last_controller: None,
    })
}

fn notify(
    observer: &mut Option<StageObserver<'_>>,
    step: usize,
    event: StageEvent,
    net: &ExpandableNetwork,
    memory: &ExemplarMemory,
) {
    if let Some(obs) = observer {
        obs(step, event, net, memory);
    }
}

fn shuffled_indices(n: usize, master: u64, tag: &str, step: usize, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(master, tag, ((step as u64) << 32) | epoch as u64);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Taped forward through the network for representation training.
///
/// Frozen extractors run without a tape and enter as constant leaves; the
/// single trainable extractor (always the newest) is recorded. Returns the
/// per-time-step logits, the trainable extractor's per-step feature vars,
/// and — when any extractor is frozen — the time-averaged frozen features
/// (the distillation teacher's input).
fn forward_training(
    tape: &mut Tape,
    net: &ExpandableNetwork,
    x: &Tensor,
) -> Result<(Vec<Var>, Vec<Var>, Option<Tensor>)> {
    let t_steps = net.t_steps();
    let k = net.extractors.len();
    debug_assert!(
        net.frozen[..k - 1].iter().all(|&f| f) && !net.frozen[k - 1],
        "representation stage expects exactly the newest extractor trainable"
    );
    let mut frozen_per_t: Vec<Vec<Tensor>> = Vec::new();
    for (i, ext) in net.extractors.iter().enumerate() {
        if net.frozen[i] {
            frozen_per_t.push(ext.forward_plain(&net.store, x)?);
        }
    }
    let x_var = tape.leaf(x.clone());
    let new_feats = net.extractors[k - 1].forward_tape(tape, &net.store, x_var)?;

    let frozen_avg = if frozen_per_t.is_empty() {
        None
    } else {
        let concat_per_t: Vec<Tensor> = (0..t_steps)
            .map(|t| {
                let parts: Vec<&Tensor> = frozen_per_t.iter().map(|f| &f[t]).collect();
                crate::tensor::concat_cols(&parts)
            })
            .collect::<Result<_>>()?;
        Some(mean_tensors(&concat_per_t))
    };

    let mut o_seq = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let feat = if frozen_per_t.is_empty() {
            new_feats[t]
        } else {
            let mut parts: Vec<Var> = frozen_per_t
                .iter()
                .map(|f| tape.leaf(f[t].clone()))
                .collect();
            parts.push(new_feats[t]);
            tape.concat_cols(&parts)?
        };
        o_seq.push(net.head.logits_tape(tape, &net.store, feat)?);
    }
    Ok((o_seq, new_feats, frozen_avg))
}

struct Teacher {
    weight: Tensor,
    bias: Tensor,
    old_classes: usize,
}

#[allow(clippy::too_many_arguments)]
fn train_representation(
    net: &mut ExpandableNetwork,
    data: &LabeledDataset,
    step: usize,
    new_classes: &Range<usize>,
    teacher: Option<&Teacher>,
    use_aux: bool,
    cfg: &ExperimentConfig,
) -> Result<()> {
    net.store.reset_velocity();
    let n = data.len();
    let decay_at = (cfg.opt_repr_epochs * 2) / 3;
    for epoch in 0..cfg.opt_repr_epochs {
        let lr = if epoch >= decay_at {
            cfg.opt_lr * 0.1
        } else {
            cfg.opt_lr
        };
        let order = shuffled_indices(n, cfg.seed_master, "shuffle.repr", step, epoch);
        for chunk in order.chunks(cfg.opt_batch) {
            let x = select_rows(data.samples(), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let mut tape = Tape::new();
            let (o_seq, new_feats, frozen_avg) = forward_training(&mut tape, net, &x)?;
            let tet = tet_loss(&mut tape, &o_seq, &labels, &cfg.loss)?;
            let aux = if use_aux {
                let aux_head = net
                    .aux_head
                    .as_ref()
                    .expect("auxiliary head exists after expansion");
                let aux_seq: Vec<Var> = new_feats
                    .iter()
                    .map(|&f| aux_head.logits_tape(&mut tape, &net.store, f))
                    .collect::<Result<_>>()?;
                Some(aux_tet_loss(
                    &mut tape, &aux_seq, &labels, new_classes, &cfg.loss,
                )?)
            } else {
                None
            };
            let kd = match teacher {
                Some(t) => {
                    let avg = tape.mean_of(&o_seq)?;
                    let student_old = tape.slice_cols(avg, 0, t.old_classes)?;
                    let frozen_avg = frozen_avg
                        .as_ref()
                        .expect("teacher implies frozen extractors");
                    let teacher_logits = affine_kernel(frozen_avg, &t.weight, &t.bias);
                    Some(kd_loss(&mut tape, student_old, &teacher_logits, &cfg.loss)?)
                }
                None => None,
            };
            let total = total_representation_loss(&mut tape, tet, aux, kd, &cfg.loss)?;
            tape.backward(total, &mut net.store)?;
            net.store.sgd_step(lr, cfg.opt_momentum);
        }
    }
    Ok(())
}

fn train_classifier(
    net: &mut ExpandableNetwork,
    balanced: &LabeledDataset,
    step: usize,
    new_classes: &Range<usize>,
    cfg: &ExperimentConfig,
    trace: &mut Vec<ControllerRow>,
) -> Result<Option<AlignmentState>> {
    net.store.reset_velocity();
    let seen = new_classes.end;
    let mask = CorrectionMask::new(seen, new_classes.clone())?;
    // Extractors are frozen here, so features are constants per sample:
    // compute them once and slice rows per batch.
    let feats_per_t = net.features_plain(balanced.samples())?;
    let n = balanced.len();
    let alignment_active = cfg.toggle_alignment && step >= 2;
    let mut state: Option<AlignmentState> = None;
    for epoch in 0..cfg.opt_clf_epochs {
        let gamma = state.map_or(0.0, |s| s.gamma);
        let order = shuffled_indices(n, cfg.seed_master, "shuffle.clf", step, epoch);
        let mut acc = LogitAccumulator::new();
        for chunk in order.chunks(cfg.opt_batch) {
            let labels: Vec<usize> = chunk.iter().map(|&i| balanced.labels()[i]).collect();
            let mut tape = Tape::new();
            let o_seq: Vec<Var> = feats_per_t
                .iter()
                .map(|f| {
                    let fv = tape.leaf(select_rows(f, chunk));
                    net.head.logits_tape(&mut tape, &net.store, fv)
                })
                .collect::<Result<_>>()?;
            let out = rate_ce_loss(&mut tape, &o_seq, &labels, gamma, &mask)?;
            if alignment_active {
                // Δ statistics read the *uncorrected* outputs: γ must act
                // through the training it induces, not by arithmetic, so the
                // controller converges when the deployable logits balance.
                acc.accumulate(tape.value(out.raw_mean), &labels, new_classes);
            }
            tape.backward(out.loss, &mut net.store)?;
            net.store.sgd_step(cfg.opt_lr, cfg.opt_momentum);
        }
        if alignment_active {
            match &mut state {
                None => {
                    let probe = acc.delta()?;
                    trace.push(ControllerRow {
                        step,
                        epoch: 0,
                        delta: probe,
                        gamma: 0.0,
                        delta_var: 0.0,
                        delta_start: probe,
                        updated: false,
                    });
                    state = Some(init_alignment(probe, cfg.align_alpha, cfg.align_beta));
                }
                Some(st) => {
                    let out = st.epoch_update(&acc)?;
                    trace.push(ControllerRow {
                        step,
                        epoch: st.epoch,
                        delta: out.delta,
                        gamma: st.gamma,
                        delta_var: st.delta_var,
                        delta_start: st.delta_start,
                        updated: out.updated,
                    });
                }
            }
        }
    }
    Ok(state)
}

/// All-seen-classes accuracy: (overall %, per-task %, per-class %).
/// Predictions are the argmax of time-averaged logits; the correction term
/// is never applied here.
pub fn evaluate(
    net: &ExpandableNetwork,
    stream: &TaskStream,
    upto_step: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let seen = stream.seen_classes(upto_step);
    let mut correct = vec![0usize; seen];
    let mut total = vec![0usize; seen];
    for t in 0..upto_step {
        let ds = &stream.steps[t].test;
        let rows: Vec<usize> = (0..ds.len()).collect();
        for chunk in rows.chunks(256) {
            let x = select_rows(ds.samples(), chunk);
            let avg = mean_tensors(&net.logits_plain(&x)?);
            let preds = argmax_rows(&avg);
            for (j, &i) in chunk.iter().enumerate() {
                let y = ds.labels()[i];
                total[y] += 1;
                if preds[j] == y {
                    correct[y] += 1;
                }
            }
        }
    }
    let per_class: Vec<f64> = (0..seen)
        .map(|c| {
            if total[c] == 0 {
                0.0
            } else {
                100.0 * correct[c] as f64 / total[c] as f64
            }
        })
        .collect();
    let mut per_task = Vec::with_capacity(upto_step);
    for t in 0..upto_step {
        let r = stream.steps[t].classes.clone();
        let c: usize = r.clone().map(|k| correct[k]).sum();
        let n: usize = r.map(|k| total[k]).sum();
        per_task.push(if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 });
    }
    let c_all: usize = correct.iter().sum();
    let n_all: usize = total.iter().sum();
    let overall = if n_all == 0 {
        0.0
    } else {
        100.0 * c_all as f64 / n_all as f64
    };
    Ok((overall, per_task, per_class))
}

/// Per-task mean/std of the ground-truth-class logit plus accuracy, measured
/// on each task's training samples with plain (uncorrected) logits.
pub fn logit_statistics(
    net: &ExpandableNetwork,
    stream: &TaskStream,
    upto_step: usize,
) -> Result<Vec<LogitStat>> {
    let mut out = Vec::with_capacity(upto_step);
    for t in 0..upto_step {
        let ds = &stream.steps[t].train;
        let mut gt = Vec::with_capacity(ds.len());
        let mut hits = 0usize;
        let rows: Vec<usize> = (0..ds.len()).collect();
        for chunk in rows.chunks(256) {
            let x = select_rows(ds.samples(), chunk);
            let avg = mean_tensors(&net.logits_plain(&x)?);
            let preds = argmax_rows(&avg);
            for (j, &i) in chunk.iter().enumerate() {
                let y = ds.labels()[i];
                gt.push(avg.get2(j, y));
                if preds[j] == y {
                    hits += 1;
                }
            }
        }
        out.push(LogitStat {
            task: t + 1,
            mean: mean(&gt),
            std: std_dev(&gt),
            acc: 100.0 * hits as f64 / ds.len().max(1) as f64,
        });
    }
    Ok(out)
}

fn union_train(stream: &TaskStream, upto_step: usize) -> Result<LabeledDataset> {
    let mut ds = stream.steps[0].train.clone();
    for t in 1..upto_step {
        ds = ds.merge(&stream.steps[t].train)?;
    }
    Ok(ds)
}

fn rebuild_memory_for(
    net: &ExpandableNetwork,
    stream: &TaskStream,
    step: usize,
    memory: &mut ExemplarMemory,
) -> Result<()> {
    let seen = stream.seen_classes(step);
    let mut feats = std::collections::BTreeMap::new();
    for class in stream.steps[step - 1].classes.clone() {
        let src = &stream.steps[step - 1].train;
        let rows = src.indices_of_class(class);
        let x = select_rows(src.samples(), &rows);
        let per_t = net.features_plain(&x)?;
        feats.insert(class, mean_tensors(&per_t));
    }
    memory.rebuild(0..seen, &feats)
}

/// One incremental step end-to-end: expand/train/fine-tune/remember/score.
pub fn run_step(
    handle: &mut RunHandle,
    stream: &TaskStream,
    step: usize,
    cfg: &ExperimentConfig,
    variant: TrainingVariant,
    observer: &mut Option<StageObserver<'_>>,
) -> Result<StepMetrics> {
    if step != handle.steps_completed + 1 {
        return Err(Error::Usage(format!(
            "step {step} out of order; {} steps completed",
            handle.steps_completed
        )));
    }
    if step > stream.steps.len() {
        return Err(Error::Usage(format!(
            "stream has only {} steps",
            stream.steps.len()
        )));
    }
    let net = &mut handle.net;
    let memory = &mut handle.memory;
    let s0 = &stream.steps[step - 1];
    let new_classes = s0.classes.clone();
    let seen = s0.classes.end;
    let input_dim = s0.train.dim();
    let oracle = variant == TrainingVariant::Oracle;
    let all_seen_data = matches!(variant, TrainingVariant::AllData | TrainingVariant::Oracle);

    // ---------- representation stage ----------
    let mut teacher = None;
    let old_feat = net.feature_dim();
    let old_classes = net.classes;
    if step >= 2 {
        if oracle {
            net.expand_classes_only(new_classes.len(), step)?;
            for id in net.newest_extractor_params() {
                net.store.set_frozen(id, false);
            }
            if let Some(flag) = net.frozen.last_mut() {
                *flag = false;
            }
        } else {
            if cfg.toggle_kd {
                teacher = Some(Teacher {
                    weight: net.store.get(net.head.weight).value.clone(),
                    bias: net.store.get(net.head.bias).value.clone(),
                    old_classes,
                });
            }
            net.expand(&cfg.extractor_spec(input_dim), new_classes.len())?;
            match variant {
                TrainingVariant::PersistentMask {
                    zero_old_to_new,
                    zero_new_to_old,
                } => {
                    net.apply_cross_masks(zero_old_to_new, zero_new_to_old, old_feat, old_classes)?
                }
                _ if cfg.toggle_oton => net.apply_oton_mask(old_feat, old_classes)?,
                _ => {}
            }
        }
        notify(observer, step, StageEvent::Expanded, net, memory);
    }

    let train_data = if all_seen_data {
        union_train(stream, step)?
    } else {
        let mut d = s0.train.clone();
        if let Some(mem) = memory.materialize(stream)? {
            d = d.merge(&mem)?;
        }
        d
    };
    let use_aux = cfg.toggle_aux && step >= 2 && !oracle;
    train_representation(
        net,
        &train_data,
        step,
        &new_classes,
        teacher.as_ref(),
        use_aux,
        cfg,
    )?;

    // Classifier stage trains the head alone; the newest extractor joins
    // the frozen bank for good (the next step's expansion would freeze it
    // anyway, and marking it here keeps the reported frozen set honest).
    for id in net.newest_extractor_params() {
        net.store.set_frozen(id, true);
    }
    if let Some(flag) = net.frozen.last_mut() {
        *flag = true;
    }
    if let Some(aux) = &net.aux_head {
        net.store.set_frozen(aux.weight, true);
        net.store.set_frozen(aux.bias, true);
    }
    notify(observer, step, StageEvent::RepresentationDone, net, memory);

    // ---------- classifier stage ----------
    if net.head_mask_active() && !matches!(variant, TrainingVariant::PersistentMask { .. }) {
        net.release_oton();
    }
    let per_class = if cfg.align_per_class > 0 {
        cfg.align_per_class
    } else if cfg.memory_per_class > 0 {
        cfg.memory_per_class
    } else {
        (cfg.memory_budget / seen).max(1)
    };
    let mut brng = stream_rng(cfg.seed_master, "balanced", step as u64);
    let balanced = balanced_subset(&train_data, 0..seen, per_class, &mut brng)?;
    handle.last_controller =
        train_classifier(net, &balanced, step, &new_classes, cfg, &mut handle.trace)?;
    notify(observer, step, StageEvent::ClassifierDone, net, memory);

    // ---------- memory rebuild ----------
    if !all_seen_data {
        rebuild_memory_for(net, stream, step, memory)?;
    }

    // ---------- evaluation ----------
    let (overall, per_task, per_class_acc) = evaluate(net, stream, step)?;
    let logit_stats = logit_statistics(net, stream, step)?;
    let old_new_gap = if step >= 2 {
        (mean(&per_task[..step - 1]) - per_task[step - 1]).abs()
    } else {
        0.0
    };
    let metrics = StepMetrics {
        step,
        seen_classes: seen,
        overall_acc: overall,
        per_task_acc: per_task,
        per_class_acc,
        old_new_gap,
        logit_stats,
    };
    log::info!(
        "step {step}: {seen} classes seen, overall {:.3}%, old/new gap {:.3}%",
        metrics.overall_acc,
        metrics.old_new_gap
    );
    handle.steps.push(metrics.clone());
    handle.steps_completed = step;
    notify(observer, step, StageEvent::StepDone, net, memory);
    Ok(metrics)
}

/// Run the remaining steps of `handle`, invoking `on_step` after each
/// completed step (checkpointing hook).
pub fn continue_run(
    handle: &mut RunHandle,
    stream: &TaskStream,
    cfg: &ExperimentConfig,
    variant: TrainingVariant,
    mut observer: Option<StageObserver<'_>>,
    on_step: &mut dyn FnMut(&RunHandle) -> Result<()>,
) -> Result<MetricsRecord> {
    for step in handle.steps_completed + 1..=stream.steps.len() {
        run_step(handle, stream, step, cfg, variant, &mut observer)?;
        on_step(handle)?;
    }
    Ok(MetricsRecord::from_steps(
        handle.steps.clone(),
        handle.trace.clone(),
    ))
}

/// Full experiment from scratch.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    variant: TrainingVariant,
    observer: Option<StageObserver<'_>>,
) -> Result<MetricsRecord> {
    cfg.validate()?;
    let stream = build_stream(cfg)?;
    let mut handle = init_run(cfg, &stream)?;
    continue_run(&mut handle, &stream, cfg, variant, observer, &mut |_| Ok(()))
}

/// One row of the comparative analysis grid.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub avg: f64,
    pub last: f64,
    /// Max−min per-task ground-truth logit mean at the final step.
    pub final_logit_spread: f64,
    pub final_old_new_gap: f64,
}

/// The analysis grid: how does the expandable recipe behave against the
/// ideal single-extractor learner, full-data training, and with either
/// cross head block pinned to zero? The correction controller and the
/// suppression toggle are forced off for every arm — the grid studies the
/// base framework the correction was designed to fix.
pub fn run_comparative(cfg: &ExperimentConfig) -> Result<Vec<VariantResult>> {
    let mut base = cfg.clone();
    base.toggle_alignment = false;
    base.toggle_oton = false;
    let arms: [(&str, TrainingVariant); 5] = [
        ("oracle", TrainingVariant::Oracle),
        ("all-data", TrainingVariant::AllData),
        ("standard", TrainingVariant::Standard),
        (
            "no-oton",
            TrainingVariant::PersistentMask {
                zero_old_to_new: true,
                zero_new_to_old: false,
            },
        ),
        (
            "no-nton",
            TrainingVariant::PersistentMask {
                zero_old_to_new: false,
                zero_new_to_old: true,
            },
        ),
    ];
    let mut out = Vec::with_capacity(arms.len());
    for (name, variant) in arms {
        let rec = run_experiment(&base, variant, None)?;
        out.push(VariantResult {
            name: name.to_string(),
            avg: rec.avg_incremental,
            last: rec.last,
            final_logit_spread: rec.final_logit_mean_spread(),
            final_old_new_gap: rec.final_old_new_gap(),
        });
    }
    Ok(out)
}
