//! Training objectives.
//!
//! Representation stage (per batch): temporal classification loss over the
//! per-step logits, the auxiliary head's old-vs-new loss, and distillation
//! against the previous head. Classifier stage: cross-entropy on the
//! time-averaged logits with the alignment correction added to new-class
//! logits — the correction exists *only* inside that loss; the regularizer
//! and inference never see it.

use crate::error::{Error, Result};
use crate::tape::{softmax_rows, Tape, Var};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight λ of the MSE regularizer inside the temporal loss.
    pub lambda_tet: f64,
    /// Constant target φ the regularizer pulls per-step logits toward.
    pub phi: f64,
    pub kd_temperature: f64,
    pub kd_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_tet: 0.05,
            phi: 1.0,
            kd_temperature: 2.0,
            kd_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_tet) {
            return Err(Error::Usage(format!(
                "lambda_tet {} outside [0,1]",
                self.lambda_tet
            )));
        }
        if self.kd_temperature <= 0.0 {
            return Err(Error::Usage("kd_temperature must be positive".into()));
        }
        if self.kd_weight < 0.0 {
            return Err(Error::Usage("kd_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// 0/1 vector over all seen classes marking the current step's classes.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionMask {
    values: Vec<f64>,
}

impl CorrectionMask {
    pub fn new(total_classes: usize, new_classes: Range<usize>) -> Result<Self> {
        if new_classes.end > total_classes {
            return Err(Error::Dimension(format!(
                "mask range {new_classes:?} exceeds {total_classes} classes"
            )));
        }
        let values = (0..total_classes)
            .map(|c| if new_classes.contains(&c) { 1.0 } else { 0.0 })
            .collect();
        Ok(Self { values })
    }

    pub fn all_ones(total_classes: usize) -> Self {
        Self {
            values: vec![1.0; total_classes],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        self.values.as_slice()
    }
}

/// `O = raw + gamma·mask` broadcast over the batch. With `gamma == 0` the
/// input var is returned untouched (bit-exact identity).
pub fn corrected_logits(
    tape: &mut Tape,
    raw: Var,
    gamma: f64,
    mask: &CorrectionMask,
) -> Result<Var> {
    let cols = tape.value(raw).cols();
    if cols != mask.len() {
        return Err(Error::Dimension(format!(
            "correction mask length {} vs {} logit columns",
            mask.len(),
            cols
        )));
    }
    if gamma == 0.0 {
        return Ok(raw);
    }
    let row = Tensor::vector(mask.values().iter().map(|&m| gamma * m).collect());
    let row_var = tape.leaf(row);
    tape.add_row(raw, row_var)
}

/// Mean-over-time cross-entropy plus λ·mean-over-time MSE against φ.
pub fn tet_loss(
    tape: &mut Tape,
    o_seq: &[Var],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<Var> {
    if o_seq.is_empty() {
        return Err(Error::Usage("temporal loss needs at least one step".into()));
    }
    let ce_terms: Vec<Var> = o_seq
        .iter()
        .map(|&o| tape.softmax_ce(o, labels))
        .collect::<Result<_>>()?;
    let ce = tape.mean_of(&ce_terms)?;
    if cfg.lambda_tet == 0.0 {
        return Ok(ce);
    }
    let mse_terms: Vec<Var> = o_seq.iter().map(|&o| tape.mse_scalar(o, cfg.phi)).collect();
    let mse = tape.mean_of(&mse_terms)?;
    let reg = tape.scale(mse, cfg.lambda_tet);
    tape.add(ce, reg)
}

/// Labels for the auxiliary head: any old class collapses to 0, the step's
/// own classes map to 1..=n in step order.
pub fn aux_labels(labels: &[usize], step_classes: &Range<usize>) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if l < step_classes.start {
                Ok(0)
            } else if step_classes.contains(&l) {
                Ok(l - step_classes.start + 1)
            } else {
                Err(Error::Label(format!(
                    "label {l} not seen by step covering {step_classes:?}"
                )))
            }
        })
        .collect()
}

/// Temporal loss of the auxiliary head on remapped old-vs-new labels.
pub fn aux_tet_loss(
    tape: &mut Tape,
    aux_logits_seq: &[Var],
    labels: &[usize],
    step_classes: &Range<usize>,
    cfg: &LossConfig,
) -> Result<Var> {
    let remapped = aux_labels(labels, step_classes)?;
    tet_loss(tape, aux_logits_seq, &remapped, cfg)
}

/// Softened distillation: KL(teacher ‖ student) on old-class logits, both
/// divided by the temperature, averaged over the batch and scaled by
/// temperature². The teacher is a constant; the result is 0 exactly when the
/// softened distributions coincide.
pub fn kd_loss(
    tape: &mut Tape,
    student_old_logits: Var,
    teacher_old_logits: &Tensor,
    cfg: &LossConfig,
) -> Result<Var> {
    let st = tape.value(student_old_logits);
    if !st.same_shape(teacher_old_logits) {
        return Err(Error::Dimension(format!(
            "distillation shapes differ: student {:?}, teacher {:?}",
            st.shape(),
            teacher_old_logits.shape()
        )));
    }
    if st.cols() == 0 || st.rank() != 2 {
        return Err(Error::Dimension("distillation needs [B,C>0] logits".into()));
    }
    let batch = st.rows() as f64;
    let temp = cfg.kd_temperature;
    let teacher_soft = softmax_rows(&teacher_old_logits.map(|v| v / temp));
    // Constant part of KL: (1/B)·Σ p·log p over the teacher.
    let mut teacher_entropy_term = 0.0;
    for &p in teacher_soft.data() {
        if p > 0.0 {
            teacher_entropy_term += p * p.ln();
        }
    }
    teacher_entropy_term /= batch;

    let scaled = tape.scale(student_old_logits, 1.0 / temp);
    let logp = tape.log_softmax(scaled)?;
    let teacher_var = tape.leaf(teacher_soft);
    let prod = tape.mul(teacher_var, logp)?;
    let total = tape.sum(prod, None)?;
    let cross = tape.scale(total, -1.0 / batch);
    let kl = tape.add_scalar(cross, teacher_entropy_term);
    Ok(tape.scale(kl, temp * temp))
}

/// Sum of the stage's parts: temporal loss + auxiliary + weighted
/// distillation. Absent parts contribute nothing (first step).
pub fn total_representation_loss(
    tape: &mut Tape,
    tet: Var,
    aux: Option<Var>,
    kd: Option<Var>,
    cfg: &LossConfig,
) -> Result<Var> {
    let mut total = tet;
    if let Some(a) = aux {
        total = tape.add(total, a)?;
    }
    if let Some(k) = kd {
        let weighted = if cfg.kd_weight == 1.0 {
            k
        } else {
            tape.scale(k, cfg.kd_weight)
        };
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}

/// What the classifier-stage objective hands back per batch.
pub struct RateCeOutput {
    pub loss: Var,
    /// Time-averaged logits with the correction applied — what the loss and
    /// the stage's own predictions see.
    pub corrected: Var,
    /// Time-averaged logits before the correction. The alignment statistics
    /// read these: the correction influences Δ only through the training it
    /// induces, never mechanically, so measured Δ → 0 means the deployable
    /// (uncorrected) outputs are balanced.
    pub raw_mean: Var,
}

/// Classifier-stage objective: cross-entropy on time-averaged logits with
/// the correction applied first.
pub fn rate_ce_loss(
    tape: &mut Tape,
    o_seq: &[Var],
    labels: &[usize],
    gamma: f64,
    mask: &CorrectionMask,
) -> Result<RateCeOutput> {
    if o_seq.is_empty() {
        return Err(Error::Usage("rate loss needs at least one step".into()));
    }
    let raw_mean = tape.mean_of(o_seq)?;
    let corrected = corrected_logits(tape, raw_mean, gamma, mask)?;
    let loss = tape.softmax_ce(corrected, labels)?;
    Ok(RateCeOutput {
        loss,
        corrected,
        raw_mean,
    })
}
