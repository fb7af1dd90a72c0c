//! Class-incremental orchestration state: task streams, the expandable
//! network, cross-block weight suppression, and the herding exemplar memory.
//!
//! The network grows one extractor per incremental step. Old extractors are
//! frozen forever; the readout head is rebuilt to cover the widened feature
//! vector and the enlarged class set, copying the old weight block so past
//! logits are preserved at the moment of expansion. While representation
//! learning runs, the head block mapping *old* features to *new* classes can
//! be pinned to zero (suppression mask) so the fresh extractor cannot lean on
//! frozen features; the pin is released for classifier fine-tuning.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::rng::stream_rng;
use crate::snn::{ClassifierHead, Extractor, ExtractorSpec, LifConfig};
use crate::tensor::{concat_cols, Tensor};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::ops::Range;

/// One incremental step: the contiguous class-id range it introduces plus
/// its train/test partitions (labels already remapped to stream order).
#[derive(Clone, Debug)]
pub struct TaskStep {
    pub classes: Range<usize>,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Ordered disjoint class groups presented one step at a time.
#[derive(Clone, Debug)]
pub struct TaskStream {
    pub steps: Vec<TaskStep>,
    /// `original_class[new_id]` = label in the source dataset.
    pub original_class: Vec<usize>,
    pub order_seed: u64,
}

impl TaskStream {
    /// Number of classes seen once `step` (1-based) has completed.
    pub fn seen_classes(&self, step: usize) -> usize {
        self.steps[step - 1].classes.end
    }

    pub fn total_classes(&self) -> usize {
        self.steps.last().map_or(0, |s| s.classes.end)
    }

    /// Index of the step (0-based) that introduces `class`.
    pub fn step_of_class(&self, class: usize) -> Option<usize> {
        self.steps.iter().position(|s| s.classes.contains(&class))
    }
}

/// The growing model: extractor bank, frozen flags, unified head, and the
/// per-step auxiliary head (discarded after each step).
pub struct ExpandableNetwork {
    pub store: ParamStore,
    pub extractors: Vec<Extractor>,
    /// Permanently frozen extractors (everything but the newest during
    /// representation learning).
    pub frozen: Vec<bool>,
    pub head: ClassifierHead,
    pub aux_head: Option<ClassifierHead>,
    pub classes: usize,
    pub master_seed: u64,
}

impl ExpandableNetwork {
    /// Step-1 network: one extractor, head over its features.
    pub fn new(spec: &ExtractorSpec, n_classes: usize, master_seed: u64) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Usage("network needs at least one class".into()));
        }
        let mut store = ParamStore::new();
        let mut erng = stream_rng(master_seed, "init.extractor", 1);
        let ext = Extractor::init(&mut store, spec.clone(), "ext1", &mut erng);
        let feat = ext.feature_dim();
        let mut hrng = stream_rng(master_seed, "init.head", 1);
        let head = ClassifierHead::init(&mut store, n_classes, feat, "head1", &mut hrng);
        Ok(Self {
            store,
            extractors: vec![ext],
            frozen: vec![false],
            head,
            aux_head: None,
            classes: n_classes,
            master_seed,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.extractors.iter().map(|e| e.feature_dim()).sum()
    }

    pub fn t_steps(&self) -> usize {
        self.extractors[0].spec.t_steps
    }

    pub fn lif(&self) -> LifConfig {
        self.extractors[0].spec.lif
    }

    /// Incremental step s ≥ 2: freeze everything, append a fresh extractor,
    /// rebuild the head (old block copied), create the auxiliary head with
    /// `n_new + 1` outputs (class 0 stands for "any old class").
    pub fn expand(&mut self, spec: &ExtractorSpec, n_new: usize) -> Result<()> {
        if n_new == 0 {
            return Err(Error::Usage("expansion needs at least one new class".into()));
        }
        let step = self.extractors.len() + 1;
        for i in 0..self.extractors.len() {
            for id in self.extractors[i].param_ids() {
                self.store.set_frozen(id, true);
            }
            self.frozen[i] = true;
        }
        // The outgoing head stays in the store as the distillation teacher.
        self.store.set_frozen(self.head.weight, true);
        self.store.set_frozen(self.head.bias, true);
        if let Some(aux) = &self.aux_head {
            self.store.set_frozen(aux.weight, true);
            self.store.set_frozen(aux.bias, true);
        }

        let old_feat = self.feature_dim();
        let old_classes = self.classes;
        let mut erng = stream_rng(self.master_seed, "init.extractor", step as u64);
        let ext = Extractor::init(&mut self.store, spec.clone(), &format!("ext{step}"), &mut erng);
        let new_feat = ext.feature_dim();
        self.extractors.push(ext);
        self.frozen.push(false);

        let mut hrng = stream_rng(self.master_seed, "init.head", step as u64);
        let new_head = ClassifierHead::init(
            &mut self.store,
            old_classes + n_new,
            old_feat + new_feat,
            &format!("head{step}"),
            &mut hrng,
        );
        let old_w = self.store.get(self.head.weight).value.clone();
        let old_b = self.store.get(self.head.bias).value.clone();
        {
            let w = &mut self.store.get_mut(new_head.weight).value;
            for c in 0..old_classes {
                for f in 0..old_feat {
                    w.set2(c, f, old_w.get2(c, f));
                }
            }
        }
        self.store.get_mut(new_head.bias).value.data_mut()[..old_classes]
            .copy_from_slice(old_b.data());
        self.head = new_head;

        let mut arng = stream_rng(self.master_seed, "init.aux", step as u64);
        self.aux_head = Some(ClassifierHead::init(
            &mut self.store,
            n_new + 1,
            new_feat,
            &format!("aux{step}"),
            &mut arng,
        ));
        self.classes = old_classes + n_new;
        Ok(())
    }

    /// Grow the head to cover `n_new` extra classes without touching the
    /// extractor stack (the single-extractor reference learner). The old
    /// weight block is copied; nothing is frozen and no auxiliary head is
    /// created. `step` keys the init stream so every rebuild draws fresh
    /// weights.
    pub fn expand_classes_only(&mut self, n_new: usize, step: usize) -> Result<()> {
        if n_new == 0 {
            return Err(Error::Usage("expansion needs at least one new class".into()));
        }
        let feat = self.feature_dim();
        let old_classes = self.classes;
        let mut hrng = stream_rng(self.master_seed, "init.head", step as u64);
        let new_head = ClassifierHead::init(
            &mut self.store,
            old_classes + n_new,
            feat,
            &format!("head{step}"),
            &mut hrng,
        );
        let old_w = self.store.get(self.head.weight).value.clone();
        let old_b = self.store.get(self.head.bias).value.clone();
        {
            let w = &mut self.store.get_mut(new_head.weight).value;
            for c in 0..old_classes {
                for f in 0..feat {
                    w.set2(c, f, old_w.get2(c, f));
                }
            }
        }
        self.store.get_mut(new_head.bias).value.data_mut()[..old_classes]
            .copy_from_slice(old_b.data());
        self.head = new_head;
        self.classes = old_classes + n_new;
        Ok(())
    }

    /// Pin head blocks to zero: `old→new` zeroes rows [old_classes, C) at
    /// columns [0, old_feat); `new→old` zeroes rows [0, old_classes) at
    /// columns [old_feat, F). Masked entries receive no gradient and are
    /// re-zeroed after every optimizer step.
    pub fn apply_cross_masks(
        &mut self,
        zero_old_to_new: bool,
        zero_new_to_old: bool,
        old_feat: usize,
        old_classes: usize,
    ) -> Result<()> {
        let (c, f) = (self.head.classes, self.head.feat_dim);
        if old_feat > f || old_classes > c {
            return Err(Error::Usage(format!(
                "mask geometry {old_classes}x{old_feat} exceeds head {c}x{f}"
            )));
        }
        let mut mask = Tensor::full(&[c, f], 1.0);
        if zero_old_to_new {
            for row in old_classes..c {
                for col in 0..old_feat {
                    mask.set2(row, col, 0.0);
                }
            }
        }
        if zero_new_to_old {
            for row in 0..old_classes {
                for col in old_feat..f {
                    mask.set2(row, col, 0.0);
                }
            }
        }
        self.store.set_mask(self.head.weight, Some(mask))
    }

    /// Suppress old-features→new-classes weights (the representation-stage
    /// constraint).
    pub fn apply_oton_mask(&mut self, old_feat: usize, old_classes: usize) -> Result<()> {
        self.apply_cross_masks(true, false, old_feat, old_classes)
    }

    /// Remove the suppression mask; pinned entries stay at their current
    /// value (zero) but become trainable.
    pub fn release_oton(&mut self) {
        self.store
            .set_mask(self.head.weight, None)
            .expect("clearing a mask cannot fail");
    }

    pub fn head_mask_active(&self) -> bool {
        self.store.get(self.head.weight).mask.is_some()
    }

    /// Concatenated per-time-step features of every extractor (no tape).
    pub fn features_plain(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let per_ext: Vec<Vec<Tensor>> = self
            .extractors
            .iter()
            .map(|e| e.forward_plain(&self.store, x))
            .collect::<Result<_>>()?;
        let t_steps = self.t_steps();
        let mut out = Vec::with_capacity(t_steps);
        for t in 0..t_steps {
            let parts: Vec<&Tensor> = per_ext.iter().map(|f| &f[t]).collect();
            out.push(concat_cols(&parts)?);
        }
        Ok(out)
    }

    /// Per-time-step logits (no tape, no correction term).
    pub fn logits_plain(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.features_plain(x)?
            .iter()
            .map(|f| self.head.logits_plain(&self.store, f))
            .collect()
    }

    /// Every parameter of every extractor currently marked frozen.
    pub fn frozen_extractor_params(&self) -> Vec<ParamId> {
        self.extractors
            .iter()
            .zip(&self.frozen)
            .filter(|(_, &fr)| fr)
            .flat_map(|(e, _)| e.param_ids())
            .collect()
    }

    pub fn frozen_fingerprint(&self) -> u64 {
        self.store.fingerprint(&self.frozen_extractor_params())
    }

    /// Parameters of the newest (trainable during representation) extractor.
    pub fn newest_extractor_params(&self) -> Vec<ParamId> {
        self.extractors.last().expect("nonempty").param_ids()
    }
}

/// Greedy mean-matching selection: each round picks the unselected sample
/// whose inclusion brings the running mean closest (L2) to the class mean.
/// Ties break toward the lowest index. Returns indices in selection order.
pub fn herding_select(features: &Tensor, m: usize) -> Result<Vec<usize>> {
    if features.rank() != 2 {
        return Err(Error::Dimension(format!(
            "herding expects [N,F] features, got {:?}",
            features.shape()
        )));
    }
    let n = features.rows();
    let f = features.cols();
    if m > n {
        return Err(Error::Usage(format!(
            "cannot select {m} exemplars from {n} samples"
        )));
    }
    let mut mu = vec![0.0; f];
    for i in 0..n {
        for (j, v) in features.row(i).iter().enumerate() {
            mu[j] += v;
        }
    }
    for v in &mut mu {
        *v /= n as f64;
    }
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut sum = vec![0.0; f];
    for round in 1..=m {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let row = features.row(i);
            let mut dist = 0.0;
            for j in 0..f {
                let avg = (sum[j] + row[j]) / round as f64;
                let d = mu[j] - avg;
                dist += d * d;
            }
            // Strict < keeps the lowest index on exact ties.
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, i));
            }
        }
        let (_, pick) = best.expect("m <= n guarantees a candidate");
        taken[pick] = true;
        for (j, v) in features.row(pick).iter().enumerate() {
            sum[j] += v;
        }
        selected.push(pick);
    }
    Ok(selected)
}

/// Fixed-budget rehearsal store. Exemplars are row indices into the train
/// partition of the step that introduced their class.
#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarMemory {
    pub budget: usize,
    /// When set, every class keeps exactly this many exemplars instead of an
    /// equal split of `budget`.
    pub per_class: Option<usize>,
    pub store: BTreeMap<usize, Vec<usize>>,
}

impl ExemplarMemory {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            per_class: None,
            store: BTreeMap::new(),
        }
    }

    pub fn with_per_class(budget: usize, per_class: usize) -> Self {
        Self {
            budget,
            per_class: Some(per_class),
            store: BTreeMap::new(),
        }
    }

    pub fn total_stored(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    /// Target exemplar count per class when `seen` classes exist: an equal
    /// split of the budget, with the first `budget mod seen` classes taking
    /// one extra.
    pub fn quotas(&self, seen: usize) -> Vec<usize> {
        if let Some(pc) = self.per_class {
            return vec![pc; seen];
        }
        let q = self.budget / seen;
        let rem = self.budget % seen;
        (0..seen).map(|i| q + usize::from(i < rem)).collect()
    }

    /// Shrink existing classes to their new quota (herding order keeps the
    /// first-selected exemplars) and fill new classes by herding on their
    /// rate features.
    pub fn rebuild(
        &mut self,
        seen_classes: Range<usize>,
        features_by_class: &BTreeMap<usize, Tensor>,
    ) -> Result<()> {
        let quotas = self.quotas(seen_classes.len());
        for (idx, class) in seen_classes.clone().enumerate() {
            let quota = quotas[idx];
            if let Some(existing) = self.store.get_mut(&class) {
                existing.truncate(quota);
            } else {
                let feats = features_by_class.get(&class).ok_or_else(|| {
                    Error::Usage(format!("no herding features for new class {class}"))
                })?;
                let m = quota.min(feats.rows());
                self.store.insert(class, herding_select(feats, m)?);
            }
        }
        self.store.retain(|c, _| seen_classes.contains(c));
        Ok(())
    }

    /// Stored exemplars as a dataset, classes ascending, herding order within
    /// each class. `None` when empty.
    pub fn materialize(&self, stream: &TaskStream) -> Result<Option<LabeledDataset>> {
        let mut out: Option<LabeledDataset> = None;
        for (&class, rows) in &self.store {
            if rows.is_empty() {
                continue;
            }
            let step = stream
                .step_of_class(class)
                .ok_or_else(|| Error::Usage(format!("class {class} not in stream")))?;
            let source = &stream.steps[step].train;
            let class_rows = source.indices_of_class(class);
            let picked: Vec<usize> = rows.iter().map(|&r| class_rows[r]).collect();
            let part = source.subset(&picked);
            out = Some(match out {
                None => part,
                Some(acc) => acc.merge(&part)?,
            });
        }
        Ok(out)
    }
}

/// Uniform per-class downsample to `min(per_class, available)`, seeded.
/// Selected row indices are sorted within each class; classes ascend.
pub fn balanced_subset(
    ds: &LabeledDataset,
    classes: Range<usize>,
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledDataset> {
    use rand::Rng;
    let mut keep = Vec::new();
    for class in classes {
        let mut idx = ds.indices_of_class(class);
        if idx.is_empty() {
            return Err(Error::Data(format!(
                "class {class} has no samples to balance from"
            )));
        }
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        idx.truncate(per_class.min(idx.len()));
        idx.sort_unstable();
        keep.extend(idx);
    }
    Ok(ds.subset(&keep))
}
