//! Binary run checkpoints written at step boundaries.
//!
//! A checkpoint captures everything the next step needs: the expandable
//! network's parameters, the rehearsal memory, the latest controller state,
//! the master seed (every random stream re-derives from it), and the
//! metrics recorded so far. Momentum buffers are deliberately absent — both
//! stages reset them on entry — and the auxiliary head is stage-local
//! scaffolding that the next expansion replaces, so it is not persisted.
//! Resuming from a checkpoint replays the remaining steps bit-exactly.
//!
//! Byte layout, all integers and doubles little-endian:
//!
//! ```text
//! magic               8 bytes  "SNNCILCK"
//! version             u32      currently 1
//! config_fingerprint  u64      fingerprint of the canonical config text
//! master_seed         u64
//! steps_completed     u32
//! classes             u32
//! extractor_count     u32
//! per extractor:
//!   input_dim u32, t_steps u32, tau f64, v_th f64, sg_width f64,
//!   layer_count u32, widths u32 × layer_count, frozen u8,
//!   then per layer: weight f64 × (width · fan_in), bias f64 × width
//! head: classes u32, feat_dim u32,
//!   weight f64 × (classes · feat_dim), bias f64 × classes,
//!   mask_flag u8 — when 1, a row-major bitmap of ceil(classes·feat_dim/8)
//!   bytes follows (bit set = entry trainable)
//! controller_flag u8 — when 1: gamma, delta_prev, delta_var, delta_start,
//!   alpha, beta (f64 × 6), epoch u64
//! memory: budget u64, per_class_flag u8 (+ per_class u64),
//!   class_count u32, then per class: class u32, exemplar_count u32,
//!   indices u32 × exemplar_count (positions in the introducing step's
//!   per-class row list, herding order)
//! step records:      u64 length + that many bytes of UTF-8 JSON
//! controller trace:  u64 length + that many bytes of UTF-8 JSON
//! ```
//!
//! The two JSON blobs use shortest-round-trip number formatting, so the
//! restored metrics compare bit-equal to the originals. Any truncation,
//! bad magic, unknown version, or trailing bytes is a format error.

use crate::align::AlignmentState;
use crate::cil::{ExemplarMemory, ExpandableNetwork};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{ControllerRow, StepMetrics};
use crate::param::ParamStore;
use crate::snn::{ClassifierHead, Extractor, ExtractorSpec, LifConfig};
use crate::tensor::Tensor;
use crate::train::RunHandle;
use std::collections::BTreeMap;
use std::path::Path;

pub const MAGIC: [u8; 8] = *b"SNNCILCK";
pub const VERSION: u32 = 1;

/// Everything restored from a checkpoint file.
pub struct Checkpoint {
    pub config_fingerprint: u64,
    pub master_seed: u64,
    pub steps_completed: usize,
    pub net: ExpandableNetwork,
    pub memory: ExemplarMemory,
    pub last_controller: Option<AlignmentState>,
    pub steps: Vec<StepMetrics>,
    pub trace: Vec<ControllerRow>,
}

impl Checkpoint {
    /// Refuse to resume under a different configuration.
    pub fn require_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        let fp = cfg.fingerprint();
        if fp != self.config_fingerprint {
            return Err(Error::Format(format!(
                "checkpoint was written under config {:016x}, current is {fp:016x}",
                self.config_fingerprint
            )));
        }
        if cfg.seed_master != self.master_seed {
            return Err(Error::Format(format!(
                "checkpoint seed {} differs from configured seed {}",
                self.master_seed, cfg.seed_master
            )));
        }
        Ok(())
    }

    pub fn into_handle(self) -> RunHandle {
        RunHandle {
            net: self.net,
            memory: self.memory,
            steps: self.steps,
            trace: self.trace,
            steps_completed: self.steps_completed,
            last_controller: self.last_controller,
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn json_blob<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| Error::Format(format!("encoding checkpoint JSON: {e}")))
}

/// Serialize a step-boundary state to `path`.
pub fn save(handle: &RunHandle, config_fingerprint: u64, path: &Path) -> Result<()> {
    let net = &handle.net;
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.u64(config_fingerprint);
    w.u64(net.master_seed);
    w.u32(handle.steps_completed as u32);
    w.u32(net.classes as u32);

    w.u32(net.extractors.len() as u32);
    for (ext, &frozen) in net.extractors.iter().zip(&net.frozen) {
        let spec = &ext.spec;
        w.u32(spec.input_dim as u32);
        w.u32(spec.t_steps as u32);
        w.f64(spec.lif.tau);
        w.f64(spec.lif.v_th);
        w.f64(spec.lif.sg_width);
        w.u32(spec.layer_widths.len() as u32);
        for &width in &spec.layer_widths {
            w.u32(width as u32);
        }
        w.u8(u8::from(frozen));
        for (&wid, &bid) in ext.weights.iter().zip(&ext.biases) {
            w.f64s(net.store.get(wid).value.data());
            w.f64s(net.store.get(bid).value.data());
        }
    }

    w.u32(net.head.classes as u32);
    w.u32(net.head.feat_dim as u32);
    let head_w = net.store.get(net.head.weight);
    w.f64s(head_w.value.data());
    w.f64s(net.store.get(net.head.bias).value.data());
    match &head_w.mask {
        Some(mask) => {
            w.u8(1);
            let bits = mask.data();
            let mut byte = 0u8;
            for (i, &m) in bits.iter().enumerate() {
                if m != 0.0 {
                    byte |= 1 << (i % 8);
                }
                if i % 8 == 7 {
                    w.u8(byte);
                    byte = 0;
                }
            }
            if bits.len() % 8 != 0 {
                w.u8(byte);
            }
        }
        None => w.u8(0),
    }

    match &handle.last_controller {
        Some(st) => {
            w.u8(1);
            w.f64(st.gamma);
            w.f64(st.delta_prev);
            w.f64(st.delta_var);
            w.f64(st.delta_start);
            w.f64(st.alpha);
            w.f64(st.beta);
            w.u64(st.epoch);
        }
        None => w.u8(0),
    }

    let mem = &handle.memory;
    w.u64(mem.budget as u64);
    match mem.per_class {
        Some(pc) => {
            w.u8(1);
            w.u64(pc as u64);
        }
        None => w.u8(0),
    }
    w.u32(mem.store.len() as u32);
    for (&class, rows) in &mem.store {
        w.u32(class as u32);
        w.u32(rows.len() as u32);
        for &r in rows {
            w.u32(r as u32);
        }
    }

    for blob in [json_blob(&handle.steps)?, json_blob(&handle.trace)?] {
        w.u64(blob.len() as u64);
        w.buf.extend_from_slice(&blob);
    }

    std::fs::write(path, &w.buf)?;
    Ok(())
}

/// Read a checkpoint back. Fails with a format error on bad magic, an
/// unknown version, truncation, or trailing bytes.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let raw = std::fs::read(path)?;
    let mut r = Reader { buf: &raw, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config_fingerprint = r.u64()?;
    let master_seed = r.u64()?;
    let steps_completed = r.u32()? as usize;
    let classes = r.u32()? as usize;

    let mut store = ParamStore::new();
    let ext_count = r.u32()? as usize;
    if ext_count == 0 {
        return Err(Error::Format("checkpoint has no extractors".into()));
    }
    let mut extractors = Vec::with_capacity(ext_count);
    let mut frozen = Vec::with_capacity(ext_count);
    for e in 0..ext_count {
        let input_dim = r.u32()? as usize;
        let t_steps = r.u32()? as usize;
        let lif = LifConfig {
            tau: r.f64()?,
            v_th: r.f64()?,
            sg_width: r.f64()?,
        };
        let layer_count = r.u32()? as usize;
        if layer_count == 0 {
            return Err(Error::Format(format!("extractor {e} has no layers")));
        }
        let mut layer_widths = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            layer_widths.push(r.u32()? as usize);
        }
        frozen.push(r.u8()? != 0);
        let spec = ExtractorSpec {
            input_dim,
            layer_widths: layer_widths.clone(),
            lif,
            t_steps,
        };
        let mut weights = Vec::with_capacity(layer_count);
        let mut biases = Vec::with_capacity(layer_count);
        let mut fan_in = input_dim;
        for (l, &width) in layer_widths.iter().enumerate() {
            let wdata = r.f64s(width * fan_in)?;
            let bdata = r.f64s(width)?;
            let wt = Tensor::new(vec![width, fan_in], wdata)?;
            let bt = Tensor::new(vec![width], bdata)?;
            weights.push(store.add(format!("ext{}.l{l}.w", e + 1), wt));
            biases.push(store.add(format!("ext{}.l{l}.b", e + 1), bt));
            fan_in = width;
        }
        extractors.push(Extractor {
            spec,
            weights,
            biases,
        });
    }
    // Step-boundary state: every extractor parameter is frozen (the
    // classifier stage froze the newest); the head alone is trainable.
    for ext in &extractors {
        for id in ext.param_ids() {
            store.set_frozen(id, true);
        }
    }

    let head_classes = r.u32()? as usize;
    let head_feat = r.u32()? as usize;
    if head_classes != classes {
        return Err(Error::Format(format!(
            "head covers {head_classes} classes but header says {classes}"
        )));
    }
    let feat_total: usize = extractors.iter().map(Extractor::feature_dim).sum();
    if head_feat != feat_total {
        return Err(Error::Format(format!(
            "head expects {head_feat} features but extractors provide {feat_total}"
        )));
    }
    let wdata = r.f64s(head_classes * head_feat)?;
    let bdata = r.f64s(head_classes)?;
    let weight = store.add(
        "head.w",
        Tensor::new(vec![head_classes, head_feat], wdata)?,
    );
    let bias = store.add("head.b", Tensor::new(vec![head_classes], bdata)?);
    if r.u8()? != 0 {
        let n = head_classes * head_feat;
        let bitmap = r.take(n.div_ceil(8))?;
        let mut mask = Tensor::zeros(&[head_classes, head_feat]);
        for i in 0..n {
            if bitmap[i / 8] & (1 << (i % 8)) != 0 {
                mask.data_mut()[i] = 1.0;
            }
        }
        store.set_mask(weight, Some(mask))?;
    }
    let head = ClassifierHead {
        weight,
        bias,
        classes: head_classes,
        feat_dim: head_feat,
    };

    let last_controller = if r.u8()? != 0 {
        Some(AlignmentState {
            gamma: r.f64()?,
            delta_prev: r.f64()?,
            delta_var: r.f64()?,
            delta_start: r.f64()?,
            alpha: r.f64()?,
            beta: r.f64()?,
            epoch: r.u64()?,
        })
    } else {
        None
    };

    let budget = r.u64()? as usize;
    let per_class = if r.u8()? != 0 {
        Some(r.u64()? as usize)
    } else {
        None
    };
    let mut mem_store = BTreeMap::new();
    let class_count = r.u32()? as usize;
    for _ in 0..class_count {
        let class = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            rows.push(r.u32()? as usize);
        }
        mem_store.insert(class, rows);
    }
    let memory = ExemplarMemory {
        budget,
        per_class,
        store: mem_store,
    };

    let steps_len = r.u64()? as usize;
    let steps: Vec<StepMetrics> = serde_json::from_slice(r.take(steps_len)?)
        .map_err(|e| Error::Format(format!("checkpoint step records: {e}")))?;
    let trace_len = r.u64()? as usize;
    let trace: Vec<ControllerRow> = serde_json::from_slice(r.take(trace_len)?)
        .map_err(|e| Error::Format(format!("checkpoint controller trace: {e}")))?;
    if r.pos != raw.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            raw.len() - r.pos
        )));
    }
    if steps.len() != steps_completed {
        return Err(Error::Format(format!(
            "checkpoint claims {steps_completed} steps but carries {} records",
            steps.len()
        )));
    }

    let net = ExpandableNetwork {
        store,
        extractors,
        frozen,
        head,
        aux_head: None,
        classes,
        master_seed,
    };
    Ok(Checkpoint {
        config_fingerprint,
        master_seed,
        steps_completed,
        net,
        memory,
        last_controller,
        steps,
        trace,
    })
}
