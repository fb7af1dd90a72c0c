//! Leaky integrate-and-fire dynamics, surrogate gradients, and spiking
//! feature extractors.
//!
//! Membrane update per time step:
//!
//! ```text
//! u_int  = tau * u + presyn
//! spike  = 1 if u_int >= v_th else 0      (spike exactly at threshold)
//! u_next = u_int * (1 - spike)            (multiplicative reset to zero)
//! ```
//!
//! The Heaviside spike has no useful derivative, so the backward pass
//! substitutes a triangular window around the threshold:
//! `sg(u) = max(0, width - |u - v_th|) / width^2`.
//!
//! Every forward exists in two flavors that are bit-identical by
//! construction: a taped one for training and a plain one for frozen
//! extractors and inference. Both run the same scalar expression chain in
//! the same order.

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::rng::uniform_tensor;
use crate::tape::{affine_kernel, Tape, Var};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Neuron constants shared by every spiking layer in a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifConfig {
    /// Membrane decay per step (Eq. `u_int = tau*u + presyn`).
    pub tau: f64,
    /// Firing threshold.
    pub v_th: f64,
    /// Half-width of the triangular surrogate window.
    pub sg_width: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            v_th: 1.0,
            sg_width: 1.0,
        }
    }
}

/// Triangular surrogate derivative of the spike w.r.t. membrane potential.
pub fn surrogate_grad(u: f64, cfg: LifConfig) -> f64 {
    let w = cfg.sg_width;
    (w - (u - cfg.v_th).abs()).max(0.0) / (w * w)
}

/// One LIF update on plain tensors. Returns `(spike, u_next)`.
pub fn lif_step(u: &Tensor, presyn: &Tensor, cfg: LifConfig) -> Result<(Tensor, Tensor)> {
    if !u.same_shape(presyn) {
        return Err(Error::Dimension(format!(
            "lif_step: membrane {:?} vs presyn {:?}",
            u.shape(),
            presyn.shape()
        )));
    }
    let n = u.len();
    let mut spike = vec![0.0; n];
    let mut next = vec![0.0; n];
    for i in 0..n {
        // Same expression chain as the taped version: scale, add, threshold,
        // negate-plus-one, multiply.
        let t1 = cfg.tau * u.data()[i];
        let u_int = t1 + presyn.data()[i];
        let s = if u_int >= cfg.v_th { 1.0 } else { 0.0 };
        let r = (-1.0 * s) + 1.0;
        spike[i] = s;
        next[i] = u_int * r;
    }
    Ok((
        Tensor::new(u.shape().to_vec(), spike)?,
        Tensor::new(u.shape().to_vec(), next)?,
    ))
}

/// One LIF update on the tape. Returns `(spike, u_next)` vars.
pub fn lif_step_tape(
    tape: &mut Tape,
    u: Var,
    presyn: Var,
    cfg: LifConfig,
) -> Result<(Var, Var)> {
    let t1 = tape.scale(u, cfg.tau);
    let u_int = tape.add(t1, presyn)?;
    let v_th = cfg.v_th;
    let spike = tape.custom_grad(
        u_int,
        move |x| if x >= v_th { 1.0 } else { 0.0 },
        move |x| surrogate_grad(x, cfg),
    );
    let neg = tape.scale(spike, -1.0);
    let r = tape.add_scalar(neg, 1.0);
    let u_next = tape.mul(u_int, r)?;
    Ok((spike, u_next))
}

/// Direct encoding: the analog input is presented unchanged at every step.
pub fn encode_input(x: &Tensor, t_steps: usize) -> Vec<Tensor> {
    (0..t_steps).map(|_| x.clone()).collect()
}

/// Architecture of one spiking feature extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub input_dim: usize,
    /// Width of each spiking layer; the last entry is the feature width.
    pub layer_widths: Vec<usize>,
    pub lif: LifConfig,
    pub t_steps: usize,
}

impl ExtractorSpec {
    pub fn feature_dim(&self) -> usize {
        *self.layer_widths.last().expect("at least one layer")
    }
}

/// A stack of affine+LIF layers; its output is the last layer's spike train.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub spec: ExtractorSpec,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl Extractor {
    /// Fresh extractor with U(-1/sqrt(fan_in), ..) weights and zero biases.
    pub fn init(
        store: &mut ParamStore,
        spec: ExtractorSpec,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(!spec.layer_widths.is_empty(), "extractor needs layers");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut fan_in = spec.input_dim;
        for (l, &width) in spec.layer_widths.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = uniform_tensor(&[width, fan_in], bound, rng);
            weights.push(store.add(&format!("{prefix}.l{l}.w"), w));
            biases.push(store.add(&format!("{prefix}.l{l}.b"), Tensor::zeros(&[width])));
            fan_in = width;
        }
        Self {
            spec,
            weights,
            biases,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .copied()
            .collect()
    }

    /// Per-time-step spike outputs of the last layer, recorded on the tape.
    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Vec<Var>> {
        let batch = tape.value(x).rows();
        let w_vars: Vec<Var> = self.weights.iter().map(|&id| tape.param(store, id)).collect();
        let b_vars: Vec<Var> = self.biases.iter().map(|&id| tape.param(store, id)).collect();
        let mut membranes: Vec<Var> = self
            .spec
            .layer_widths
            .iter()
            .map(|&w| tape.leaf(Tensor::zeros(&[batch, w])))
            .collect();
        let mut out = Vec::with_capacity(self.spec.t_steps);
        for _ in 0..self.spec.t_steps {
            let mut inp = x;
            for l in 0..self.spec.layer_widths.len() {
                let presyn = tape.affine(inp, w_vars[l], b_vars[l])?;
                let (spike, u_next) = lif_step_tape(tape, membranes[l], presyn, self.spec.lif)?;
                membranes[l] = u_next;
                inp = spike;
            }
            out.push(inp);
        }
        Ok(out)
    }

    /// Plain (no-grad) twin of [`Extractor::forward_tape`]; bit-identical.
    pub fn forward_plain(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.rank() != 2 || x.cols() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "extractor input {:?}, expected [B,{}]",
                x.shape(),
                self.spec.input_dim
            )));
        }
        let batch = x.rows();
        let mut membranes: Vec<Tensor> = self
            .spec
            .layer_widths
            .iter()
            .map(|&w| Tensor::zeros(&[batch, w]))
            .collect();
        let mut out = Vec::with_capacity(self.spec.t_steps);
        for _ in 0..self.spec.t_steps {
            let mut inp = x.clone();
            for l in 0..self.spec.layer_widths.len() {
                let w = &store.get(self.weights[l]).value;
                let b = &store.get(self.biases[l]).value;
                let presyn = affine_kernel(&inp, w, b);
                let (spike, u_next) = lif_step(&membranes[l], &presyn, self.spec.lif)?;
                membranes[l] = u_next;
                inp = spike;
            }
            out.push(inp);
        }
        Ok(out)
    }
}

/// Linear readout mapping concatenated features to class logits.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub classes: usize,
    pub feat_dim: usize,
}

impl ClassifierHead {
    pub fn init(
        store: &mut ParamStore,
        classes: usize,
        feat_dim: usize,
        name: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (feat_dim as f64).sqrt();
        let w = uniform_tensor(&[classes, feat_dim], bound, rng);
        Self {
            weight: store.add(&format!("{name}.w"), w),
            bias: store.add(&format!("{name}.b"), Tensor::zeros(&[classes])),
            classes,
            feat_dim,
        }
    }

    pub fn logits_tape(&self, tape: &mut Tape, store: &ParamStore, feat: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.affine(feat, w, b)
    }

    pub fn logits_plain(&self, store: &ParamStore, feat: &Tensor) -> Result<Tensor> {
        let w = &store.get(self.weight).value;
        let b = &store.get(self.bias).value;
        if feat.rank() != 2 || feat.cols() != self.feat_dim {
            return Err(Error::Dimension(format!(
                "head expects [B,{}] features, got {:?}",
                self.feat_dim,
                feat.shape()
            )));
        }
        Ok(affine_kernel(feat, w, b))
    }
}

/// Argmax per row with lowest-index tie-break.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (rows, cols) = (logits.rows(), logits.cols());
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = logits.row(r);
        let mut best = 0;
        for c in 1..cols {
            if row[c] > row[best] {
                best = c;
            }
        }
        out.push(best);
    }
    out
}

/// Elementwise mean of a list of same-shaped tensors.
pub fn mean_tensors(parts: &[Tensor]) -> Tensor {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        for (d, &s) in acc.data_mut().iter_mut().zip(p.data()) {
            *d += s;
        }
    }
    if parts.len() > 1 {
        let inv = 1.0 / parts.len() as f64;
        for d in acc.data_mut() {
            *d *= inv;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn membrane_integrates_then_fires_on_third_step() {
        // tau=0.5, v_th=1, constant presyn 0.6:
        //   step 1: u_int 0.6  -> no spike, u 0.6
        //   step 2: u_int 0.9  -> no spike, u 0.9
        //   step 3: u_int 1.05 -> spike, u reset to 0
        let cfg = LifConfig::default();
        let presyn = Tensor::from_rows(&[vec![0.6]]).unwrap();
        let mut u = Tensor::zeros(&[1, 1]);
        let mut spikes = Vec::new();
        for _ in 0..3 {
            let (s, next) = lif_step(&u, &presyn, cfg).unwrap();
            spikes.push(s.data()[0]);
            u = next;
        }
        assert_eq!(spikes, vec![0.0, 0.0, 1.0]);
        assert_eq!(u.data()[0], 0.0);
    }

    #[test]
    fn spike_exactly_at_threshold() {
        let cfg = LifConfig::default();
        let u = Tensor::zeros(&[1, 1]);
        let presyn = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let (s, next) = lif_step(&u, &presyn, cfg).unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert_eq!(next.data()[0], 0.0);
    }

    #[test]
    fn surrogate_peaks_at_threshold_and_vanishes_outside() {
        let cfg = LifConfig::default();
        assert_eq!(surrogate_grad(1.0, cfg), 1.0);
        assert_eq!(surrogate_grad(0.5, cfg), 0.5);
        assert_eq!(surrogate_grad(1.5, cfg), 0.5);
        assert_eq!(surrogate_grad(2.0, cfg), 0.0);
        assert_eq!(surrogate_grad(-1.0, cfg), 0.0);
        let wide = LifConfig {
            sg_width: 2.0,
            ..cfg
        };
        assert_eq!(surrogate_grad(1.0, wide), 0.5);
    }

    #[test]
    fn taped_and_plain_lif_agree_bit_for_bit() {
        let cfg = LifConfig::default();
        let mut rng = stream_rng(11, "test.lif", 0);
        let u0 = uniform_tensor(&[3, 4], 2.0, &mut rng);
        let p0 = uniform_tensor(&[3, 4], 2.0, &mut rng);
        let (s_plain, u_plain) = lif_step(&u0, &p0, cfg).unwrap();

        let mut tape = Tape::new();
        let u = tape.leaf(u0);
        let p = tape.leaf(p0);
        let (s, un) = lif_step_tape(&mut tape, u, p, cfg).unwrap();
        assert_eq!(tape.value(s).data(), s_plain.data());
        assert_eq!(tape.value(un).data(), u_plain.data());
    }

    #[test]
    fn extractor_outputs_are_binary_and_stateless() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(3, "test.init", 0);
        let spec = ExtractorSpec {
            input_dim: 5,
            layer_widths: vec![7, 4],
            lif: LifConfig::default(),
            t_steps: 4,
        };
        let ext = Extractor::init(&mut store, spec, "e0", &mut rng);
        let mut drng = stream_rng(3, "test.data", 0);
        let x = uniform_tensor(&[6, 5], 3.0, &mut drng);
        let a = ext.forward_plain(&store, &x).unwrap();
        let b = ext.forward_plain(&store, &x).unwrap();
        assert_eq!(a.len(), 4);
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!(ta.data(), tb.data(), "stateful forward");
            assert!(ta.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn extractor_tape_matches_plain() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(9, "test.init", 1);
        let spec = ExtractorSpec {
            input_dim: 4,
            layer_widths: vec![6, 3],
            lif: LifConfig::default(),
            t_steps: 3,
        };
        let ext = Extractor::init(&mut store, spec, "e0", &mut rng);
        let mut drng = stream_rng(9, "test.data", 1);
        let x0 = uniform_tensor(&[5, 4], 2.5, &mut drng);
        let plain = ext.forward_plain(&store, &x0).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x0);
        let taped = ext.forward_tape(&mut tape, &store, xv).unwrap();
        for (p, &t) in plain.iter().zip(&taped) {
            assert_eq!(p.data(), tape.value(t).data());
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_lower_index() {
        let t = Tensor::from_rows(&[vec![1.0, 1.0, 0.5], vec![0.2, 0.9, 0.9]]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }

    #[test]
    fn encode_repeats_input() {
        let x = Tensor::from_rows(&[vec![0.25, -1.0]]).unwrap();
        let steps = encode_input(&x, 3);
        assert_eq!(steps.len(), 3);
        for s in &steps {
            assert_eq!(s.data(), x.data());
        }
    }
}
