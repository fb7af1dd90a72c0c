//! Trainable parameters: storage, freezing, weight masks, and momentum SGD.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub struct Parameter {
    /// Path-style name (module/layer/kind), stable across checkpoints.
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
    /// Frozen parameters are skipped by the optimizer; their bytes never change.
    pub frozen: bool,
    /// Entry-wise trainability: 1 = trainable, 0 = pinned to zero. Gradients
    /// into suppressed entries are discarded and the optimizer re-zeroes the
    /// values after every step.
    pub mask: Option<Tensor>,
}

#[derive(Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            velocity: Tensor::zeros(&shape),
            frozen: false,
            mask: None,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    /// Swap in a new value tensor (possibly with a different shape), resetting
    /// gradient, velocity and mask. Used when the classifier head is rebuilt.
    pub fn replace_value(&mut self, id: ParamId, value: Tensor) {
        let shape = value.shape().to_vec();
        let p = &mut self.params[id.0];
        p.value = value;
        p.grad = Tensor::zeros(&shape);
        p.velocity = Tensor::zeros(&shape);
        p.mask = None;
    }

    /// Install (or clear) a trainability mask. Suppressed entries are zeroed
    /// immediately.
    pub fn set_mask(&mut self, id: ParamId, mask: Option<Tensor>) -> Result<()> {
        let p = &mut self.params[id.0];
        if let Some(m) = &mask {
            if !m.same_shape(&p.value) {
                return Err(Error::Dimension(format!(
                    "mask shape {:?} does not match parameter {:?}",
                    m.shape(),
                    p.value.shape()
                )));
            }
            for (v, &mv) in p.value.data_mut().iter_mut().zip(m.data()) {
                if mv == 0.0 {
                    *v = 0.0;
                }
            }
        }
        p.mask = mask;
        Ok(())
    }

    /// Add a gradient contribution; entries suppressed by the mask are discarded.
    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let p = &mut self.params[id.0];
        debug_assert!(g.same_shape(&p.value));
        match &p.mask {
            Some(m) => {
                for ((dst, &src), &mv) in p.grad.data_mut().iter_mut().zip(g.data()).zip(m.data())
                {
                    *dst += src * mv;
                }
            }
            None => {
                for (dst, &src) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Reset momentum buffers; called at the start of each training stage so a
    /// stage behaves identically whether reached fresh or via checkpoint resume.
    pub fn reset_velocity(&mut self) {
        for p in &mut self.params {
            p.velocity.data_mut().fill(0.0);
        }
    }

    /// Momentum SGD: v <- momentum*v + grad; value <- value - lr*v for every
    /// unfrozen parameter. Frozen parameters are untouched (values, velocity).
    /// All gradients are zeroed afterwards.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) {
        debug_assert!(lr > 0.0 && (0.0..1.0).contains(&momentum));
        for p in &mut self.params {
            if !p.frozen {
                for i in 0..p.value.len() {
                    let v = momentum * p.velocity.data()[i] + p.grad.data()[i];
                    p.velocity.data_mut()[i] = v;
                    p.value.data_mut()[i] -= lr * v;
                }
                if let Some(m) = &p.mask {
                    for (v, &mv) in p.value.data_mut().iter_mut().zip(m.data()) {
                        if mv == 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
            p.grad.data_mut().fill(0.0);
        }
    }

    /// FNV-1a over the exact bit patterns of the given parameters' values.
    pub fn fingerprint(&self, ids: &[ParamId]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for &id in ids {
            let p = &self.params[id.0];
            for &d in p.value.shape() {
                eat(d as u64);
            }
            for &x in p.value.data() {
                eat(x.to_bits());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_basic_step() {
        // w=1, grad=2, lr=0.1, momentum=0 -> w=0.8
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0]));
        store.accumulate_grad(id, &Tensor::vector(vec![2.0]));
        store.sgd_step(0.1, 0.0);
        assert_eq!(store.get(id).value.data(), &[0.8]);
        assert_eq!(store.get(id).grad.data(), &[0.0]);
    }

    #[test]
    fn frozen_param_is_bit_identical() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.25]));
        store.set_frozen(id, true);
        store.accumulate_grad(id, &Tensor::vector(vec![5.0]));
        let before = store.get(id).value.data()[0].to_bits();
        store.sgd_step(0.1, 0.9);
        assert_eq!(store.get(id).value.data()[0].to_bits(), before);
    }

    #[test]
    fn momentum_two_steps_hand_recurrence() {
        // grad constant 1, lr=0.1, momentum=0.9:
        // v1 = 1, w1 = 1 - 0.1 = 0.9
        // v2 = 0.9*1 + 1 = 1.9, w2 = 0.9 - 0.19 = 0.71
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0]));
        store.accumulate_grad(id, &Tensor::vector(vec![1.0]));
        store.sgd_step(0.1, 0.9);
        assert!((store.get(id).value.data()[0] - 0.9).abs() < 1e-15);
        store.accumulate_grad(id, &Tensor::vector(vec![1.0]));
        store.sgd_step(0.1, 0.9);
        assert!((store.get(id).value.data()[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn mask_discards_gradients_and_pins_zero() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![3.0, 4.0]));
        store
            .set_mask(id, Some(Tensor::vector(vec![0.0, 1.0])))
            .unwrap();
        // Suppressed entry zeroed immediately.
        assert_eq!(store.get(id).value.data(), &[0.0, 4.0]);
        store.accumulate_grad(id, &Tensor::vector(vec![7.0, 1.0]));
        assert_eq!(store.get(id).grad.data(), &[0.0, 1.0]);
        store.sgd_step(0.5, 0.0);
        assert_eq!(store.get(id).value.data(), &[0.0, 3.5]);
    }

    #[test]
    fn mask_shape_checked() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![3.0, 4.0]));
        assert!(store.set_mask(id, Some(Tensor::vector(vec![1.0]))).is_err());
    }
}
