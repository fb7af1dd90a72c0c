//! Shared fixtures and independent oracles for the integration suites.
//!
//! The oracles re-derive expected behaviour from first principles with
//! plain `f64` loops — no calls into the code paths they check — so every
//! comparison pits two separate derivations of the same quantity against
//! each other.

#![allow(dead_code)] // each test target uses its own subset

use spikecil::config::ExperimentConfig;
use spikecil::param::ParamStore;
use spikecil::snn::LifConfig;
use spikecil::tape::{Tape, Var};
use spikecil::tensor::Tensor;

// ---------------------------------------------------------------- configs

/// The canonical desk-scale benchmark (the library defaults) at a seed.
pub fn desk_cfg(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed_master = seed;
    cfg
}

/// Reduced stream for fast structural checks (seconds, not minutes).
pub fn small_cfg(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.synthetic_classes = 8;
    cfg.synthetic_dim = 12;
    cfg.synthetic_samples_per_class = 30;
    cfg.synthetic_spread = 0.15;
    cfg.stream_steps = 4;
    cfg.model_hidden = vec![16, 12];
    cfg.model_t_steps = 3;
    // At this width the default threshold leaves the random-init network
    // almost silent (features ~0, chance-level readout); a lower threshold
    // keeps the tiny model in the spiking regime from the first epoch.
    cfg.lif.v_th = 0.4;
    cfg.opt_repr_epochs = 6;
    cfg.opt_clf_epochs = 8;
    cfg.opt_batch = 16;
    cfg.memory_budget = 40;
    cfg.seed_master = seed;
    cfg
}

/// Fresh per-test scratch directory under the system temp dir.
pub fn scratch_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("spikecil-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}

// ---------------------------------------------- finite-difference oracle

/// Central-difference gradient check of `build` at `inputs`.
///
/// `build` must assemble the computation from fresh leaves on the given
/// tape and return a scalar objective. The analytic gradient comes from one
/// reverse sweep; the numeric one from `(f(x+h) − f(x−h)) / 2h` applied to
/// every coordinate of every input. Returns the number of coordinates
/// checked; panics with context on the first mismatch.
pub fn fd_check(
    name: &str,
    inputs: &[Tensor],
    h: f64,
    rel_tol: f64,
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
) -> usize {
    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let v = tape.value(out);
        assert!(
            v.is_scalar(),
            "{name}: objective must be scalar, got {:?}",
            v.shape()
        );
        v.item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let mut scratch = ParamStore::new();
    tape.backward(out, &mut scratch)
        .unwrap_or_else(|e| panic!("{name}: backward failed: {e}"));
    let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v).clone()).collect();

    let mut checked = 0;
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ana = grads[i].data()[k];
            let scale = num.abs().max(ana.abs());
            let err = (num - ana).abs();
            // Relative tolerance, with an absolute guard where the true
            // gradient is essentially zero and a ratio would be noise.
            let ok = if scale < 1e-6 {
                err <= 1e-7
            } else {
                err / scale <= rel_tol
            };
            assert!(
                ok,
                "{name}: d/d(input {i})[{k}] analytic {ana:.12e} vs numeric {num:.12e} \
                 (abs err {err:.3e})"
            );
            checked += 1;
        }
    }
    checked
}

/// C¹ antiderivative of the triangular surrogate window: a smooth spike
/// whose true derivative equals the surrogate everywhere. Gradient checks
/// of the spiking path use this forward, so central differences have a
/// well-defined target while the backward rule under test is exactly the
/// one production spikes use.
pub fn smooth_spike(u: f64, cfg: LifConfig) -> f64 {
    let (w, th) = (cfg.sg_width, cfg.v_th);
    if u <= th - w {
        0.0
    } else if u <= th {
        let d = u - (th - w);
        d * d / (2.0 * w * w)
    } else if u <= th + w {
        let d = (th + w) - u;
        1.0 - d * d / (2.0 * w * w)
    } else {
        1.0
    }
}

// --------------------------------------------------- scalar LIF simulator

/// Plain-`f64` reference neuron: leak by `tau`, integrate, fire at
/// `v_th`, hard-reset to zero. Returns `(spike, membrane-after)` per step.
pub fn scalar_lif(presyn: &[f64], cfg: LifConfig) -> Vec<(f64, f64)> {
    let mut u = 0.0;
    presyn
        .iter()
        .map(|&input| {
            let u_int = cfg.tau * u + input;
            let spike = if u_int >= cfg.v_th { 1.0 } else { 0.0 };
            u = if spike == 1.0 { 0.0 } else { u_int };
            (spike, u)
        })
        .collect()
}

// ------------------------------------------------- brute-force herding

/// Greedy mean-matching selection, re-derived over plain vectors: each
/// round scores every remaining candidate by the squared distance between
/// the class mean and the mean of the already-chosen set plus that
/// candidate, keeping the first strict minimum (lowest index on ties).
pub fn brute_force_herding(points: &[Vec<f64>], m: usize) -> Vec<usize> {
    let n = points.len();
    assert!(m <= n && n > 0);
    let d = points[0].len();
    let mut mu = vec![0.0; d];
    for p in points {
        for (j, &v) in p.iter().enumerate() {
            mu[j] += v;
        }
    }
    for v in &mut mu {
        *v /= n as f64;
    }
    let mut chosen: Vec<usize> = Vec::new();
    let mut running = vec![0.0; d];
    while chosen.len() < m {
        let k = (chosen.len() + 1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for (cand, p) in points.iter().enumerate() {
            if chosen.contains(&cand) {
                continue;
            }
            let mut dist = 0.0;
            for j in 0..d {
                let diff = mu[j] - (running[j] + p[j]) / k;
                dist += diff * diff;
            }
            match best {
                Some((bd, _)) if dist >= bd => {}
                _ => best = Some((dist, cand)),
            }
        }
        let pick = best.expect("candidates remain").1;
        for (j, &v) in points[pick].iter().enumerate() {
            running[j] += v;
        }
        chosen.push(pick);
    }
    chosen
}

// ------------------------------------------- hand-executed correction rule

/// Gate-by-gate transcription of the correction controller, kept separate
/// from the library implementation: γ moves by the epoch gap when the gap
/// flipped sign, or when it has both drifted from the anchor by more than
/// `|anchor|/α` and settled to within `swing/β` of the previous epoch.
/// All comparisons strict; updates reset the swing tracker and re-anchor.
pub struct HandController {
    pub gamma: f64,
    prev: f64,
    swing: f64,
    anchor: f64,
    alpha: f64,
    beta: f64,
}

impl HandController {
    /// Seed from the γ=0 probe epoch's measured gap.
    pub fn new(probe_delta: f64, alpha: f64, beta: f64) -> Self {
        Self {
            gamma: 0.0,
            prev: probe_delta,
            swing: 0.0,
            anchor: probe_delta,
            alpha,
            beta,
        }
    }

    /// Close one epoch from raw ground-truth-logit sums; returns
    /// `(gamma afterwards, whether it moved)`.
    pub fn epoch(&mut self, s_new: f64, n_new: usize, s_old: f64, n_old: usize) -> (f64, bool) {
        let delta = s_new / n_new as f64 - s_old / n_old as f64;
        let flipped = delta * self.prev < 0.0;
        let drifted = (self.anchor - delta).abs() > self.anchor.abs() / self.alpha;
        let settled = (self.prev - delta).abs() < self.swing / self.beta;
        let moved = flipped || (drifted && settled);
        if moved {
            self.gamma += delta;
            self.swing = 0.0;
            self.anchor = delta;
        } else {
            self.swing = self.swing.max((self.prev - delta).abs());
        }
        self.prev = delta;
        (self.gamma, moved)
    }
}
