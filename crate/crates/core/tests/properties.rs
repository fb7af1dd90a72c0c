//! Randomized invariant checks. Each property states a law the component
//! must satisfy for *every* input, and proptest hunts for counterexamples
//! at desk scale (case counts kept modest: the suite targets seconds on a
//! single core).

mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use spikecil::align::{init_alignment, LogitAccumulator};
use spikecil::cil::{balanced_subset, herding_select, ExemplarMemory};
use spikecil::config::ExperimentConfig;
use spikecil::data::{split_stream, LabeledDataset, Normalization, SyntheticTaskConfig};
use spikecil::losses::{tet_loss, LossConfig};
use spikecil::param::ParamStore;
use spikecil::rng::stream_rng;
use spikecil::snn::{lif_step, Extractor, ExtractorSpec, LifConfig};
use spikecil::tape::Tape;
use spikecil::tensor::Tensor;

fn row_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Greedy mean-matching is an anytime ordering: asking for fewer
    /// exemplars returns a prefix of asking for more.
    #[test]
    fn herding_smaller_budget_is_a_prefix(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..12),
        a in 0usize..12,
        b in 0usize..12,
    ) {
        let n = rows.len();
        let (m1, m2) = ((a % n) + 1, (b % n) + 1);
        let (m1, m2) = (m1.min(m2), m1.max(m2));
        let feats = row_tensor(&rows);
        let small = herding_select(&feats, m1).unwrap();
        let large = herding_select(&feats, m2).unwrap();
        prop_assert_eq!(&small[..], &large[..m1]);
    }

    /// Spikes are exactly 0/1, fire iff the integrated potential crosses
    /// threshold, and firing hard-resets the membrane.
    #[test]
    fn lif_spikes_binary_threshold_and_reset(
        drive_rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.8, 4), 1..8),
        tau in 0.05f64..0.95,
        v_th in 0.2f64..1.5,
        sg_width in 0.3f64..1.5,
    ) {
        let cfg = LifConfig { tau, v_th, sg_width };
        let n = drive_rows[0].len();
        let mut u = Tensor::zeros(&[1, n]);
        for row in &drive_rows {
            let prev = u.clone();
            let drive = row_tensor(std::slice::from_ref(row));
            let (spike, next) = lif_step(&u, &drive, cfg).unwrap();
            for i in 0..n {
                let s = spike.get2(0, i);
                prop_assert!(s == 0.0 || s == 1.0, "spike must be binary, got {s}");
                let u_int = cfg.tau * prev.get2(0, i) + row[i];
                prop_assert_eq!(s == 1.0, u_int >= cfg.v_th);
                let expect_u = if s == 1.0 { 0.0 } else { u_int };
                prop_assert_eq!(next.get2(0, i), expect_u);
            }
            u = next;
        }
    }

    /// Frozen parameters never move under the optimizer, however large the
    /// accumulated gradient; live ones do.
    #[test]
    fn frozen_parameters_never_step(
        g1 in prop::collection::vec(0.1f64..1.0, 4),
        g2 in prop::collection::vec(0.1f64..1.0, 4),
        lr in 0.01f64..1.0,
        momentum in prop::sample::select(vec![0.0, 0.9]),
        steps in 1usize..4,
    ) {
        let mut store = ParamStore::default();
        let iced = store.add("iced", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, -4.0]).unwrap());
        let live = store.add("live", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, -4.0]).unwrap());
        store.set_frozen(iced, true);
        let before = store.get(iced).value.clone();
        for _ in 0..steps {
            store.zero_grads();
            store.accumulate_grad(iced, &Tensor::new(vec![2, 2], g1.clone()).unwrap());
            store.accumulate_grad(live, &Tensor::new(vec![2, 2], g2.clone()).unwrap());
            store.sgd_step(lr, momentum);
        }
        prop_assert_eq!(store.get(iced).value.data(), before.data());
        prop_assert!(store.get(live).value.data() != before.data());
    }

    /// Cross-entropy from logits is invariant to adding a per-row constant.
    #[test]
    fn softmax_ce_row_shift_invariant(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..5),
        shifts in prop::collection::vec(-5.0f64..5.0, 5),
        raw_labels in prop::collection::vec(0usize..100, 5),
    ) {
        let b = rows.len();
        let labels: Vec<usize> = raw_labels[..b].iter().map(|&l| l % 4).collect();
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .zip(&shifts)
            .map(|(row, s)| row.iter().map(|v| v + s).collect())
            .collect();
        let eval = |data: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let x = tape.leaf(row_tensor(data));
            let loss = tape.softmax_ce(x, &labels).unwrap();
            tape.value(loss).data()[0]
        };
        prop_assert!((eval(&rows) - eval(&shifted)).abs() < 1e-9);
    }

    /// A balanced subset takes min(per_class, available) from every class,
    /// nothing else.
    #[test]
    fn balanced_subset_histogram_is_clamped(
        counts in prop::collection::vec(1usize..8, 2..5),
        per_class in 1usize..6,
        seed in 0u64..1000,
    ) {
        let k = counts.len();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut vrng = stream_rng(seed, "balanced-prop", 0);
        use rand::Rng;
        for (class, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                rows.push(vec![vrng.random_range(-1.0..1.0), class as f64]);
                labels.push(class);
            }
        }
        let ds = LabeledDataset::new(row_tensor(&rows), labels, k, Normalization::Raw).unwrap();
        let mut srng = stream_rng(seed, "balanced-prop", 1);
        let sub = balanced_subset(&ds, 0..k, per_class, &mut srng).unwrap();
        let hist = sub.class_histogram();
        for (class, &count) in counts.iter().enumerate() {
            prop_assert_eq!(hist[class], per_class.min(count));
        }
        prop_assert_eq!(sub.len(), hist.iter().sum::<usize>());
    }

    /// Temporal-efficient loss with zero smoothing over a single step is
    /// plain cross-entropy.
    #[test]
    fn tet_with_one_step_no_smoothing_is_ce(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 1..4),
        raw_labels in prop::collection::vec(0usize..100, 4),
    ) {
        let labels: Vec<usize> = raw_labels[..rows.len()].iter().map(|&l| l % 5).collect();
        let cfg = LossConfig { lambda_tet: 0.0, phi: 0.7, ..LossConfig::default() };
        let mut tape = Tape::new();
        let x = tape.leaf(row_tensor(&rows));
        let tet = tet_loss(&mut tape, &[x], &labels, &cfg).unwrap();
        let ce = tape.softmax_ce(x, &labels).unwrap();
        let (tv, cv) = (tape.value(tet).data()[0], tape.value(ce).data()[0]);
        prop_assert!((tv - cv).abs() < 1e-12, "tet {tv} vs ce {cv}");
    }

    /// The correction controller is a pure function of its state and the
    /// epoch statistics, and γ moves exactly when it reports an update.
    #[test]
    fn controller_deterministic_and_gamma_gated(
        probe in -3.0f64..3.0,
        alpha in 2.0f64..10.0,
        beta in 2.0f64..6.0,
        deltas in prop::collection::vec(-3.0f64..3.0, 1..20),
    ) {
        let mut a = init_alignment(probe, alpha, beta);
        let mut b = init_alignment(probe, alpha, beta);
        for &d in &deltas {
            let acc = LogitAccumulator { s_new: d, n_new: 1, s_old: 0.0, n_old: 1 };
            let before = a.gamma;
            let out_a = a.epoch_update(&acc).unwrap();
            let out_b = b.epoch_update(&acc).unwrap();
            prop_assert_eq!(out_a, out_b, "twin controllers must stay in lockstep");
            prop_assert_eq!(a.gamma, b.gamma);
            if out_a.updated {
                prop_assert_eq!(a.gamma, before + out_a.delta);
            } else {
                prop_assert_eq!(a.gamma, before);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Spiking feature extraction is stateless across calls: membrane
    /// dynamics live inside one forward pass, never between them.
    #[test]
    fn extractor_forward_is_stateless(
        input_dim in 2usize..6,
        h1 in 2usize..8,
        h2 in 2usize..8,
        t_steps in 1usize..4,
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.5, 5), 1..4),
        seed in 0u64..1000,
    ) {
        let spec = ExtractorSpec {
            input_dim,
            layer_widths: vec![h1, h2],
            lif: LifConfig { tau: 0.5, v_th: 0.4, sg_width: 1.0 },
            t_steps,
        };
        let mut store = ParamStore::default();
        let mut rng = stream_rng(seed, "stateless", 0);
        let ext = Extractor::init(&mut store, spec.clone(), "e", &mut rng);
        let x = row_tensor(&rows.iter().map(|r| r[..input_dim].to_vec()).collect::<Vec<_>>());
        let first = ext.forward_plain(&store, &x).unwrap();
        let second = ext.forward_plain(&store, &x).unwrap();
        prop_assert_eq!(first.len(), t_steps);
        for (f, s) in first.iter().zip(&second) {
            prop_assert_eq!(f.data(), s.data());
        }
    }

    /// Rebuilding exemplar memory under a tighter quota keeps the earliest
    /// herded picks (truncation, never reselection) and respects the
    /// budget exactly.
    #[test]
    fn memory_rebuild_truncates_and_respects_budget(
        budget in 4usize..24,
        seed in 0u64..1000,
    ) {
        let mut mem = ExemplarMemory::new(budget);
        let mut features = BTreeMap::new();
        use rand::Rng;
        let mut rng = stream_rng(seed, "memory-prop", 0);
        for class in 0..8usize {
            let rows: Vec<Vec<f64>> =
                (0..8).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            features.insert(class, row_tensor(&rows));
        }
        let mut previous: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for seen in [2usize, 4, 6, 8] {
            mem.rebuild(0..seen, &features).unwrap();
            prop_assert!(mem.total_stored() <= budget);
            let quotas = mem.quotas(seen);
            for (idx, class) in (0..seen).enumerate() {
                let stored = &mem.store[&class];
                prop_assert_eq!(stored.len(), quotas[idx].min(8));
                if let Some(old) = previous.get(&class) {
                    let keep = stored.len().min(old.len());
                    prop_assert_eq!(&stored[..keep], &old[..keep],
                        "requota must truncate, not reshuffle");
                }
            }
            previous = mem.store.clone();
        }
    }

    /// Splitting a dataset into an incremental stream partitions the
    /// classes: every sample appears exactly once, in the step owning its
    /// class, with the step ranges tiling 0..C in order.
    #[test]
    fn split_stream_partitions_classes(
        steps in 2usize..5,
        per_step in 1usize..4,
        order_seed in 0u64..1000,
    ) {
        let classes = steps * per_step;
        let synth = SyntheticTaskConfig {
            n_classes: classes,
            dim: 3,
            samples_per_class: 5,
            cluster_spread: 0.2,
            seed: 11,
        };
        let (train, test) = spikecil::data::generate_gaussian_tasks(&synth).unwrap();
        let stream = split_stream(&train, &test, steps, 0, order_seed).unwrap();
        prop_assert_eq!(stream.steps.len(), steps);
        let mut cursor = 0usize;
        let (mut train_total, mut test_total) = (0usize, 0usize);
        for step in &stream.steps {
            prop_assert_eq!(step.classes.start, cursor);
            prop_assert_eq!(step.classes.len(), per_step);
            cursor = step.classes.end;
            for &l in step.train.labels() {
                prop_assert!(step.classes.contains(&l));
            }
            for &l in step.test.labels() {
                prop_assert!(step.classes.contains(&l));
            }
            train_total += step.train.len();
            test_total += step.test.len();
        }
        prop_assert_eq!(cursor, classes);
        prop_assert_eq!(train_total, train.len());
        prop_assert_eq!(test_total, test.len());
        // Same ordering seed, same stream.
        let again = split_stream(&train, &test, steps, 0, order_seed).unwrap();
        for (a, b) in stream.steps.iter().zip(&again.steps) {
            prop_assert_eq!(a.train.labels(), b.train.labels());
            prop_assert_eq!(a.train.samples().data(), b.train.samples().data());
        }
    }
}

// A plain (non-proptest) regression: the default experiment configuration
// must stay valid, since every CLI run starts from it.
#[test]
fn default_config_is_valid() {
    ExperimentConfig::default().validate().unwrap();
    desk_cfg(1).validate().unwrap();
    small_cfg(1).validate().unwrap();
}
