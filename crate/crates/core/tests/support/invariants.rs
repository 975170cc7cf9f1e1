//! Every module invariant as a property over at least [`CASES`] random cases.

use super::*;
use fairppm::encoding::{encode, encode_all, feature_map, fit_encoder, Source};
use fairppm::eventlog::{
    extract_prefixes, label_and_cut, read_event_log, split_cases, write_event_log, BiasLevel,
    BiasSpec, generate_synthetic_log,
};
use fairppm::metrics::{
    abcc, abpc, delta_dp_b, delta_dp_c, ecdf, grid, kde_pdf, EvalReport, GroupedScores,
    MetricError,
};
use fairppm::nn::{predict, Architecture};
use fairppm::train::{
    evaluate, lambda_sweep, pareto_indices, prepare_dataset, select_best, train_model,
    FairnessKey, Hyper, HyperGrid, PrepareConfig, Prepared, SweepPoint, TrainConfig,
};
use fairppm::transport::{exact_w1_1d, sinkhorn, sinkhorn_distance, SinkhornConfig};
use proptest::prop_assert;
use proptest::sample::select;
use std::collections::BTreeSet;
use std::sync::OnceLock;

pub const ALL: &[(&str, Check)] = &[
    ("eventlog: case split is a partition", split_is_partition),
    ("eventlog: prefixes are leading events before the target", prefixes_lead_trace),
    ("eventlog: positive prefixes never contain the target", positive_prefixes_exclude_target),
    ("eventlog: extraction is deterministic and order-stable", extraction_deterministic),
    ("eventlog: writer output re-parses to an equal log", log_round_trip),
    ("encoding: deterministic, training numerics within [0,1]", encoding_deterministic_in_unit),
    ("encoding: mask count is min(length, max_len)", mask_count),
    ("encoding: dropped sensitive attribute is absent", drop_sensitive_absent),
    ("encoding: vocabulary round-trip", vocabulary_round_trip),
    ("metrics: group swap symmetry", metric_symmetry),
    ("metrics: identical groups give zero", metric_identity),
    ("metrics: bounds", metric_bounds),
    ("metrics: abcc matches exact W1", abcc_matches_w1),
    ("metrics: mean gap bounded by abcc", mean_gap_below_abcc),
    ("metrics: monotone ecdf and non-negative kde", ecdf_kde_shape),
    ("metrics: auc equals pair counting", auc_pair_counting),
    ("metrics: threshold-free metrics take no threshold", threshold_free_signatures),
    ("transport: symmetry", sinkhorn_symmetry),
    ("transport: error non-increasing as epsilon shrinks", epsilon_monotone),
    ("transport: gradient matches finite differences", sinkhorn_gradient),
    ("transport: translation invariance", sinkhorn_translation),
    ("transport: shifting one side adds the shift", sinkhorn_shift),
    ("nn: padding content is ignored", mask_invariance),
    ("nn: gradients match finite differences", model_gradients),
    ("nn: training is deterministic", training_deterministic),
    ("nn: evaluation passes agree", eval_passes_agree),
    ("nn: propensities strictly inside (0,1)", output_range),
    ("nn: composite loss is affine in lambda", loss_affine_in_lambda),
    ("train: pareto front matches brute force", pareto_brute_force),
    ("train: sweep is deterministic", sweep_deterministic),
    ("train: evaluation is repeatable", evaluation_repeatable),
    ("train: mean gap bounded by abcc on reports", report_w1_bound),
    ("train: grid choice invariant under monotone maps", selection_monotone_invariant),
];

// ---- eventlog

pub fn split_is_partition() -> Result<(), String> {
    check(CASES, (arb_log(40), 0.05..0.95f64, any::<u64>()), |(log, frac, seed)| {
        prop_assume!(log.len() >= 2);
        let (train, test) = split_cases(&log, frac, seed).unwrap();
        let ids = |l: &EventLog| l.traces.iter().map(|t| t.case_id.clone()).collect::<BTreeSet<_>>();
        let (a, b, all) = (ids(&train), ids(&test), ids(&log));
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.union(&b).cloned().collect::<BTreeSet<_>>(), all);
        prop_assert_eq!(train.len() + test.len(), log.len());
        Ok(())
    })
}

pub fn prefixes_lead_trace() -> Result<(), String> {
    check(CASES, (arb_log(25), 1..10usize), |(log, max_len)| {
        let samples = extract_prefixes(&log, TARGET, SENSITIVE, max_len).unwrap();
        for s in &samples {
            let trace = log.traces.iter().find(|t| t.case_id == s.case_id).unwrap();
            let l = s.events.len();
            prop_assert!(l >= 1 && l <= max_len);
            prop_assert_eq!(&s.events[..], &trace.events[..l]);
            let (outcome, cut) = label_and_cut(trace, TARGET);
            prop_assert_eq!(s.outcome, outcome);
            prop_assert!(l <= cut);
            if outcome == 1 {
                // the target sits at position `cut`, after every prefix event
                prop_assert_eq!(trace.events[cut].activity.as_str(), TARGET);
            }
        }
        Ok(())
    })
}

pub fn positive_prefixes_exclude_target() -> Result<(), String> {
    check(CASES, (arb_log(25), 1..10usize), |(log, max_len)| {
        for s in extract_prefixes(&log, TARGET, SENSITIVE, max_len).unwrap() {
            prop_assert!(s.events.iter().all(|e| e.activity != TARGET));
        }
        Ok(())
    })
}

pub fn extraction_deterministic() -> Result<(), String> {
    check(CASES, (arb_log(25), 1..10usize), |(log, max_len)| {
        let a = extract_prefixes(&log, TARGET, SENSITIVE, max_len).unwrap();
        let b = extract_prefixes(&log, TARGET, SENSITIVE, max_len).unwrap();
        prop_assert_eq!(&a, &b);
        // trace order, then increasing length
        let pos = |id: &str| log.traces.iter().position(|t| t.case_id == id).unwrap();
        for w in a.windows(2) {
            let key = |s: &fairppm::eventlog::RawPrefixSample| (pos(&s.case_id), s.events.len());
            prop_assert!(key(&w[0]) < key(&w[1]));
        }
        Ok(())
    })
}

pub fn log_round_trip() -> Result<(), String> {
    check(CASES, arb_log(20), |log| {
        let mut buf = Vec::new();
        write_event_log(&log, &mut buf).unwrap();
        let back = read_event_log(&buf[..], &log.schema.to_config()).unwrap();
        prop_assert_eq!(back, log);
        Ok(())
    })
}

// ---- encoding

pub fn encoding_deterministic_in_unit() -> Result<(), String> {
    check(CASES, (arb_log(25), 1..8usize, any::<bool>()), |(log, max_len, drop)| {
        let samples = extract_prefixes(&log, TARGET, SENSITIVE, 8).unwrap();
        prop_assume!(!samples.is_empty());
        let spec = fit_encoder(&samples, &log.schema, max_len, drop, SENSITIVE).unwrap();
        let a = encode_all(&spec, &samples);
        prop_assert_eq!(&a, &encode_all(&spec, &samples));
        for e in &a {
            for v in e.num_values.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(v), "{v}");
            }
        }
        Ok(())
    })
}

pub fn mask_count() -> Result<(), String> {
    check(CASES, (arb_log(25), 1..8usize), |(log, max_len)| {
        let samples = extract_prefixes(&log, TARGET, SENSITIVE, 8).unwrap();
        prop_assume!(!samples.is_empty());
        let spec = fit_encoder(&samples, &log.schema, max_len, false, SENSITIVE).unwrap();
        for s in &samples {
            let e = encode(&spec, s);
            prop_assert_eq!(e.mask.len(), max_len);
            prop_assert_eq!(e.mask.iter().filter(|m| **m).count(), s.events.len().min(max_len));
        }
        Ok(())
    })
}

pub fn drop_sensitive_absent() -> Result<(), String> {
    check(CASES, (arb_log(25), 1..8usize), |(log, max_len)| {
        let samples = extract_prefixes(&log, TARGET, SENSITIVE, 8).unwrap();
        prop_assume!(!samples.is_empty());
        let kept = fit_encoder(&samples, &log.schema, max_len, false, SENSITIVE).unwrap();
        let dropped = fit_encoder(&samples, &log.schema, max_len, true, SENSITIVE).unwrap();
        prop_assert!(feature_map(&kept).contains_key(SENSITIVE));
        prop_assert!(!feature_map(&dropped).contains_key(SENSITIVE));
        prop_assert!(dropped.channel_names().all(|n| n != SENSITIVE));
        Ok(())
    })
}

pub fn vocabulary_round_trip() -> Result<(), String> {
    check(CASES, (arb_log(25), 1..8usize), |(log, max_len)| {
        let samples = extract_prefixes(&log, TARGET, SENSITIVE, 8).unwrap();
        prop_assume!(!samples.is_empty());
        let spec = fit_encoder(&samples, &log.schema, max_len, false, SENSITIVE).unwrap();
        for s in &samples {
            let e = encode(&spec, s);
            let kept = &s.events[s.events.len() - s.events.len().min(max_len)..];
            for (c, ch) in spec.categorical.iter().enumerate() {
                for (t, event) in kept.iter().enumerate() {
                    let label = match ch.source {
                        Source::Activity => Some(event.activity.clone()),
                        _ => match event.attrs.get(&ch.name) {
                            Some(AttrValue::Categorical(l)) => Some(l.clone()),
                            _ => None,
                        },
                    };
                    if let Some(label) = label {
                        prop_assert_eq!(ch.vocab.decode(e.cat_indices[c][t]), Some(label.as_str()));
                    }
                }
            }
        }
        Ok(())
    })
}

// ---- metrics

pub fn two_groups(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (unit_scores(max), unit_scores(max))
}

pub fn metric_symmetry() -> Result<(), String> {
    check(CASES, (two_groups(200), 0.0..=1.0f64), |((a, b), t)| {
        let g = GroupedScores::new(a.clone(), b.clone());
        let h = GroupedScores::new(b, a);
        prop_assert_eq!(delta_dp_c(&g).unwrap(), delta_dp_c(&h).unwrap());
        prop_assert_eq!(delta_dp_b(&g, t).unwrap(), delta_dp_b(&h, t).unwrap());
        prop_assert_eq!(abpc(&g).unwrap(), abpc(&h).unwrap());
        prop_assert_eq!(abcc(&g).unwrap(), abcc(&h).unwrap());
        Ok(())
    })
}

pub fn metric_identity() -> Result<(), String> {
    check(CASES, (unit_scores(200), any::<u64>(), 0.0..=1.0f64), |(a, seed, t)| {
        let mut b = a.clone();
        use rand::seq::SliceRandom;
        b.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let g = GroupedScores::new(a, b);
        prop_assert!(delta_dp_c(&g).unwrap() <= 1e-12);
        prop_assert_eq!(delta_dp_b(&g, t).unwrap(), 0.0);
        prop_assert!(abpc(&g).unwrap() <= 1e-9);
        prop_assert!(abcc(&g).unwrap() <= 1e-9);
        Ok(())
    })
}

pub fn metric_bounds() -> Result<(), String> {
    check(CASES, (two_groups(200), 0.0..=1.0f64), |((a, b), t)| {
        let g = GroupedScores::new(a, b);
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        prop_assert!(unit(delta_dp_c(&g).unwrap()));
        prop_assert!(unit(delta_dp_b(&g, t).unwrap()));
        prop_assert!(unit(abcc(&g).unwrap()));
        let p = abpc(&g).unwrap();
        prop_assert!((0.0..=2.05).contains(&p), "abpc {p}");
        Ok(())
    })
}

pub fn abcc_matches_w1() -> Result<(), String> {
    check(CASES, two_groups(500), |(a, b)| {
        let w1 = exact_w1_1d(&a, &b).unwrap();
        let c = abcc(&GroupedScores::new(a, b)).unwrap();
        prop_assert!((c - w1).abs() <= 2e-3, "abcc {c} vs w1 {w1}");
        Ok(())
    })
}

pub fn mean_gap_below_abcc() -> Result<(), String> {
    check(CASES, two_groups(300), |(a, b)| {
        let g = GroupedScores::new(a, b);
        prop_assert!(delta_dp_c(&g).unwrap() <= abcc(&g).unwrap() + 2e-3);
        Ok(())
    })
}

pub fn ecdf_kde_shape() -> Result<(), String> {
    let xs = grid();
    check(CASES, unit_scores(200), |a| {
        let f = ecdf(&a, &xs);
        prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(*f.last().unwrap(), 1.0);
        prop_assert!(kde_pdf(&a, &xs).iter().all(|v| *v >= 0.0));
        Ok(())
    })
}

pub fn auc_pair_counting() -> Result<(), String> {
    let data = (2..=500usize).prop_flat_map(|n| {
        (
            proptest::collection::vec(prop_oneof![0.0..=1.0f64, (0..10u32).prop_map(|k| f64::from(k) / 10.0)], n),
            proptest::collection::vec(0..2u8, n),
        )
    });
    check(CASES, data, |(scores, labels)| {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let got = fairppm::metrics::auc(&scores, &labels).unwrap();
        prop_assert_eq!(got, brute_auc(&scores, &labels));
        Ok(())
    })
}

pub fn threshold_free_signatures() -> Result<(), String> {
    // the threshold-free metrics accept no threshold argument at all
    type Free = fn(&GroupedScores) -> Result<f64, MetricError>;
    let free: [Free; 3] = [delta_dp_c, abpc, abcc];
    check(CASES, (two_groups(100), 0.0..=1.0f64), |((a, b), t)| {
        let g = GroupedScores::new(a, b);
        let before: Vec<f64> = free.iter().map(|f| f(&g).unwrap()).collect();
        let _ = delta_dp_b(&g, t).unwrap();
        let after: Vec<f64> = free.iter().map(|f| f(&g).unwrap()).collect();
        prop_assert_eq!(before, after);
        Ok(())
    })
}

// ---- transport

pub fn samples(lo: f64, hi: f64, max: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, 1..=max)
}

pub fn sinkhorn_symmetry() -> Result<(), String> {
    check(CASES, (samples(0.0, 1.0, 60), samples(0.0, 1.0, 60)), |(a, b)| {
        let cfg = SinkhornConfig::default();
        let ab = sinkhorn_distance(&a, &b, &cfg).unwrap();
        let ba = sinkhorn_distance(&b, &a, &cfg).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9, "{ab} vs {ba}");
        Ok(())
    })
}

pub fn epsilon_monotone() -> Result<(), String> {
    check(CASES, (samples(0.0, 1.0, 30), samples(0.0, 1.0, 30)), |(a, b)| {
        let exact = exact_w1_1d(&a, &b).unwrap();
        let errs: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&epsilon| {
                let cfg = SinkhornConfig {
                    epsilon,
                    max_iters: 10_000,
                    ..Default::default()
                };
                (sinkhorn_distance(&a, &b, &cfg).unwrap() - exact).abs()
            })
            .collect();
        prop_assert!(errs[1] <= errs[0] + 1e-6 && errs[2] <= errs[1] + 1e-6, "{errs:?}");
        Ok(())
    })
}

pub fn sinkhorn_gradient() -> Result<(), String> {
    check(CASES, (samples(0.0, 1.0, 8), samples(0.0, 1.0, 8)), |(a, b)| {
        let gap = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| (x - y).abs()))
            .fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-3);
        let cfg = SinkhornConfig {
            epsilon: 0.05,
            max_iters: 200,
            convergence_tol: 0.0,
        };
        let (ga, gb) = sinkhorn(&a, &b, &cfg).unwrap().gradient(1.0);
        let h = 1e-5;
        let fd = |x: &[f64], y: &[f64]| sinkhorn_distance(x, y, &cfg).unwrap();
        let rel = |an: f64, num: f64| (an - num).abs() / an.abs().max(num.abs()).max(1e-6);
        for i in 0..a.len() {
            let (mut p, mut m) = (a.clone(), a.clone());
            p[i] += h;
            m[i] -= h;
            let num = (fd(&p, &b) - fd(&m, &b)) / (2.0 * h);
            prop_assert!(rel(ga[i], num) < 1e-4, "da[{i}] {} vs {num}", ga[i]);
        }
        for j in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[j] += h;
            m[j] -= h;
            let num = (fd(&a, &p) - fd(&a, &m)) / (2.0 * h);
            prop_assert!(rel(gb[j], num) < 1e-4, "db[{j}] {} vs {num}", gb[j]);
        }
        Ok(())
    })
}

pub fn sinkhorn_translation() -> Result<(), String> {
    check(
        CASES,
        (samples(0.0, 0.5, 40), samples(0.0, 0.5, 40), -0.5..0.5f64),
        |(a, b, c)| {
            let cfg = SinkhornConfig::default();
            let d = sinkhorn_distance(&a, &b, &cfg).unwrap();
            let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
            let e = sinkhorn_distance(&shift(&a), &shift(&b), &cfg).unwrap();
            prop_assert!((d - e).abs() <= 1e-9, "{d} vs {e}");
            Ok(())
        },
    )
}

pub fn sinkhorn_shift() -> Result<(), String> {
    check(
        CASES,
        (samples(0.0, 0.3, 30), samples(0.4, 0.6, 30), 0.05..0.3f64),
        |(a, b, delta)| {
            let cfg = SinkhornConfig::default();
            let d = sinkhorn_distance(&a, &b, &cfg).unwrap();
            let moved: Vec<f64> = b.iter().map(|y| y + delta).collect();
            let e = sinkhorn_distance(&a, &moved, &cfg).unwrap();
            prop_assert!(((e - d) - delta).abs() <= 0.1 * delta, "{d} -> {e}, delta {delta}");
            Ok(())
        },
    )
}

// ---- nn

pub fn small_arch(hidden: usize, layers: usize, bidirectional: bool) -> Architecture {
    Architecture {
        embeddings: vec![(5, 3), (4, 2)],
        n_numeric: 2,
        hidden,
        layers,
        bidirectional,
        dropout: 0.3,
    }
}

pub fn arch_choice() -> impl Strategy<Value = Architecture> {
    (1..6usize, 1..3usize, any::<bool>()).prop_map(|(h, l, b)| small_arch(h, l, b))
}

pub fn mask_invariance() -> Result<(), String> {
    check(CASES, (arch_choice(), any::<u64>(), 1..7usize), |(arch, seed, max_len)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ModelParams::init(&arch, &mut rng).unwrap();
        let lens: Vec<usize> = (0..8).map(|_| rng.random_range(1..=max_len)).collect();
        let gen = |noisy: bool, rng: &mut ChaCha8Rng| -> Vec<EncodedPrefix> {
            lens.iter()
                .map(|&l| random_prefix(rng, &arch.embeddings, arch.n_numeric, max_len, l, noisy))
                .collect()
        };
        let clean = gen(false, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let mut noisy = gen(true, &mut ChaCha8Rng::seed_from_u64(seed ^ 2));
        // same valid content, different padding
        for (n, c) in noisy.iter_mut().zip(&clean) {
            let l = c.mask.iter().filter(|m| **m).count();
            for (nc, cc) in n.cat_indices.iter_mut().zip(&c.cat_indices) {
                nc[..l].copy_from_slice(&cc[..l]);
            }
            for (nv, cv) in n.num_values.iter_mut().zip(&c.num_values) {
                nv[..l].copy_from_slice(&cv[..l]);
            }
        }
        let a = predict(&p, &clean, 4).unwrap();
        let b = predict(&p, &noisy, 4).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

pub fn model_gradients() -> Result<(), String> {
    check(CASES, (any::<u64>(), select(vec![0.0, 0.3, 1.0])), |(seed, lambda)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = small_arch(4, 1, false);
        let p = ModelParams::init(&arch, &mut rng).unwrap();
        let mut batch = random_batch(&mut rng, &arch.embeddings, arch.n_numeric, 16, 4);
        batch[0].sensitive = 0;
        batch[1].sensitive = 1;
        let cfg = CompositeLossConfig {
            lambda,
            sinkhorn: SinkhornConfig {
                convergence_tol: 0.0,
                ..Default::default()
            },
        };
        let e = max_gradient_error(&p, &batch, &cfg, 1e-5);
        prop_assert!(e < 1e-4, "lambda {lambda}: {e}");
        Ok(())
    })
}

/// A tiny prepared dataset shared by the training properties.
pub fn tiny() -> &'static Prepared {
    static DATA: OnceLock<Prepared> = OnceLock::new();
    DATA.get_or_init(|| {
        let log = generate_synthetic_log(&BiasSpec::hiring(BiasLevel::High, 40), 3).unwrap();
        prepare_dataset(&log, &PrepareConfig::default(), 3).unwrap()
    })
}

pub fn tiny_hyper() -> Hyper {
    Hyper {
        hidden: 3,
        batch_size: 32,
        lr: 0.01,
        ..Hyper::default()
    }
}

pub fn tiny_config(lambda: f64) -> TrainConfig {
    let mut c = TrainConfig::with_lambda(lambda);
    c.max_epochs = 2;
    c.ipm_batch_size = 64;
    c
}

pub fn training_deterministic() -> Result<(), String> {
    let d = tiny();
    check(CASES, (any::<u64>(), select(vec![0.0, 0.4])), |(seed, lambda)| {
        let run = || train_model(&d.train, &d.valid, &d.encoder, &tiny_hyper(), &tiny_config(lambda), seed).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        Ok(())
    })
}

pub fn eval_passes_agree() -> Result<(), String> {
    check(CASES, (arch_choice(), any::<u64>()), |(arch, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ModelParams::init(&arch, &mut rng).unwrap();
        let batch = random_batch(&mut rng, &arch.embeddings, arch.n_numeric, 12, 5);
        prop_assert_eq!(predict(&p, &batch, 5).unwrap(), predict(&p, &batch, 5).unwrap());
        Ok(())
    })
}

pub fn output_range() -> Result<(), String> {
    check(CASES, (arch_choice(), any::<u64>(), 0.1..3.0f64), |(arch, seed, scale)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::init(&arch, &mut rng).unwrap();
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|w| *w *= scale);
        }
        let batch = random_batch(&mut rng, &arch.embeddings, arch.n_numeric, 20, 5);
        for y in predict(&p, &batch, 8).unwrap() {
            prop_assert!(y > 0.0 && y < 1.0, "{y}");
        }
        Ok(())
    })
}

pub fn loss_affine_in_lambda() -> Result<(), String> {
    let data = (2..40usize).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.001..0.999f64, n),
            proptest::collection::vec(0..2u8, n),
            proptest::collection::vec(0..2u8, n),
            0.0..=1.0f64,
        )
    });
    check(CASES, data, |(p, y, s, lambda)| {
        let parts = |l: f64| {
            let mut tape = Tape::new();
            let v = tape.constant(fairppm::nn::Tensor::column(p.clone()));
            let cfg = CompositeLossConfig {
                lambda: l,
                sinkhorn: SinkhornConfig::default(),
            };
            let parts = composite_loss(&mut tape, v, &y, &s, &cfg).unwrap();
            (tape.value(parts.total).item(), parts)
        };
        let (a, _) = parts(0.0);
        let (b, pb) = parts(1.0);
        let (mixed, _) = parts(lambda);
        let b = if pb.ipm_skipped { 0.0 } else { b };
        prop_assert_eq!(mixed, (1.0 - lambda) * a + lambda * b);
        Ok(())
    })
}

// ---- train

pub fn sweep_point(lambda: f64, auc: f64, fair: f64, ok: bool) -> SweepPoint {
    let (auc, fair) = if ok { (auc, fair) } else { (f64::NAN, f64::NAN) };
    SweepPoint {
        lambda,
        auc,
        abpc: fair,
        abcc: fair,
        seed: 0,
        converged: true,
        error: (!ok).then(|| "failed".to_string()),
    }
}

pub fn pareto_brute_force() -> Result<(), String> {
    let point = (0..20u32, 0..20u32, 0..1000u32, prop::bool::weighted(0.95));
    check(CASES, proptest::collection::vec(point, 0..=1000), |raw| {
        let pts: Vec<SweepPoint> = raw
            .iter()
            .map(|&(a, f, l, ok)| sweep_point(f64::from(l) / 1000.0, f64::from(a) / 20.0, f64::from(f) / 20.0, ok))
            .collect();
        let got: BTreeSet<usize> = pareto_indices(&pts, FairnessKey::Abcc).into_iter().collect();
        let dominates = |q: &SweepPoint, p: &SweepPoint| {
            q.auc >= p.auc && q.abcc <= p.abcc && (q.auc > p.auc || q.abcc < p.abcc)
        };
        let mut want = BTreeSet::new();
        for (i, p) in pts.iter().enumerate() {
            if p.error.is_some() || pts.iter().any(|q| q.error.is_none() && dominates(q, p)) {
                continue;
            }
            // duplicates: keep the lowest lambda, then the first index
            let first = pts.iter().enumerate().all(|(j, q)| {
                q.error.is_some()
                    || q.auc != p.auc
                    || q.abcc != p.abcc
                    || (q.lambda, j) >= (p.lambda, i)
            });
            if first {
                want.insert(i);
            }
        }
        prop_assert_eq!(got, want);
        Ok(())
    })
}

pub fn sweep_deterministic() -> Result<(), String> {
    let d = tiny();
    check(CASES, any::<u64>(), |seed| {
        let run = || {
            lambda_sweep(&d.train, &d.valid, &d.test, &d.encoder, &tiny_hyper(), &tiny_config(0.0), &[0.0, 0.3], seed, 1)
                .unwrap()
        };
        let bits = |v: Vec<SweepPoint>| {
            v.into_iter()
                .map(|p| (p.lambda.to_bits(), p.auc.to_bits(), p.abpc.to_bits(), p.abcc.to_bits(), p.seed, p.converged, p.error))
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(bits(run()), bits(run()));
        Ok(())
    })
}

pub fn evaluation_repeatable() -> Result<(), String> {
    let d = tiny();
    check(CASES, any::<u64>(), |seed| {
        let ck = train_model(&d.train, &d.valid, &d.encoder, &tiny_hyper(), &tiny_config(0.0), seed).unwrap();
        prop_assert_eq!(evaluate(&ck, &d.test).unwrap(), evaluate(&ck, &d.test).unwrap());
        Ok(())
    })
}

pub fn report_w1_bound() -> Result<(), String> {
    let data = (4..300usize).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0..=1.0f64, n),
            proptest::collection::vec(0..2u8, n),
            proptest::collection::vec(0..2u8, n),
            0.0..=1.0f64,
        )
    });
    check(CASES, data, |(scores, labels, sensitive, t)| {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        prop_assume!(sensitive.contains(&0) && sensitive.contains(&1));
        let r = EvalReport::compute(&scores, &labels, &sensitive, t).unwrap();
        prop_assert!(r.ddp_c <= r.abcc + 2e-3, "{} vs {}", r.ddp_c, r.abcc);
        Ok(())
    })
}

pub fn selection_monotone_invariant() -> Result<(), String> {
    let cells = HyperGrid::default().cells();
    let n = cells.len();
    let aucs = proptest::collection::vec(prop_oneof![0.4..1.0f64, (0..6u32).prop_map(|k| 0.5 + f64::from(k) / 20.0)], n);
    check(CASES, (aucs, 0..4usize, 0.1..10.0f64, -1.0..1.0f64), |(aucs, kind, a, b)| {
        let f = |x: f64| match kind {
            0 => a * x + b,
            1 => x.powi(3),
            2 => (a * x).exp(),
            _ => 1.0 / (1.0 + (-a * (x - 0.7)).exp()),
        };
        let mapped: Vec<f64> = aucs.iter().map(|&x| f(x)).collect();
        // the map must stay strictly monotone on these values after rounding
        for i in 0..n {
            for j in 0..n {
                prop_assume!((aucs[i] < aucs[j]) == (mapped[i] < mapped[j]));
            }
        }
        let with = |v: &[f64]| cells.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
        prop_assert_eq!(select_best(&with(&aucs)), select_best(&with(&mapped)));
        Ok(())
    })
}
