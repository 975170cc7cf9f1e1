//! Generators, brute-force oracles and a deterministic property runner shared
//! by the integration targets.
#![allow(dead_code)]

pub mod invariants;

use chrono::{DateTime, Duration, TimeZone, Utc};
use fairppm::encoding::EncodedPrefix;
use fairppm::eventlog::{
    AttrKind, AttrSpec, AttrValue, Event, EventLog, Schema, Trace,
};
use fairppm::nn::{composite_loss, forward, param_gradients, BoundParams, CompositeLossConfig, ModelParams, Tape};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const CASES: u32 = 100;

pub type Check = fn() -> Result<(), String>;

/// Runs a property with a fixed generator seed, so failures reproduce.
pub fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

pub const TARGET: &str = "Offer";
pub const SENSITIVE: &str = "case:protected";
const ACTIVITIES: [&str; 4] = ["Apply", "Screen", "Interview", TARGET];
const RESOURCES: [&str; 3] = ["clerk", "manager", "portal"];

pub fn schema() -> Schema {
    let mut attributes = BTreeMap::new();
    let mut put = |name: &str, kind, is_static| {
        attributes.insert(name.to_string(), AttrSpec { kind, is_static });
    };
    put(SENSITIVE, AttrKind::Boolean, true);
    put("case:age", AttrKind::Numeric, true);
    put("resource", AttrKind::Categorical, false);
    put("score", AttrKind::Numeric, false);
    Schema { attributes }
}

fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 8, 0, 0).unwrap()
}

/// (activity, resource, score, minutes after previous event)
type RawEvent = (usize, Option<usize>, Option<i32>, i64);
/// (events, protected, age)
type RawTrace = (Vec<RawEvent>, bool, i32);

fn raw_trace() -> impl Strategy<Value = RawTrace> {
    let event = (
        0..ACTIVITIES.len(),
        proptest::option::of(0..RESOURCES.len()),
        proptest::option::of(-50..50i32),
        1..600i64,
    );
    (proptest::collection::vec(event, 1..9), any::<bool>(), 18..70i32)
}

fn build_log(raw: Vec<RawTrace>) -> EventLog {
    let traces = raw
        .into_iter()
        .enumerate()
        .map(|(c, (events, protected, age))| {
            let case_id = format!("case{c:03}");
            let mut t = start() + Duration::days(c as i64);
            let events = events
                .into_iter()
                .map(|(a, r, s, gap)| {
                    t += Duration::minutes(gap);
                    let mut attrs = BTreeMap::new();
                    if let Some(r) = r {
                        attrs.insert("resource".into(), AttrValue::Categorical(RESOURCES[r].into()));
                    }
                    if let Some(s) = s {
                        attrs.insert("score".into(), AttrValue::Numeric(f64::from(s) / 4.0));
                    }
                    Event {
                        case_id: case_id.clone(),
                        activity: ACTIVITIES[a].into(),
                        timestamp: t,
                        attrs,
                    }
                })
                .collect();
            let mut static_attrs = BTreeMap::new();
            static_attrs.insert(SENSITIVE.into(), AttrValue::Boolean(protected));
            static_attrs.insert("case:age".into(), AttrValue::Numeric(f64::from(age)));
            Trace {
                case_id,
                events,
                static_attrs,
            }
        })
        .collect();
    EventLog {
        traces,
        schema: schema(),
    }
}

/// Random logs of 1..=max_cases traces over a small alphabet that includes
/// the target activity.
pub fn arb_log(max_cases: usize) -> impl Strategy<Value = EventLog> {
    proptest::collection::vec(raw_trace(), 1..=max_cases).prop_map(build_log)
}

pub fn unit_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    // a coarse lattice part makes ties likely
    proptest::collection::vec(
        prop_oneof![0.0..=1.0f64, (0..=20u32).prop_map(|k| f64::from(k) / 20.0)],
        1..=max,
    )
}

/// AUC by comparing every positive with every negative.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice = 0u128;
    let (mut p, mut n) = (0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        if li == 0 {
            n += 1;
            continue;
        }
        p += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

/// Random encoded prefix matching `embeddings`/`n_numeric`, with garbage
/// beyond the true length when `noisy_padding`.
pub fn random_prefix(
    rng: &mut ChaCha8Rng,
    embeddings: &[(usize, usize)],
    n_numeric: usize,
    max_len: usize,
    len: usize,
    noisy_padding: bool,
) -> EncodedPrefix {
    let cat_indices = embeddings
        .iter()
        .map(|&(rows, _)| {
            (0..max_len)
                .map(|t| {
                    if t < len || noisy_padding {
                        rng.random_range(0..rows)
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let num_values = (0..n_numeric)
        .map(|_| {
            (0..max_len)
                .map(|t| {
                    if t < len {
                        rng.random::<f64>()
                    } else if noisy_padding {
                        rng.random_range(-5.0..5.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    EncodedPrefix {
        cat_indices,
        num_values,
        mask: (0..max_len).map(|t| t < len).collect(),
        outcome: rng.random_range(0..2),
        sensitive: rng.random_range(0..2),
    }
}

pub fn random_batch(
    rng: &mut ChaCha8Rng,
    embeddings: &[(usize, usize)],
    n_numeric: usize,
    n: usize,
    max_len: usize,
) -> Vec<EncodedPrefix> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            random_prefix(rng, embeddings, n_numeric, max_len, len, false)
        })
        .collect()
}

fn loss_value(p: &ModelParams, samples: &[EncodedPrefix], cfg: &CompositeLossConfig) -> f64 {
    let refs: Vec<&EncodedPrefix> = samples.iter().collect();
    let y: Vec<u8> = samples.iter().map(|s| s.outcome).collect();
    let s: Vec<u8> = samples.iter().map(|s| s.sensitive).collect();
    let mut tape = Tape::new();
    let bound = BoundParams::frozen(&mut tape, p);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&mut tape, p, &bound, &refs, false, &mut rng).unwrap();
    let parts = composite_loss(&mut tape, out, &y, &s, cfg).unwrap();
    tape.value(parts.total).item()
}

/// Largest relative error between the tape gradient and central differences
/// with step `h` over every parameter. Relative errors use a floor of 1e-6
/// on the magnitude so that vanishing gradients compare absolutely.
pub fn max_gradient_error(
    p: &ModelParams,
    samples: &[EncodedPrefix],
    cfg: &CompositeLossConfig,
    h: f64,
) -> f64 {
    let refs: Vec<&EncodedPrefix> = samples.iter().collect();
    let y: Vec<u8> = samples.iter().map(|s| s.outcome).collect();
    let s: Vec<u8> = samples.iter().map(|s| s.sensitive).collect();
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, p);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&mut tape, p, &bound, &refs, false, &mut rng).unwrap();
    let parts = composite_loss(&mut tape, out, &y, &s, cfg).unwrap();
    let grads = param_gradients(&tape, parts.total, &bound);

    let mut worst = 0.0f64;
    for k in 0..grads.len() {
        for i in 0..grads[k].data.len() {
            let mut plus = p.clone();
            plus.tensors_mut()[k].data[i] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[k].data[i] -= h;
            let fd = (loss_value(&plus, samples, cfg) - loss_value(&minus, samples, cfg)) / (2.0 * h);
            let an = grads[k].data[i];
            let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
