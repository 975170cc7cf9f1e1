use super::{AttrKind, AttrValue, Event, EventLog, EventLogError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// One prefix of a trace together with its case outcome and sensitive group.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrefixSample {
    pub case_id: String,
    pub events: Vec<Event>,
    pub static_attrs: BTreeMap<String, AttrValue>,
    pub outcome: u8,
    pub sensitive: u8,
}

/// Outcome label and cut index of a trace.
///
/// Positive traces (containing `target_activity`) are cut at the first
/// occurrence of the target; negative traces are cut at their length.
pub fn label_and_cut(trace: &super::Trace, target_activity: &str) -> (u8, usize) {
    match trace.activities().position(|a| a == target_activity) {
        Some(i) => (1, i),
        None => (0, trace.events.len()),
    }
}

/// Emits prefixes of lengths `1..=min(cut, max_gen_len)` for every trace, in
/// trace order then length order. Traces with no usable prefix are skipped.
pub fn extract_prefixes(
    log: &EventLog,
    target_activity: &str,
    sensitive_attr: &str,
    max_gen_len: usize,
) -> Result<Vec<RawPrefixSample>> {
    match log.schema.get(sensitive_attr) {
        Some(spec) if spec.is_static && spec.kind == AttrKind::Boolean => {}
        _ => return Err(EventLogError::NotStaticBoolean(sensitive_attr.to_string())),
    }
    let mut samples = Vec::new();
    for trace in &log.traces {
        let sensitive = match trace.static_attrs.get(sensitive_attr) {
            Some(AttrValue::Boolean(b)) => u8::from(*b),
            _ => {
                return Err(EventLogError::MissingSensitive {
                    case_id: trace.case_id.clone(),
                    attr: sensitive_attr.to_string(),
                })
            }
        };
        let (outcome, cut) = label_and_cut(trace, target_activity);
        for len in 1..=cut.min(max_gen_len) {
            samples.push(RawPrefixSample {
                case_id: trace.case_id.clone(),
                events: trace.events[..len].to_vec(),
                static_attrs: trace.static_attrs.clone(),
                outcome,
                sensitive,
            });
        }
    }
    Ok(samples)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Case-level split into `(train, test)`. The test set holds
/// `round_half_up(test_fraction * cases)` cases; both parts keep the original
/// trace order.
pub fn split_cases(log: &EventLog, test_fraction: f64, seed: u64) -> Result<(EventLog, EventLog)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EventLogError::Split(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    if log.len() < 2 {
        return Err(EventLogError::Split(format!(
            "need at least 2 cases, got {}",
            log.len()
        )));
    }
    let n_test = round_half_up(test_fraction * log.len() as f64);
    let mut in_test = vec![false; log.len()];
    for &i in shuffled_indices(log.len(), seed).iter().take(n_test) {
        in_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = log
        .traces
        .iter()
        .cloned()
        .zip(in_test)
        .partition(|(_, t)| *t);
    Ok((
        log.with_traces(train.into_iter().map(|(t, _)| t).collect()),
        log.with_traces(test.into_iter().map(|(t, _)| t).collect()),
    ))
}

/// Sample-level split into `(train, valid)`; the validation part holds
/// `round_half_up(fraction * n)` samples and both keep the input order.
pub fn validation_split<T: Clone>(
    samples: &[T],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EventLogError::Split(format!(
            "validation fraction {fraction} outside (0, 1)"
        )));
    }
    if samples.len() < 2 {
        return Err(EventLogError::Split(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n_valid = round_half_up(fraction * samples.len() as f64);
    let mut in_valid = vec![false; samples.len()];
    for &i in shuffled_indices(samples.len(), seed).iter().take(n_valid) {
        in_valid[i] = true;
    }
    let mut train = Vec::with_capacity(samples.len() - n_valid);
    let mut valid = Vec::with_capacity(n_valid);
    for (s, v) in samples.iter().zip(in_valid) {
        if v {
            valid.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, valid))
}
