//! Fixed-length encoding of prefixes.
//!
//! Categorical channels become index sequences for embedding lookup (index 0
//! is shared by padding and unseen labels), numeric channels are min–max
//! scaled to `[0, 1]` with ranges taken from the training data, and boolean
//! channels are plain 0/1 values. Static attributes are repeated at every real
//! position. Short prefixes are right-padded, long ones keep their last
//! `max_len` events.

use crate::eventlog::{AttrKind, AttrValue, Event, RawPrefixSample, Schema};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Name of the channel carrying the activity label.
pub const ACTIVITY_CHANNEL: &str = "activity";

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("cannot fit an encoder on an empty training set")]
    EmptyTrainingSet,
    #[error("max_len must be at least 1")]
    ZeroLength,
}

/// Sorted label set; label `labels[k]` has index `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    labels: Vec<String>,
}

impl Vocabulary {
    pub fn from_labels<I: IntoIterator<Item = String>>(labels: I) -> Self {
        let set: BTreeSet<String> = labels.into_iter().collect();
        Vocabulary {
            labels: set.into_iter().collect(),
        }
    }

    /// Index of a label, 0 when out of vocabulary.
    pub fn index(&self, label: &str) -> usize {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_or(0, |i| i + 1)
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.labels.get(i))
            .map(String::as_str)
    }

    /// Number of real labels (padding excluded).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Activity,
    Event,
    Case,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalChannel {
    pub name: String,
    pub source: Source,
    pub vocab: Vocabulary,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericChannel {
    pub name: String,
    pub source: Source,
    pub boolean: bool,
    pub min: f64,
    pub max: f64,
}

impl NumericChannel {
    fn scale(&self, v: &AttrValue) -> f64 {
        match v {
            AttrValue::Boolean(b) => f64::from(u8::from(*b)),
            AttrValue::Numeric(x) if self.max > self.min => {
                ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub max_len: usize,
    pub categorical: Vec<CategoricalChannel>,
    pub numeric: Vec<NumericChannel>,
    pub drop_sensitive: bool,
    pub sensitive_attr: String,
}

impl EncoderSpec {
    pub fn embedding_dims(&self) -> Vec<(usize, usize)> {
        self.categorical
            .iter()
            .map(|c| (c.vocab.len() + 1, c.embedding_dim))
            .collect()
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.categorical
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.numeric.iter().map(|c| c.name.as_str()))
    }
}

/// Model-ready prefix: `cat_indices[c][t]`, `num_values[c][t]`, `mask[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedPrefix {
    pub cat_indices: Vec<Vec<usize>>,
    pub num_values: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub outcome: u8,
    pub sensitive: u8,
}

impl EncodedPrefix {
    /// Number of real (unpadded) positions.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_len(&self) -> usize {
        self.mask.len()
    }
}

fn embedding_dim(vocab_size: usize) -> usize {
    (vocab_size as f64).sqrt().ceil().max(1.0) as usize
}

pub fn fit_encoder(
    train: &[RawPrefixSample],
    schema: &Schema,
    max_len: usize,
    drop_sensitive: bool,
    sensitive_attr: &str,
) -> Result<EncoderSpec, EncodingError> {
    if train.is_empty() {
        return Err(EncodingError::EmptyTrainingSet);
    }
    if max_len == 0 {
        return Err(EncodingError::ZeroLength);
    }

    let activities = Vocabulary::from_labels(
        train
            .iter()
            .flat_map(|s| s.events.iter().map(|e| e.activity.clone())),
    );
    let mut categorical = vec![CategoricalChannel {
        name: ACTIVITY_CHANNEL.to_string(),
        source: Source::Activity,
        embedding_dim: embedding_dim(activities.len()),
        vocab: activities,
    }];
    let mut numeric = Vec::new();

    for (name, spec) in &schema.attributes {
        if drop_sensitive && name == sensitive_attr {
            continue;
        }
        let source = if spec.is_static {
            Source::Case
        } else {
            Source::Event
        };
        let values: Vec<&AttrValue> = train
            .iter()
            .flat_map(|s| attr_values(s, name, source))
            .collect();
        match spec.kind {
            AttrKind::Categorical => {
                let vocab = Vocabulary::from_labels(values.iter().filter_map(|v| match v {
                    AttrValue::Categorical(s) => Some(s.clone()),
                    _ => None,
                }));
                categorical.push(CategoricalChannel {
                    name: name.clone(),
                    source,
                    embedding_dim: embedding_dim(vocab.len()),
                    vocab,
                });
            }
            AttrKind::Boolean => numeric.push(NumericChannel {
                name: name.clone(),
                source,
                boolean: true,
                min: 0.0,
                max: 1.0,
            }),
            AttrKind::Numeric => {
                let xs = values.iter().filter_map(|v| match v {
                    AttrValue::Numeric(x) => Some(*x),
                    _ => None,
                });
                let (min, max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x), hi.max(x))
                });
                let (min, max) = if min.is_finite() { (min, max) } else { (0.0, 0.0) };
                if min == max {
                    log::warn!("numeric attribute `{name}` is constant on the training data; encoded as 0");
                }
                numeric.push(NumericChannel {
                    name: name.clone(),
                    source,
                    boolean: false,
                    min,
                    max,
                });
            }
        }
    }

    Ok(EncoderSpec {
        max_len,
        categorical,
        numeric,
        drop_sensitive,
        sensitive_attr: sensitive_attr.to_string(),
    })
}

fn attr_values<'a>(
    sample: &'a RawPrefixSample,
    name: &'a str,
    source: Source,
) -> Box<dyn Iterator<Item = &'a AttrValue> + 'a> {
    match source {
        Source::Case => Box::new(sample.static_attrs.get(name).into_iter()),
        _ => Box::new(sample.events.iter().filter_map(move |e| e.attrs.get(name))),
    }
}

fn event_value<'a>(
    sample: &'a RawPrefixSample,
    event: &'a Event,
    name: &str,
    source: Source,
) -> Option<&'a AttrValue> {
    match source {
        Source::Case => sample.static_attrs.get(name),
        _ => event.attrs.get(name),
    }
}

pub fn encode(spec: &EncoderSpec, sample: &RawPrefixSample) -> EncodedPrefix {
    let len = sample.events.len().min(spec.max_len);
    let kept = &sample.events[sample.events.len() - len..];

    let cat_indices = spec
        .categorical
        .iter()
        .map(|ch| {
            let mut seq = vec![0; spec.max_len];
            for (t, event) in kept.iter().enumerate() {
                seq[t] = match ch.source {
                    Source::Activity => ch.vocab.index(&event.activity),
                    source => match event_value(sample, event, &ch.name, source) {
                        Some(AttrValue::Categorical(label)) => ch.vocab.index(label),
                        _ => 0,
                    },
                };
            }
            seq
        })
        .collect();

    let num_values = spec
        .numeric
        .iter()
        .map(|ch| {
            let mut seq = vec![0.0; spec.max_len];
            for (t, event) in kept.iter().enumerate() {
                if let Some(v) = event_value(sample, event, &ch.name, ch.source) {
                    seq[t] = ch.scale(v);
                }
            }
            seq
        })
        .collect();

    let mut mask = vec![false; spec.max_len];
    mask[..len].iter_mut().for_each(|m| *m = true);

    EncodedPrefix {
        cat_indices,
        num_values,
        mask,
        outcome: sample.outcome,
        sensitive: sample.sensitive,
    }
}

pub fn encode_all(spec: &EncoderSpec, samples: &[RawPrefixSample]) -> Vec<EncodedPrefix> {
    samples.iter().map(|s| encode(spec, s)).collect()
}

/// Channel name → kind map of the fitted encoder (used to check what the model can see).
pub fn feature_map(spec: &EncoderSpec) -> BTreeMap<String, AttrKind> {
    let mut map = BTreeMap::new();
    for c in &spec.categorical {
        map.insert(c.name.clone(), AttrKind::Categorical);
    }
    for c in &spec.numeric {
        let kind = if c.boolean {
            AttrKind::Boolean
        } else {
            AttrKind::Numeric
        };
        map.insert(c.name.clone(), kind);
    }
    map
}
