//! Synthetic hiring-style logs with a controllable outcome bias.
//!
//! Group membership and outcomes are drawn with exact per-group counts, so
//! the empirical group share and per-group positive rates match the request up
//! to rounding. Predictive signal comes from a per-event `score`, the number
//! of interview stages a case passes through and the applicant's education.
//! `case:german_speaking` is a proxy for `case:protected` whose agreement is
//! set by `proxy_strength`.

use super::{AttrKind, AttrSpec, AttrValue, Event, EventLog, EventLogError, Result, Schema, Trace};
use chrono::{Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PROTECTED_ATTR: &str = "case:protected";
pub const PROXY_ATTR: &str = "case:german_speaking";

fn default_target() -> String {
    "Make Job Offer".into()
}

fn default_stages() -> Vec<String> {
    [
        "Hand In Job Application",
        "Application Screening",
        "Telephonic Screening",
        "Coding Interview",
        "Technical Interview",
        "Behavioral Interview",
        "Extensive Background Check",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn default_signal() -> f64 {
    6.0
}

fn default_proxy() -> f64 {
    0.7
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasLevel {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub n_cases: usize,
    #[serde(default = "default_target")]
    pub target_activity: String,
    /// Activity alphabet before the target; the first two stages occur in every case.
    #[serde(default = "default_stages")]
    pub stages: Vec<String>,
    /// Share of cases in the protected group S1.
    pub p_protected: f64,
    pub positive_rate_s0: f64,
    pub positive_rate_s1: f64,
    /// Probability that the proxy attribute is set deterministically from the group.
    #[serde(default = "default_proxy")]
    pub proxy_strength: f64,
    /// Gap between positive and negative mean event scores.
    #[serde(default = "default_signal")]
    pub signal: f64,
}

impl BiasSpec {
    /// Group statistics of the hiring logs at three bias levels.
    pub fn hiring(level: BiasLevel, n_cases: usize) -> BiasSpec {
        let (p, r0, r1) = match level {
            BiasLevel::High => (0.1994, 0.4886, 0.1066),
            BiasLevel::Medium => (0.1571, 0.5061, 0.2158),
            BiasLevel::Low => (0.0924, 0.5144, 0.3597),
        };
        BiasSpec {
            n_cases,
            target_activity: default_target(),
            stages: default_stages(),
            p_protected: p,
            positive_rate_s0: r0,
            positive_rate_s1: r1,
            proxy_strength: default_proxy(),
            signal: default_signal(),
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(EventLogError::Spec(format!("{name} = {x} outside [0, 1]")))
            }
        };
        unit("p_protected", self.p_protected)?;
        unit("positive_rate_s0", self.positive_rate_s0)?;
        unit("positive_rate_s1", self.positive_rate_s1)?;
        unit("proxy_strength", self.proxy_strength)?;
        if self.n_cases == 0 {
            return Err(EventLogError::Spec("n_cases must be positive".into()));
        }
        if self.stages.len() < 2 {
            return Err(EventLogError::Spec("need at least two stages".into()));
        }
        if self.stages.contains(&self.target_activity) {
            return Err(EventLogError::Spec(
                "target activity must not be one of the stages".into(),
            ));
        }
        if !self.signal.is_finite() {
            return Err(EventLogError::Spec("signal must be finite".into()));
        }
        Ok(())
    }
}

fn schema() -> Schema {
    let mut attributes = BTreeMap::new();
    let mut put = |name: &str, kind, is_static| {
        attributes.insert(name.to_string(), AttrSpec { kind, is_static });
    };
    put(PROTECTED_ATTR, AttrKind::Boolean, true);
    put(PROXY_ATTR, AttrKind::Boolean, true);
    put("case:age", AttrKind::Numeric, true);
    put("case:years_of_education", AttrKind::Numeric, true);
    put("resource", AttrKind::Categorical, false);
    put("score", AttrKind::Numeric, false);
    Schema { attributes }
}

fn round_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) + 0.5).floor() as usize
}

pub fn generate_synthetic_log(spec: &BiasSpec, seed: u64) -> Result<EventLog> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_cases;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_protected = round_count(spec.p_protected, n).min(n);
    let mut protected = vec![false; n];
    for &i in &order[..n_protected] {
        protected[i] = true;
    }

    let mut positive = vec![false; n];
    for (group, rate) in [(false, spec.positive_rate_s0), (true, spec.positive_rate_s1)] {
        let mut members: Vec<usize> = (0..n).filter(|&i| protected[i] == group).collect();
        members.shuffle(&mut rng);
        let k = round_count(rate, members.len()).min(members.len());
        for &i in &members[..k] {
            positive[i] = true;
        }
    }

    let score_noise = Normal::<f64>::new(0.0, 15.0).expect("valid normal");
    let age_dist = Normal::<f64>::new(38.0, 9.0).expect("valid normal");
    let edu_noise = Normal::<f64>::new(0.0, 2.5).expect("valid normal");
    let offices = ["Online Portal", "Recruitment Office"];
    let staff = ["R01", "R02", "R03", "R04", "R05", "R06"];
    let origin = Utc.with_ymd_and_hms(2023, 1, 2, 8, 0, 0).unwrap();

    let mut traces = Vec::with_capacity(n);
    for case in 0..n {
        let y = positive[case];
        let case_id = format!("case_{case:06}");
        let german_speaking = if rng.random::<f64>() < spec.proxy_strength {
            !protected[case]
        } else {
            rng.random::<bool>()
        };
        let age = age_dist.sample(&mut rng).clamp(18.0, 67.0).round();
        let education = (14.0 + if y { 1.0 } else { 0.0 } + edu_noise.sample(&mut rng))
            .clamp(8.0, 24.0)
            .round();
        let mut static_attrs = BTreeMap::new();
        static_attrs.insert(PROTECTED_ATTR.to_string(), AttrValue::Boolean(protected[case]));
        static_attrs.insert(PROXY_ATTR.to_string(), AttrValue::Boolean(german_speaking));
        static_attrs.insert("case:age".to_string(), AttrValue::Numeric(age));
        static_attrs.insert(
            "case:years_of_education".to_string(),
            AttrValue::Numeric(education),
        );

        let mut clock = origin + Duration::minutes(case as i64 * 17);
        let mut events = Vec::new();
        let mut push = |activity: &str, resource: &str, score: Option<f64>, rng: &mut ChaCha8Rng| {
            clock += Duration::minutes(rng.random_range(30..600));
            let mut attrs = BTreeMap::new();
            attrs.insert(
                "resource".to_string(),
                AttrValue::Categorical(resource.to_string()),
            );
            if let Some(s) = score {
                attrs.insert("score".to_string(), AttrValue::Numeric(s));
            }
            events.push(Event {
                case_id: case_id.clone(),
                activity: activity.to_string(),
                timestamp: clock,
                attrs,
            });
        };

        let mean_score = 50.0 + if y { spec.signal } else { 0.0 };
        let stay = if y { 0.8 } else { 0.55 };
        for (k, stage) in spec.stages.iter().enumerate() {
            if k >= 2 && rng.random::<f64>() >= stay {
                continue;
            }
            let resource = if k == 0 {
                *offices.choose(&mut rng).unwrap()
            } else {
                *staff.choose(&mut rng).unwrap()
            };
            let score = (k > 0).then(|| {
                (mean_score + score_noise.sample(&mut rng))
                    .clamp(0.0, 100.0)
                    .round()
            });
            push(stage, resource, score, &mut rng);
        }
        if y {
            let r = *staff.choose(&mut rng).unwrap();
            push(&spec.target_activity, r, None, &mut rng);
            push("Send Contract", r, None, &mut rng);
        }
        traces.push(Trace {
            case_id,
            events,
            static_attrs,
        });
    }
    Ok(EventLog {
        traces,
        schema: schema(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::label_and_cut;

    fn group_rates(log: &EventLog, target: &str) -> (f64, f64, f64) {
        let mut counts = [[0usize; 2]; 2];
        for t in &log.traces {
            let s = matches!(t.static_attrs[PROTECTED_ATTR], AttrValue::Boolean(true)) as usize;
            let (y, _) = label_and_cut(t, target);
            counts[s][y as usize] += 1;
        }
        let n0 = (counts[0][0] + counts[0][1]) as f64;
        let n1 = (counts[1][0] + counts[1][1]) as f64;
        (
            n1 / (n0 + n1),
            counts[0][1] as f64 / n0,
            counts[1][1] as f64 / n1,
        )
    }

    #[test]
    fn hiring_high_group_statistics() {
        let spec = BiasSpec::hiring(BiasLevel::High, 10_000);
        let log = generate_synthetic_log(&spec, 11).unwrap();
        let (p1, r0, r1) = group_rates(&log, &spec.target_activity);
        assert!((p1 - 0.1994).abs() < 0.02);
        assert!((r0 - 0.4886).abs() < 0.02);
        assert!((r1 - 0.1066).abs() < 0.02);
    }

    #[test]
    fn small_logs_within_two_points() {
        for level in [BiasLevel::High, BiasLevel::Medium, BiasLevel::Low] {
            let spec = BiasSpec::hiring(level, 2_000);
            for seed in 0..3 {
                let log = generate_synthetic_log(&spec, seed).unwrap();
                let (p1, r0, r1) = group_rates(&log, &spec.target_activity);
                assert!((p1 - spec.p_protected).abs() <= 0.02);
                assert!((r0 - spec.positive_rate_s0).abs() <= 0.02);
                assert!((r1 - spec.positive_rate_s1).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn unbiased_spec_has_no_label_disparity() {
        let mut spec = BiasSpec::hiring(BiasLevel::High, 4_000);
        spec.positive_rate_s1 = spec.positive_rate_s0;
        let log = generate_synthetic_log(&spec, 5).unwrap();
        let (_, r0, r1) = group_rates(&log, &spec.target_activity);
        assert!((r0 - r1).abs() < 0.005);
    }

    #[test]
    fn target_only_in_positive_cases() {
        let spec = BiasSpec::hiring(BiasLevel::Medium, 500);
        let log = generate_synthetic_log(&spec, 2).unwrap();
        for t in &log.traces {
            let hits = t.activities().filter(|a| *a == spec.target_activity).count();
            assert!(hits <= 1);
            assert!(!t.events.is_empty());
            assert!(t.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        }
    }

    #[test]
    fn independent_proxy_passes_chi_square() {
        let mut spec = BiasSpec::hiring(BiasLevel::High, 10_000);
        spec.proxy_strength = 0.0;
        let log = generate_synthetic_log(&spec, 21).unwrap();
        let mut table = [[0f64; 2]; 2];
        for t in &log.traces {
            let s = matches!(t.static_attrs[PROTECTED_ATTR], AttrValue::Boolean(true)) as usize;
            let p = matches!(t.static_attrs[PROXY_ATTR], AttrValue::Boolean(true)) as usize;
            table[s][p] += 1.0;
        }
        let n: f64 = table.iter().flatten().sum();
        let mut chi2 = 0.0;
        for (i, row) in table.iter().enumerate() {
            for (j, obs) in row.iter().enumerate() {
                let expected = (table[i][0] + table[i][1]) * (table[0][j] + table[1][j]) / n;
                chi2 += (obs - expected).powi(2) / expected;
            }
        }
        // 1 degree of freedom, alpha = 0.01
        assert!(chi2 < 6.635, "chi2 = {chi2}");
    }

    #[test]
    fn rejects_infeasible_rates() {
        let mut spec = BiasSpec::hiring(BiasLevel::Low, 100);
        spec.positive_rate_s1 = 1.2;
        assert!(matches!(
            generate_synthetic_log(&spec, 0),
            Err(EventLogError::Spec(_))
        ));
    }

    #[test]
    fn deterministic() {
        let spec = BiasSpec::hiring(BiasLevel::Low, 300);
        assert_eq!(
            generate_synthetic_log(&spec, 4).unwrap(),
            generate_synthetic_log(&spec, 4).unwrap()
        );
    }
}
