//! Interventions as transforms of equation terms and scheduler knobs.

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;

/// Scales an expectation used in frustration evaluation. Only positive
/// expectations shrink: lowering what one expects never turns a negative
/// expectation (an anticipated cost) into a worse one.
pub fn scale_expectation(expected: f64, beta: f64) -> f64 {
    if expected > 0.0 {
        beta * expected
    } else {
        expected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionConfig {
    pub name: String,
    pub expectation_scale: f64,
    pub certainty_scale: f64,
    pub attention_scale: f64,
    pub p_wander_override: Option<f64>,
    pub realness_override: Option<f64>,
    pub desire_threshold_delta: f64,
    pub self_standard_scale: f64,
    /// Drops the aversion-to-aversion event stream.
    pub acceptance: bool,
    /// Also scale the values desire compares against its threshold.
    pub coupled: bool,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        InterventionConfig {
            name: "baseline".into(),
            expectation_scale: 1.0,
            certainty_scale: 1.0,
            attention_scale: 1.0,
            p_wander_override: None,
            realness_override: None,
            desire_threshold_delta: 0.0,
            self_standard_scale: 1.0,
            acceptance: false,
            coupled: false,
        }
    }
}

impl InterventionConfig {
    pub fn identity() -> Self {
        Self::default()
    }

    fn preset(name: &str, f: impl FnOnce(&mut Self)) -> Self {
        let mut iv = InterventionConfig { name: name.into(), ..Self::default() };
        f(&mut iv);
        iv
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = [
            ("expectation_scale", Some(self.expectation_scale)),
            ("certainty_scale", Some(self.certainty_scale)),
            ("attention_scale", Some(self.attention_scale)),
            ("self_standard_scale", Some(self.self_standard_scale)),
            ("p_wander_override", self.p_wander_override),
            ("realness_override", self.realness_override),
        ];
        for (field, v) in unit {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("intervention {}: {field} {v} not in [0,1]", self.name));
                }
            }
        }
        if !(self.desire_threshold_delta >= 0.0 && self.desire_threshold_delta.is_finite()) {
            return Err(format!("intervention {}: desire_threshold_delta must be >= 0", self.name));
        }
        if self.name.is_empty() {
            return Err("intervention name is empty".into());
        }
        Ok(())
    }
}

/// Applies `iv` on top of `base`. Scales compose multiplicatively, so
/// applying the identity leaves the configuration unchanged.
pub fn apply(base: &AgentConfig, iv: &InterventionConfig) -> AgentConfig {
    let mut c = base.clone();
    c.expectation_scale *= iv.expectation_scale;
    c.certainty_scale *= iv.certainty_scale;
    c.attention_scale *= iv.attention_scale;
    if let Some(p) = iv.p_wander_override {
        c.wandering.p_wander = p;
    }
    if let Some(r) = iv.realness_override {
        c.wandering.realness = r;
    }
    c.goal_threshold += iv.desire_threshold_delta;
    c.self_model.standard *= iv.self_standard_scale;
    c.acceptance |= iv.acceptance;
    c.coupled |= iv.coupled;
    c.intervention = iv.name.clone();
    c
}

/// The eight named presets, baseline first.
pub fn canonical_suite() -> Vec<InterventionConfig> {
    vec![
        InterventionConfig::identity(),
        InterventionConfig::preset("stoic_expectations", |i| i.expectation_scale = 0.5),
        InterventionConfig::preset("skeptic", |i| i.certainty_scale = 0.5),
        InterventionConfig::preset("meta_awareness", |i| i.attention_scale = 0.3),
        InterventionConfig::preset("empty_mind", |i| i.p_wander_override = Some(0.0)),
        InterventionConfig::preset("fewer_desires", |i| i.desire_threshold_delta = 0.3),
        InterventionConfig::preset("no_self_eval", |i| i.self_standard_scale = 0.0),
        InterventionConfig::preset("acceptance", |i| i.acceptance = true),
    ]
}

/// Looks up a canonical preset by name.
pub fn preset(name: &str) -> Option<InterventionConfig> {
    canonical_suite().into_iter().find(|iv| iv.name == name)
}
