//! The single JSON configuration document consumed by every CLI command,
//! plus dotted-path overrides and the echo used for round-trip checks.

use serde::{Deserialize, Serialize};

use crate::experiments::{ExperimentConfig, LossDirective};
use crate::{Error, Result};

fn default_sb_draws() -> usize {
    100_000
}
fn default_sb_theta() -> f64 {
    0.25
}
fn default_sb_directions() -> usize {
    64
}
fn default_kappa_max() -> f64 {
    3.0
}
fn default_kappa_count() -> usize {
    61
}

/// Settings for the `smallball` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmallBallSection {
    /// Draws of the scalar marginal used for the empirical curve.
    pub draws: usize,
    /// Explicit kappa grid; when absent, `kappa_count` points on
    /// `[kappa_min, kappa_max]`.
    pub kappa_values: Option<Vec<f64>>,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub kappa_count: usize,
    /// Paley–Zygmund level.
    pub theta: f64,
    pub num_directions: usize,
    /// Radius of the slice probed by the directional check; defaults to the
    /// largest norm the set allows, capped at 1.
    pub radius: Option<f64>,
}

impl Default for SmallBallSection {
    fn default() -> Self {
        SmallBallSection {
            draws: default_sb_draws(),
            kappa_values: None,
            kappa_min: 0.0,
            kappa_max: default_kappa_max(),
            kappa_count: default_kappa_count(),
            theta: default_sb_theta(),
            num_directions: default_sb_directions(),
            radius: None,
        }
    }
}

impl SmallBallSection {
    pub fn validate(&self) -> Result<()> {
        if self.draws < 100 {
            return Err(Error::config("smallball.draws must be at least 100"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::config(format!(
                "smallball.theta must lie in (0,1), got {}",
                self.theta
            )));
        }
        if self.num_directions == 0 {
            return Err(Error::config("smallball.num_directions must be positive"));
        }
        if self.kappa_values.is_none() {
            if self.kappa_count < 2 || !(self.kappa_max > self.kappa_min) {
                return Err(Error::config("smallball kappa grid is empty"));
            }
        }
        Ok(())
    }

    pub fn kappa_grid(&self) -> Vec<f64> {
        match &self.kappa_values {
            Some(v) => v.clone(),
            None => {
                let k = self.kappa_count;
                (0..k)
                    .map(|i| {
                        self.kappa_min
                            + (self.kappa_max - self.kappa_min) * i as f64 / (k - 1) as f64
                    })
                    .collect()
            }
        }
    }
}

fn default_cx_kappa0() -> f64 {
    0.5
}
fn default_cx_eps() -> f64 {
    0.1875
}
fn default_cx_delta() -> f64 {
    0.05
}
fn default_cx_budget() -> usize {
    2000
}
fn default_cx_cap() -> f64 {
    1e3
}
fn default_cx_lip() -> f64 {
    1.0
}
fn default_cx_t2_scale() -> f64 {
    0.5
}
fn default_cx_net() -> usize {
    512
}

/// Settings for the `complexity` command. The width/quantile thresholds
/// default to the small-ball driven choices `zeta1 = kappa0 eps^{3/2}`,
/// `zeta2 = kappa0 eps`, `kappa = eps kappa0^2 rho(0, t2)/256` with
/// `t2 = t2_scale * sigma`; all overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplexitySection {
    pub kappa0: f64,
    pub eps: f64,
    pub zeta1: Option<f64>,
    pub zeta2: Option<f64>,
    pub kappa: Option<f64>,
    pub delta: f64,
    pub mc_budget: usize,
    pub cap: f64,
    pub lipschitz: f64,
    pub t2_scale: f64,
    pub r0_net_size: usize,
}

impl Default for ComplexitySection {
    fn default() -> Self {
        ComplexitySection {
            kappa0: default_cx_kappa0(),
            eps: default_cx_eps(),
            zeta1: None,
            zeta2: None,
            kappa: None,
            delta: default_cx_delta(),
            mc_budget: default_cx_budget(),
            cap: default_cx_cap(),
            lipschitz: default_cx_lip(),
            t2_scale: default_cx_t2_scale(),
            r0_net_size: default_cx_net(),
        }
    }
}

impl ComplexitySection {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa0 > 0.0) {
            return Err(Error::config("complexity.kappa0 must be positive"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::config("complexity.eps must lie in (0,1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("complexity.delta must lie in (0,1)"));
        }
        if self.mc_budget < 100 {
            return Err(Error::config("complexity.mc_budget must be at least 100"));
        }
        if !(self.cap > 0.0) {
            return Err(Error::config("complexity.cap must be positive"));
        }
        if !(self.lipschitz > 0.0) {
            return Err(Error::config("complexity.lipschitz must be positive"));
        }
        Ok(())
    }

    pub fn zeta1_value(&self) -> f64 {
        self.zeta1.unwrap_or(self.kappa0 * self.eps.powf(1.5))
    }

    pub fn zeta2_value(&self) -> f64 {
        self.zeta2.unwrap_or(self.kappa0 * self.eps)
    }
}

/// The whole configuration document. Experiment fields sit at the top level;
/// `smallball` and `complexity` hold their commands' extra knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    /// When present, `experiment` runs a shared-seed loss comparison over
    /// this list instead of the single configured loss.
    #[serde(default)]
    pub losses: Option<Vec<LossDirective>>,
    #[serde(default)]
    pub smallball: SmallBallSection,
    #[serde(default)]
    pub complexity: ComplexitySection,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.smallball.validate()?;
        self.complexity.validate()?;
        if let Some(losses) = &self.losses {
            if losses.is_empty() {
                return Err(Error::config("losses list must be non-empty when present"));
            }
            for l in losses {
                l.validate()?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Apply one `key=value` override to a JSON document. Keys are dotted paths
/// (`trials=5`, `loss.gamma=2.0`, `sweep.values=[1,2,3]`); values parse as
/// JSON when possible and fall back to strings.
pub fn apply_override(doc: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        Error::config(format!("override '{spec}' is not of the form KEY=VALUE"))
    })?;
    if key.is_empty() {
        return Err(Error::config(format!("override '{spec}' has an empty key")));
    }
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::config(format!("override '{key}': '{part}' is not an object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
    }
    unreachable!("parts is non-empty");
}

/// Parse a config file with overrides and an optional master-seed override.
pub fn load_config(text: &str, overrides: &[String], seed: Option<u64>) -> Result<Config> {
    let mut doc: serde_json::Value = serde_json::from_str(text)?;
    if !doc.is_object() {
        return Err(Error::config("config document must be a JSON object"));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(s) = seed {
        doc.as_object_mut()
            .expect("checked above")
            .insert("master_seed".to_string(), serde_json::json!(s));
    }
    let cfg: Config = serde_json::from_value(doc)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "experiment_id": "demo",
        "dim": 4,
        "n_samples": 32,
        "trials": 3,
        "master_seed": 1,
        "design": {"kind": "gaussian_isotropic"},
        "noise": {"kind": "none"},
        "target": {"kind": "axis", "index": 0, "scale": 1.0},
        "set": {"kind": "full_space", "dim": 4},
        "loss": {"kind": "squared"}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = Config::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.experiment.trials, 3);
        assert_eq!(cfg.experiment.holdout, 100_000);
        assert_eq!(cfg.smallball.draws, 100_000);
        assert!((cfg.complexity.zeta1_value() - 0.5 * 0.1875f64.powf(1.5)).abs() < 1e-15);
    }

    #[test]
    fn negative_gamma_is_a_config_error_naming_the_key() {
        let text = MINIMAL.replace(
            r#""loss": {"kind": "squared"}"#,
            r#""loss": {"kind": "huber", "gamma": -1.0}"#,
        );
        let err = Config::from_json(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gamma"), "message should name the key: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let mut doc: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut doc, "trials=7").unwrap();
        apply_override(&mut doc, "loss.kind=logistic").unwrap();
        apply_override(&mut doc, "complexity.delta=0.01").unwrap();
        let cfg: Config = serde_json::from_value(doc).unwrap();
        assert_eq!(cfg.experiment.trials, 7);
        assert_eq!(cfg.experiment.loss.label(), "logistic");
        assert_eq!(cfg.complexity.delta, 0.01);
    }

    #[test]
    fn seed_override_wins() {
        let cfg = load_config(MINIMAL, &[], Some(99)).unwrap();
        assert_eq!(cfg.experiment.master_seed, 99);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = load_config(MINIMAL, &["trials=9".to_string()], Some(5)).unwrap();
        let echo = serde_json::to_string_pretty(&cfg).unwrap();
        let back = Config::from_json(&echo).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn malformed_override_is_rejected() {
        let mut doc: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        assert!(apply_override(&mut doc, "no_equals_sign").is_err());
        assert!(apply_override(&mut doc, "=5").is_err());
    }
}
