//! Run configuration: JSON parsing, dotted-path overrides, validation and
//! the fingerprint embedded in every artifact.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::experiments::{linear_grid, log_grid, MeasureOptions, Scenario, SweepAxis};
use crate::lattice::{build_rhombic, build_ssh_with, Lattice, RhombicTermination, SshOptions};
use crate::leads::RingLead;
use crate::master_eq::SolverConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub leads: LeadsConfig,
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub decoherence: DecoherenceConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LatticeConfig {
    Ssh {
        #[serde(rename = "L")]
        sites: usize,
        #[serde(rename = "J")]
        hopping: f64,
        #[serde(rename = "J_tilde")]
        hopping_weak: f64,
        #[serde(default)]
        delta: f64,
        #[serde(default)]
        allow_odd_length: bool,
    },
    Rhombic {
        #[serde(rename = "L")]
        rhombs: usize,
        #[serde(rename = "J_abs")]
        hopping_abs: f64,
        phi: f64,
        #[serde(default)]
        delta: f64,
        #[serde(default)]
        termination: RhombicTermination,
    },
}

impl LatticeConfig {
    pub fn delta(&self) -> f64 {
        match *self {
            LatticeConfig::Ssh { delta, .. } | LatticeConfig::Rhombic { delta, .. } => delta,
        }
    }

    pub fn build(&self) -> Result<Lattice> {
        match *self {
            LatticeConfig::Ssh { sites, hopping, hopping_weak, delta, allow_odd_length } => {
                build_ssh_with(sites, hopping, hopping_weak, delta, SshOptions { allow_odd_length })
            }
            LatticeConfig::Rhombic { rhombs, hopping_abs, phi, delta, termination } => {
                build_rhombic(rhombs, hopping_abs, phi, delta, termination)
            }
        }
    }
}

/// Inverse temperature; `"inf"` (or any JSON number) in config files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta(pub f64);

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Beta;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Beta, E> {
                Ok(Beta(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Beta, E> {
                Ok(Beta(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Beta, E> {
                Ok(Beta(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Beta, E> {
                match v {
                    "inf" | "infinity" | "Infinity" => Ok(Beta(f64::INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

fn default_lead_sites() -> usize {
    40
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadsConfig {
    #[serde(rename = "M", default = "default_lead_sites")]
    pub sites: usize,
    #[serde(rename = "J_lead", default = "one")]
    pub hopping: f64,
    #[serde(rename = "mu_L")]
    pub mu_left: f64,
    #[serde(rename = "mu_R")]
    pub mu_right: f64,
    pub beta: Beta,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoherenceConfig {
    #[serde(default)]
    pub kappa: f64,
}

fn default_imbalance_sites() -> usize {
    2
}

fn default_fit_window() -> f64 {
    0.6
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// End sites averaged by the imbalance column.
    #[serde(rename = "K", default = "default_imbalance_sites")]
    pub imbalance_sites: usize,
    #[serde(default = "default_fit_window")]
    pub fit_window: f64,
    #[serde(default = "yes")]
    pub warm_start: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { imbalance_sites: 2, fit_window: 0.6, warm_start: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxisName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_range: Option<LogRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxisName {
    Delta,
    Kappa,
}

impl From<SweepAxisName> for SweepAxis {
    fn from(a: SweepAxisName) -> Self {
        match a {
            SweepAxisName::Delta => SweepAxis::Delta,
            SweepAxisName::Kappa => SweepAxis::Kappa,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        match (&self.values, &self.range, &self.log_range) {
            (Some(v), None, None) => Ok(v.clone()),
            (None, Some(r), None) => linear_grid(r.start, r.stop, r.step),
            (None, None, Some(r)) => log_grid(r.start, r.stop, r.points),
            _ => Err(Error::config("sweep", "give exactly one of `values`, `range`, `log_range`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

fn default_out() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub path: String,
    #[serde(default)]
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { path: default_out(), format: OutputFormat::Csv }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub allow_reverse_bias: bool,
}

/// Parse, apply `key=value` overrides and validate.
pub fn parse_config(text: &str, overrides: &[String], opts: ParseOptions) -> Result<RunConfig> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate(opts)?;
    Ok(cfg)
}

/// Set `a.b.c` to `value`, parsed as JSON when possible and as a string
/// otherwise. Intermediate objects are created on demand.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key.path=value"))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty path segment"));
    }
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(Error::config(parts[..i].join("."), "cannot override inside a non-object value"));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one segment")
}

fn nonneg(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be a finite number >= 0, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self, opts: ParseOptions) -> Result<()> {
        let l = &self.leads;
        if !opts.allow_reverse_bias && l.mu_left < l.mu_right {
            return Err(Error::config(
                "leads.mu_L, leads.mu_R",
                format!("mu_L ({}) < mu_R ({}); pass --allow-reverse-bias to permit", l.mu_left, l.mu_right),
            ));
        }
        nonneg("leads.gamma", l.gamma)?;
        nonneg("leads.J_lead", l.hopping)?;
        if !(l.beta.0 >= 0.0) {
            return Err(Error::config("leads.beta", "must be >= 0 or \"inf\""));
        }
        nonneg("coupling.epsilon", self.coupling.epsilon)?;
        nonneg("decoherence.kappa", self.decoherence.kappa)?;
        match self.lattice {
            LatticeConfig::Ssh { hopping, hopping_weak, .. } => {
                nonneg("lattice.J", hopping)?;
                nonneg("lattice.J_tilde", hopping_weak)?;
            }
            LatticeConfig::Rhombic { hopping_abs, phi, .. } => {
                nonneg("lattice.J_abs", hopping_abs)?;
                if !phi.is_finite() {
                    return Err(Error::config("lattice.phi", "must be finite"));
                }
            }
        }
        if !(self.analysis.fit_window > 0.0 && self.analysis.fit_window <= 1.0) {
            return Err(Error::config("analysis.fit_window", "must lie in (0, 1]"));
        }
        self.solver.validate().map_err(|e| Error::config("solver", e.to_string()))?;
        if let Some(s) = &self.sweep {
            s.grid()?;
        }
        // Surface builder errors (odd SSH length, ring too small, ...) now.
        self.lattice.build().map_err(|e| Error::config("lattice", e.to_string()))?;
        self.leads_pair().map_err(|e| Error::config("leads", e.to_string()))?;
        Ok(())
    }

    pub fn leads_pair(&self) -> Result<(RingLead, RingLead)> {
        let l = &self.leads;
        Ok((
            RingLead::new(l.sites, l.hopping, l.mu_left, l.beta.0, l.gamma)?,
            RingLead::new(l.sites, l.hopping, l.mu_right, l.beta.0, l.gamma)?,
        ))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let (left, right) = self.leads_pair()?;
        Ok(Scenario {
            lattice: self.lattice.build()?,
            left,
            right,
            epsilon: self.coupling.epsilon,
            kappa: self.decoherence.kappa,
            solver: self.solver.clone(),
        })
    }

    pub fn measure_options(&self) -> MeasureOptions {
        MeasureOptions { imbalance_sites: self.analysis.imbalance_sites, fit_window: self.analysis.fit_window }
    }

    /// Canonical JSON of the materialized configuration without the output
    /// section: object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output");
        }
        canonicalize(&v)
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_json`].
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }
}

fn canonicalize(v: &Value) -> String {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonicalize(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonicalize).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "lattice": {"kind": "ssh", "L": 60, "J": 1, "J_tilde": 0.5},
        "leads": {"mu_L": 0.0785398163397448, "mu_R": -0.0785398163397448, "beta": "inf", "gamma": 0.05},
        "coupling": {"epsilon": 0.2}
    }"#;

    #[test]
    fn defaults_are_materialized() {
        let cfg = parse_config(MINIMAL, &[], ParseOptions::default()).unwrap();
        assert_eq!(cfg.leads.sites, 40);
        assert_eq!(cfg.leads.hopping, 1.0);
        assert!(cfg.leads.beta.0.is_infinite());
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.decoherence.kappa, 0.0);
        let echoed = cfg.canonical_json();
        assert!(echoed.contains("\"M\":40"), "{echoed}");
        assert!(echoed.contains("\"method\":\"sylvester_iteration\""), "{echoed}");
        assert!(echoed.contains("\"beta\":\"inf\""));
    }

    #[test]
    fn reverse_bias_names_both_fields() {
        let err = parse_config(MINIMAL, &["leads.mu_L=-0.1".into()], ParseOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mu_L") && msg.contains("mu_R"), "{msg}");
        parse_config(MINIMAL, &["leads.mu_L=-0.1".into()], ParseOptions { allow_reverse_bias: true }).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let text = MINIMAL.replace("\"gamma\"", "\"gamme\": 1, \"gamma\"");
        let msg = parse_config(&text, &[], ParseOptions::default()).unwrap_err().to_string();
        assert!(msg.contains("leads") && msg.contains("gamme"), "{msg}");
        let msg = parse_config(MINIMAL, &["solver.tolerance=1".into()], ParseOptions::default()).unwrap_err().to_string();
        assert!(msg.contains("solver") && msg.contains("tolerance"), "{msg}");
        let msg = parse_config(MINIMAL, &["lattice.J_abs=1".into()], ParseOptions::default()).unwrap_err().to_string();
        assert!(msg.contains("J_abs"), "{msg}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        for ov in ["coupling.epsilon=-1", "decoherence.kappa=-0.1", "leads.beta=\"hot\"", "lattice.L=61", "leads.M=2"] {
            assert!(parse_config(MINIMAL, &[ov.to_string()], ParseOptions::default()).is_err(), "{ov}");
        }
        parse_config(MINIMAL, &["lattice.L=61".into(), "lattice.allow_odd_length=true".into()], ParseOptions::default())
            .unwrap();
    }

    #[test]
    fn overrides_and_fingerprint() {
        let a = parse_config(MINIMAL, &[], ParseOptions::default()).unwrap();
        let b = parse_config(MINIMAL, &["output.path=elsewhere".into()], ParseOptions::default()).unwrap();
        assert_eq!(b.output.path, "elsewhere");
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = parse_config(MINIMAL, &["decoherence.kappa=0.003".into()], ParseOptions::default()).unwrap();
        assert_eq!(c.decoherence.kappa, 0.003);
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
        assert!(parse_config(MINIMAL, &["novalue".into()], ParseOptions::default()).is_err());
    }

    #[test]
    fn fingerprint_ignores_key_order_and_defaults() {
        let reordered = r#"{
            "coupling": {"epsilon": 0.2},
            "leads": {"gamma": 0.05, "beta": "inf", "mu_R": -0.0785398163397448, "mu_L": 0.0785398163397448, "M": 40},
            "lattice": {"J_tilde": 0.5, "J": 1, "L": 60, "kind": "ssh", "delta": 0}
        }"#;
        let a = parse_config(MINIMAL, &[], ParseOptions::default()).unwrap();
        let b = parse_config(reordered, &[], ParseOptions::default()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn sweep_grids() {
        let s = SweepConfig { axis: SweepAxisName::Delta, values: None, range: Some(Range { start: -1.2, stop: 1.2, step: 0.01 }), log_range: None };
        assert_eq!(s.grid().unwrap().len(), 241);
        let both = SweepConfig { values: Some(vec![0.0]), ..s };
        assert!(both.grid().is_err());
    }
}
