//! TOML run configuration.
//!
//! Keys carry their units (`*_dbm`, `*_db`, `*_m`); conversion to linear
//! units happens once, in [`crate::channel::SystemParams::link_budget`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::active_reflect::InnerConfig;
use crate::ao_driver::OuterConfig;
use crate::channel::{SurfaceGeometry, SystemParams};
use crate::error::{Error, Result};
use crate::oracle::BfsConfig;
use crate::port_select::CemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    /// Elements per row.
    pub m_x: usize,
    /// Rows; defaults to `m_x` (square surface).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_y: Option<usize>,
    /// Aperture width in wavelengths.
    pub w_x: f64,
    pub wavelength_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { m_x: 6, m_y: None, w_x: 2.0, wavelength_m: 0.06 }
    }
}

impl GeometryConfig {
    pub fn surface(&self) -> Result<SurfaceGeometry> {
        SurfaceGeometry::rectangular(self.m_x, self.m_y.unwrap_or(self.m_x), self.w_x, self.wavelength_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterSection {
    pub eps_out: f64,
    pub max_outer_iters: usize,
    /// Frozen fading samples per run.
    pub saa_samples: usize,
}

impl Default for OuterSection {
    fn default() -> Self {
        let d = OuterConfig::default();
        Self { eps_out: d.eps_out, max_outer_iters: d.max_outer_iters, saa_samples: d.saa_samples }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BfsSection {
    pub phase_bits: u32,
    pub gain_levels: usize,
    pub max_search_size: u64,
    /// Paired trials of `bfs-compare`.
    pub trials: usize,
}

impl Default for BfsSection {
    fn default() -> Self {
        let d = BfsConfig::default();
        Self { phase_bits: d.phase_bits, gain_levels: d.gain_levels, max_search_size: d.max_search_size, trials: 10 }
    }
}

impl BfsSection {
    pub fn config(&self) -> BfsConfig {
        BfsConfig { phase_bits: self.phase_bits, gain_levels: self.gain_levels, max_search_size: self.max_search_size }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Faris,
    FrisMode,
    ArisMode,
    Bfs,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Faris => "faris",
            Mode::FrisMode => "fris_mode",
            Mode::ArisMode => "aris_mode",
            Mode::Bfs => "bfs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    #[serde(rename = "tx_power_dbm")]
    TxPowerDbm,
    /// Total element count; values must be perfect squares.
    #[serde(rename = "M", alias = "m")]
    M,
    #[serde(rename = "w_x")]
    WX,
    #[serde(rename = "none")]
    None,
}

impl SweepVar {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepVar::TxPowerDbm => "tx_power_dbm",
            SweepVar::M => "M",
            SweepVar::WX => "w_x",
            SweepVar::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: Mode,
    #[serde(default = "sweep_none")]
    pub sweep_var: SweepVar,
    #[serde(default)]
    pub sweep_values: Vec<f64>,
    #[serde(default = "one")]
    pub trials: usize,
    /// Overrides the top-level `m_o`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_o: Option<usize>,
}

fn sweep_none() -> SweepVar {
    SweepVar::None
}

fn one() -> usize {
    1
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scenario '{}': {msg}", self.name)));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        match self.sweep_var {
            SweepVar::None if !self.sweep_values.is_empty() => {
                return bad("sweep_values given without a sweep_var".into());
            }
            SweepVar::None => {}
            _ if self.sweep_values.is_empty() => return bad("sweep_values is empty".into()),
            _ => {}
        }
        if self.sweep_values.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("sweep_values must be strictly increasing".into());
        }
        if self.sweep_var == SweepVar::M {
            for &v in &self.sweep_values {
                if perfect_square_side(v).is_none() {
                    return bad(format!("M sweep value {v} is not a perfect square >= 4"));
                }
            }
        }
        Ok(())
    }

    /// Sweep points; a single `None` when nothing is swept.
    pub fn points(&self) -> Vec<Option<f64>> {
        if self.sweep_var == SweepVar::None {
            vec![None]
        } else {
            self.sweep_values.iter().map(|&v| Some(v)).collect()
        }
    }
}

/// `√M` if `M` is a perfect square of an integer ≥ 2.
pub fn perfect_square_side(m: f64) -> Option<usize> {
    if !(m.is_finite() && m >= 4.0 && m.fract() == 0.0) {
        return None;
    }
    let s = (m.sqrt().round()) as usize;
    (s * s == m as usize).then_some(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; trial `k` of a scenario uses `seed + k`.
    pub seed: u64,
    pub m_o: usize,
    pub geometry: GeometryConfig,
    pub system: SystemParams,
    pub inner: InnerConfig,
    pub cem: CemConfig,
    pub outer: OuterSection,
    pub bfs: BfsSection,
    #[serde(rename = "scenario", skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            m_o: 9,
            geometry: GeometryConfig::default(),
            system: SystemParams::default(),
            inner: InnerConfig::default(),
            cem: CemConfig::default(),
            outer: OuterSection::default(),
            bfs: BfsSection::default(),
            scenarios: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn outer_config(&self, seed: u64) -> OuterConfig {
        OuterConfig {
            eps_out: self.outer.eps_out,
            max_outer_iters: self.outer.max_outer_iters,
            saa_samples: self.outer.saa_samples,
            seed,
            inner: self.inner,
            cem: self.cem,
        }
    }

    /// Checks everything except the scenarios, with `m_o` in place of the
    /// top-level value.
    pub fn validate_for(&self, m_o: usize) -> Result<()> {
        let geom = self.geometry.surface().map_err(|e| Error::Config(e.to_string()))?;
        let m = geom.num_elements();
        if m_o == 0 || m_o > m {
            return Err(Error::Config(format!("m_o = {m_o} must lie in 1..={m}")));
        }
        self.outer_config(self.seed).validate(m)?;
        self.bfs.config().validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_for(self.m_o)?;
        for (i, sc) in self.scenarios.iter().enumerate() {
            sc.validate()?;
            if self.scenarios[..i].iter().any(|o| o.name == sc.name) {
                return Err(Error::Config(format!("duplicate scenario name '{}'", sc.name)));
            }
        }
        Ok(())
    }

    pub fn scenario(&self, name: &str) -> Result<&ScenarioConfig> {
        self.scenarios.iter().find(|s| s.name == name).ok_or_else(|| {
            let names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
            Error::Config(format!("unknown scenario '{name}'; available: [{}]", names.join(", ")))
        })
    }

    /// Parses TOML text and applies `key=value` overrides (dotted keys
    /// address nested tables; values are TOML literals, bare words are
    /// taken as strings).
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn apply_override(doc: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{ov}' is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override '{ov}' has an empty key segment")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{ov}': '{part}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Default configuration with an example scenario of each mode, as TOML.
pub fn reference_toml() -> String {
    let mut cfg = RunConfig::default();
    cfg.scenarios = vec![
        ScenarioConfig {
            name: "power_sweep".into(),
            mode: Mode::Faris,
            sweep_var: SweepVar::TxPowerDbm,
            sweep_values: vec![5.0, 10.0, 15.0, 20.0],
            trials: 50,
            m_o: None,
        },
        ScenarioConfig {
            name: "baseline_fris".into(),
            mode: Mode::FrisMode,
            sweep_var: SweepVar::None,
            sweep_values: Vec::new(),
            trials: 50,
            m_o: None,
        },
        ScenarioConfig {
            name: "baseline_aris".into(),
            mode: Mode::ArisMode,
            sweep_var: SweepVar::None,
            sweep_values: Vec::new(),
            trials: 50,
            m_o: None,
        },
        ScenarioConfig {
            name: "size_sweep".into(),
            mode: Mode::Faris,
            sweep_var: SweepVar::M,
            sweep_values: vec![16.0, 36.0],
            trials: 20,
            m_o: Some(4),
        },
    ];
    let header = "\
# Reference configuration with every default spelled out.
# Units are part of the key names: *_dbm (dBm), *_db (dB), *_m (meters).
# geometry.m_y defaults to geometry.m_x; cem.n_mc defaults to 5 * M.
# sweep_var is one of tx_power_dbm, M, w_x, none; M values must be perfect squares.
# mode is one of faris, fris_mode, aris_mode, bfs.

";
    format!("{header}{}", cfg.to_toml())
}
