//! Flat sectioned `key = value` configuration with named presets and
//! override handling. Unknown keys are rejected at parse/override time.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset '{0}'; available: {}", PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config line {0}: expected 'key = value', got '{1}'")]
    BadLine(usize, String),
    #[error("key '{key}': expected {expected}, got '{got}'")]
    BadValue {
        key: String,
        expected: &'static str,
        got: String,
    },
    #[error("missing required key '{0}'")]
    MissingKey(String),
}

pub const PRESET_NAMES: [&str; 5] = [
    "poro-5.1",
    "poro-5.1-desk",
    "network-5.2",
    "network-m2",
    "toy-5.3",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    TwoField,
    Network,
    Toy,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::TwoField => "two-field",
            ModelKind::Network => "network",
            ModelKind::Toy => "toy",
        }
    }
}

/// Keys the parser accepts. Load/initial values are small expression names
/// documented in the README (`zero`, `const:<v>`, `exp:<scale>`, `sin`,
/// `bubble:<scale>`, `bump`).
const KNOWN_KEYS: [&str; 18] = [
    "model.kind",
    "mesh.n",
    "mesh.domain", // square | punched
    "mesh.hole_x",
    "mesh.hole_y",
    "mesh.hole_r",
    "params.lambda",
    "params.mu",
    "params.kappa_over_nu", // comma-separated, one entry per network
    "params.inv_m",
    "params.alpha", // comma-separated
    "time.tau",
    "time.t_final",
    "loads.f",
    "loads.g", // comma-separated per network for the network model
    "toy.omega",
    "initial.p0",
    "initial.p", // comma-separated per network
];

fn key_known(key: &str) -> bool {
    KNOWN_KEYS.contains(&key) || is_beta_key(key)
}

fn is_beta_key(key: &str) -> bool {
    // beta.<i>_<j> with 1-based network indices.
    key.strip_prefix("beta.")
        .and_then(|rest| rest.split_once('_'))
        .map(|(i, j)| i.parse::<usize>().is_ok() && j.parse::<usize>().is_ok())
        .unwrap_or(false)
}

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn preset(name: &str) -> Result<Config, ConfigError> {
        let entries: &[(&str, &str)] = match name {
            "poro-5.1" => &[
                ("model.kind", "two-field"),
                ("mesh.n", "32"),
                ("mesh.domain", "square"),
                ("params.lambda", "1.2e10"),
                ("params.mu", "6.0e9"),
                ("params.kappa_over_nu", "6.33e2"),
                ("params.inv_m", "7.8e3"),
                ("params.alpha", "0.79"),
                ("time.tau", "0.0625"),
                ("time.t_final", "10"),
                ("loads.f", "zero"),
                ("loads.g", "exp:10"),
                ("initial.p0", "bubble:3000"),
            ],
            // Same physics at the desk-scale ladder defaults used by the
            // convergence study (shorter horizon, coarser mesh).
            "poro-5.1-desk" => &[
                ("model.kind", "two-field"),
                ("mesh.n", "16"),
                ("mesh.domain", "square"),
                ("params.lambda", "1.2e10"),
                ("params.mu", "6.0e9"),
                ("params.kappa_over_nu", "6.33e2"),
                ("params.inv_m", "7.8e3"),
                ("params.alpha", "0.79"),
                ("time.tau", "0.03125"),
                ("time.t_final", "1"),
                ("loads.f", "zero"),
                ("loads.g", "exp:10"),
                ("initial.p0", "bubble:3000"),
            ],
            "network-5.2" => &[
                ("model.kind", "network"),
                ("mesh.n", "16"),
                ("mesh.domain", "punched"),
                ("mesh.hole_x", "0.5"),
                ("mesh.hole_y", "0.5"),
                ("mesh.hole_r", "0.25"),
                ("params.lambda", "7786.42"),
                ("params.mu", "3337.037"),
                ("params.kappa_over_nu", "3.75e-4,3.75e-4,1.57e-5,3.75e-5"),
                ("params.inv_m", "4.5e-2"),
                ("params.alpha", "0.99,0.99,0.99,0.99"),
                ("beta.1_2", "1.5e-19"),
                ("beta.2_4", "1.5e-19"),
                ("beta.2_3", "2e-19"),
                ("beta.3_4", "1e-13"),
                ("time.tau", "0.0625"),
                ("time.t_final", "10"),
                ("loads.f", "zero"),
                ("loads.g", "zero,zero,zero,zero"),
                ("initial.p", "bump,const:650,const:1000,const:650"),
            ],
            // Two-network reduction on the plain square for nested
            // convergence studies.
            "network-m2" => &[
                ("model.kind", "network"),
                ("mesh.n", "8"),
                ("mesh.domain", "square"),
                ("params.lambda", "7786.42"),
                ("params.mu", "3337.037"),
                ("params.kappa_over_nu", "3.75e-4,1.57e-5"),
                ("params.inv_m", "4.5e-2"),
                ("params.alpha", "0.99,0.99"),
                ("beta.1_2", "1e-13"),
                ("time.tau", "0.125"),
                ("time.t_final", "1"),
                ("loads.f", "zero"),
                ("loads.g", "zero,zero"),
                ("initial.p", "bubble:13300,const:650"),
            ],
            "toy-5.3" => &[
                ("model.kind", "toy"),
                ("toy.omega", "0.1"),
                ("time.tau", "0.01"),
                ("time.t_final", "1"),
            ],
            _ => return Err(ConfigError::UnknownPreset(name.to_string())),
        };
        Ok(Config {
            values: entries
                .iter()
                .map(|&(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        })
    }

    /// Parses the flat sectioned text format: `[section]` headers, `key = value`
    /// lines, `#` comments.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(lineno + 1, raw.to_string()));
            };
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            if !key_known(&full) {
                return Err(ConfigError::UnknownKey(full));
            }
            values.insert(full, value.trim().to_string());
        }
        Ok(Config { values })
    }

    /// Applies a `key=value` override (the CLI `--set` form).
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(ConfigError::BadLine(0, assignment.to_string()));
        };
        let key = key.trim();
        if !key_known(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn kind(&self) -> Result<ModelKind, ConfigError> {
        match self.get_str("model.kind")? {
            "two-field" => Ok(ModelKind::TwoField),
            "network" => Ok(ModelKind::Network),
            "toy" => Ok(ModelKind::Toy),
            other => Err(ConfigError::BadValue {
                key: "model.kind".into(),
                expected: "two-field | network | toy",
                got: other.to_string(),
            }),
        }
    }

    pub fn get_str(&self, key: &str) -> Result<&str, ConfigError> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    pub fn get_str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.values.get(key).map(String::as_str).unwrap_or(default)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ConfigError> {
        let s = self.get_str(key)?;
        s.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            expected: "a number",
            got: s.to_string(),
        })
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ConfigError> {
        let s = self.get_str(key)?;
        s.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            expected: "a non-negative integer",
            got: s.to_string(),
        })
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let s = self.get_str(key)?;
        s.split(',')
            .map(|part| {
                part.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    expected: "a comma-separated number list",
                    got: s.to_string(),
                })
            })
            .collect()
    }

    pub fn get_str_list(&self, key: &str) -> Result<Vec<&str>, ConfigError> {
        Ok(self.get_str(key)?.split(',').map(str::trim).collect())
    }

    /// Symmetric m x m exchange table from `beta.<i>_<j>` keys (1-based).
    pub fn beta_table(&self, m: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
        let mut beta = vec![vec![0.0; m]; m];
        for (key, value) in &self.values {
            if !is_beta_key(key) {
                continue;
            }
            let rest = key.strip_prefix("beta.").unwrap();
            let (i, j) = rest.split_once('_').unwrap();
            let (i, j): (usize, usize) = (i.parse().unwrap(), j.parse().unwrap());
            if i == 0 || j == 0 || i > m || j > m {
                return Err(ConfigError::BadValue {
                    key: key.clone(),
                    expected: "network indices between 1 and m",
                    got: key.clone(),
                });
            }
            let v: f64 = value.parse().map_err(|_| ConfigError::BadValue {
                key: key.clone(),
                expected: "a number",
                got: value.clone(),
            })?;
            beta[i - 1][j - 1] = v;
            beta[j - 1][i - 1] = v;
        }
        Ok(beta)
    }

    /// All key/value pairs in deterministic order (for metadata sidecars).
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Serializes back to the sectioned text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = String::new();
        for (key, value) in &self.values {
            let (sec, name) = key.split_once('.').unwrap_or(("", key.as_str()));
            if sec != section {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                section = sec.to_string();
            }
            out.push_str(&format!("{name} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_all_load() {
        for name in PRESET_NAMES {
            let c = Config::preset(name).unwrap();
            c.kind().unwrap();
        }
        assert!(matches!(
            Config::preset("nope"),
            Err(ConfigError::UnknownPreset(_))
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = Config::preset("toy-5.3").unwrap();
        assert!(matches!(
            c.set("toy.gamma=1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(Config::parse("[mesh]\nbogus = 1\n").is_err());
    }

    #[test]
    fn overrides_apply_after_preset() {
        let mut c = Config::preset("poro-5.1").unwrap();
        c.set("mesh.n=16").unwrap();
        c.set("time.tau = 0.0625").unwrap();
        assert_eq!(c.get_usize("mesh.n").unwrap(), 16);
        assert_eq!(c.get_f64("time.tau").unwrap(), 0.0625);
    }

    #[test]
    fn parse_round_trip() {
        let c = Config::preset("network-5.2").unwrap();
        let text = c.to_text();
        let reparsed = Config::parse(&text).unwrap();
        assert_eq!(
            c.entries().collect::<Vec<_>>(),
            reparsed.entries().collect::<Vec<_>>()
        );
    }

    #[test]
    fn beta_table_symmetric() {
        let c = Config::preset("network-5.2").unwrap();
        let beta = c.beta_table(4).unwrap();
        assert_eq!(beta[0][1], 1.5e-19);
        assert_eq!(beta[1][0], 1.5e-19);
        assert_eq!(beta[2][3], 1e-13);
        assert_eq!(beta[0][2], 0.0);
        assert!((0..4).all(|i| beta[i][i] == 0.0));
    }

    #[test]
    fn parse_ignores_comments_and_blank_lines() {
        let c = Config::parse("# header\n[time]\ntau = 0.5 # inline\n\nt_final = 2\n").unwrap();
        assert_eq!(c.get_f64("time.tau").unwrap(), 0.5);
        assert_eq!(c.get_f64("time.t_final").unwrap(), 2.0);
    }
}
