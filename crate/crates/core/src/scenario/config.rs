//! Scenario configuration: `key = value` text files with `#` comments,
//! defaulting to the Das 2008 lake-drainage case.

use std::path::PathBuf;

use crate::error::SimError;
use crate::mesh::DomainSpec;
use crate::solver::system::Rheology;

/// Ice temperature specification.
#[derive(Debug, Clone)]
pub enum TemperatureSpec {
    Constant(f64),
    ProfileFile(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub domain: DomainSpec,
    pub rheology: Rheology,
    pub temperature: TemperatureSpec,
    /// Constant tensile strength override, Pa.
    pub override_strength: Option<f64>,
    /// Constant creep coefficient override, Pa^-3 s^-1.
    pub override_creep: Option<f64>,
    pub dt: f64,
    pub duration: f64,
    /// Lake pressure at the crevasse mouth, Pa.
    pub p_ext: f64,
    /// Lake surface area, m^2.
    pub lake_area: f64,
    /// Out-of-plane width of the drainage system, m.
    pub w_oop: f64,
    /// Write a snapshot every N increments; 0 disables periodic snapshots.
    pub snapshot_stride: usize,
    pub out_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            domain: DomainSpec::das(),
            rheology: Rheology::Viscoelastic,
            temperature: TemperatureSpec::Constant(0.0),
            override_strength: None,
            override_creep: None,
            dt: 2.0,
            duration: 7200.0,
            p_ext: 1.0e5,
            lake_area: 5.6e6,
            w_oop: 3200.0,
            snapshot_stride: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.domain.validate()?;
        if !(self.duration > self.dt && self.dt > 0.0) {
            return Err(SimError::Domain(format!(
                "need duration > dt > 0, got duration={}, dt={}",
                self.duration, self.dt
            )));
        }
        if self.lake_area <= 0.0 || self.w_oop <= 0.0 {
            return Err(SimError::Domain(
                "lake_area and w_oop must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64, SimError> {
    value.parse::<f64>().map_err(|_| SimError::Config {
        line,
        msg: format!("{key}: expected a number, got '{value}'"),
    })
}

fn require_positive(line: usize, key: &str, v: f64) -> Result<f64, SimError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(SimError::Config {
            line,
            msg: format!("{key}: must be positive, got {v}"),
        })
    }
}

/// Parse a configuration text. Unknown keys are rejected, omitted keys keep
/// their Das-case defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, SimError> {
    let mut cfg = ScenarioConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(SimError::Config {
                line,
                msg: format!("expected 'key = value', got '{content}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "ice_thickness" => {
                cfg.domain.ice_thickness = require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "domain_width" => {
                cfg.domain.domain_width = require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "rock_thickness" => {
                cfg.domain.rock_thickness =
                    require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "notch_depth" => {
                cfg.domain.initial_notch_depth =
                    require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "fine_size" => {
                cfg.domain.fine_element_size =
                    require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "coarse_size" => {
                cfg.domain.coarse_element_size =
                    require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "fine_halfwidth" => {
                cfg.domain.fine_halfwidth =
                    require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "rheology" => {
                cfg.rheology = match value {
                    "elastic" => Rheology::Elastic,
                    "viscoelastic" => Rheology::Viscoelastic,
                    other => {
                        return Err(SimError::Config {
                            line,
                            msg: format!(
                                "rheology: expected 'elastic' or 'viscoelastic', got '{other}'"
                            ),
                        })
                    }
                }
            }
            "temperature" => {
                let t = parse_f64(line, key, value)?;
                if t > 0.0 {
                    return Err(SimError::Config {
                        line,
                        msg: format!("temperature: ice cannot be warmer than 0 degC, got {t}"),
                    });
                }
                cfg.temperature = TemperatureSpec::Constant(t);
            }
            "temperature_profile" => {
                cfg.temperature = TemperatureSpec::ProfileFile(PathBuf::from(value))
            }
            "tensile_strength" => {
                cfg.override_strength =
                    Some(require_positive(line, key, parse_f64(line, key, value)?)?)
            }
            "creep_coefficient" => {
                let a = parse_f64(line, key, value)?;
                if a < 0.0 {
                    return Err(SimError::Config {
                        line,
                        msg: format!("creep_coefficient: must be non-negative, got {a}"),
                    });
                }
                cfg.override_creep = Some(a);
            }
            "dt" => cfg.dt = require_positive(line, key, parse_f64(line, key, value)?)?,
            "duration" => {
                cfg.duration = require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "p_ext" => cfg.p_ext = require_positive(line, key, parse_f64(line, key, value)?)?,
            "lake_area" => {
                cfg.lake_area = require_positive(line, key, parse_f64(line, key, value)?)?
            }
            "w_oop" => cfg.w_oop = require_positive(line, key, parse_f64(line, key, value)?)?,
            "snapshot_stride" => {
                cfg.snapshot_stride = value.parse::<usize>().map_err(|_| SimError::Config {
                    line,
                    msg: format!("snapshot_stride: expected a non-negative integer, got '{value}'"),
                })?
            }
            "out_dir" => cfg.out_dir = PathBuf::from(value),
            other => {
                return Err(SimError::Config {
                    line,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_das_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.domain.ice_thickness, 980.0);
        assert_eq!(cfg.domain.fine_element_size, 2.5);
        assert_eq!(cfg.dt, 2.0);
        assert_eq!(cfg.duration, 7200.0);
        assert_eq!(cfg.p_ext, 1.0e5);
        assert_eq!(cfg.lake_area, 5.6e6);
        assert_eq!(cfg.w_oop, 3200.0);
        assert_eq!(cfg.rheology, Rheology::Viscoelastic);
    }

    #[test]
    fn parses_keys_and_comments() {
        let cfg = parse_config(
            "# SI-style case\nrheology = elastic\nice_thickness = 300 # metres\nfine_size = 5\n\
             notch_depth = 30\ntensile_strength = 3e5\ndt = 2\nduration = 600\n",
        )
        .unwrap();
        assert_eq!(cfg.rheology, Rheology::Elastic);
        assert_eq!(cfg.domain.ice_thickness, 300.0);
        assert_eq!(cfg.override_strength, Some(3.0e5));
        assert_eq!(cfg.duration, 600.0);
    }

    #[test]
    fn rejects_bad_input_with_line_numbers() {
        let err = parse_config("dt = 2\ndt = -1\n").unwrap_err();
        match err {
            SimError::Config { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse_config("no_such_key = 5\n").unwrap_err();
        match err {
            SimError::Config { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(parse_config("garbage line\n").is_err());
        // cross-field validation
        assert!(parse_config("duration = 1\ndt = 2\n").is_err());
    }
}
