//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are grouped by a dotted prefix:
//!
//! ```text
//! geometry.R = 1.0            # bulb radius
//! geometry.r = 0.2            # neck radius
//! geometry.L = 8.0            # neck length
//! geometry.kind = flask       # or `cylinder` for the null configuration
//! scan.a_values = 0.05, 0.1, 0.2
//! # or: scan.a_min / scan.a_max / scan.n (evenly spaced)
//! mc.seed = 42                # mandatory unless --seed is given
//! mc.n_loops = 100000
//! mc.n_points = 4096
//! mc.n_beta = 48
//! mc.beta_min_factor = 0.0625
//! mc.beta_max_factor = 64
//! mc.x_samples_per_beta = 16  # base points per loop at every beta node
//! mc.doubling_study = true
//! output.csv_path = scan.csv
//! output.json_path = scan.json
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::geometry::{DomainKind, FlaskSystem};
use crate::interaction::GridPolicy;
use crate::{Error, Result};

const KNOWN_KEYS: &[&str] = &[
    "geometry.R",
    "geometry.r",
    "geometry.L",
    "geometry.kind",
    "scan.a_values",
    "scan.a_min",
    "scan.a_max",
    "scan.n",
    "mc.seed",
    "mc.n_loops",
    "mc.n_points",
    "mc.n_beta",
    "mc.beta_min_factor",
    "mc.beta_max_factor",
    "mc.x_samples_per_beta",
    "mc.doubling_study",
    "output.csv_path",
    "output.json_path",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryConfig {
    pub bulb_radius: f64,
    pub neck_radius: f64,
    pub neck_length: f64,
    pub kind: DomainKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McConfig {
    pub seed: u64,
    pub n_loops: usize,
    pub n_points: usize,
    pub n_beta: usize,
    pub beta_min_factor: f64,
    pub beta_max_factor: f64,
    pub x_samples_per_beta: usize,
    pub doubling_study: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub csv_path: String,
    pub json_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub a_values: Vec<f64>,
    pub mc: McConfig,
    pub output: OutputConfig,
    /// Assignments exactly as written, in file order.
    pub entries: Vec<(String, String)>,
}

struct Entry {
    value: String,
    line: usize,
    column: usize,
}

fn at(e: &Entry, message: impl Into<String>) -> Error {
    Error::Config {
        line: e.line,
        column: e.column,
        message: message.into(),
    }
}

fn parse_entries(text: &str) -> Result<(BTreeMap<String, Entry>, Vec<(String, String)>)> {
    let mut map = BTreeMap::new();
    let mut order = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        let Some(eq) = body.find('=') else {
            let column = body.len() - body.trim_start().len() + 1;
            return Err(Error::Config {
                line,
                column,
                message: "expected `key = value`".into(),
            });
        };
        let key = body[..eq].trim();
        let key_col = body.len() - body.trim_start().len() + 1;
        if key.is_empty() {
            return Err(Error::Config {
                line,
                column: key_col,
                message: "missing key before `=`".into(),
            });
        }
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config {
                line,
                column: key_col,
                message: format!("unknown key `{key}`"),
            });
        }
        let rest = &body[eq + 1..];
        let value = rest.trim();
        let column = eq + 2 + (rest.len() - rest.trim_start().len());
        if value.is_empty() {
            return Err(Error::Config {
                line,
                column,
                message: format!("missing value for `{key}`"),
            });
        }
        if let Some(prev) = map.get(key) {
            let prev: &Entry = prev;
            return Err(Error::Config {
                line,
                column: key_col,
                message: format!("duplicate key `{key}` (first set on line {})", prev.line),
            });
        }
        order.push((key.to_string(), value.to_string()));
        map.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
                column,
            },
        );
    }
    Ok((map, order))
}

fn number<T: std::str::FromStr>(map: &BTreeMap<String, Entry>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|e| {
            e.value
                .parse::<T>()
                .map_err(|_| at(e, format!("`{}` is not a valid value for `{key}`", e.value)))
        })
        .transpose()
}

fn required<T: std::str::FromStr>(map: &BTreeMap<String, Entry>, key: &str) -> Result<T> {
    number(map, key)?.ok_or_else(|| Error::ConfigValue(format!("missing required key `{key}`")))
}

impl RunConfig {
    pub fn from_file(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigValue(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, seed_override)
    }

    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let (map, entries) = parse_entries(text)?;

        let kind = match map.get("geometry.kind") {
            None => DomainKind::Flask,
            Some(e) => match e.value.as_str() {
                "flask" => DomainKind::Flask,
                "cylinder" => DomainKind::Cylinder,
                other => {
                    return Err(at(
                        e,
                        format!("geometry.kind must be `flask` or `cylinder`, got `{other}`"),
                    ))
                }
            },
        };
        let geometry = GeometryConfig {
            bulb_radius: required(&map, "geometry.R")?,
            neck_radius: required(&map, "geometry.r")?,
            neck_length: required(&map, "geometry.L")?,
            kind,
        };

        let a_values = match map.get("scan.a_values") {
            Some(e) => {
                if ["scan.a_min", "scan.a_max", "scan.n"]
                    .iter()
                    .any(|k| map.contains_key(*k))
                {
                    return Err(at(
                        e,
                        "give either scan.a_values or scan.a_min/a_max/n, not both",
                    ));
                }
                e.value
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| at(e, format!("`{}` is not a number", v.trim())))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => {
                let lo: f64 = required(&map, "scan.a_min")?;
                let hi: f64 = required(&map, "scan.a_max")?;
                let n: usize = required(&map, "scan.n")?;
                if n < 2 || !(hi > lo) {
                    return Err(Error::ConfigValue(
                        "need scan.n >= 2 and scan.a_max > scan.a_min".into(),
                    ));
                }
                (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect()
            }
        };
        if a_values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::ConfigValue(
                "scan heights must be strictly increasing".into(),
            ));
        }
        for &a in &a_values {
            FlaskSystem::new(
                geometry.bulb_radius,
                geometry.neck_radius,
                geometry.neck_length,
                a,
            )
            .map_err(|e| Error::ConfigValue(format!("scan height {a}: {e}")))?;
        }

        let defaults = GridPolicy::default();
        let seed = match seed_override {
            Some(s) => s,
            None => required(&map, "mc.seed")?,
        };
        let mc = McConfig {
            seed,
            n_loops: number(&map, "mc.n_loops")?.unwrap_or(20_000),
            n_points: number(&map, "mc.n_points")?.unwrap_or(4096),
            n_beta: number(&map, "mc.n_beta")?.unwrap_or(defaults.n_beta),
            beta_min_factor: number(&map, "mc.beta_min_factor")?
                .unwrap_or(defaults.beta_min_factor),
            beta_max_factor: number(&map, "mc.beta_max_factor")?
                .unwrap_or(defaults.beta_max_factor),
            x_samples_per_beta: number(&map, "mc.x_samples_per_beta")?.unwrap_or(16),
            doubling_study: number(&map, "mc.doubling_study")?.unwrap_or(true),
        };
        if mc.n_loops < 1 || mc.n_points < 4 || mc.n_beta < 2 || mc.x_samples_per_beta < 1 {
            return Err(Error::ConfigValue(
                "need mc.n_loops >= 1, mc.n_points >= 4, mc.n_beta >= 2, mc.x_samples_per_beta >= 1".into(),
            ));
        }
        if !(mc.beta_min_factor > 0.0 && mc.beta_max_factor > 0.0) {
            return Err(Error::ConfigValue("beta factors must be positive".into()));
        }

        let output = OutputConfig {
            csv_path: map
                .get("output.csv_path")
                .map_or("scan.csv".into(), |e| e.value.clone()),
            json_path: map
                .get("output.json_path")
                .map_or("scan.json".into(), |e| e.value.clone()),
        };
        Ok(Self {
            geometry,
            a_values,
            mc,
            output,
            entries,
        })
    }

    /// Flask at the first scan height.
    pub fn system(&self) -> Result<FlaskSystem> {
        let g = &self.geometry;
        FlaskSystem::new(
            g.bulb_radius,
            g.neck_radius,
            g.neck_length,
            self.a_values[0],
        )
    }

    pub fn grid_policy(&self) -> GridPolicy {
        GridPolicy {
            n_beta: self.mc.n_beta,
            beta_min_factor: self.mc.beta_min_factor,
            beta_max_factor: self.mc.beta_max_factor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
# thin neck
geometry.R = 1
geometry.r = 0.2
geometry.L = 8   # long
scan.a_values = 0.1, 0.2, 0.4
mc.seed = 7
mc.n_loops = 100
";

    #[test]
    fn parses_and_fills_defaults() {
        let c = RunConfig::parse(GOOD, None).unwrap();
        assert_eq!(c.a_values, vec![0.1, 0.2, 0.4]);
        assert_eq!(c.mc.seed, 7);
        assert_eq!(c.mc.n_loops, 100);
        assert_eq!(c.mc.n_points, 4096);
        assert_eq!(c.geometry.kind, DomainKind::Flask);
        assert_eq!(c.entries[2], ("geometry.L".to_string(), "8".to_string()));
        assert_eq!(RunConfig::parse(GOOD, Some(9)).unwrap().mc.seed, 9);
    }

    #[test]
    fn evenly_spaced_heights() {
        let text = GOOD.replace(
            "scan.a_values = 0.1, 0.2, 0.4",
            "scan.a_min = 0.5\nscan.a_max = 1.5\nscan.n = 3",
        );
        assert_eq!(
            RunConfig::parse(&text, None).unwrap().a_values,
            vec![0.5, 1.0, 1.5]
        );
    }

    #[test]
    fn errors_carry_positions() {
        let err = RunConfig::parse("geometry.R = 1\n  geometry.r 0.2\n", None).unwrap_err();
        assert_eq!(
            err,
            Error::Config {
                line: 2,
                column: 3,
                message: "expected `key = value`".into()
            }
        );
        let err = RunConfig::parse("geometry.R = one\n", None).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Config {
                    line: 1,
                    column: 14,
                    ..
                }
            ),
            "{err}"
        );
        let err = RunConfig::parse("geometry.Q = 1\n", None).unwrap_err();
        assert!(matches!(
            err,
            Error::Config {
                line: 1,
                column: 1,
                ..
            }
        ));
        let err = RunConfig::parse(&format!("{GOOD}mc.seed = 8\n"), None).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn seed_is_mandatory() {
        let text = GOOD.replace("mc.seed = 7\n", "");
        assert!(matches!(
            RunConfig::parse(&text, None),
            Err(Error::ConfigValue(_))
        ));
        assert!(RunConfig::parse(&text, Some(1)).is_ok());
    }

    #[test]
    fn rejects_invalid_geometry_and_heights() {
        assert!(RunConfig::parse(&GOOD.replace("0.4", "9.0"), None).is_err());
        assert!(RunConfig::parse(&GOOD.replace("0.1, 0.2", "0.2, 0.1"), None).is_err());
        assert!(
            RunConfig::parse(&GOOD.replace("geometry.r = 0.2", "geometry.r = 2"), None).is_err()
        );
        assert!(RunConfig::parse(&format!("{GOOD}geometry.kind = sphere\n"), None).is_err());
    }
}
