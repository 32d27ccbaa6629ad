//! Sweep configuration files: a flat `key = value` format under
//! `[section]` headers, with `#` comments. Parse errors carry the line and
//! column of the offending token.

use fhi_core::data::TargetFunction;
use fhi_core::experiments::{ExperimentConfig, SweepNoiseKind, SweepSampling};
use fhi_core::manifold::TorusPoint;

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.msg)
    }
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    col: usize,
}

fn tokenize(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let without_comment = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = without_comment.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(ConfigError {
                line: line_no,
                col: raw.find('[').unwrap_or(0) + 1,
                msg: "unterminated section header".into(),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let eq = trimmed.find('=').ok_or(ConfigError {
            line: line_no,
            col: raw.find(trimmed).unwrap_or(0) + 1,
            msg: format!("expected `key = value`, found {trimmed:?}"),
        })?;
        let key = trimmed[..eq].trim().to_string();
        let value = trimmed[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(ConfigError {
                line: line_no,
                col: 1,
                msg: "empty key".into(),
            });
        }
        let col = raw.find(&key).unwrap_or(0) + 1;
        entries.push(Entry {
            section: section.clone(),
            key,
            value,
            line: line_no,
            col,
        });
    }
    Ok(entries)
}

fn parse_list<T: std::str::FromStr>(e: &Entry) -> Result<Vec<T>, ConfigError> {
    e.value
        .split(',')
        .map(|v| {
            v.trim().parse::<T>().map_err(|_| ConfigError {
                line: e.line,
                col: e.col,
                msg: format!("cannot parse {:?} in list for key `{}`", v.trim(), e.key),
            })
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value.trim().parse::<T>().map_err(|_| ConfigError {
        line: e.line,
        col: e.col,
        msg: format!("cannot parse {:?} for key `{}`", e.value, e.key),
    })
}

/// Resolved contents of a sweep config file (the seed still comes from
/// the command line).
pub struct SweepFile {
    pub config: ExperimentConfig,
    pub csv_path: Option<String>,
}

/// Parse a sweep config. `seed` comes from `--seed`; noisy configs
/// without one are rejected by the caller.
pub fn parse_sweep_config(text: &str, seed: u64) -> Result<SweepFile, ConfigError> {
    let entries = tokenize(text)?;
    let mut target_kind = String::from("wendland");
    let mut center = (0.0f64, 0.0f64);
    let mut mode_k = (1i64, 0i64);
    let mut degrees: Vec<u32> = vec![];
    let mut noise: Vec<f64> = vec![0.0];
    let mut noise_kind = SweepNoiseKind::Gaussian;
    let mut servers = 1u32;
    let mut sampling = SweepSampling::Grid;
    let mut trials = 5u32;
    let mut eval_resolution = 0u32;
    let mut csv_path = None;

    for e in &entries {
        match (e.section.as_str(), e.key.as_str()) {
            ("target", "kind") => target_kind = e.value.clone(),
            ("target", "center") => {
                let xs: Vec<f64> = parse_list(e)?;
                if xs.len() != 2 {
                    return Err(ConfigError {
                        line: e.line,
                        col: e.col,
                        msg: "center needs two coordinates".into(),
                    });
                }
                center = (xs[0], xs[1]);
            }
            ("target", "k") => {
                let ks: Vec<i64> = parse_list(e)?;
                if ks.len() != 2 {
                    return Err(ConfigError {
                        line: e.line,
                        col: e.col,
                        msg: "k needs two integers".into(),
                    });
                }
                mode_k = (ks[0], ks[1]);
            }
            ("sweep", "degrees") => degrees = parse_list(e)?,
            ("sweep", "noise") => noise = parse_list(e)?,
            ("sweep", "noise_kind") => {
                noise_kind = match e.value.as_str() {
                    "gaussian" => SweepNoiseKind::Gaussian,
                    "uniform" => SweepNoiseKind::BoundedUniform,
                    other => {
                        return Err(ConfigError {
                            line: e.line,
                            col: e.col,
                            msg: format!("unknown noise_kind {other:?} (gaussian | uniform)"),
                        })
                    }
                }
            }
            ("sweep", "servers") => servers = parse_one(e)?,
            ("sweep", "sampling") => {
                sampling = match e.value.as_str() {
                    "grid" => SweepSampling::Grid,
                    "random" => SweepSampling::Random,
                    other => {
                        return Err(ConfigError {
                            line: e.line,
                            col: e.col,
                            msg: format!("unknown sampling {other:?} (grid | random)"),
                        })
                    }
                }
            }
            ("sweep", "trials") => trials = parse_one(e)?,
            ("sweep", "eval_resolution") => eval_resolution = parse_one(e)?,
            ("output", "csv") => csv_path = Some(e.value.clone()),
            (section, key) => {
                return Err(ConfigError {
                    line: e.line,
                    col: e.col,
                    msg: format!("unknown key `{key}` in section `[{section}]`"),
                })
            }
        }
    }

    let target = match target_kind.as_str() {
        "wendland" => TargetFunction::wendland_wu(TorusPoint::new(center.0, center.1)),
        "mode" => TargetFunction::mode(mode_k.0, mode_k.1),
        other => {
            return Err(ConfigError {
                line: 1,
                col: 1,
                msg: format!("unknown target kind {other:?} (wendland | mode)"),
            })
        }
    };

    Ok(SweepFile {
        config: ExperimentConfig {
            target,
            degrees,
            noise_levels: noise,
            noise_kind,
            servers,
            sampling,
            eval_resolution,
            trials,
            seed,
            output: csv_path.clone(),
        },
        csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
# demo
[target]
kind = wendland
center = 0.0, 0.0

[sweep]
degrees = 2,4,8
noise = 0.0, 0.01
noise_kind = gaussian
servers = 4
sampling = grid
trials = 3
eval_resolution = 64

[output]
csv = out.csv
";
        let f = parse_sweep_config(text, 7).unwrap();
        assert_eq!(f.config.degrees, vec![2, 4, 8]);
        assert_eq!(f.config.servers, 4);
        assert_eq!(f.config.trials, 3);
        assert_eq!(f.csv_path.as_deref(), Some("out.csv"));
        assert_eq!(f.config.seed, 7);
    }

    #[test]
    fn reports_line_and_column() {
        let text = "[sweep]\ndegrees = 2,4\nbogus_key = 1\n";
        let err = parse_sweep_config(text, 0).unwrap_err();
        assert_eq!(err.line, 3);
        assert_eq!(err.col, 1);
        assert!(err.msg.contains("bogus_key"));
    }

    #[test]
    fn rejects_bad_list_entry() {
        let text = "[sweep]\ndegrees = 2,x,8\n";
        let err = parse_sweep_config(text, 0).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.msg.contains('x'));
    }

    #[test]
    fn rejects_missing_equals() {
        let text = "[sweep]\ndegrees 2,4\n";
        let err = parse_sweep_config(text, 0).unwrap_err();
        assert_eq!(err.line, 2);
    }
}
