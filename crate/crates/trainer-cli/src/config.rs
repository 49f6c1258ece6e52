//! Line-based configuration files: `[section]` headers, `key = value`
//! entries, `#` comments, UTF-8. Section and entry order is preserved;
//! duplicate sections or keys are errors that cite the second occurrence.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fm_core::GradMode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: duplicate section `{name}`")]
    DuplicateSection { line: usize, name: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: unknown section `{name}`")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue {
        line: usize,
        key: String,
        msg: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSection {
    pub name: String,
    pub line: usize,
    pub entries: Vec<RawEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawFile {
    pub sections: Vec<RawSection>,
}

impl RawFile {
    pub fn section(&self, name: &str) -> Option<&RawSection> {
        self.sections.iter().find(|s| s.name == name)
    }
}

pub fn parse_raw(text: &str) -> Result<RawFile, ConfigError> {
    let mut file = RawFile::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(stripped) = content.strip_prefix('[') {
            let Some(name) = stripped.strip_suffix(']') else {
                return Err(ConfigError::Syntax {
                    line,
                    msg: "unterminated section header".into(),
                });
            };
            let name = name.trim();
            if name.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: "empty section name".into(),
                });
            }
            if file.sections.iter().any(|s| s.name == name) {
                return Err(ConfigError::DuplicateSection {
                    line,
                    name: name.to_string(),
                });
            }
            file.sections.push(RawSection {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                msg: "empty key".into(),
            });
        }
        let Some(section) = file.sections.last_mut() else {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("key `{key}` appears before any [section]"),
            });
        };
        if section.entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        section.entries.push(RawEntry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(file)
}

/// Consumes entries of one section by key, then reports leftovers as unknown.
pub struct SectionReader {
    entries: Vec<RawEntry>,
}

impl SectionReader {
    pub fn new(section: Option<&RawSection>) -> Self {
        SectionReader {
            entries: section.map(|s| s.entries.clone()).unwrap_or_default(),
        }
    }

    pub fn take(&mut self, key: &str) -> Option<RawEntry> {
        let pos = self.entries.iter().position(|e| e.key == key)?;
        Some(self.entries.remove(pos))
    }

    pub fn take_parsed<T>(&mut self, key: &str) -> Result<Option<(T, usize)>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(entry) => match entry.value.parse::<T>() {
                Ok(v) => Ok(Some((v, entry.line))),
                Err(e) => Err(ConfigError::BadValue {
                    line: entry.line,
                    key: key.to_string(),
                    msg: e.to_string(),
                }),
            },
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.take_parsed(key)?.map(|(v, _)| v).unwrap_or(default))
    }

    pub fn require(&mut self, key: &str) -> Result<RawEntry, ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::MissingKey {
            key: key.to_string(),
        })
    }

    pub fn finish(self) -> Result<(), ConfigError> {
        match self.entries.first() {
            None => Ok(()),
            Some(extra) => Err(ConfigError::UnknownKey {
                line: extra.line,
                key: extra.key.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Precision::Single),
            "double" => Ok(Precision::Double),
            other => Err(format!(
                "unknown precision `{other}` (expected `single` or `double`)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    FilterMap,
    Baseline,
}

impl Parametrization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parametrization::FilterMap => "fm",
            Parametrization::Baseline => "baseline",
        }
    }
}

impl FromStr for Parametrization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fm" => Ok(Parametrization::FilterMap),
            "baseline" => Ok(Parametrization::Baseline),
            other => Err(format!(
                "unknown parametrization `{other}` (expected `fm` or `baseline`)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSpec {
    Synth {
        seed: u64,
        n: usize,
        classes: usize,
        height: usize,
        width: usize,
        channels: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        eval_images: Option<PathBuf>,
        eval_labels: Option<PathBuf>,
    },
    Csv {
        path: PathBuf,
        eval_path: Option<PathBuf>,
        height: usize,
        width: usize,
        channels: usize,
    },
}

/// Fully validated run configuration with documented defaults:
/// epochs 10, batch_size 32, learning_rate 0.01, momentum 0.9,
/// grad_mode average, precision double, parametrization fm, out `out`,
/// and a synthetic 1000-sample 3-class 2x12x12 dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_mode: GradMode,
    pub precision: Precision,
    pub data: DataSpec,
    pub net_path: Option<PathBuf>,
    pub parametrization: Parametrization,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_str_named(text: &str, origin: &Path) -> Result<RunConfig, ConfigError> {
        let raw = parse_raw(text)?;
        for section in &raw.sections {
            if !matches!(section.name.as_str(), "run" | "data" | "net") {
                return Err(ConfigError::UnknownSection {
                    line: section.line,
                    name: section.name.clone(),
                });
            }
        }

        let mut run = SectionReader::new(raw.section("run"));
        let seed = run.take_or("seed", 0u64)?;
        let epochs = run.take_or("epochs", 10usize)?;
        let batch_size = match run.take_parsed::<usize>("batch_size")? {
            None => 32,
            Some((0, line)) => {
                return Err(ConfigError::BadValue {
                    line,
                    key: "batch_size".into(),
                    msg: "must be >= 1".into(),
                })
            }
            Some((b, _)) => b,
        };
        let learning_rate = match run.take_parsed::<f64>("learning_rate")? {
            None => 0.01,
            Some((lr, _)) if lr > 0.0 && lr.is_finite() => lr,
            Some((lr, line)) => {
                return Err(ConfigError::BadValue {
                    line,
                    key: "learning_rate".into(),
                    msg: format!("must be a finite value > 0, got {lr}"),
                })
            }
        };
        let momentum = match run.take_parsed::<f64>("momentum")? {
            None => 0.9,
            Some((m, _)) if (0.0..1.0).contains(&m) => m,
            Some((m, line)) => {
                return Err(ConfigError::BadValue {
                    line,
                    key: "momentum".into(),
                    msg: format!("must be in [0, 1), got {m}"),
                })
            }
        };
        let grad_mode = run.take_or("grad_mode", GradMode::Average)?;
        let precision = run.take_or("precision", Precision::Double)?;
        let out_dir: PathBuf = run
            .take("out")
            .map(|e| PathBuf::from(e.value))
            .unwrap_or_else(|| PathBuf::from("out"));
        run.finish()?;

        let mut data = SectionReader::new(raw.section("data"));
        let source = data
            .take("source")
            .map(|e| (e.value, e.line))
            .unwrap_or_else(|| ("synth".to_string(), 0));
        let data_spec = match source.0.as_str() {
            "synth" => {
                let spec = DataSpec::Synth {
                    seed: data.take_or("seed", seed)?,
                    n: data.take_or("n", 1000usize)?,
                    classes: data.take_or("classes", 3usize)?,
                    height: data.take_or("height", 12usize)?,
                    width: data.take_or("width", 12usize)?,
                    channels: data.take_or("channels", 2usize)?,
                };
                data.finish()?;
                spec
            }
            "idx" => {
                let images = PathBuf::from(data.require("images")?.value);
                let labels = PathBuf::from(data.require("labels")?.value);
                let eval_images = data.take("eval_images").map(|e| PathBuf::from(e.value));
                let eval_labels = data.take("eval_labels").map(|e| PathBuf::from(e.value));
                data.finish()?;
                if eval_images.is_some() != eval_labels.is_some() {
                    return Err(ConfigError::MissingKey {
                        key: "data.eval_images/eval_labels (need both or neither)".into(),
                    });
                }
                DataSpec::Idx {
                    images,
                    labels,
                    eval_images,
                    eval_labels,
                }
            }
            "csv" => {
                let path = PathBuf::from(data.require("path")?.value);
                let eval_path = data.take("eval_path").map(|e| PathBuf::from(e.value));
                let height = data
                    .take_parsed::<usize>("height")?
                    .ok_or_else(|| ConfigError::MissingKey {
                        key: "data.height".into(),
                    })?
                    .0;
                let width = data
                    .take_parsed::<usize>("width")?
                    .ok_or_else(|| ConfigError::MissingKey {
                        key: "data.width".into(),
                    })?
                    .0;
                let channels = data.take_or("channels", 1usize)?;
                data.finish()?;
                DataSpec::Csv {
                    path,
                    eval_path,
                    height,
                    width,
                    channels,
                }
            }
            other => {
                return Err(ConfigError::BadValue {
                    line: source.1,
                    key: "source".into(),
                    msg: format!("unknown data source `{other}` (expected synth, idx, or csv)"),
                })
            }
        };

        let mut net = SectionReader::new(raw.section("net"));
        let net_path = net.take("path").map(|e| {
            let p = PathBuf::from(e.value);
            if p.is_relative() {
                origin.parent().map(|d| d.join(&p)).unwrap_or(p)
            } else {
                p
            }
        });
        let parametrization = net.take_or("parametrization", Parametrization::FilterMap)?;
        net.finish()?;

        Ok(RunConfig {
            seed,
            epochs,
            batch_size,
            learning_rate,
            momentum,
            grad_mode,
            precision,
            data: data_spec,
            net_path,
            parametrization,
            out_dir,
        })
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str_named(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::from_str_named("[run]\nseed = 1\n", Path::new("run.cfg")).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.grad_mode, GradMode::Average);
        assert_eq!(cfg.precision, Precision::Double);
        assert_eq!(cfg.parametrization, Parametrization::FilterMap);
        assert!(matches!(
            cfg.data,
            DataSpec::Synth {
                seed: 1,
                n: 1000,
                ..
            }
        ));
    }

    #[test]
    fn momentum_out_of_range_is_a_bad_value() {
        let err =
            RunConfig::from_str_named("[run]\nmomentum = 1.5\n", Path::new("run.cfg")).unwrap_err();
        assert!(
            matches!(err, ConfigError::BadValue { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn duplicate_key_cites_second_occurrence() {
        let err = RunConfig::from_str_named(
            "[run]\nseed = 1\nepochs = 2\nseed = 3\n",
            Path::new("run.cfg"),
        )
        .unwrap_err();
        match err {
            ConfigError::DuplicateKey { line, key } => {
                assert_eq!(line, 4);
                assert_eq!(key, "seed");
            }
            other => panic!("expected DuplicateKey, got {other}"),
        }
    }

    #[test]
    fn unknown_key_and_section_are_hard_errors() {
        let err = RunConfig::from_str_named("[run]\nsped = 1\n", Path::new("run.cfg")).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 2, .. }));
        let err =
            RunConfig::from_str_named("[runs]\nseed = 1\n", Path::new("run.cfg")).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownSection { line: 1, .. }));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::from_str_named(
            "# run file\n\n[run]\nseed = 7 # lucky\n\n# done\n",
            Path::new("run.cfg"),
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn csv_source_needs_dims() {
        let err =
            RunConfig::from_str_named("[data]\nsource = csv\npath = d.csv\n", Path::new("run.cfg"))
                .unwrap_err();
        assert!(matches!(err, ConfigError::MissingKey { .. }));
    }

    #[test]
    fn net_path_is_resolved_relative_to_the_config() {
        let cfg =
            RunConfig::from_str_named("[net]\npath = toy.net\n", Path::new("/tmp/cfgs/run.cfg"))
                .unwrap();
        assert_eq!(cfg.net_path.unwrap(), PathBuf::from("/tmp/cfgs/toy.net"));
    }

    #[test]
    fn key_before_section_is_a_syntax_error() {
        let err = parse_raw("seed = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
    }

    #[test]
    fn synth_seed_defaults_to_run_seed() {
        let cfg = RunConfig::from_str_named("[run]\nseed = 42\n", Path::new("r.cfg")).unwrap();
        let DataSpec::Synth { seed, .. } = cfg.data else {
            panic!()
        };
        assert_eq!(seed, 42);
    }
}
