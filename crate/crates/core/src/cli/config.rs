//! Layered run configuration: built-in defaults, then a flat `key = value`
//! file, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use thiserror::Error;

use crate::model::MiMarginal;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    File { path: String, line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {message}")]
    Value { key: String, value: String, message: String },
    #[error("missing required --{0}")]
    Missing(&'static str),
    #[error("cannot read config file {path}: {message}")]
    Read { path: String, message: String },
}

/// Classifier setup of the `classify` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifyMode {
    /// Linear classifier on `[θ; π]`.
    Features,
    Separate,
    Joint,
}

impl FromStr for ClassifyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "features" => Ok(Self::Features),
            "separate" => Ok(Self::Separate),
            "joint" => Ok(Self::Joint),
            other => Err(format!("unknown mode {other:?} (expected features, separate or joint)")),
        }
    }
}

impl fmt::Display for ClassifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Features => "features",
            Self::Separate => "separate",
            Self::Joint => "joint",
        })
    }
}

/// Display wrapper so every field prints in the form it parses from.
trait ConfigValue {
    fn render(&self) -> String;
}

macro_rules! impl_display_value {
    ($($t:ty),*) => {
        $(impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
        })*
    };
}
impl_display_value!(usize, u64, f64, bool, String, ClassifyMode);

impl ConfigValue for PathBuf {
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for MiMarginal {
    fn render(&self) -> String {
        match self {
            MiMarginal::Batch => "batch".into(),
            MiMarginal::Uniform => "uniform".into(),
        }
    }
}

macro_rules! run_config {
    ($( $field:ident : $ty:ty = $default:expr, $key:literal $(alias $alias:literal)?, $help:literal; )*) => {
        /// Every setting of a run, fully resolved.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( #[doc = $help] pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        /// Command-line overrides; unset flags fall through to the file
        /// and then the defaults.
        #[derive(Debug, Clone, Default, Args)]
        pub struct Overrides {
            $(
                #[doc = $help]
                #[arg(long = $key $(, visible_alias = $alias)?, value_name = "VALUE")]
                pub $field: Option<$ty>,
            )*
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Set one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let key = key.trim().replace('_', "-");
                match key.as_str() {
                    $(
                        $key $(| $alias)? => {
                            self.$field = value.trim().parse::<$ty>().map_err(|e| ConfigError::Value {
                                key: key.clone(),
                                value: value.trim().to_string(),
                                message: e.to_string(),
                            })?;
                            Ok(())
                        }
                    )*
                    _ => Err(ConfigError::UnknownKey(key)),
                }
            }

            pub fn apply(&mut self, overrides: &Overrides) {
                $( if let Some(v) = &overrides.$field { self.$field = v.clone(); } )*
            }

            /// `key = value` lines, parseable by [`RunConfig::set`].
            pub fn to_lines(&self) -> String {
                let mut out = String::new();
                $( out.push_str(&format!("{} = {}\n", $key, self.$field.render())); )*
                out
            }
        }
    };
}

run_config! {
    input: PathBuf = PathBuf::new(), "input", "Post dump (JSON lines) to read.";
    data_dir: PathBuf = PathBuf::new(), "data-dir", "Preprocessed corpus directory.";
    ckpt: PathBuf = PathBuf::new(), "ckpt", "Model checkpoint to read.";
    out: PathBuf = PathBuf::new(), "out", "Checkpoint to write (default: <out-dir>/model.ckpt).";
    out_dir: PathBuf = PathBuf::from("out"), "out-dir" alias "output-dir", "Directory for all outputs.";
    reference: PathBuf = PathBuf::new(), "ref", "Reference corpus for coherence (instances JSON lines).";
    labeled: PathBuf = PathBuf::new(), "labeled", "Labeled posts (JSON lines).";
    merge_map: PathBuf = PathBuf::new(), "merge-map", "Hashtag merge map: `from to` per line.";
    block_list: PathBuf = PathBuf::new(), "block-list", "Hashtags to ignore, one per line.";
    stop_list: PathBuf = PathBuf::new(), "stop-list", "Stop words, one per line.";
    min_count: u64 = 20, "min-count", "Minimum training-split frequency to keep a word.";
    ascii_only: bool = false, "ascii-only", "Drop posts that are mostly non-ASCII.";
    context_excludes_target: bool = false, "context-excludes-target", "Leave the target message out of its conversation vector.";
    topics: usize = 50, "topics", "Number of topics K.";
    discourse: usize = 10, "discourse", "Number of discourse roles D.";
    topic_hidden: usize = 200, "topic-hidden", "Hidden width of the topic encoder.";
    disc_hidden: usize = 100, "disc-hidden", "Hidden width of the discourse encoder (0: none).";
    tau: f64 = 0.5, "tau", "Gumbel-softmax temperature.";
    lambda: f64 = 0.01, "lambda", "Weight of the mutual-information penalty.";
    stop_penalty: f64 = 5.0, "stop-penalty", "Logit penalty on stop words in the topic likelihood.";
    mi_marginal: MiMarginal = MiMarginal::Batch, "mi-marginal", "Role marginal of the MI term: batch or uniform.";
    learning_rate: f64 = 1e-3, "learning-rate", "Adam step size.";
    batch_size: usize = 64, "batch-size", "Examples per update.";
    epochs: usize = 100, "epochs", "Maximum training epochs.";
    patience: usize = 5, "patience", "Epochs without dev improvement before stopping.";
    seed: u64 = 0, "seed", "Seed for every random stream.";
    clip_norm: f64 = 5.0, "clip-norm", "Global gradient-norm clip (0 disables).";
    grid: String = "lambda=0.001,0.01,0.1;learning-rate=0.001,0.0005".into(), "grid", "Grid as `key=v1,v2;key=...`.";
    top_n: usize = 10, "top-n", "Words per topic in reports.";
    window: usize = 10, "window", "NPMI co-occurrence window.";
    exclude_stop: bool = true, "exclude-stop", "Leave stop words out of top-word lists.";
    mode: ClassifyMode = ClassifyMode::Features, "mode", "Classifier: features, separate or joint.";
    top_k: usize = 50, "top-k", "Hashtags kept as classes.";
    test_fraction: f64 = 0.1, "test-fraction", "Held-out share of conversations.";
    cnn_epochs: usize = 10, "cnn-epochs", "Epochs of the convolutional classifier.";
    embedding_dim: usize = 200, "embedding-dim", "Word embedding size of the classifier.";
    feature_maps: usize = 100, "feature-maps", "Filters per convolution width.";
    dropout: f64 = 0.5, "dropout", "Dropout on pooled convolution features.";
    topic_loss_weight: f64 = 1.0, "topic-loss-weight", "Weight of the topic objective in joint training.";
}

impl RunConfig {
    /// Defaults, then the file (if any), then the flags.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            config.apply_file(&text, &path.display().to_string())?;
        }
        config.apply(overrides);
        Ok(config)
    }

    /// Apply `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, text: &str, name: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError::File {
                path: name.to_string(),
                line: i + 1,
                message,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(key, value).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    /// A path that must have been given.
    pub fn require<'a>(&self, path: &'a PathBuf, name: &'static str) -> Result<&'a PathBuf, ConfigError> {
        if path.as_os_str().is_empty() {
            Err(ConfigError::Missing(name))
        } else {
            Ok(path)
        }
    }

    pub fn optional(path: &PathBuf) -> Option<&Path> {
        (!path.as_os_str().is_empty()).then_some(path.as_path())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut c = RunConfig::default();
        c.apply_file("topics = 100\nlambda=0.1\n# comment\n\n", "f").unwrap();
        c.apply(&Overrides {
            topics: Some(50),
            ..Default::default()
        });
        assert_eq!(c.topics, 50);
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.epochs, 100);
    }

    #[test]
    fn documented_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.lambda, 0.01);
        assert_eq!(c.epochs, 100);
        assert_eq!(c.patience, 5);
        assert_eq!(c.batch_size, 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_file("nonsense = 1", "f"), Err(ConfigError::File { line: 1, .. })));
        assert!(matches!(c.set("topics", "abc"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.set("wat", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(c.apply_file("just words", "f").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::default();
        c.set("learning_rate", "0.0005").unwrap();
        c.set("mode", "joint").unwrap();
        c.set("data-dir", "/tmp/x").unwrap();
        let mut back = RunConfig::default();
        back.apply_file(&c.to_lines(), "snapshot").unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::KEYS.len(), c.to_lines().lines().count());
    }

    #[test]
    fn output_dir_alias() {
        let mut c = RunConfig::default();
        c.set("output-dir", "elsewhere").unwrap();
        assert_eq!(c.out_dir, PathBuf::from("elsewhere"));
    }
}
