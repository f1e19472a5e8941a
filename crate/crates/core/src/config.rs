//! Line-oriented experiment configuration: `section.key = value` pairs with
//! `#` comments. Unknown keys are rejected. Every field has a default, and
//! the effective configuration (defaults materialized) is exported for the
//! JSON provenance mirror.

use crate::channel::ChannelKind;
use crate::model::ArchConfig;
use crate::recognizer::RecognizerConfig;
use crate::text::CorpusTheme;
use crate::training::{SnrPolicy, TrainConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Malformed(usize),
    #[error("unknown configuration key: {0}")]
    UnknownKey(String),
    #[error("duplicate configuration key: {0}")]
    DuplicateKey(String),
    #[error("key {key}: cannot parse {value:?} as {wanted}")]
    BadValue {
        key: String,
        value: String,
        wanted: &'static str,
    },
    #[error("key {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("missing required artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "corpus.classes",
    "corpus.per_class",
    "corpus.test_per_class",
    "corpus.theme",
    "corpus.dir",
    "arch.preset",
    "arch.d_model",
    "arch.n_layers",
    "arch.n_heads",
    "arch.v_attn",
    "arch.d_ff",
    "arch.n_ce",
    "arch.n_cd",
    "arch.slot_len",
    "train.lr",
    "train.batch_size",
    "train.epochs",
    "train.channel",
    "train.snr_policy",
    "train.snr_db",
    "train.snr_lo",
    "train.snr_hi",
    "train.loss_threshold",
    "train.clip_norm",
    "train.momentum",
    "train.word_dropout",
    "train.stop_at_threshold",
    "train.val_rows",
    "train.val_snr_db",
    "train.insert_sep",
    "phase2.user",
    "phase2.channel",
    "phase2.epochs",
    "phase2.lr",
    "phase2.snr_policy",
    "phase2.snr_db",
    "phase2.snr_lo",
    "phase2.snr_hi",
    "phase2.momentum",
    "recognizer.d_model",
    "recognizer.n_layers",
    "recognizer.n_heads",
    "recognizer.d_ff",
    "recognizer.lr",
    "recognizer.epochs",
    "recognizer.batch_size",
    "recognizer.held_out_per_class",
    "sweep.snr_db",
    "sweep.test_rows",
    "sweep.users",
    "sweep.users_snr_db",
    "sweep.users_channel",
    "users.train_missing",
    "users.per_class",
    "users.epochs",
    "users.transfer_epochs",
];

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed(idx + 1))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey(key));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(RawConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), value);
    }

    fn get<T: std::str::FromStr>(
        &self,
        key: &str,
        default: T,
        wanted: &'static str,
    ) -> Result<T, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.clone(),
                wanted,
            }),
        }
    }

    fn get_str(&self, key: &str, default: &str) -> String {
        self.entries
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }
}

/// Parses a sweep grid: either `lo:hi:step` (inclusive) or a comma list.
pub fn parse_grid(spec: &str) -> Option<Vec<f64>> {
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return None;
        }
        let lo: f64 = parts[0].trim().parse().ok()?;
        let hi: f64 = parts[1].trim().parse().ok()?;
        let step: f64 = parts[2].trim().parse().ok()?;
        if step <= 0.0 || hi < lo {
            return None;
        }
        let mut grid = Vec::new();
        let mut v = lo;
        while v <= hi + 1e-9 {
            grid.push(v);
            v += step;
        }
        Some(grid)
    } else {
        spec.split(',')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<Vec<f64>>>()
            .filter(|g| !g.is_empty())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus_classes: usize,
    pub corpus_per_class: usize,
    pub corpus_test_per_class: usize,
    pub corpus_theme: Option<CorpusTheme>,
    pub corpus_dir: Option<PathBuf>,
    pub arch_preset: String,
    arch_overrides: BTreeMap<String, usize>,
    pub slot_len: usize,
    pub train: TrainConfig,
    pub phase2_user: usize,
    pub phase2: TrainConfig,
    pub recognizer_template: RecognizerConfig,
    pub snr_grid: Vec<f64>,
    pub sweep_test_rows: usize,
    pub users_grid: Vec<usize>,
    pub users_snr_db: f64,
    pub users_channel: ChannelKind,
    pub users_train_missing: bool,
    pub users_per_class: usize,
    pub users_epochs: usize,
    pub users_transfer_epochs: usize,
    raw: RawConfig,
}

fn channel_kind(raw: &RawConfig, key: &str, default: ChannelKind) -> Result<ChannelKind, ConfigError> {
    let value = raw.get_str(key, default.name());
    ChannelKind::parse(&value).ok_or_else(|| ConfigError::BadValue {
        key: key.to_string(),
        value,
        wanted: "awgn | rayleigh",
    })
}

fn snr_policy(raw: &RawConfig, section: &str, default: SnrPolicy) -> Result<SnrPolicy, ConfigError> {
    let key = format!("{section}.snr_policy");
    let kind = raw.get_str(&key, "");
    match kind.as_str() {
        "" => Ok(default),
        "fixed" => Ok(SnrPolicy::Fixed(raw.get(
            &format!("{section}.snr_db"),
            12.0,
            "dB value",
        )?)),
        "uniform" => {
            let lo = raw.get(&format!("{section}.snr_lo"), 0.0, "dB value")?;
            let hi = raw.get(&format!("{section}.snr_hi"), 18.0, "dB value")?;
            if lo > hi {
                return Err(ConfigError::Invalid {
                    key,
                    reason: format!("uniform range needs lo <= hi, got {lo} > {hi}"),
                });
            }
            Ok(SnrPolicy::UniformDb { lo, hi })
        }
        other => Err(ConfigError::BadValue {
            key,
            value: other.to_string(),
            wanted: "fixed | uniform",
        }),
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let seed = match seed_override {
            Some(s) => s,
            None => raw.get("seed", 42u64, "unsigned integer")?,
        };
        let corpus_classes = raw.get("corpus.classes", 2usize, "class count")?;
        if !(2..=7).contains(&corpus_classes) {
            return Err(ConfigError::Invalid {
                key: "corpus.classes".into(),
                reason: format!("must be in [2, 7], got {corpus_classes}"),
            });
        }
        let corpus_theme = match raw.get_str("corpus.theme", "auto").as_str() {
            "auto" => None,
            "sentiment" => Some(CorpusTheme::Sentiment),
            "topics" => Some(CorpusTheme::Topics),
            other => {
                return Err(ConfigError::BadValue {
                    key: "corpus.theme".into(),
                    value: other.into(),
                    wanted: "auto | sentiment | topics",
                })
            }
        };
        let corpus_dir = raw.entries.get("corpus.dir").map(PathBuf::from);
        let slot_len = raw.get("arch.slot_len", 18usize, "slot length")?;

        let mut arch_overrides = BTreeMap::new();
        for key in ["d_model", "n_layers", "n_heads", "v_attn", "d_ff", "n_ce", "n_cd"] {
            let full = format!("arch.{key}");
            if raw.entries.contains_key(&full) {
                arch_overrides.insert(key.to_string(), raw.get(&full, 0usize, "size")?);
            }
        }
        let arch_preset = raw.get_str("arch.preset", "tiny");
        if !["tiny", "reference"].contains(&arch_preset.as_str()) {
            return Err(ConfigError::BadValue {
                key: "arch.preset".into(),
                value: arch_preset,
                wanted: "tiny | reference",
            });
        }

        let clip = raw.get("train.clip_norm", 0.0f64, "norm (0 disables)")?;
        let train = TrainConfig {
            lr: raw.get("train.lr", 1e-4, "learning rate")?,
            batch_size: raw.get("train.batch_size", 8usize, "batch size")?,
            epochs: raw.get("train.epochs", 60usize, "epoch count")?,
            snr_policy: snr_policy(&raw, "train", SnrPolicy::UniformDb { lo: 0.0, hi: 18.0 })?,
            channel: channel_kind(&raw, "train.channel", ChannelKind::Awgn)?,
            seed,
            loss_threshold: raw.get("train.loss_threshold", 0.1f64, "loss")?,
            clip_norm: (clip > 0.0).then_some(clip),
            momentum: raw.get("train.momentum", 0.0f64, "momentum in [0, 1)")?,
            word_dropout: raw.get("train.word_dropout", 0.0f64, "rate in [0, 1)")?,
            stop_at_threshold: raw.get("train.stop_at_threshold", false, "bool")?,
            val_rows: raw.get("train.val_rows", 16usize, "row count")?,
            val_snr_db: raw.get("train.val_snr_db", 18.0f64, "dB value")?,
            insert_sep: raw.get("train.insert_sep", false, "bool")?,
        };
        let phase2 = TrainConfig {
            lr: raw.get("phase2.lr", train.lr, "learning rate")?,
            momentum: raw.get("phase2.momentum", train.momentum, "momentum in [0, 1)")?,
            epochs: raw.get("phase2.epochs", train.epochs, "epoch count")?,
            snr_policy: snr_policy(&raw, "phase2", train.snr_policy)?,
            channel: channel_kind(&raw, "phase2.channel", ChannelKind::Rayleigh)?,
            ..train.clone()
        };

        let recognizer_template = RecognizerConfig {
            d_model: raw.get("recognizer.d_model", 32usize, "size")?,
            n_layers: raw.get("recognizer.n_layers", 2usize, "layer count")?,
            n_heads: raw.get("recognizer.n_heads", 4usize, "head count")?,
            d_ff: raw.get("recognizer.d_ff", 64usize, "size")?,
            lr: raw.get("recognizer.lr", 0.05f64, "learning rate")?,
            epochs: raw.get("recognizer.epochs", 20usize, "epoch count")?,
            batch_size: raw.get("recognizer.batch_size", 16usize, "batch size")?,
            held_out_per_class: raw.get("recognizer.held_out_per_class", 30usize, "count")?,
            slot_len,
            num_classes: corpus_classes,
        };

        let grid_spec = raw.get_str("sweep.snr_db", "0:18:3");
        let snr_grid = parse_grid(&grid_spec).ok_or_else(|| ConfigError::BadValue {
            key: "sweep.snr_db".into(),
            value: grid_spec,
            wanted: "lo:hi:step or comma list",
        })?;
        let users_spec = raw.get_str("sweep.users", "2:4:1");
        let users_grid: Vec<usize> = parse_grid(&users_spec)
            .filter(|g| g.iter().all(|&v| v.fract() == 0.0 && (2.0..=7.0).contains(&v)))
            .map(|g| g.into_iter().map(|v| v as usize).collect())
            .ok_or_else(|| ConfigError::BadValue {
                key: "sweep.users".into(),
                value: users_spec,
                wanted: "integer grid within [2, 7]",
            })?;

        Ok(ExperimentConfig {
            seed,
            corpus_classes,
            corpus_per_class: raw.get("corpus.per_class", 230usize, "count")?,
            corpus_test_per_class: raw.get("corpus.test_per_class", 30usize, "count")?,
            corpus_theme,
            corpus_dir,
            arch_preset,
            arch_overrides,
            slot_len,
            train,
            phase2_user: raw.get("phase2.user", 2usize, "user index")?,
            phase2,
            recognizer_template,
            snr_grid,
            sweep_test_rows: raw.get("sweep.test_rows", 32usize, "row count")?,
            users_grid,
            users_snr_db: raw.get("sweep.users_snr_db", 12.0f64, "dB value")?,
            users_channel: channel_kind(&raw, "sweep.users_channel", ChannelKind::Rayleigh)?,
            users_train_missing: raw.get("users.train_missing", true, "bool")?,
            users_per_class: raw.get("users.per_class", 150usize, "count")?,
            users_epochs: raw.get("users.epochs", 30usize, "epoch count")?,
            users_transfer_epochs: raw.get("users.transfer_epochs", 10usize, "epoch count")?,
            raw,
        })
    }

    pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let raw = match path {
            Some(p) => RawConfig::from_file(p)?,
            None => RawConfig::default(),
        };
        Self::from_raw(raw, seed_override)
    }

    /// Architecture for a given vocabulary size: preset plus any overrides.
    pub fn arch(&self, vocab_size: usize) -> ArchConfig {
        let mut arch = match self.arch_preset.as_str() {
            "reference" => ArchConfig::reference(self.slot_len, self.corpus_classes, vocab_size),
            _ => ArchConfig::tiny(self.slot_len, self.corpus_classes, vocab_size),
        };
        for (key, &value) in &self.arch_overrides {
            match key.as_str() {
                "d_model" => arch.d_model = value,
                "n_layers" => arch.n_layers = value,
                "n_heads" => arch.n_heads = value,
                "v_attn" => arch.v_attn = value,
                "d_ff" => arch.d_ff = value,
                "n_ce" => arch.n_ce = value,
                "n_cd" => arch.n_cd = value,
                _ => unreachable!("filtered at parse time"),
            }
        }
        arch
    }

    pub fn theme(&self) -> CorpusTheme {
        self.corpus_theme.unwrap_or(if self.corpus_classes == 2 {
            CorpusTheme::Sentiment
        } else {
            CorpusTheme::Topics
        })
    }

    /// The effective key/value map (defaults materialized) for provenance.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let arch = self.arch(0);
        map.insert("seed".into(), self.seed.to_string());
        map.insert("corpus.classes".into(), self.corpus_classes.to_string());
        map.insert("corpus.per_class".into(), self.corpus_per_class.to_string());
        map.insert(
            "corpus.test_per_class".into(),
            self.corpus_test_per_class.to_string(),
        );
        map.insert(
            "corpus.theme".into(),
            match self.theme() {
                CorpusTheme::Sentiment => "sentiment".into(),
                CorpusTheme::Topics => "topics".into(),
            },
        );
        if let Some(dir) = &self.corpus_dir {
            map.insert("corpus.dir".into(), dir.display().to_string());
        }
        map.insert("arch.preset".into(), self.arch_preset.clone());
        map.insert("arch.d_model".into(), arch.d_model.to_string());
        map.insert("arch.n_layers".into(), arch.n_layers.to_string());
        map.insert("arch.n_heads".into(), arch.n_heads.to_string());
        map.insert("arch.v_attn".into(), arch.v_attn.to_string());
        map.insert("arch.d_ff".into(), arch.d_ff.to_string());
        map.insert("arch.n_ce".into(), arch.n_ce.to_string());
        map.insert("arch.n_cd".into(), arch.n_cd.to_string());
        map.insert("arch.slot_len".into(), self.slot_len.to_string());
        map.insert("train.lr".into(), format!("{}", self.train.lr));
        map.insert("train.batch_size".into(), self.train.batch_size.to_string());
        map.insert("train.epochs".into(), self.train.epochs.to_string());
        map.insert("train.channel".into(), self.train.channel.name().into());
        map.insert(
            "train.snr_policy".into(),
            match self.train.snr_policy {
                SnrPolicy::Fixed(db) => format!("fixed {db}"),
                SnrPolicy::UniformDb { lo, hi } => format!("uniform {lo}..{hi}"),
            },
        );
        map.insert(
            "train.clip_norm".into(),
            format!("{}", self.train.clip_norm.unwrap_or(0.0)),
        );
        map.insert("phase2.user".into(), self.phase2_user.to_string());
        map.insert("phase2.channel".into(), self.phase2.channel.name().into());
        map.insert("phase2.epochs".into(), self.phase2.epochs.to_string());
        map.insert(
            "recognizer.lr".into(),
            format!("{}", self.recognizer_template.lr),
        );
        map.insert(
            "recognizer.epochs".into(),
            self.recognizer_template.epochs.to_string(),
        );
        map.insert(
            "sweep.snr_db".into(),
            self.snr_grid
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("sweep.test_rows".into(), self.sweep_test_rows.to_string());
        map.insert(
            "sweep.users".into(),
            self.users_grid
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("sweep.users_snr_db".into(), self.users_snr_db.to_string());
        map.insert(
            "sweep.users_channel".into(),
            self.users_channel.name().into(),
        );
        // raw entries win where they carry extra context
        for (k, v) in &self.raw.entries {
            map.entry(k.clone()).or_insert_with(|| v.clone());
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let raw = RawConfig::parse(
            "# experiment\narch.d_model = 128\ntrain.lr = 1e-4\nchannel_unused = 0",
        );
        assert!(matches!(raw, Err(ConfigError::UnknownKey(k)) if k == "channel_unused"));

        let raw = RawConfig::parse(
            "arch.d_model = 64\narch.n_heads = 4\ntrain.lr = 0.05\nsweep.snr_db = 0:18:3\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_raw(raw, None).unwrap();
        assert_eq!(cfg.arch(100).d_model, 64);
        assert_eq!(cfg.arch(100).n_heads, 4);
        assert!((cfg.train.lr - 0.05).abs() < 1e-12);
        assert_eq!(cfg.snr_grid, vec![0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0]);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let raw = RawConfig::parse("seed = 1\nseed = 2\n");
        assert!(matches!(raw, Err(ConfigError::DuplicateKey(_))));
    }

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("0:6:3").unwrap(), vec![0.0, 3.0, 6.0]);
        assert_eq!(parse_grid("5").unwrap(), vec![5.0]);
        assert_eq!(parse_grid("1, 2, 4").unwrap(), vec![1.0, 2.0, 4.0]);
        assert!(parse_grid("3:1:1").is_none());
        assert!(parse_grid("a:b:c").is_none());
    }

    #[test]
    fn seed_override_wins() {
        let raw = RawConfig::parse("seed = 7\n").unwrap();
        let cfg = ExperimentConfig::from_raw(raw, Some(99)).unwrap();
        assert_eq!(cfg.seed, 99);
    }

    #[test]
    fn defaults_follow_reference_settings() {
        let cfg = ExperimentConfig::from_raw(RawConfig::default(), None).unwrap();
        assert!((cfg.train.lr - 1e-4).abs() < 1e-18);
        assert_eq!(cfg.train.epochs, 60);
        assert_eq!(cfg.phase2.channel, ChannelKind::Rayleigh);
        assert_eq!(cfg.users_snr_db, 12.0);
        assert_eq!(cfg.phase2_user, 2);
        let arch = cfg.arch(50);
        assert_eq!((arch.n_ce, arch.n_cd), (16, 128));
    }

    #[test]
    fn provenance_materializes_defaults() {
        let cfg = ExperimentConfig::from_raw(RawConfig::default(), None).unwrap();
        let p = cfg.provenance();
        assert_eq!(p.get("train.lr").unwrap(), "0.0001");
        assert_eq!(p.get("arch.n_ce").unwrap(), "16");
    }
}
