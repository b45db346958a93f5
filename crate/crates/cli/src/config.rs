//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, keys are dotted by module
//! (`mkee.epsilon = 0.05`). Every key can also be given on the command line
//! as `--mkee.epsilon 0.05`, which wins over the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ltc_core::datakit::SyntheticSpec;
use ltc_core::pipeline::TrainConfig;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub synth: SyntheticSpec,
    pub train_fraction: f64,
}

/// Everything one run depends on. `seed` drives data generation, the split,
/// and training alike.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig {
                source: DataSource::Synthetic,
                synth: SyntheticSpec::default(),
                train_fraction: 0.5,
            },
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

trait Value: Sized {
    fn parse(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

impl Value for f64 {
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for usize {
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "true" | "1" | "yes" | "on" => Some(true),
            "false" | "0" | "no" | "off" => Some(false),
            _ => None,
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for PathBuf {
    fn parse(s: &str) -> Option<Self> {
        (!s.is_empty()).then(|| PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl Value for DataSource {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "" => None,
            "synthetic" => Some(Self::Synthetic),
            path => Some(Self::Csv(PathBuf::from(path))),
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Synthetic => "synthetic".into(),
            Self::Csv(p) => p.display().to_string(),
        }
    }
}

fn parse_as<T: Value>(key: &str, raw: &str) -> Result<T> {
    T::parse(raw).ok_or_else(|| CliError::config(format!("invalid value {raw:?} for {key}")))
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every recognised key, in canonical order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse_as(key, raw)?,)*
                    _ => return Err(CliError::config(format!("unknown key {key}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.render()),)*
                    _ => None,
                }
            }
        }
    };
}

keys! {
    "seed" => seed;
    "data.source" => data.source;
    "data.dim" => data.synth.dim;
    "data.k_known" => data.synth.k_known;
    "data.k_novel" => data.synth.k_novel;
    "data.samples_per_class" => data.synth.samples_per_class;
    "data.separation" => data.synth.separation;
    "data.noise" => data.synth.noise;
    "data.train_fraction" => data.train_fraction;
    "model.hidden" => train.hidden_dim;
    "model.feature_dim" => train.feature_dim;
    "train.epochs" => train.epochs;
    "train.batch_size" => train.batch_size;
    "train.lr" => train.optimizer.learning_rate;
    "train.weight_decay" => train.optimizer.weight_decay;
    "train.beta1" => train.optimizer.beta1;
    "train.beta2" => train.optimizer.beta2;
    "train.adam_eps" => train.optimizer.epsilon;
    "train.prototype_momentum" => train.prototype_momentum;
    "train.augment_noise" => train.augment_noise;
    "loss.temperature" => train.loss.temperature;
    "loss.alpha" => train.loss.alpha;
    "loss.gamma_mm" => train.loss.gamma_mm;
    "loss.m_pos" => train.loss.m_pos;
    "loss.m_neg" => train.loss.m_neg;
    "mkee.eta" => train.mkee.eta;
    "mkee.epsilon" => train.mkee.epsilon;
    "mkee.lambda_rho" => train.mkee.lambda_rho;
    "mkee.sigma0" => train.mkee.sigma0;
    "mkee.p_gen" => train.mkee.p_gen;
    "mkee.warmup_epochs" => train.mkee.warmup_epochs;
    "tau.init" => train.threshold.tau_init;
    "tau.beta" => train.threshold.beta;
    "tau.q_pos" => train.threshold.q_pos;
    "tau.q_neg" => train.threshold.q_neg;
    "ablation.enable_mkee" => train.ablation.enable_mkee;
    "ablation.enable_mm" => train.ablation.enable_mm;
    "ablation.adaptive_tau" => train.ablation.adaptive_tau;
    "output.dir" => output_dir;
}

/// Keys that do not change what a run computes, so they stay out of the hash.
const UNHASHED: &[&str] = &["seed", "output.dir"];

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!("line {}: expected key = value", n + 1)));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| CliError::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    /// First 12 hex digits of the SHA-256 of the canonical form, seed and
    /// output location excluded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for key in KEYS.iter().filter(|k| !UNHASHED.contains(k)) {
            h.update(format!("{key}={}\n", self.get(key).unwrap_or_default()));
        }
        h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("{}-s{}", self.hash(), self.seed))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            ..self.data.synth
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: ltc_core::LtcError| CliError::config(e.to_string());
        self.train_config().validate().map_err(bad)?;
        if self.data.source == DataSource::Synthetic {
            self.synthetic_spec().validate().map_err(bad)?;
        } else if self.data.synth.k_known < 2 {
            return Err(CliError::config("data.k_known must be at least 2"));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(CliError::config("data.train_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Pulls `--<key> <value>` and `--<key>=<value>` pairs for recognised keys
/// out of `args`, returning them and the remaining arguments.
pub fn split_overrides(args: &[String]) -> Result<(Vec<(String, String)>, Vec<String>)> {
    let mut overrides = Vec::new();
    let mut rest = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg.clone());
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if !KEYS.contains(&key) {
            rest.push(arg.clone());
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| CliError::config(format!("--{key} needs a value")))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((overrides, rest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_dotted_keys() {
        let cfg = RunConfig::parse_str(
            "# desk run\n\nseed = 4\nmkee.epsilon = 0.1   # bigger step\nablation.enable_mm = false\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.mkee.epsilon, 0.1);
        assert!(!cfg.train.ablation.enable_mm);
    }

    #[test]
    fn unknown_key_and_bad_value_are_config_errors() {
        let e = RunConfig::parse_str("mkee.epsilonn = 1").unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("line 1"));
        assert!(RunConfig::parse_str("train.epochs = -3").is_err());
        assert!(RunConfig::parse_str("loss.alpha = nan").is_err());
        assert!(RunConfig::parse_str("just words").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("tau.init", "0.65").unwrap();
        cfg.set("data.source", "emb.csv").unwrap();
        let back = RunConfig::parse_str(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hash_ignores_seed_and_output_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 9;
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.set("mkee.p_gen", "0.5").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
    }

    #[test]
    fn overrides_are_split_from_other_flags() {
        let args: Vec<String> = ["--config", "c.txt", "--mkee.p_gen", "0", "--seed=3", "--out", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (ov, rest) = split_overrides(&args).unwrap();
        assert_eq!(ov, vec![("mkee.p_gen".into(), "0".into()), ("seed".into(), "3".into())]);
        assert_eq!(rest, ["--config", "c.txt", "--out", "x"]);
        assert!(split_overrides(&["--tau.init".to_string()]).is_err());
    }

    #[test]
    fn every_key_reads_back() {
        let cfg = RunConfig::default();
        for key in KEYS {
            let v = cfg.get(key).unwrap();
            let mut other = cfg.clone();
            other.set(key, &v).unwrap();
            assert_eq!(other, cfg, "{key}");
        }
    }
}
