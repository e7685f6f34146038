//! Flat `key = value` run configuration and its content fingerprint.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::correction::CorrectionConfig;
use crate::ehr::{BootstrapConfig, SplitRatios, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mining::MiningConfig;
use crate::model::{Activation, ModelConfig};
use crate::train::TrainConfig;

/// The only supported GLM design: disease/procedure indicators (candidates
/// plus their causal parents), no medication covariates.
pub const GLM_SOURCES_ONLY: &str = "sources_only";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory; empty means the run directory's `data/`.
    pub data_dir: String,
    pub synthetic: SyntheticSpec,
    pub split: SplitRatios,
    pub mining: MiningConfig,
    pub glm_covariates: String,
    pub model: ModelConfig,
    pub correction: CorrectionConfig,
    pub train: TrainConfig,
    pub bootstrap: BootstrapConfig,
    pub wo_bc: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_dir: String::new(),
            synthetic: SyntheticSpec::default(),
            split: SplitRatios::default(),
            mining: MiningConfig::default(),
            glm_covariates: GLM_SOURCES_ONLY.into(),
            model: ModelConfig::default(),
            correction: CorrectionConfig::default(),
            train: TrainConfig::default(),
            bootstrap: BootstrapConfig::default(),
            wo_bc: false,
        }
    }
}

trait Value: Sized {
    fn text(&self) -> String;
    fn parse_text(s: &str) -> Option<Self>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn text(&self) -> String {
                self.to_string()
            }
            fn parse_text(s: &str) -> Option<Self> {
                s.parse().ok()
            }
        }
    )*};
}
from_str_value!(usize, u64, f64, String);

impl Value for bool {
    fn text(&self) -> String {
        self.to_string()
    }
    fn parse_text(s: &str) -> Option<Self> {
        match s {
            "true" | "1" | "yes" => Some(true),
            "false" | "0" | "no" => Some(false),
            _ => None,
        }
    }
}

impl Value for Activation {
    fn text(&self) -> String {
        self.as_str().into()
    }
    fn parse_text(s: &str) -> Option<Self> {
        Activation::parse(s)
    }
}

macro_rules! keys {
    ($($key:literal $eval:literal => $($field:ident).+;)*) => {
        /// Every key with its evaluation-only flag, in canonical order.
        pub const KEYS: &[(&str, bool)] = &[$(($key, $eval)),*];

        impl RunConfig {
            /// Current value of `key` in canonical text form.
            pub fn get(&self, key: &str) -> Result<String> {
                match key {
                    $($key => Ok(Value::text(&self.$($field).+)),)*
                    _ => Err(Error::Config(format!("unknown config key `{key}`"))),
                }
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = Value::parse_text(value.trim()).ok_or_else(|| {
                            Error::Config(format!("invalid value `{value}` for `{key}`"))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }
        }
    };
}

keys! {
    "seed" false => seed;
    "data_dir" false => data_dir;
    "synthetic.n_diseases" false => synthetic.n_diseases;
    "synthetic.n_procedures" false => synthetic.n_procedures;
    "synthetic.n_medications" false => synthetic.n_medications;
    "synthetic.n_molecules" false => synthetic.n_molecules;
    "synthetic.n_patients" false => synthetic.n_patients;
    "synthetic.min_visits" false => synthetic.min_visits;
    "synthetic.max_visits" false => synthetic.max_visits;
    "synthetic.dag_density" false => synthetic.dag_density;
    "synthetic.max_dag_parents" false => synthetic.max_dag_parents;
    "synthetic.root_rate" false => synthetic.root_rate;
    "synthetic.child_rate" false => synthetic.child_rate;
    "synthetic.child_base_rate" false => synthetic.child_base_rate;
    "synthetic.persistence" false => synthetic.persistence;
    "synthetic.procedure_rate" false => synthetic.procedure_rate;
    "synthetic.procedure_base_rate" false => synthetic.procedure_base_rate;
    "synthetic.boost_pairs" false => synthetic.boost_pairs;
    "synthetic.boost_rho" false => synthetic.boost_rho;
    "synthetic.strong_pairs" false => synthetic.strong_pairs;
    "synthetic.strong_rho" false => synthetic.strong_rho;
    "synthetic.medium_rho_min" false => synthetic.medium_rho_min;
    "synthetic.medium_rho_max" false => synthetic.medium_rho_max;
    "synthetic.spurious_rate" false => synthetic.spurious_rate;
    "synthetic.ddi_density" false => synthetic.ddi_density;
    "synthetic.max_molecules_per_med" false => synthetic.max_molecules_per_med;
    "synthetic.seed" false => synthetic.seed;
    "split.train" false => split.train;
    "split.val" false => split.val;
    "split.test" false => split.test;
    "mining.max_indegree" false => mining.max_indegree;
    "mining.min_support" false => mining.min_support;
    "mining.layers" false => mining.n_layers;
    "mining.gradient" false => mining.gradient;
    "mining.glm_covariates" false => glm_covariates;
    "model.dim" false => model.dim;
    "model.rgcn_layers" false => model.coarse_layers;
    "model.relation_types" false => model.relation_types;
    "model.fusion_cycles" false => model.fusion_cycles;
    "model.activation" false => model.activation;
    "model.self_loop" false => model.coarse_self_loop;
    "model.mlp_hidden" false => model.mlp_hidden;
    "model.embedding_init" false => model.embedding_init;
    "loss.beta" false => train.loss.beta;
    "loss.gamma" false => train.loss.gamma;
    "loss.kp" false => train.loss.kp;
    "train.epochs" false => train.epochs;
    "train.lr" false => train.lr;
    "train.reg" false => train.weight_decay;
    "train.threshold" false => train.threshold;
    "train.correct_in_loss" false => train.correct_in_loss;
    "ablation.wo_c" false => model.wo_c;
    "ablation.wo_f" false => model.wo_f;
    "ablation.wo_bc" true => wo_bc;
    "correction.delta1" true => correction.upper;
    "correction.delta2" true => correction.lower;
    "correction.tau1" true => correction.boost;
    "correction.tau2" true => correction.penalty;
    "correction.threshold" true => correction.selection_threshold;
    "bootstrap.rounds" true => bootstrap.rounds;
    "bootstrap.fraction" true => bootstrap.fraction;
    "bootstrap.with_replacement" true => bootstrap.with_replacement;
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`", i + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    fn lines(&self, include_eval: bool) -> String {
        KEYS.iter()
            .filter(|(_, eval)| include_eval || !eval)
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// Canonical text of every key.
    pub fn to_text(&self) -> String {
        self.lines(true)
    }

    /// SHA-256 over the canonical text of all keys that influence data,
    /// mining or training.  Evaluation-only keys are excluded so a trained
    /// run can be re-evaluated under other correction or bootstrap settings.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.lines(false).as_bytes()))
    }

    /// Run directory name.
    pub fn run_id(&self) -> String {
        self.fingerprint()[..16].to_string()
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.split.validate()?;
        self.model.validate()?;
        self.correction.validate()?;
        self.train_config().validate()?;
        if self.glm_covariates != GLM_SOURCES_ONLY {
            return Err(Error::Config(format!(
                "mining.glm_covariates supports only `{GLM_SOURCES_ONLY}`, got `{}`",
                self.glm_covariates
            )));
        }
        if self.mining.n_layers == 0 || !(self.mining.gradient > 0.0 && self.mining.gradient <= 1.0)
        {
            return Err(Error::Config(
                "mining needs layers >= 1 and gradient in (0, 1]".into(),
            ));
        }
        if !self.model.wo_c && self.model.relation_types != self.mining.n_layers {
            return Err(Error::Config(format!(
                "model.relation_types ({}) must equal mining.layers ({})",
                self.model.relation_types, self.mining.n_layers
            )));
        }
        if self.bootstrap.rounds == 0
            || !(self.bootstrap.fraction > 0.0 && self.bootstrap.fraction <= 1.0)
        {
            return Err(Error::Config(
                "bootstrap needs rounds >= 1 and fraction in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("model.dim", "32").unwrap();
        c.set("loss.gamma", "0.07").unwrap();
        c.set("ablation.wo_c", "true").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.model.dim, 64);
        assert_eq!(c.model.coarse_layers, 2);
        assert_eq!(c.model.relation_types, 5);
        assert_eq!(c.correction.upper, 0.97);
        assert_eq!(c.correction.lower, 0.90);
        assert_eq!(c.train.loss.beta, 0.95);
        assert_eq!(c.train.loss.gamma, 0.06);
        assert_eq!(c.train.loss.kp, 0.05);
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.train.lr, 0.0005);
        assert_eq!(c.train.weight_decay, 0.05);
        c.validate().unwrap();
    }

    #[test]
    fn fingerprint_ignores_evaluation_keys() {
        let base = RunConfig::default();
        let mut eval = base.clone();
        eval.set("correction.tau1", "0.2").unwrap();
        eval.set("ablation.wo_bc", "true").unwrap();
        eval.set("bootstrap.rounds", "3").unwrap();
        assert_eq!(base.fingerprint(), eval.fingerprint());
        let mut train = base.clone();
        train.set("train.lr", "0.001").unwrap();
        assert_ne!(base.fingerprint(), train.fingerprint());
        assert_eq!(base.fingerprint().len(), 64);
    }

    #[test]
    fn errors_name_the_problem() {
        let mut c = RunConfig::default();
        let e = c
            .apply_text("model.dim = 8\nnope = 1\n", "cfg")
            .unwrap_err()
            .to_string();
        assert!(e.contains("cfg:2") && e.contains("nope"), "{e}");
        assert!(c.set("model.dim", "abc").is_err());
        c.set("mining.glm_covariates", "all").unwrap();
        assert!(c.validate().is_err());
    }
}
