//! Experiment orchestration: pool construction, attack sweeps over ratio
//! pairs, leakage aggregation, and heatmap/summary emission.
//!
//! A sweep is fully determined by its [`ExperimentConfig`] and master seed:
//! model training, test sets and meta-classifier fits all derive their
//! substreams from `(master_seed, role, alpha index, repetition, model
//! index)`, so reruns produce byte-identical artifacts regardless of worker
//! count.

mod emit;
mod sweep;

pub use emit::{emit_heatmap, summarize, write_sweep_outputs, AttackSummary, Summary};
pub use sweep::{build_pools, run_pair, run_sweep, PoolEntry};

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{AttackError, MetaConfig, MetaMode};
use crate::leakage::{inf_f64, LeakageError, LeakageReport};
use crate::nets::{self, LayerSpec, NetError, TrainConfig};
use crate::oracle::OracleError;
use crate::synthdata::{DataError, UnderlyingSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("no results for attack `{0}`")]
    UnknownAttack(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Leakage(#[from] LeakageError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The attack modes a sweep can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "loss")]
    Loss,
    #[serde(rename = "threshold")]
    Threshold,
    #[serde(rename = "meta")]
    MetaBinary,
    #[serde(rename = "meta-regress")]
    MetaRegression,
    #[serde(rename = "layer-rank")]
    LayerRank,
}

impl AttackKind {
    pub fn slug(&self) -> &'static str {
        match self {
            AttackKind::Loss => "loss",
            AttackKind::Threshold => "threshold",
            AttackKind::MetaBinary => "meta",
            AttackKind::MetaRegression => "meta-regress",
            AttackKind::LayerRank => "layer-rank",
        }
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        match s {
            "loss" => Some(AttackKind::Loss),
            "threshold" => Some(AttackKind::Threshold),
            "meta" => Some(AttackKind::MetaBinary),
            "meta-regress" => Some(AttackKind::MetaRegression),
            "layer-rank" => Some(AttackKind::LayerRank),
            _ => None,
        }
    }

    fn tag(&self) -> u64 {
        match self {
            AttackKind::Loss => 0x6c6f_7373,
            AttackKind::Threshold => 0x7468_7273,
            AttackKind::MetaBinary => 0x6d65_7461,
            AttackKind::MetaRegression => 0x6d72_6567,
            AttackKind::LayerRank => 0x6c72_6e6b,
        }
    }
}

/// Meta-classifier hyperparameters as they appear in config files; the mode
/// is set by the attack that uses them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaSettings {
    pub latent_width: usize,
    pub phi_hidden: usize,
    pub rho_hidden: usize,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for MetaSettings {
    fn default() -> Self {
        let base = MetaConfig::default();
        Self {
            latent_width: base.latent_width,
            phi_hidden: base.phi_hidden,
            rho_hidden: base.rho_hidden,
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            momentum: base.momentum,
        }
    }
}

impl MetaSettings {
    pub fn to_config(&self, mode: MetaMode) -> MetaConfig {
        MetaConfig {
            latent_width: self.latent_width,
            phi_hidden: self.phi_hidden,
            rho_hidden: self.rho_hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            mode,
        }
    }
}

fn default_layer_rank_candidates() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub underlying: UnderlyingSpec,
    /// Strictly increasing property ratios; pairs are ordered `(a0 < a1)`.
    pub alpha_grid: Vec<f64>,
    /// When set, only pairs containing this grid value are swept.
    #[serde(default)]
    pub fixed_alpha0: Option<f64>,
    /// Records per training dataset (m).
    pub dataset_size: usize,
    /// Victim models per distribution.
    pub n_victim: usize,
    /// Adversary shadow models per distribution.
    pub n_shadow: usize,
    pub arch: Vec<LayerSpec>,
    /// Per-model training hyperparameters; the seed field is ignored (every
    /// model derives its own from the master seed).
    pub train: TrainConfig,
    pub attacks: Vec<AttackKind>,
    pub repetitions: u32,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Adversary test-set size for the black-box attacks; defaults to
    /// `dataset_size`.
    #[serde(default)]
    pub eval_size: Option<usize>,
    #[serde(default)]
    pub meta: MetaSettings,
    /// Probe inputs offered to the layer-ranking attack.
    #[serde(default = "default_layer_rank_candidates")]
    pub layer_rank_candidates: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.alpha_grid.is_empty() {
            return fail("alpha_grid must not be empty");
        }
        if !self
            .alpha_grid
            .iter()
            .all(|a| a.is_finite() && (0.0..=1.0).contains(a))
        {
            return fail("alpha_grid values must lie in [0, 1]");
        }
        if !self.alpha_grid.windows(2).all(|w| w[0] < w[1]) {
            return fail("alpha_grid must be strictly increasing");
        }
        if let Some(a0) = self.fixed_alpha0 {
            if !self.alpha_grid.contains(&a0) {
                return fail("fixed_alpha0 must be a member of alpha_grid");
            }
        }
        if self.dataset_size == 0 || self.n_victim == 0 || self.n_shadow == 0 {
            return fail("dataset_size, n_victim and n_shadow must be positive");
        }
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1");
        }
        self.underlying.validate()?;
        nets::validate_arch(&self.arch)?;
        Ok(())
    }

    pub fn eval_size(&self) -> usize {
        self.eval_size.unwrap_or(self.dataset_size)
    }

    /// Stable FNV-1a hash of the canonical JSON form; recorded in every cell
    /// so artifacts carry their provenance.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in canonical.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }

    pub fn alpha_index(&self, alpha: f64) -> Result<usize, HarnessError> {
        self.alpha_grid
            .iter()
            .position(|&a| a == alpha)
            .ok_or_else(|| HarnessError::Config(format!("alpha {alpha} is not on the grid")))
    }

    /// The ordered `(i, j)` index pairs this config sweeps.
    pub fn pair_indices(&self) -> Vec<(usize, usize)> {
        let g = self.alpha_grid.len();
        match self.fixed_alpha0 {
            Some(a0) => {
                let i0 = self
                    .alpha_grid
                    .iter()
                    .position(|&a| a == a0)
                    .expect("validated");
                (0..g)
                    .filter(|&j| j != i0)
                    .map(|j| (i0.min(j), i0.max(j)))
                    .collect()
            }
            None => (0..g)
                .flat_map(|i| ((i + 1)..g).map(move |j| (i, j)))
                .collect(),
        }
    }

    pub(crate) fn cell_seed(&self, attack: AttackKind, i: usize, j: usize, rep: u32) -> u64 {
        crate::util::mix64(&[
            self.master_seed,
            attack.tag(),
            i as u64,
            j as u64,
            rep as u64,
        ])
    }
}

/// One attack evaluation on one ratio pair in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub attack: AttackKind,
    pub alpha0: f64,
    pub alpha1: f64,
    pub rep: u32,
    pub seed: u64,
    pub config_hash: String,
    /// Missing only when the cell failed.
    pub report: Option<LeakageReport>,
    /// The measured accuracy fell below chance; it is recorded as-is and
    /// n_leaked is pinned to 0 rather than flipping the predictor.
    #[serde(default)]
    pub below_chance: bool,
    /// Exact prediction ties observed (loss test only).
    #[serde(default)]
    pub ties: usize,
    #[serde(default)]
    pub error: Option<String>,
}

/// Per-ratio regression meta-classifier evaluation (mean squared error on
/// held-out victims, with the matching leakage value where defined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCell {
    pub alpha: f64,
    pub rep: u32,
    pub mse: f64,
    /// Undefined at the degenerate ratios 0 and 1.
    #[serde(default, with = "opt_inf_f64")]
    pub n_leaked: Option<f64>,
    pub victims: usize,
}

pub(crate) mod opt_inf_f64 {
    use super::inf_f64;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, ser: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => inf_f64::serialize(x, ser),
            None => ser.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "inf_f64")] f64);
        Ok(Option::<Wrap>::deserialize(de)?.map(|w| w.0))
    }
}

/// Everything a sweep produced, in deterministic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub alpha_grid: Vec<f64>,
    pub config_hash: String,
    pub cells: Vec<CellReport>,
    pub regression_cells: Vec<RegressionCell>,
    pub warnings: Vec<String>,
}

impl SweepResult {
    pub fn cells_for(&self, attack: AttackKind) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(move |c| c.attack == attack)
    }
}

/// Computes a leakage report from predictions against ground truth; accuracy
/// below 0.5 pins `n_leaked` to 0 and raises the below-chance flag.
pub fn report_from_predictions(
    pair: crate::leakage::RatioPair,
    predictions: &[bool],
    truths: &[bool],
) -> Result<(LeakageReport, bool), HarnessError> {
    let counts = crate::oracle::mc_attack_accuracy(predictions, truths)?;
    let omega = counts.accuracy;
    let advantage = counts.advantage().unwrap_or(0.0);
    let (n_leaked, below) = if omega >= 0.5 {
        (crate::leakage::n_leaked_binary(pair, omega)?, false)
    } else {
        (0.0, true)
    };
    Ok((
        LeakageReport {
            accuracy: omega,
            advantage,
            n_leaked,
        },
        below,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::UnderlyingSpec;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            underlying: UnderlyingSpec {
                noise_dims: 3,
                signal_dims: 3,
                signal_strength: 3.0,
                label_property_coupling: 0.6,
                rule_seed: 7,
            },
            alpha_grid: vec![0.0, 0.5, 1.0],
            fixed_alpha0: None,
            dataset_size: 40,
            n_victim: 4,
            n_shadow: 4,
            arch: vec![
                LayerSpec::Dense { input: 6, output: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 4, output: 1 },
                LayerSpec::SigmoidOutput,
            ],
            train: TrainConfig {
                epochs: 8,
                batch_size: 8,
                learning_rate: 0.1,
                momentum: 0.9,
                seed: 0,
            },
            attacks: vec![AttackKind::Loss, AttackKind::Threshold],
            repetitions: 1,
            master_seed: 1234,
            output_dir: PathBuf::from("/tmp/distinf-test"),
            eval_size: Some(40),
            meta: MetaSettings::default(),
            layer_rank_candidates: 8,
        }
    }

    #[test]
    fn config_validates_and_hashes() {
        let cfg = tiny_config();
        cfg.validate().unwrap();
        let h1 = cfg.config_hash();
        assert_eq!(h1.len(), 16);
        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(h1, other.config_hash());

        let mut bad = cfg.clone();
        bad.alpha_grid = vec![0.5, 0.5];
        assert!(bad.validate().is_err());
        bad.alpha_grid = vec![];
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.fixed_alpha0 = Some(0.25);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pair_enumeration() {
        let mut cfg = tiny_config();
        assert_eq!(cfg.pair_indices(), vec![(0, 1), (0, 2), (1, 2)]);
        cfg.fixed_alpha0 = Some(0.5);
        assert_eq!(cfg.pair_indices(), vec![(0, 1), (1, 2)]);
        cfg.alpha_grid = vec![0.5];
        cfg.fixed_alpha0 = None;
        assert!(cfg.pair_indices().is_empty());
    }

    #[test]
    fn config_round_trips_via_json() {
        let cfg = tiny_config();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.config_hash(), back.config_hash());
    }
}
