//! Pool construction and attack evaluation over ratio pairs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;

use super::{
    report_from_predictions, AttackKind, CellReport, ExperimentConfig, HarnessError,
    RegressionCell, SweepResult,
};
use crate::attacks::{
    count_rule_apply, count_rule_fit, layer_rank, loss_test, meta_predict, meta_train,
    regression_to_binary, threshold_apply, threshold_fit, MetaMode, MetaNet, ShadowPool,
};
use crate::leakage::RatioPair;
use crate::nets::{self, NetParams};
use crate::synthdata::{
    sample_dataset, Dataset, Pool, RatioDistributionSpec, SampleMode,
};
use crate::util::mix64;

const TAG_DATA: u64 = 0x6461_7461;
const TAG_TRAIN: u64 = 0x7472_6169;
const TAG_INIT: u64 = 0x696e_6974;
const TAG_TESTSET: u64 = 0x7473_6574;
const TAG_META_REGRESS: u64 = 0x6d72_6567;

/// A trained pool member with its provenance.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub net: NetParams,
    pub alpha: f64,
    pub data_seed: u64,
    pub train_seed: u64,
    pub index: usize,
}

fn model_seeds(cfg: &ExperimentConfig, role: Pool, alpha_idx: usize, rep: u32, index: usize) -> (u64, u64, u64) {
    let base = [
        cfg.master_seed,
        role.tag(),
        alpha_idx as u64,
        rep as u64,
        index as u64,
    ];
    let with = |tag: u64| {
        let mut parts = base.to_vec();
        parts.push(tag);
        mix64(&parts)
    };
    (with(TAG_DATA), with(TAG_INIT), with(TAG_TRAIN))
}

fn role_count(cfg: &ExperimentConfig, role: Pool) -> usize {
    match role {
        Pool::Victim => cfg.n_victim,
        Pool::Adversary => cfg.n_shadow,
    }
}

fn spec_at(cfg: &ExperimentConfig, alpha_idx: usize) -> Result<RatioDistributionSpec, HarnessError> {
    Ok(RatioDistributionSpec::new(
        cfg.underlying,
        cfg.alpha_grid[alpha_idx],
    )?)
}

fn build_pools_idx(
    cfg: &ExperimentConfig,
    alpha_idx: usize,
    role: Pool,
    rep: u32,
) -> Result<Vec<PoolEntry>, HarnessError> {
    let spec = spec_at(cfg, alpha_idx)?;
    let count = role_count(cfg, role);
    let built: Vec<(PoolEntry, HashSet<Vec<u64>>)> = (0..count)
        .into_par_iter()
        .map(|index| -> Result<_, HarnessError> {
            let (data_seed, init_seed, train_seed) = model_seeds(cfg, role, alpha_idx, rep, index);
            let dataset = sample_dataset(&spec, cfg.dataset_size, data_seed, role, SampleMode::Iid);
            let fresh = nets::init(&cfg.arch, init_seed)?;
            let mut train_cfg = cfg.train;
            train_cfg.seed = train_seed;
            let net = nets::train(&fresh, &dataset, &train_cfg)?;
            let fingerprints = dataset
                .records
                .iter()
                .map(|r| r.features.iter().map(|f| f.to_bits()).collect())
                .collect();
            Ok((
                PoolEntry {
                    net,
                    alpha: spec.alpha,
                    data_seed,
                    train_seed,
                    index,
                },
                fingerprints,
            ))
        })
        .collect::<Result<_, _>>()?;

    // The paired role's datasets must never share a record with ours; the
    // pool salt makes a collision a structural bug, not bad luck.
    let other_role = match role {
        Pool::Victim => Pool::Adversary,
        Pool::Adversary => Pool::Victim,
    };
    let ours: HashSet<&Vec<u64>> = built.iter().flat_map(|(_, f)| f.iter()).collect();
    for index in 0..role_count(cfg, other_role) {
        let (data_seed, _, _) = model_seeds(cfg, other_role, alpha_idx, rep, index);
        let other = sample_dataset(
            &spec,
            cfg.dataset_size,
            data_seed,
            other_role,
            SampleMode::Iid,
        );
        let overlap = other
            .records
            .iter()
            .any(|r| ours.contains(&r.features.iter().map(|f| f.to_bits()).collect::<Vec<u64>>()));
        if overlap {
            return Err(HarnessError::Config(format!(
                "victim/adversary dataset overlap at alpha index {alpha_idx}"
            )));
        }
    }
    Ok(built.into_iter().map(|(entry, _)| entry).collect())
}

/// Trains the configured number of models for one ratio and role, on fresh
/// per-model datasets with seeds derived from the master seed. Victim and
/// adversary datasets are checked for record-level disjointness.
pub fn build_pools(
    cfg: &ExperimentConfig,
    alpha: f64,
    role: Pool,
    rep: u32,
) -> Result<Vec<PoolEntry>, HarnessError> {
    cfg.validate()?;
    build_pools_idx(cfg, cfg.alpha_index(alpha)?, role, rep)
}

struct Context<'c> {
    cfg: &'c ExperimentConfig,
    hash: String,
    victims: HashMap<(usize, u32), Arc<Vec<PoolEntry>>>,
    shadows: HashMap<(usize, u32), Arc<Vec<PoolEntry>>>,
    tests: HashMap<(usize, u32), Arc<Dataset>>,
    regression_meta: HashMap<u32, Arc<MetaNet>>,
}

impl<'c> Context<'c> {
    fn needs_shadows(cfg: &ExperimentConfig) -> bool {
        cfg.attacks.iter().any(|a| {
            matches!(
                a,
                AttackKind::Threshold | AttackKind::MetaBinary | AttackKind::LayerRank
            )
        })
    }

    fn needs_tests(cfg: &ExperimentConfig) -> bool {
        cfg.attacks
            .iter()
            .any(|a| matches!(a, AttackKind::Loss | AttackKind::Threshold | AttackKind::LayerRank))
    }

    fn has_regression(cfg: &ExperimentConfig) -> bool {
        cfg.attacks.contains(&AttackKind::MetaRegression)
    }

    /// Builds every pool, test set and regression meta-classifier the listed
    /// pairs will touch, for all repetitions.
    fn build(cfg: &'c ExperimentConfig, pairs: &[(usize, usize)]) -> Result<Self, HarnessError> {
        let pair_idxs: BTreeSet<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
        let all_idxs: BTreeSet<usize> = (0..cfg.alpha_grid.len()).collect();
        let regression = Self::has_regression(cfg);

        let victim_idxs: BTreeSet<usize> = if regression {
            all_idxs.clone()
        } else {
            pair_idxs.clone()
        };
        let shadow_idxs: BTreeSet<usize> = if regression {
            all_idxs
        } else if Self::needs_shadows(cfg) {
            pair_idxs.clone()
        } else {
            BTreeSet::new()
        };
        let test_idxs: BTreeSet<usize> = if Self::needs_tests(cfg) {
            pair_idxs
        } else {
            BTreeSet::new()
        };

        let mut ctx = Context {
            cfg,
            hash: cfg.config_hash(),
            victims: HashMap::new(),
            shadows: HashMap::new(),
            tests: HashMap::new(),
            regression_meta: HashMap::new(),
        };
        for rep in 0..cfg.repetitions {
            for &idx in &victim_idxs {
                let pool = build_pools_idx(cfg, idx, Pool::Victim, rep)?;
                ctx.victims.insert((idx, rep), Arc::new(pool));
            }
            for &idx in &shadow_idxs {
                let pool = build_pools_idx(cfg, idx, Pool::Adversary, rep)?;
                ctx.shadows.insert((idx, rep), Arc::new(pool));
            }
            for &idx in &test_idxs {
                let spec = spec_at(cfg, idx)?;
                let seed = mix64(&[
                    cfg.master_seed,
                    Pool::Adversary.tag(),
                    idx as u64,
                    rep as u64,
                    TAG_TESTSET,
                ]);
                // Exact-count composition keeps the evaluation sets at their
                // nominal ratio, the fixed-test-set analogue of the paper's
                // protocol.
                let ds = sample_dataset(
                    &spec,
                    cfg.eval_size(),
                    seed,
                    Pool::Adversary,
                    SampleMode::ExactCount,
                );
                ctx.tests.insert((idx, rep), Arc::new(ds));
            }
            if regression {
                let mut models = Vec::new();
                let mut alphas = Vec::new();
                for idx in 0..cfg.alpha_grid.len() {
                    let pool = &ctx.shadows[&(idx, rep)];
                    models.extend(pool.iter().map(|e| e.net.clone()));
                    alphas.extend(std::iter::repeat(cfg.alpha_grid[idx]).take(pool.len()));
                }
                let pool = ShadowPool::regression(models, alphas);
                let meta_cfg = cfg.meta.to_config(MetaMode::Regression);
                let seed = mix64(&[cfg.master_seed, TAG_META_REGRESS, rep as u64]);
                let meta = meta_train(&pool, &meta_cfg, seed)?;
                ctx.regression_meta.insert(rep, Arc::new(meta));
            }
        }
        Ok(ctx)
    }

    fn victims(&self, idx: usize, rep: u32) -> &[PoolEntry] {
        &self.victims[&(idx, rep)]
    }

    fn shadows(&self, idx: usize, rep: u32) -> &[PoolEntry] {
        &self.shadows[&(idx, rep)]
    }

    fn test_set(&self, idx: usize, rep: u32) -> &Dataset {
        &self.tests[&(idx, rep)]
    }

    fn binary_shadow_pool(&self, i: usize, j: usize, rep: u32) -> ShadowPool {
        let lo = self.shadows(i, rep);
        let hi = self.shadows(j, rep);
        let models = lo.iter().chain(hi).map(|e| e.net.clone()).collect();
        let labels = (0..lo.len())
            .map(|_| false)
            .chain((0..hi.len()).map(|_| true))
            .collect();
        ShadowPool::binary(models, labels)
    }

    /// Balanced victim evaluation order: all alpha0 victims then all alpha1
    /// victims, truths false/true.
    fn victim_eval(&self, i: usize, j: usize, rep: u32) -> (Vec<&NetParams>, Vec<bool>) {
        let v0 = self.victims(i, rep);
        let v1 = self.victims(j, rep);
        let nets = v0.iter().chain(v1).map(|e| &e.net).collect();
        let truths = (0..v0.len())
            .map(|_| false)
            .chain((0..v1.len()).map(|_| true))
            .collect();
        (nets, truths)
    }

    fn probe_candidates(&self, i: usize, j: usize, rep: u32) -> Vec<Vec<f64>> {
        let per_set = (self.cfg.layer_rank_candidates / 2).max(1);
        let mut candidates = Vec::with_capacity(per_set * 2);
        for idx in [i, j] {
            candidates.extend(
                self.test_set(idx, rep)
                    .records
                    .iter()
                    .take(per_set)
                    .map(|r| r.features.clone()),
            );
        }
        candidates
    }
}

fn evaluate_cell(
    ctx: &Context<'_>,
    attack: AttackKind,
    i: usize,
    j: usize,
    rep: u32,
) -> Result<CellReport, HarnessError> {
    let cfg = ctx.cfg;
    let pair = RatioPair::new(cfg.alpha_grid[i], cfg.alpha_grid[j])?;
    let seed = cfg.cell_seed(attack, i, j, rep);
    let (victims, truths) = ctx.victim_eval(i, j, rep);
    let mut ties = 0usize;

    let predictions: Vec<bool> = match attack {
        AttackKind::Loss => {
            let s0 = ctx.test_set(i, rep);
            let s1 = ctx.test_set(j, rep);
            victims
                .iter()
                .map(|net| -> Result<bool, HarnessError> {
                    let acc0 = nets::accuracy(net, &s0.records)?;
                    let acc1 = nets::accuracy(net, &s1.records)?;
                    let (pred, tie) = loss_test(acc0, acc1);
                    ties += usize::from(tie);
                    Ok(pred)
                })
                .collect::<Result<_, _>>()?
        }
        AttackKind::Threshold => {
            let pool = ctx.binary_shadow_pool(i, j, rep);
            let s0 = ctx.test_set(i, rep);
            let s1 = ctx.test_set(j, rep);
            let accs_on = |ds: &Dataset| -> Result<Vec<f64>, HarnessError> {
                pool.models
                    .iter()
                    .map(|m| nets::accuracy(m, &ds.records).map_err(HarnessError::from))
                    .collect()
            };
            let s0_accs = accs_on(s0)?;
            let s1_accs = accs_on(s1)?;
            let rule = threshold_fit(&pool, &s0_accs, &s1_accs)?;
            let chosen = if rule.chosen_set { s1 } else { s0 };
            victims
                .iter()
                .map(|net| -> Result<bool, HarnessError> {
                    let acc = nets::accuracy(net, &chosen.records)?;
                    Ok(threshold_apply(&rule, acc))
                })
                .collect::<Result<_, _>>()?
        }
        AttackKind::MetaBinary => {
            let pool = ctx.binary_shadow_pool(i, j, rep);
            let meta_cfg = cfg.meta.to_config(MetaMode::Binary);
            let meta = meta_train(&pool, &meta_cfg, seed)?;
            victims
                .iter()
                .map(|net| meta_predict(&meta, net).map(|p| p >= 0.5))
                .collect::<Result<_, _>>()?
        }
        AttackKind::MetaRegression => {
            let meta = ctx
                .regression_meta
                .get(&rep)
                .ok_or_else(|| HarnessError::Config("regression meta-classifier missing".into()))?;
            victims
                .iter()
                .map(|net| {
                    meta_predict(meta, net)
                        .map_err(HarnessError::from)
                        .and_then(|p| regression_to_binary(p, pair).map_err(HarnessError::from))
                })
                .collect::<Result<_, _>>()?
        }
        AttackKind::LayerRank => {
            let shadow = ctx.binary_shadow_pool(i, j, rep);
            let candidates = ctx.probe_candidates(i, j, rep);
            // Even/odd split for ranking; the winning layer's rule is refit
            // on the full pool before it faces the victims.
            let split = |keep_even: bool| {
                let kept: Vec<usize> = (0..shadow.models.len())
                    .filter(|idx| (idx % 2 == 0) == keep_even)
                    .collect();
                ShadowPool::binary(
                    kept.iter().map(|&k| shadow.models[k].clone()).collect(),
                    kept.iter().map(|&k| shadow.dist_labels[k]).collect(),
                )
            };
            let fit_half = split(true);
            let holdout_half = split(false);
            let ranking = layer_rank(&fit_half, &candidates, &holdout_half)?;
            let best_layer = ranking[0].0;
            let rule = count_rule_fit(&shadow, &candidates, best_layer)?;
            victims
                .iter()
                .map(|net| count_rule_apply(&rule, net, &candidates).map_err(HarnessError::from))
                .collect::<Result<_, _>>()?
        }
    };

    let (report, below_chance) = report_from_predictions(pair, &predictions, &truths)?;
    Ok(CellReport {
        attack,
        alpha0: cfg.alpha_grid[i],
        alpha1: cfg.alpha_grid[j],
        rep,
        seed,
        config_hash: ctx.hash.clone(),
        report: Some(report),
        below_chance,
        ties,
        error: None,
    })
}

fn regression_cells(ctx: &Context<'_>) -> Result<Vec<RegressionCell>, HarnessError> {
    let cfg = ctx.cfg;
    let mut cells = Vec::new();
    for rep in 0..cfg.repetitions {
        let Some(meta) = ctx.regression_meta.get(&rep) else {
            continue;
        };
        for (idx, &alpha) in cfg.alpha_grid.iter().enumerate() {
            let victims = ctx.victims(idx, rep);
            let mut sq_err = 0.0;
            for entry in victims.iter() {
                let pred = meta_predict(meta, &entry.net)?;
                sq_err += (pred - alpha).powi(2);
            }
            let mse = sq_err / victims.len() as f64;
            let n_leaked = if alpha > 0.0 && alpha < 1.0 && mse > 0.0 {
                Some(crate::leakage::n_leaked_regression(alpha, mse)?)
            } else {
                None
            };
            cells.push(RegressionCell {
                alpha,
                rep,
                mse,
                n_leaked,
                victims: victims.len(),
            });
        }
    }
    Ok(cells)
}

/// Runs every configured attack for one ratio pair and repetition. Binary
/// attacks require distinct ratios; the regression meta-classifier also
/// reports its per-ratio squared-error cells.
pub fn run_pair(
    cfg: &ExperimentConfig,
    alpha0: f64,
    alpha1: f64,
    rep: u32,
) -> Result<(Vec<CellReport>, Vec<RegressionCell>), HarnessError> {
    cfg.validate()?;
    let i = cfg.alpha_index(alpha0)?;
    let j = cfg.alpha_index(alpha1)?;
    if i == j && cfg.attacks.iter().any(|a| *a != AttackKind::MetaRegression) {
        return Err(HarnessError::Config(
            "binary attacks require two distinct ratios".into(),
        ));
    }
    if rep >= cfg.repetitions {
        return Err(HarnessError::Config(format!(
            "repetition {rep} outside the configured range"
        )));
    }
    let pairs = if i == j {
        vec![]
    } else {
        vec![(i.min(j), i.max(j))]
    };
    let ctx = Context::build(cfg, &pairs)?;
    let mut cells = Vec::new();
    for &attack in &cfg.attacks {
        if let Some(&(pi, pj)) = pairs.first() {
            cells.push(evaluate_cell(&ctx, attack, pi, pj, rep)?);
        }
    }
    let regression = regression_cells(&ctx)?
        .into_iter()
        .filter(|c| c.rep == rep && (c.alpha == alpha0 || c.alpha == alpha1))
        .collect();
    Ok((cells, regression))
}

/// Sweeps every ordered ratio pair of the grid across repetitions and
/// attacks. Pools are built once per `(alpha, role, repetition)` and shared
/// across pairs; per-cell failures become error markers and the sweep
/// continues.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let pairs = cfg.pair_indices();
    let mut warnings = Vec::new();
    if pairs.is_empty() {
        warnings.push("alpha grid yields no ordered pairs; only regression cells (if configured) are produced".to_string());
    }
    let ctx = Context::build(cfg, &pairs)?;

    let mut tasks = Vec::new();
    for &(i, j) in &pairs {
        for rep in 0..cfg.repetitions {
            for &attack in &cfg.attacks {
                tasks.push((attack, i, j, rep));
            }
        }
    }
    let cells: Vec<CellReport> = tasks
        .into_par_iter()
        .map(|(attack, i, j, rep)| {
            evaluate_cell(&ctx, attack, i, j, rep).unwrap_or_else(|err| CellReport {
                attack,
                alpha0: cfg.alpha_grid[i],
                alpha1: cfg.alpha_grid[j],
                rep,
                seed: cfg.cell_seed(attack, i, j, rep),
                config_hash: ctx.hash.clone(),
                report: None,
                below_chance: false,
                ties: 0,
                error: Some(err.to_string()),
            })
        })
        .collect();

    Ok(SweepResult {
        alpha_grid: cfg.alpha_grid.clone(),
        config_hash: ctx.hash.clone(),
        cells,
        regression_cells: regression_cells(&ctx)?,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        use crate::harness::{AttackKind, MetaSettings};
        use crate::nets::{LayerSpec, TrainConfig};
        use crate::synthdata::UnderlyingSpec;
        ExperimentConfig {
            underlying: UnderlyingSpec {
                noise_dims: 3,
                signal_dims: 3,
                signal_strength: 3.0,
                label_property_coupling: 0.6,
                rule_seed: 7,
            },
            alpha_grid: vec![0.0, 1.0],
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
            attacks: vec![AttackKind::Loss],
            repetitions: 1,
            master_seed: 77,
            output_dir: std::path::PathBuf::from("/tmp/unused"),
            eval_size: Some(40),
            meta: MetaSettings::default(),
            layer_rank_candidates: 8,
        }
    }

    #[test]
    fn pools_are_deterministic_and_disjoint() {
        let cfg = tiny();
        let a = build_pools(&cfg, 0.0, Pool::Victim, 0).unwrap();
        let b = build_pools(&cfg, 0.0, Pool::Victim, 0).unwrap();
        assert_eq!(a.len(), cfg.n_victim);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.net, y.net);
            assert_eq!(x.data_seed, y.data_seed);
        }
        let seeds: BTreeSet<u64> = a.iter().map(|e| e.data_seed).collect();
        assert_eq!(seeds.len(), cfg.n_victim, "dataset seeds are distinct");

        // Victim and adversary datasets regenerate disjoint.
        use crate::synthdata::check_pool_disjointness;
        let spec = spec_at(&cfg, 0).unwrap();
        let v = sample_dataset(&spec, cfg.dataset_size, a[0].data_seed, Pool::Victim, SampleMode::Iid);
        let adv = build_pools(&cfg, 0.0, Pool::Adversary, 0).unwrap();
        let w = sample_dataset(&spec, cfg.dataset_size, adv[0].data_seed, Pool::Adversary, SampleMode::Iid);
        assert!(check_pool_disjointness(&v, &w));
    }

    #[test]
    fn run_pair_runs_each_attack_once() {
        let mut cfg = tiny();
        cfg.attacks = vec![AttackKind::Loss, AttackKind::Threshold];
        let (cells, regression) = run_pair(&cfg, 0.0, 1.0, 0).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(regression.is_empty());
        assert!(cells.iter().all(|c| c.error.is_none()));
        assert!(cells.iter().all(|c| c.report.is_some()));
    }

    #[test]
    fn run_pair_equal_alphas_gates_on_attack_mode() {
        let mut cfg = tiny();
        cfg.alpha_grid = vec![0.0, 0.5, 1.0];
        cfg.attacks = vec![AttackKind::Loss];
        assert!(run_pair(&cfg, 0.5, 0.5, 0).is_err());
        cfg.attacks = vec![AttackKind::MetaRegression];
        cfg.meta.epochs = 10;
        let (cells, regression) = run_pair(&cfg, 0.5, 0.5, 0).unwrap();
        assert!(cells.is_empty());
        assert_eq!(regression.len(), 1);
        assert_eq!(regression[0].alpha, 0.5);
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let mut cfg = tiny();
        cfg.alpha_grid = vec![0.0, 0.5, 1.0];
        cfg.attacks = vec![AttackKind::Loss, AttackKind::Threshold];
        let result = run_sweep(&cfg).unwrap();
        assert_eq!(result.cells.len(), 3 * 2);
        let again = run_sweep(&cfg).unwrap();
        assert_eq!(result, again);
    }

    #[test]
    fn sweep_single_alpha_warns() {
        let mut cfg = tiny();
        cfg.alpha_grid = vec![0.5];
        let result = run_sweep(&cfg).unwrap();
        assert!(result.cells.is_empty());
        assert!(!result.warnings.is_empty());
    }
}
