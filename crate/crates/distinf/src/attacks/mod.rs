//! The distribution-inference attacks: loss test, threshold test, the
//! permutation-invariant meta-classifier (binary and regression), and the
//! activation-count layer-ranking procedure.

mod meta;

pub use meta::{
    featurize_model, meta_predict, meta_train, MetaConfig, MetaMode, MetaNet,
};

use thiserror::Error;

use crate::nets::{self, NetParams};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("shadow pool must contain both distribution labels")]
    MissingLabel,
    #[error("alpha0 and alpha1 must differ")]
    EqualRatios,
    #[error("target architecture does not match the meta-classifier: {0}")]
    ArchMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("meta-classifier training diverged at epoch {epoch}")]
    NumericalDivergence { epoch: u32 },
    #[error(transparent)]
    Net(#[from] nets::NetError),
}

/// A balanced set of locally trained models with their distribution labels
/// (`dist_labels[i]` says which transformed distribution trained model `i`)
/// and, for regression meta-classifiers, the training ratio of each model.
#[derive(Debug, Clone)]
pub struct ShadowPool {
    pub models: Vec<NetParams>,
    pub dist_labels: Vec<bool>,
    pub alpha_labels: Option<Vec<f64>>,
}

impl ShadowPool {
    pub fn binary(models: Vec<NetParams>, dist_labels: Vec<bool>) -> Self {
        assert_eq!(models.len(), dist_labels.len());
        Self {
            models,
            dist_labels,
            alpha_labels: None,
        }
    }

    pub fn regression(models: Vec<NetParams>, alpha_labels: Vec<f64>) -> Self {
        assert_eq!(models.len(), alpha_labels.len());
        Self {
            dist_labels: vec![false; models.len()],
            models,
            alpha_labels: Some(alpha_labels),
        }
    }

    pub fn has_both_labels(&self) -> bool {
        self.dist_labels.iter().any(|&l| l) && self.dist_labels.iter().any(|&l| !l)
    }
}

/// Loss test: predict the distribution whose test set the model is more
/// accurate on. Returns the predicted bit and a flag marking an exact tie
/// (which resolves to 0).
pub fn loss_test(acc0: f64, acc1: f64) -> (bool, bool) {
    debug_assert!((0.0..=1.0).contains(&acc0) && (0.0..=1.0).contains(&acc1));
    (acc0 < acc1, acc0 == acc1)
}

/// Which side of the threshold the class-0 shadow models sit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    GreaterEq,
    Less,
}

/// A fitted black-box decision rule from the threshold test.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRule {
    /// Which candidate test set the rule thresholds on.
    pub chosen_set: bool,
    pub threshold: f64,
    pub direction: Direction,
    /// The two performance-gap statistics the set choice was made from.
    pub gamma: (f64, f64),
    /// Shadow models classified correctly by the fitted threshold.
    pub training_delta: usize,
    /// More than one candidate threshold attained the maximum.
    pub tie: bool,
}

struct FittedThreshold {
    threshold: f64,
    delta: usize,
    tie: bool,
}

/// Maximizes the separation count over candidate thresholds: midpoints of
/// consecutive distinct scores plus sentinels beyond both ends. The smallest
/// maximizing candidate wins, which makes the fit deterministic and equal to
/// the brute-force optimum over all real thresholds.
fn fit_threshold(scores: &[f64], labels: &[bool], direction: Direction) -> FittedThreshold {
    debug_assert_eq!(scores.len(), labels.len());
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();

    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    candidates.push(sorted[0] - 0.5);
    candidates.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(sorted[sorted.len() - 1] + 0.5);

    let delta_at = |threshold: f64| {
        scores
            .iter()
            .zip(labels)
            .filter(|&(&s, &l)| match direction {
                Direction::GreaterEq => (s >= threshold) == !l,
                Direction::Less => (s < threshold) == !l,
            })
            .count()
    };

    let mut best = FittedThreshold {
        threshold: candidates[0],
        delta: delta_at(candidates[0]),
        tie: false,
    };
    for &c in &candidates[1..] {
        let d = delta_at(c);
        if d > best.delta {
            best = FittedThreshold {
                threshold: c,
                delta: d,
                tie: false,
            };
        } else if d == best.delta {
            best.tie = true;
        }
    }
    best
}

/// Fits the threshold-test rule on a shadow pool given each model's accuracy
/// on the two candidate test sets (`s0_accs[i] = acc(model i, S0)`).
pub fn threshold_fit(
    pool: &ShadowPool,
    s0_accs: &[f64],
    s1_accs: &[f64],
) -> Result<AttackRule, AttackError> {
    assert_eq!(pool.models.len(), s0_accs.len());
    assert_eq!(pool.models.len(), s1_accs.len());
    if !pool.has_both_labels() {
        return Err(AttackError::MissingLabel);
    }
    let gap = |accs: &[f64]| {
        accs.iter()
            .zip(&pool.dist_labels)
            .map(|(&a, &y)| if y { -a } else { a })
            .sum::<f64>()
    };
    let gamma = (gap(s0_accs), gap(s1_accs));
    let chosen_set = gamma.0.abs() < gamma.1.abs();
    let (accs, gamma_k) = if chosen_set {
        (s1_accs, gamma.1)
    } else {
        (s0_accs, gamma.0)
    };
    let direction = if gamma_k >= 0.0 {
        Direction::GreaterEq
    } else {
        Direction::Less
    };
    let fitted = fit_threshold(accs, &pool.dist_labels, direction);
    Ok(AttackRule {
        chosen_set,
        threshold: fitted.threshold,
        direction,
        gamma,
        training_delta: fitted.delta,
        tie: fitted.tie,
    })
}

/// Applies a fitted rule to a target model's accuracy on the chosen test set.
///
/// The fit puts class-0 shadow models on the `direction` side of the
/// threshold, so a target landing there is predicted as 0; the boundary value
/// itself always resolves with the `>=` comparison.
pub fn threshold_apply(rule: &AttackRule, target_acc_on_chosen_set: f64) -> bool {
    let on_class0_side = match rule.direction {
        Direction::GreaterEq => target_acc_on_chosen_set >= rule.threshold,
        Direction::Less => target_acc_on_chosen_set < rule.threshold,
    };
    !on_class0_side
}

/// Flattens a convolutional kernel of shape `(k1, k2, c_in, c_out)` into
/// `c_out` rows of `k1 * k2 * c_in` kernel values (k1 outermost, c_in
/// innermost) with the channel bias appended, the set elements the
/// permutation-invariant architecture sums over.
pub fn conv_flatten(
    kernel: &[f64],
    dims: (usize, usize, usize, usize),
    bias: &[f64],
) -> Result<Vec<Vec<f64>>, AttackError> {
    let (k1, k2, c_in, c_out) = dims;
    if kernel.len() != k1 * k2 * c_in * c_out || bias.len() != c_out {
        return Err(AttackError::ShapeMismatch(format!(
            "kernel of {} values with {} biases does not match {k1}x{k2}x{c_in}x{c_out}",
            kernel.len(),
            bias.len()
        )));
    }
    Ok((0..c_out)
        .map(|co| {
            let mut row = Vec::with_capacity(k1 * k2 * c_in + 1);
            for i1 in 0..k1 {
                for i2 in 0..k2 {
                    for ci in 0..c_in {
                        row.push(kernel[((i1 * k2 + i2) * c_in + ci) * c_out + co]);
                    }
                }
            }
            row.push(bias[co]);
            row
        })
        .collect())
}

/// Converts a regression meta-classifier's ratio prediction into a binary
/// distribution guess by midpoint comparison. Callers order the pair so that
/// `alpha0 < alpha1`; the midpoint itself maps to 1.
pub fn regression_to_binary(
    pred: f64,
    pair: crate::leakage::RatioPair,
) -> Result<bool, AttackError> {
    if pair.alpha0() == pair.alpha1() {
        return Err(AttackError::EqualRatios);
    }
    Ok(pred >= (pair.alpha0() + pair.alpha1()) / 2.0)
}

/// Number of strictly positive activations after ReLU layer `j`.
pub fn activation_count(
    net: &NetParams,
    features: &[f64],
    j: usize,
) -> Result<usize, AttackError> {
    let acts = nets::activations(net, features, j)?;
    Ok(acts.iter().filter(|&&a| a > 0.0).count())
}

/// Picks the candidate input maximizing the between-class gap in total
/// activation counts at layer `j`; ties resolve to the first occurrence.
/// Returns the winning candidate's index and the gap it achieves.
pub fn layer_select(
    pool: &ShadowPool,
    candidates: &[Vec<f64>],
    j: usize,
) -> Result<(usize, f64), AttackError> {
    assert!(!pool.models.is_empty() && !candidates.is_empty());
    if !pool.has_both_labels() {
        return Err(AttackError::MissingLabel);
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, x) in candidates.iter().enumerate() {
        let mut gap = 0i64;
        for (model, &y) in pool.models.iter().zip(&pool.dist_labels) {
            let count = activation_count(model, x, j)? as i64;
            gap += if y { -count } else { count };
        }
        let gap = gap.abs() as f64;
        if best.map_or(true, |(_, g)| gap > g) {
            best = Some((idx, gap));
        }
    }
    Ok(best.unwrap())
}

/// An activation-count decision rule for one ReLU layer: the probe input that
/// maximizes the between-class count gap and a threshold fitted on the counts
/// with the same machinery the threshold test uses.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRule {
    pub layer: usize,
    pub probe_index: usize,
    pub threshold: f64,
    pub direction: Direction,
}

/// Fits a [`CountRule`] for layer `j` on a labeled pool.
pub fn count_rule_fit(
    pool: &ShadowPool,
    candidates: &[Vec<f64>],
    j: usize,
) -> Result<CountRule, AttackError> {
    let (probe_index, _) = layer_select(pool, candidates, j)?;
    let probe = &candidates[probe_index];
    let counts: Vec<f64> = pool
        .models
        .iter()
        .map(|m| activation_count(m, probe, j).map(|c| c as f64))
        .collect::<Result<_, _>>()?;
    let gamma: f64 = counts
        .iter()
        .zip(&pool.dist_labels)
        .map(|(&c, &y)| if y { -c } else { c })
        .sum();
    let direction = if gamma >= 0.0 {
        Direction::GreaterEq
    } else {
        Direction::Less
    };
    let fitted = fit_threshold(&counts, &pool.dist_labels, direction);
    Ok(CountRule {
        layer: j,
        probe_index,
        threshold: fitted.threshold,
        direction,
    })
}

/// Predicted distribution bit for a target model under a fitted count rule;
/// same class-0-side polarity as [`threshold_apply`].
pub fn count_rule_apply(
    rule: &CountRule,
    net: &NetParams,
    candidates: &[Vec<f64>],
) -> Result<bool, AttackError> {
    let count = activation_count(net, &candidates[rule.probe_index], rule.layer)? as f64;
    let on_class0_side = match rule.direction {
        Direction::GreaterEq => count >= rule.threshold,
        Direction::Less => count < rule.threshold,
    };
    Ok(!on_class0_side)
}

/// Ranks ReLU layers by how well a threshold on activation counts (at each
/// layer's best probe input) distinguishes the two pools. Fits on `pool`,
/// scores on `holdout`; layers come back sorted by descending holdout
/// accuracy, ties broken toward the shallower layer.
pub fn layer_rank(
    pool: &ShadowPool,
    candidates: &[Vec<f64>],
    holdout: &ShadowPool,
) -> Result<Vec<(usize, f64)>, AttackError> {
    if !pool.has_both_labels() || !holdout.has_both_labels() {
        return Err(AttackError::MissingLabel);
    }
    let mut ranking = Vec::new();
    for j in nets::relu_layers(&pool.models[0].arch) {
        let rule = count_rule_fit(pool, candidates, j)?;
        let mut correct = 0usize;
        for (model, &y) in holdout.models.iter().zip(&holdout.dist_labels) {
            correct += usize::from(count_rule_apply(&rule, model, candidates)? == y);
        }
        ranking.push((j, correct as f64 / holdout.models.len() as f64));
    }
    ranking.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ranking)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{LayerParams, LayerSpec};

    #[test]
    fn loss_test_examples() {
        assert_eq!(loss_test(0.9, 0.6), (false, false));
        assert_eq!(loss_test(0.6, 0.9), (true, false));
        assert_eq!(loss_test(0.7, 0.7), (false, true));
    }

    fn pool_of(n: usize, labels: &[bool]) -> ShadowPool {
        // Threshold fitting never inspects the models themselves.
        let arch = vec![
            LayerSpec::Dense { input: 1, output: 1 },
            LayerSpec::SigmoidOutput,
        ];
        let model = NetParams {
            arch,
            layers: vec![LayerParams { weights: vec![0.0], bias: vec![0.0] }],
        };
        ShadowPool::binary(vec![model; n], labels.to_vec())
    }

    #[test]
    fn threshold_fit_worked_example() {
        let pool = pool_of(4, &[false, false, true, true]);
        let s0 = [0.9, 0.8, 0.5, 0.6];
        let s1 = [0.7, 0.7, 0.65, 0.75];
        let rule = threshold_fit(&pool, &s0, &s1).unwrap();
        assert!((rule.gamma.0 - 0.6).abs() < 1e-12);
        assert!(rule.gamma.1.abs() < 1e-12);
        assert!(!rule.chosen_set);
        assert_eq!(rule.direction, Direction::GreaterEq);
        assert!((rule.threshold - 0.7).abs() < 1e-12);
        assert_eq!(rule.training_delta, 4);

        // Applying the rule reproduces the training labels.
        for (&acc, &y) in s0.iter().zip(&pool.dist_labels) {
            assert_eq!(threshold_apply(&rule, acc), y);
        }
    }

    #[test]
    fn threshold_fit_degenerate_pool() {
        let pool = pool_of(4, &[false, true, false, true]);
        let accs = [0.7, 0.7, 0.7, 0.7];
        let rule = threshold_fit(&pool, &accs, &accs).unwrap();
        assert!(rule.tie);
        assert_eq!(rule.training_delta, 2);
        assert!((rule.threshold - 0.2).abs() < 1e-12, "smallest sentinel");
    }

    #[test]
    fn threshold_fit_negative_gamma() {
        // Class-1 models outperform on S0 and the S0 gap dominates.
        let pool = pool_of(4, &[false, false, true, true]);
        let s0 = [0.3, 0.4, 0.9, 0.85];
        let s1 = [0.5, 0.55, 0.6, 0.5];
        let rule = threshold_fit(&pool, &s0, &s1).unwrap();
        assert!(!rule.chosen_set);
        assert_eq!(rule.direction, Direction::Less);
        assert_eq!(rule.training_delta, 4);
        for (&acc, &y) in s0.iter().zip(&pool.dist_labels) {
            assert_eq!(threshold_apply(&rule, acc), y);
        }
    }

    #[test]
    fn threshold_fit_needs_both_labels() {
        let pool = pool_of(2, &[true, true]);
        assert_eq!(
            threshold_fit(&pool, &[0.1, 0.2], &[0.1, 0.2]),
            Err(AttackError::MissingLabel)
        );
    }

    #[test]
    fn threshold_apply_boundary() {
        let rule = AttackRule {
            chosen_set: false,
            threshold: 0.7,
            direction: Direction::GreaterEq,
            gamma: (0.6, 0.0),
            training_delta: 4,
            tie: false,
        };
        // The >= boundary lands on the class-0 side.
        assert!(!threshold_apply(&rule, 0.7));
        assert!(!threshold_apply(&rule, 0.85));
        assert!(threshold_apply(&rule, 0.65));
        let less = AttackRule {
            direction: Direction::Less,
            ..rule
        };
        assert!(!threshold_apply(&less, 0.65));
        assert!(threshold_apply(&less, 0.7));
    }

    #[test]
    fn threshold_fit_matches_brute_force() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..25 {
            let n = rng.random_range(2..=50);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
            labels[0] = false;
            labels[1] = true;
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random::<f64>() * 20.0).round() / 20.0)
                .collect();
            for direction in [Direction::GreaterEq, Direction::Less] {
                let fitted = fit_threshold(&scores, &labels, direction);
                // Brute force over a dense λ sweep bracketing every score.
                let mut best = 0usize;
                for i in 0..=2000 {
                    let t = -0.6 + 2.2 * i as f64 / 2000.0;
                    let d = scores
                        .iter()
                        .zip(&labels)
                        .filter(|&(&s, &l)| match direction {
                            Direction::GreaterEq => (s >= t) == !l,
                            Direction::Less => (s < t) == !l,
                        })
                        .count();
                    best = best.max(d);
                }
                assert_eq!(fitted.delta, best);
            }
        }
    }

    #[test]
    fn conv_flatten_examples() {
        // 1x1x1 kernels: each output channel contributes [value, bias].
        let rows = conv_flatten(&[1.0, 2.0, 3.0], (1, 1, 1, 3), &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(rows, vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0]]);

        let kernel: Vec<f64> = (0..3 * 3 * 2 * 4).map(|i| i as f64).collect();
        let rows = conv_flatten(&kernel, (3, 3, 2, 4), &[0.0; 4]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.len() == 19));

        assert!(conv_flatten(&kernel, (3, 3, 2, 5), &[0.0; 5]).is_err());
    }

    #[test]
    fn conv_flatten_preserves_position() {
        // A generic 3x3 kernel and its spatial transpose flatten differently.
        let kernel: Vec<f64> = (0..9).map(|i| (i * i) as f64).collect();
        let mut transposed = vec![0.0; 9];
        for i1 in 0..3 {
            for i2 in 0..3 {
                transposed[i2 * 3 + i1] = kernel[i1 * 3 + i2];
            }
        }
        let a = conv_flatten(&kernel, (3, 3, 1, 1), &[0.0]).unwrap();
        let b = conv_flatten(&transposed, (3, 3, 1, 1), &[0.0]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn regression_to_binary_examples() {
        let pair = |a, b| crate::leakage::RatioPair::new(a, b).unwrap();
        assert_eq!(regression_to_binary(0.3, pair(0.2, 0.6)).unwrap(), false);
        assert_eq!(regression_to_binary(0.4, pair(0.2, 0.6)).unwrap(), true);
        assert_eq!(regression_to_binary(0.55, pair(0.5, 0.52)).unwrap(), true);
        assert_eq!(
            regression_to_binary(0.5, pair(0.3, 0.3)),
            Err(AttackError::EqualRatios)
        );
        // A perfect regressor classifies perfectly on ordered pairs.
        for (a0, a1) in [(0.0, 1.0), (0.2, 0.3), (0.45, 0.5)] {
            assert!(!regression_to_binary(a0, pair(a0, a1)).unwrap());
            assert!(regression_to_binary(a1, pair(a0, a1)).unwrap());
        }
    }

    fn two_relu_net(first: &[f64], second: &[f64]) -> NetParams {
        NetParams {
            arch: vec![
                LayerSpec::Dense { input: 2, output: 3 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 3, output: 1 },
                LayerSpec::SigmoidOutput,
            ],
            layers: vec![
                LayerParams { weights: first.to_vec(), bias: vec![0.0; 3] },
                LayerParams { weights: second.to_vec(), bias: vec![0.0] },
            ],
        }
    }

    #[test]
    fn activation_count_examples() {
        let net = two_relu_net(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]);
        assert_eq!(activation_count(&net, &[-1.0, -1.0], 1).unwrap(), 0);
        assert_eq!(activation_count(&net, &[1.0, 1.0], 1).unwrap(), 3);
        // Positive rescaling preserves signs in a bias-free layer.
        assert_eq!(
            activation_count(&net, &[0.3, 0.9], 1).unwrap(),
            activation_count(&net, &[3.0, 9.0], 1).unwrap()
        );
        assert_eq!(
            activation_count(&net, &[1.0, 1.0], 0),
            Err(AttackError::Net(nets::NetError::BadLayerIndex(0)))
        );
    }

    #[test]
    fn layer_select_hand_built() {
        // Model A activates 3 units on the first candidate, model B none;
        // every other candidate activates both models equally.
        let a = two_relu_net(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 1.0]);
        let b = two_relu_net(&[-1.0, 0.0, -1.0, 0.0, -1.0, 0.0], &[1.0, 1.0, 1.0]);
        let pool = ShadowPool::binary(vec![a, b], vec![false, true]);
        let candidates = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (idx, gap) = layer_select(&pool, &candidates, 1).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(gap, 3.0);

        let single = vec![vec![0.0, 1.0]];
        assert_eq!(layer_select(&pool, &single, 1).unwrap().0, 0);
    }

    #[test]
    fn layer_select_identical_models_tie() {
        let m = two_relu_net(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 1.0]);
        let pool = ShadowPool::binary(vec![m.clone(), m], vec![false, true]);
        let candidates = vec![vec![1.0, 1.0], vec![0.5, 0.5]];
        let (idx, gap) = layer_select(&pool, &candidates, 1).unwrap();
        assert_eq!((idx, gap), (0, 0.0));
    }

    #[test]
    fn layer_rank_singleton_architecture() {
        let a = two_relu_net(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 1.0]);
        let b = two_relu_net(&[-1.0, 0.0, -1.0, 0.0, -1.0, 0.0], &[1.0, 1.0, 1.0]);
        let pool = ShadowPool::binary(vec![a.clone(), b.clone()], vec![false, true]);
        let holdout = ShadowPool::binary(vec![a, b], vec![false, true]);
        let candidates = vec![vec![1.0, 0.0]];
        let ranking = layer_rank(&pool, &candidates, &holdout).unwrap();
        assert_eq!(ranking.len(), 1);
        assert_eq!(ranking[0].0, 1);
        assert_eq!(ranking[0].1, 1.0, "separable counts classify the holdout");
    }
}
