//! Synthetic underlying distribution, the ratio transformers G0/G1, pool
//! separation, and Zipf degree sampling.
//!
//! A record is a Gaussian feature vector split into two blocks. The noise
//! block carries the label signal: label-1 records are shifted along a fixed
//! direction derived from `rule_seed`. The signal block carries the property
//! signal: every coordinate is shifted by `signal_strength * (2*property - 1)`,
//! and when `label_property_coupling > 0` the label shift also bleeds into the
//! signal block along the same direction the property shift uses, making the
//! property task-correlated instead of latent. Only the property prior alpha
//! varies between G0 and G1; the conditional feature distributions never do.
//!
//! The paper this models works with real datasets; the generator itself is an
//! artifact of this crate, designed so the attack experiments have a
//! controllable, reproducible signal knob.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{self, Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leakage::ZipfSpec;
use crate::util::{mix64, KahanSum};

/// Magnitude of the label-1 mean shift along the rule direction.
const LABEL_SHIFT: f64 = 2.0;

// Purpose tags for substream derivation.
const TAG_RECORD: u64 = 0x7265_636f;
const TAG_RULE: u64 = 0x7275_6c65;
const TAG_PROP_SHUFFLE: u64 = 0x7073_6866;
const TAG_LABEL_SHUFFLE: u64 = 0x6c73_6866;
const TAG_LABEL_RETRY: u64 = 0x6c72_7472;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dimension counts and signal strength must be positive, coupling in [0, 1]")]
    InvalidSpec,
    #[error("alpha {0} is not a finite value in [0, 1]")]
    InvalidAlpha(f64),
    #[error("malformed dataset file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which disjoint data pool a dataset belongs to; the pool tag salts every
/// record substream so victim and adversary records never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Victim,
    Adversary,
}

impl Pool {
    pub fn tag(self) -> u64 {
        match self {
            Pool::Victim => 0x5649_4354,
            Pool::Adversary => 0x4144_5653,
        }
    }
}

/// How the property prior is realized in a sampled dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Property bits drawn iid Bernoulli(alpha); the default, matching the
    /// definition of the transformed distribution.
    Iid,
    /// Exactly `round(alpha * m)` positives (and `m/2` label positives) in a
    /// seeded shuffled order, for low-variance sweeps.
    ExactCount,
}

/// The underlying distribution D: dimensions, planted label rule, and how
/// strongly the property is expressed in features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderlyingSpec {
    pub noise_dims: usize,
    pub signal_dims: usize,
    pub signal_strength: f64,
    pub label_property_coupling: f64,
    pub rule_seed: u64,
}

impl UnderlyingSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let ok = self.noise_dims >= 1
            && self.signal_dims >= 1
            && self.signal_strength >= 0.0
            && self.signal_strength.is_finite()
            && (0.0..=1.0).contains(&self.label_property_coupling);
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidSpec)
        }
    }

    pub fn dims(&self) -> usize {
        self.noise_dims + self.signal_dims
    }

    /// The fixed label-rule direction: unit vector on the noise block scaled
    /// to `LABEL_SHIFT`, plus the coupled component on the signal block.
    fn label_shift(&self) -> (Vec<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(&[self.rule_seed, TAG_RULE]));
        let mut direction: Vec<f64> = (0..self.noise_dims).map(|_| normal(&mut rng)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut direction {
                *v *= LABEL_SHIFT / norm;
            }
        } else {
            direction[0] = LABEL_SHIFT;
        }
        let signal_component =
            self.label_property_coupling * LABEL_SHIFT / (self.signal_dims as f64).sqrt();
        (direction, signal_component)
    }
}

/// An underlying distribution together with a property prior alpha, i.e. the
/// transformed distribution G_alpha(D).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioDistributionSpec {
    pub underlying: UnderlyingSpec,
    pub alpha: f64,
}

impl RatioDistributionSpec {
    pub fn new(underlying: UnderlyingSpec, alpha: f64) -> Result<Self, DataError> {
        underlying.validate()?;
        if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
            return Err(DataError::InvalidAlpha(alpha));
        }
        Ok(Self { underlying, alpha })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub features: Vec<f64>,
    pub label: bool,
    pub property: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub pool: Pool,
    pub seed: u64,
    pub spec: RatioDistributionSpec,
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; owned here so generated bytes never depend on an external
    // crate's sampling algorithm.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn shuffled_bits(count: usize, positives: usize, seed: u64) -> Vec<bool> {
    let mut bits: Vec<bool> = (0..count).map(|i| i < positives).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..count).rev() {
        let j = rng.random_range(0..=i);
        bits.swap(i, j);
    }
    bits
}

/// Samples a dataset of `m` records from G_alpha(D).
///
/// Record `i` owns the substream `mix(seed, pool, TAG_RECORD, i)`, so growing
/// a dataset never perturbs earlier records. In `Iid` mode the label marginal
/// is additionally held inside the 3-sigma window around 0.5 (labels are
/// redrawn from a retry-salted substream in the rare draw that falls outside),
/// keeping label balance fixed across alpha.
pub fn sample_dataset(
    spec: &RatioDistributionSpec,
    m: usize,
    seed: u64,
    pool: Pool,
    mode: SampleMode,
) -> Dataset {
    assert!(m >= 1, "dataset size must be positive");
    let u = &spec.underlying;
    let dims = u.dims();
    let (label_dir, signal_component) = u.label_shift();

    // Phase 1: per-record substreams give the property bit, a label draw and
    // the base Gaussian noise, in that fixed order.
    let mut properties = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    let mut noise = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(&[seed, pool.tag(), TAG_RECORD, i as u64]));
        properties.push(rng.random::<f64>() < spec.alpha);
        labels.push(rng.random::<f64>() < 0.5);
        noise.push((0..dims).map(|_| normal(&mut rng)).collect::<Vec<f64>>());
    }

    match mode {
        SampleMode::Iid => {
            // Keep the empirical label mean inside 0.5 +- 3/(2 sqrt(m)).
            let window = 3.0 / (2.0 * (m as f64).sqrt());
            let mut attempt = 0u64;
            while (label_mean(&labels) - 0.5).abs() > window {
                attempt += 1;
                for (i, label) in labels.iter_mut().enumerate() {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix64(&[
                        seed,
                        pool.tag(),
                        TAG_LABEL_RETRY,
                        attempt,
                        i as u64,
                    ]));
                    *label = rng.random::<f64>() < 0.5;
                }
            }
        }
        SampleMode::ExactCount => {
            let positives = (spec.alpha * m as f64).round() as usize;
            properties = shuffled_bits(m, positives.min(m), mix64(&[seed, pool.tag(), TAG_PROP_SHUFFLE]));
            labels = shuffled_bits(m, m / 2, mix64(&[seed, pool.tag(), TAG_LABEL_SHUFFLE]));
        }
    }

    // Phase 2: assemble features from the base noise plus the planted shifts.
    let records = noise
        .into_iter()
        .zip(properties)
        .zip(labels)
        .map(|((mut features, property), label)| {
            if label {
                for (f, d) in features.iter_mut().zip(&label_dir) {
                    *f += d;
                }
                for f in features[u.noise_dims..].iter_mut() {
                    *f += signal_component;
                }
            }
            let prop_shift = u.signal_strength * if property { 1.0 } else { -1.0 };
            for f in features[u.noise_dims..].iter_mut() {
                *f += prop_shift;
            }
            Record {
                features,
                label,
                property,
            }
        })
        .collect();

    Dataset {
        records,
        pool,
        seed,
        spec: *spec,
    }
}

fn label_mean(labels: &[bool]) -> f64 {
    labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64
}

/// Fraction of records satisfying the property.
pub fn empirical_ratio(dataset: &Dataset) -> f64 {
    assert!(!dataset.records.is_empty());
    dataset.records.iter().filter(|r| r.property).count() as f64 / dataset.records.len() as f64
}

fn feature_bits(record: &Record) -> Vec<u64> {
    record.features.iter().map(|f| f.to_bits()).collect()
}

/// True iff no feature vector appears bitwise-identically in both datasets.
pub fn check_pool_disjointness(a: &Dataset, b: &Dataset) -> bool {
    debug_assert_eq!(
        a.spec.underlying.dims(),
        b.spec.underlying.dims(),
        "disjointness is defined for equal dimensionality"
    );
    let seen: HashSet<Vec<u64>> = a.records.iter().map(feature_bits).collect();
    !b.records.iter().any(|r| seen.contains(&feature_bits(r)))
}

/// `n` iid draws from the finite Zipf pmf by inverse CDF over a precomputed
/// cumulative table.
pub fn sample_degrees(spec: &ZipfSpec, n: usize, seed: u64) -> Vec<u64> {
    let norm = spec.normalizer();
    let mut cumulative = Vec::with_capacity(spec.n_elems() as usize);
    let mut acc = KahanSum::new();
    for k in 1..=spec.n_elems() {
        acc.add((k as f64).powf(-spec.exponent()) / norm);
        cumulative.push(acc.total());
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            cumulative.partition_point(|&c| c <= u) as u64 + 1
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset file formats.
//
// CSV: a header `f0,...,f{D-1},label,property`, then one row per record with
// full-precision (round-trippable) floats and 0/1 bits.
//
// Binary: magic `DISTINF\x01`, u64 record count, u32 feature dim, then per
// record D little-endian f64 plus one label byte and one property byte.
// ---------------------------------------------------------------------------

const BIN_MAGIC: &[u8; 8] = b"DISTINF\x01";

pub fn write_csv(records: &[Record], out: &mut impl Write) -> Result<(), DataError> {
    let dims = records.first().map_or(0, |r| r.features.len());
    let mut header = String::new();
    for d in 0..dims {
        let _ = write!(header, "f{d},");
    }
    header.push_str("label,property\n");
    out.write_all(header.as_bytes())?;
    let mut line = String::new();
    for r in records {
        line.clear();
        for f in &r.features {
            let _ = write!(line, "{f},");
        }
        let _ = writeln!(line, "{},{}", u8::from(r.label), u8::from(r.property));
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_csv(input: &mut impl Read) -> Result<Vec<Record>, DataError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| DataError::MalformedFile("empty file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[columns.len() - 2] != "label" {
        return Err(DataError::MalformedFile("unrecognized header".into()));
    }
    let dims = columns.len() - 2;
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dims + 2 {
            return Err(DataError::MalformedFile(format!(
                "row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                dims + 2
            )));
        }
        let parse_bit = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(DataError::MalformedFile(format!("bad bit `{other}`"))),
        };
        let features = fields[..dims]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| DataError::MalformedFile(format!("bad float `{s}`: {e}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        records.push(Record {
            features,
            label: parse_bit(fields[dims])?,
            property: parse_bit(fields[dims + 1])?,
        });
    }
    if records.is_empty() {
        return Err(DataError::MalformedFile("no records".into()));
    }
    Ok(records)
}

pub fn write_binary(records: &[Record], out: &mut impl Write) -> Result<(), DataError> {
    let dims = records.first().map_or(0, |r| r.features.len());
    out.write_all(BIN_MAGIC)?;
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    out.write_all(&(dims as u32).to_le_bytes())?;
    for r in records {
        for f in &r.features {
            out.write_all(&f.to_le_bytes())?;
        }
        out.write_all(&[u8::from(r.label), u8::from(r.property)])?;
    }
    Ok(())
}

pub fn read_binary(input: &mut impl Read) -> Result<Vec<Record>, DataError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != BIN_MAGIC {
        return Err(DataError::MalformedFile("bad magic".into()));
    }
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let dims = u32::from_le_bytes(u32buf) as usize;
    if count == 0 || dims == 0 {
        return Err(DataError::MalformedFile("empty dataset".into()));
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut features = Vec::with_capacity(dims);
        for _ in 0..dims {
            input.read_exact(&mut u64buf)?;
            features.push(f64::from_le_bytes(u64buf));
        }
        let mut bits = [0u8; 2];
        input.read_exact(&mut bits)?;
        records.push(Record {
            features,
            label: bits[0] != 0,
            property: bits[1] != 0,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::zipf_mean;

    fn spec(alpha: f64) -> RatioDistributionSpec {
        RatioDistributionSpec::new(
            UnderlyingSpec {
                noise_dims: 4,
                signal_dims: 4,
                signal_strength: 2.0,
                label_property_coupling: 0.5,
                rule_seed: 42,
            },
            alpha,
        )
        .unwrap()
    }

    #[test]
    fn degenerate_prior_all_positive() {
        let ds = sample_dataset(&spec(1.0), 100, 1, Pool::Victim, SampleMode::Iid);
        assert!(ds.records.iter().all(|r| r.property));
        assert_eq!(empirical_ratio(&ds), 1.0);
    }

    #[test]
    fn iid_ratio_concentrates() {
        let ds = sample_dataset(&spec(0.37), 10_000, 5, Pool::Victim, SampleMode::Iid);
        let ratio = empirical_ratio(&ds);
        assert!((ratio - 0.37).abs() < 3.0 * (0.37f64 * 0.63 / 10_000.0).sqrt());
    }

    #[test]
    fn exact_count_is_exact() {
        let ds = sample_dataset(&spec(0.5), 10, 3, Pool::Victim, SampleMode::ExactCount);
        assert_eq!(ds.records.iter().filter(|r| r.property).count(), 5);
        assert_eq!(ds.records.iter().filter(|r| r.label).count(), 5);
        // Label and property multisets are invariant across alpha.
        let other = sample_dataset(&spec(0.9), 10, 3, Pool::Victim, SampleMode::ExactCount);
        assert_eq!(other.records.iter().filter(|r| r.property).count(), 9);
        assert_eq!(other.records.iter().filter(|r| r.label).count(), 5);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_dataset(&spec(0.4), 64, 9, Pool::Adversary, SampleMode::Iid);
        let b = sample_dataset(&spec(0.4), 64, 9, Pool::Adversary, SampleMode::Iid);
        assert_eq!(a, b);
    }

    #[test]
    fn label_mean_window_holds() {
        for seed in 0..20 {
            let ds = sample_dataset(&spec(0.7), 400, seed, Pool::Victim, SampleMode::Iid);
            let mean = ds.records.iter().filter(|r| r.label).count() as f64 / 400.0;
            assert!((mean - 0.5).abs() <= 3.0 / (2.0 * 400f64.sqrt()));
        }
    }

    #[test]
    fn conditional_features_do_not_depend_on_alpha() {
        // Same seed, opposite extreme priors: records differ only by the
        // property shift on the signal block (labels share the same draw).
        let lo = sample_dataset(&spec(0.0), 32, 7, Pool::Victim, SampleMode::Iid);
        let hi = sample_dataset(&spec(1.0), 32, 7, Pool::Victim, SampleMode::Iid);
        for (a, b) in lo.records.iter().zip(&hi.records) {
            assert_eq!(a.label, b.label);
            for d in 0..4 {
                assert_eq!(a.features[d], b.features[d], "noise block must match");
            }
            for d in 4..8 {
                let gap = b.features[d] - a.features[d];
                assert!((gap - 4.0).abs() < 1e-12, "2 * signal_strength shift");
            }
        }
    }

    #[test]
    fn pools_are_disjoint() {
        let v = sample_dataset(&spec(0.5), 500, 11, Pool::Victim, SampleMode::Iid);
        let a = sample_dataset(&spec(0.5), 500, 11, Pool::Adversary, SampleMode::Iid);
        assert!(check_pool_disjointness(&v, &a));
        assert!(!check_pool_disjointness(&v, &v));

        let mut handmade = v.clone();
        handmade.records.truncate(1);
        let mut other = a.clone();
        other.records.truncate(1);
        other.records[0].features = handmade.records[0].features.clone();
        assert!(!check_pool_disjointness(&handmade, &other));
    }

    #[test]
    fn degree_samples_match_support_and_mean() {
        let one = ZipfSpec::new(1, 2.5).unwrap();
        assert_eq!(sample_degrees(&one, 5, 3), vec![1, 1, 1, 1, 1]);

        let uniform = ZipfSpec::new(3, 0.0).unwrap();
        let draws = sample_degrees(&uniform, 100_000, 17);
        for v in 1..=3u64 {
            let freq = draws.iter().filter(|&&d| d == v).count() as f64 / 100_000.0;
            let sigma = ((1.0 / 3.0) * (2.0 / 3.0) / 100_000.0f64).sqrt();
            assert!((freq - 1.0 / 3.0).abs() < 3.0 * sigma);
        }

        let spec = ZipfSpec::new(1000, 2.0).unwrap();
        let draws = sample_degrees(&spec, 100_000, 23);
        let mean = draws.iter().sum::<u64>() as f64 / 100_000.0;
        let sample_var = draws
            .iter()
            .map(|&d| (d as f64 - mean).powi(2))
            .sum::<f64>()
            / 99_999.0;
        let sigma = (sample_var / 100_000.0).sqrt();
        assert!((mean - zipf_mean(spec)).abs() < 3.0 * sigma);
    }

    #[test]
    fn csv_round_trip() {
        let ds = sample_dataset(&spec(0.42), 25, 2, Pool::Adversary, SampleMode::Iid);
        let mut buf = Vec::new();
        write_csv(&ds.records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f0,f1,f2,f3,f4,f5,f6,f7,label,property\n"));
        let back = read_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds.records);
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let ds = sample_dataset(&spec(0.42), 25, 2, Pool::Adversary, SampleMode::Iid);
        let mut buf = Vec::new();
        write_binary(&ds.records, &mut buf).unwrap();
        let back = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ds.records);
        let truncated = &buf[..buf.len() - 3];
        assert!(read_binary(&mut &truncated[..]).is_err());
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_binary(&mut bad_magic.as_slice()).is_err());
    }
}
