//! Decision layer: threshold tests, permutation p-values, and the ROC/AUC
//! power-evaluation harness.
//!
//! Threshold mode compares the statistic against the finite-sample
//! acceptance bound (reject iff statistic ≥ threshold); permutation mode
//! builds a Monte-Carlo null by resampling splits of the pooled data. Both
//! the trials of an ROC run and the permutations of a p-value are
//! independent work items keyed by derived RNG substreams and reduced in
//! index order, so results do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{estimate_constants, mmd_threshold, pw_threshold, sigmoid_preprocess};
use crate::core::{RngSeed, SampleSet};
use crate::datasets::{generate, DatasetSpec};
use crate::error::{Error, Result};
use crate::mmd::{mmd_biased, MmdConfig};
use crate::pw::{estimate_pw, PwConfig};

use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pw,
    Mmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Threshold,
    Permutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "ACCEPT_H0")]
    AcceptH0,
    #[serde(rename = "REJECT_H0")]
    RejectH0,
}

/// Outcome of one test run. Fields not produced by the chosen mode stay
/// `None` and are omitted from the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub method: Method,
    pub permutations_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub mode: Mode,
    pub alpha: f64,
    /// Permutation count P for permutation mode.
    pub permutations: usize,
    /// Apply the element-wise sigmoid to both samples first (bounds the
    /// support, as the analytic thresholds require).
    pub sigmoid: bool,
    /// Root seed; the optimizer and permutation streams derive from it, and
    /// `pw.seed` is overridden accordingly.
    pub seed: RngSeed,
    pub pw: PwConfig,
    pub mmd: MmdConfig,
}

impl TestConfig {
    pub fn new(seed: RngSeed) -> TestConfig {
        TestConfig {
            mode: Mode::Threshold,
            alpha: 0.05,
            permutations: 199,
            sigmoid: false,
            seed,
            pw: PwConfig::new(1, seed),
            mmd: MmdConfig::default(),
        }
    }
}

/// Runs one two-sample test and returns the full verdict.
pub fn run_test(
    x: &SampleSet,
    y: &SampleSet,
    method: Method,
    cfg: &TestConfig,
) -> Result<TestVerdict> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!(
            "sample dimensions differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    let (dx, dy) = if cfg.sigmoid {
        (sigmoid_preprocess(x), sigmoid_preprocess(y))
    } else {
        (x.clone(), y.clone())
    };

    match cfg.mode {
        Mode::Threshold => {
            let stat = statistic(&dx, &dy, cfg.seed.substream_named("statistic"), method, cfg)?;
            let constants = estimate_constants(&dx, &dy)?;
            let threshold = match method {
                Method::Pw => {
                    let params =
                        constants.to_params(cfg.alpha, cfg.pw.k, dx.n(), dy.n());
                    pw_threshold(&params)?
                }
                Method::Mmd => {
                    if dx.n() != dy.n() {
                        return Err(Error::Config(
                            "the distribution-free kernel threshold requires n = m".into(),
                        ));
                    }
                    // Under H₀ both diameters estimate the same support; take
                    // the larger plug-in.
                    mmd_threshold(
                        cfg.mmd.kernel_bound(),
                        constants.b_mu.max(constants.b_nu),
                        dx.n(),
                        cfg.alpha,
                    )?
                }
            };
            let decision = if stat >= threshold {
                Decision::RejectH0
            } else {
                Decision::AcceptH0
            };
            Ok(TestVerdict {
                statistic: stat,
                threshold: Some(threshold),
                decision: Some(decision),
                p_value: None,
                method,
                permutations_used: 0,
            })
        }
        Mode::Permutation => {
            let f = |a: &SampleSet, b: &SampleSet, s: RngSeed| statistic(a, b, s, method, cfg);
            let detail = permutation_details(&dx, &dy, f, cfg.permutations, cfg.seed)?;
            let decision = if detail.p_value <= cfg.alpha {
                Decision::RejectH0
            } else {
                Decision::AcceptH0
            };
            Ok(TestVerdict {
                statistic: detail.observed,
                threshold: None,
                decision: Some(decision),
                p_value: Some(detail.p_value),
                method,
                permutations_used: cfg.permutations,
            })
        }
    }
}

fn statistic(
    x: &SampleSet,
    y: &SampleSet,
    seed: RngSeed,
    method: Method,
    cfg: &TestConfig,
) -> Result<f64> {
    match method {
        Method::Pw => {
            let mut pc = cfg.pw.clone();
            pc.seed = seed;
            Ok(estimate_pw(x, y, &pc)?.value)
        }
        Method::Mmd => mmd_biased(x, y, &cfg.mmd),
    }
}

struct PermutationDetail {
    observed: f64,
    p_value: f64,
}

/// Monte-Carlo permutation p-value: (1 + #{permuted ≥ observed}) / (P + 1).
///
/// The pooled rows are sorted into a canonical order before splitting, so
/// the p-value depends only on the pooled multiset, the (n, m) shape, the
/// observed statistic, and the seed — not on the order rows arrived in.
/// `statistic_fn(a, b, seed)` must be a pure function of its arguments.
pub fn permutation_pvalue<F>(
    x: &SampleSet,
    y: &SampleSet,
    statistic_fn: F,
    permutations: usize,
    seed: RngSeed,
) -> Result<f64>
where
    F: Fn(&SampleSet, &SampleSet, RngSeed) -> Result<f64> + Sync,
{
    Ok(permutation_details(x, y, statistic_fn, permutations, seed)?.p_value)
}

fn permutation_details<F>(
    x: &SampleSet,
    y: &SampleSet,
    statistic_fn: F,
    permutations: usize,
    seed: RngSeed,
) -> Result<PermutationDetail>
where
    F: Fn(&SampleSet, &SampleSet, RngSeed) -> Result<f64> + Sync,
{
    if permutations < 19 {
        return Err(Error::Config(format!(
            "at least 19 permutations are needed for a meaningful p-value, got {permutations}"
        )));
    }
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!(
            "sample dimensions differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    let observed = statistic_fn(x, y, seed.substream_named("observed"))?;

    let mut pooled: Vec<&[f64]> = x.rows().chain(y.rows()).collect();
    pooled.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|c| c.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n = x.n();
    let total = pooled.len();

    let stats: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|t| {
            let split_seed = seed.substream_named("split").substream(t as u64);
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(&mut split_seed.rng());
            let xs: Vec<Vec<f64>> = idx[..n].iter().map(|&i| pooled[i].to_vec()).collect();
            let ys: Vec<Vec<f64>> = idx[n..].iter().map(|&i| pooled[i].to_vec()).collect();
            statistic_fn(
                &SampleSet::from_rows(&xs)?,
                &SampleSet::from_rows(&ys)?,
                split_seed.substream_named("stat"),
            )
        })
        .collect::<Result<Vec<f64>>>()?;

    let exceed = stats.iter().filter(|s| **s >= observed).count();
    Ok(PermutationDetail {
        observed,
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
    })
}

/// Empirical ROC data for a statistic over H₀ and H₁ trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate) pairs, FPR nondecreasing.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub trials_h0: usize,
    pub trials_h1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocConfig {
    /// Per-sample size n = m drawn each trial.
    pub n: usize,
    pub trials: usize,
    pub seed: RngSeed,
    pub pw: PwConfig,
    pub mmd: MmdConfig,
}

impl RocConfig {
    pub fn new(n: usize, trials: usize, seed: RngSeed) -> RocConfig {
        RocConfig {
            n,
            trials,
            seed,
            pw: PwConfig::new(1, seed),
            mmd: MmdConfig::default(),
        }
    }
}

/// Runs `trials` draws under each hypothesis and traces the empirical ROC of
/// the statistic. Trial data depend only on (seed, class, trial index), so
/// two methods evaluated with the same config see identical samples.
pub fn evaluate_roc(
    h0: (&DatasetSpec, &DatasetSpec),
    h1: (&DatasetSpec, &DatasetSpec),
    method: Method,
    cfg: &RocConfig,
) -> Result<RocCurve> {
    if cfg.trials < 20 {
        return Err(Error::Config(format!(
            "at least 20 trials are needed, got {}",
            cfg.trials
        )));
    }
    let stats_for = |class: &str, pair: (&DatasetSpec, &DatasetSpec)| -> Result<Vec<f64>> {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let ts = cfg.seed.substream_named(class).substream(t as u64);
                let x = generate(pair.0, cfg.n, ts.substream_named("x"))?;
                let y = generate(pair.1, cfg.n, ts.substream_named("y"))?;
                match method {
                    Method::Pw => {
                        let mut pc = cfg.pw.clone();
                        pc.seed = ts.substream_named("stat");
                        Ok(estimate_pw(&x, &y, &pc)?.value)
                    }
                    Method::Mmd => mmd_biased(&x, &y, &cfg.mmd),
                }
            })
            .collect()
    };
    let s0 = stats_for("h0", h0)?;
    let s1 = stats_for("h1", h1)?;
    roc_from_scores(&s0, &s1)
}

/// Builds the empirical ROC by sweeping the decision threshold over every
/// observed score (reject iff score ≥ τ), plus the all-accept point.
pub fn roc_from_scores(h0_scores: &[f64], h1_scores: &[f64]) -> Result<RocCurve> {
    if h0_scores.is_empty() || h1_scores.is_empty() {
        return Err(Error::EmptyInput("ROC needs scores from both classes".into()));
    }
    if h0_scores.iter().chain(h1_scores).any(|s| !s.is_finite()) {
        return Err(Error::DegenerateData("non-finite score".into()));
    }
    let mut taus: Vec<f64> = h0_scores.iter().chain(h1_scores).cloned().collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let rate = |scores: &[f64], tau: f64| {
        scores.iter().filter(|s| **s >= tau).count() as f64 / scores.len() as f64
    };
    let mut points = vec![(0.0, 0.0)];
    for &tau in taus.iter().rev() {
        points.push((rate(h0_scores, tau), rate(h1_scores, tau)));
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5;
    }
    Ok(RocCurve {
        points,
        auc,
        trials_h0: h0_scores.len(),
        trials_h1: h1_scores.len(),
    })
}

// ---------------------------------------------------------------------------
