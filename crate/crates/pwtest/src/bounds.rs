//! Finite-sample acceptance thresholds.
//!
//! All thresholds have the shape
//!
//!   γ = concentration term + 2 · (Rademacher complexity terms),
//!
//! where the concentration term comes from bounded-differences arguments
//! (natural logarithms throughout) and the complexity of the projected
//! 1-Lipschitz class is bounded by √(2k · E‖X‖² / n). Unknown constants are
//! replaced by plug-in estimates from the observed samples; for unbounded
//! supports the element-wise sigmoid map gives a hard diameter bound of √d.

use serde::{Deserialize, Serialize};

use crate::core::{l2_distance, SampleSet};
use crate::error::{Error, Result};

/// Constants entering a threshold computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    /// Significance level, in (0, 1).
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
    /// Support diameter bounds.
    pub b_mu: f64,
    pub b_nu: f64,
    /// Lipschitz constant of the discriminator class (1 for the projected
    /// class).
    pub lipschitz: f64,
    /// Plug-in estimates of E‖X‖² and E‖Y‖².
    pub second_moment_mu: f64,
    pub second_moment_nu: f64,
    /// Projection dimension.
    pub k: usize,
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("projection dimension must be positive".into()));
        }
        for (name, v) in [
            ("b_mu", self.b_mu),
            ("b_nu", self.b_nu),
            ("lipschitz", self.lipschitz),
            ("second_moment_mu", self.second_moment_mu),
            ("second_moment_nu", self.second_moment_nu),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Rademacher complexity bound for the k-dimensional projected 1-Lipschitz
/// class: √(2k · second_moment / n).
pub fn rademacher_bound_projected(k: usize, n: usize, second_moment: f64) -> f64 {
    assert!(k > 0 && n > 0, "k and n must be positive");
    assert!(
        second_moment > 0.0 && second_moment.is_finite(),
        "second moment must be positive and finite"
    );
    (2.0 * k as f64 * second_moment / n as f64).sqrt()
}

/// Generic IPM acceptance threshold with caller-supplied complexity terms.
///
/// For m = n the one-sample concentration form applies and only
/// `rademacher_n` enters (with pooled moments the two complexity terms
/// coincide); otherwise the two-sample form uses both.
pub fn ipm_threshold(
    params: &ThresholdParams,
    rademacher_n: f64,
    rademacher_m: f64,
) -> Result<f64> {
    params.validate()?;
    if rademacher_n < 0.0 || rademacher_m < 0.0 {
        return Err(Error::Config("Rademacher terms must be nonnegative".into()));
    }
    let log_term = (2.0 / params.alpha).ln();
    let l2b2 = params.lipschitz * params.lipschitz * params.b_mu * params.b_mu;
    let (n, m) = (params.n as f64, params.m as f64);
    Ok(if params.n == params.m {
        (l2b2 / n * log_term).sqrt() + 2.0 * rademacher_n
    } else {
        (l2b2 * (m + n) / (2.0 * m * n) * log_term).sqrt()
            + 2.0 * (rademacher_n + rademacher_m)
    })
}

/// Acceptance threshold for the projected Wasserstein statistic: the IPM
/// threshold specialized to the 1-Lipschitz projected class, with the
/// complexity terms instantiated from the plug-in second moments. The stored
/// `lipschitz` is ignored here; the class is 1-Lipschitz by construction.
pub fn pw_threshold(params: &ThresholdParams) -> Result<f64> {
    Ok(pw_threshold_report(params)?.threshold)
}

/// Per-term breakdown of a projected Wasserstein threshold, so experiments
/// can attribute looseness to concentration vs complexity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
    pub b_mu: f64,
    pub b_nu: f64,
    pub second_moment_mu: f64,
    pub second_moment_nu: f64,
    pub k: usize,
    pub concentration_term: f64,
    pub complexity_term: f64,
    pub threshold: f64,
}

pub fn pw_threshold_report(params: &ThresholdParams) -> Result<ThresholdReport> {
    params.validate()?;
    let mut p = *params;
    p.lipschitz = 1.0;
    let rad_n = rademacher_bound_projected(p.k, p.n, p.second_moment_mu);
    let rad_m = if p.n == p.m {
        0.0
    } else {
        rademacher_bound_projected(p.k, p.m, p.second_moment_nu)
    };
    let threshold = ipm_threshold(&p, rad_n, rad_m)?;
    let complexity_term = 2.0 * (rad_n + rad_m);
    Ok(ThresholdReport {
        alpha: p.alpha,
        n: p.n,
        m: p.m,
        b_mu: p.b_mu,
        b_nu: p.b_nu,
        second_moment_mu: p.second_moment_mu,
        second_moment_nu: p.second_moment_nu,
        k: p.k,
        concentration_term: threshold - complexity_term,
        complexity_term,
        threshold,
    })
}

/// Distribution-free acceptance threshold for the biased MMD statistic with
/// a kernel bounded by `k_bound`: √(2K/n) · (√2 + B_μ √(ln(2/α))).
pub fn mmd_threshold(k_bound: f64, b_mu: f64, n: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(k_bound > 0.0) || !(b_mu > 0.0) || n == 0 {
        return Err(Error::Config(
            "kernel bound, diameter and sample size must be positive".into(),
        ));
    }
    Ok((2.0 * k_bound / n as f64).sqrt()
        * (2.0f64.sqrt() + b_mu * (2.0 / alpha).ln().sqrt()))
}

/// Element-wise sigmoid map s(t) = 1/(1 + e^{−t}). Entries land in (0, 1),
/// so any image set has diameter at most √d regardless of the input support.
pub fn sigmoid_preprocess(x: &SampleSet) -> SampleSet {
    let mapped: Vec<f64> = x.data().iter().map(|&t| 1.0 / (1.0 + (-t).exp())).collect();
    SampleSet::from_flat(x.n(), x.dim(), mapped).expect("shape is preserved")
}

/// Plug-in estimates of the support diameters and second moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimates {
    /// Diameter of X: exact max pairwise distance for n ≤ 4096, otherwise a
    /// bounding-box upper bound.
    pub b_mu: f64,
    pub b_nu: f64,
    pub second_moment_mu: f64,
    pub second_moment_nu: f64,
}

impl ConstantEstimates {
    /// Assembles full threshold parameters around the estimated constants.
    pub fn to_params(&self, alpha: f64, k: usize, n: usize, m: usize) -> ThresholdParams {
        ThresholdParams {
            alpha,
            n,
            m,
            b_mu: self.b_mu,
            b_nu: self.b_nu,
            lipschitz: 1.0,
            second_moment_mu: self.second_moment_mu,
            second_moment_nu: self.second_moment_nu,
            k,
        }
    }
}

pub fn estimate_constants(x: &SampleSet, y: &SampleSet) -> Result<ConstantEstimates> {
    for (name, s) in [("X", x), ("Y", y)] {
        if s.n() < 2 {
            return Err(Error::EmptyInput(format!(
                "{name} must contain at least 2 points, got {}",
                s.n()
            )));
        }
    }
    Ok(ConstantEstimates {
        b_mu: diameter(x),
        b_nu: diameter(y),
        second_moment_mu: mean_squared_norm(x),
        second_moment_nu: mean_squared_norm(y),
    })
}

/// Exact pairwise scan cutoff; beyond this the bounding-box corner bound is
/// used instead.
const EXACT_DIAMETER_LIMIT: usize = 4096;

fn diameter(x: &SampleSet) -> f64 {
    let n = x.n();
    if n <= EXACT_DIAMETER_LIMIT {
        let mut best = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max(l2_distance(x.row(i), x.row(j)));
            }
        }
        best
    } else {
        // Upper bound: every coordinate difference is at most the larger of
        // the distances to the box edges, so max_i dist(x_i, farthest corner)
        // dominates all pairwise distances.
        let d = x.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in x.rows() {
            for (c, &v) in row.iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        let mut best = 0.0f64;
        for row in x.rows() {
            let mut sq = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let reach = (v - lo[c]).max(hi[c] - v);
                sq += reach * reach;
            }
            best = best.max(sq.sqrt());
        }
        best
    }
}

fn mean_squared_norm(x: &SampleSet) -> f64 {
    x.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / x.n() as f64
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::RngSeed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn base_params() -> ThresholdParams {
        ThresholdParams {
            alpha: 0.05,
            n: 100,
            m: 100,
            b_mu: 2.0,
            b_nu: 2.0,
            lipschitz: 1.0,
            second_moment_mu: 1.0,
            second_moment_nu: 1.0,
            k: 1,
        }
    }

    #[test]
    fn rademacher_bound_known_value_and_scalings() {
        let base = rademacher_bound_projected(1, 200, 2.0);
        assert_abs_diff_eq!(base, 0.1414213562373095, epsilon = 1e-16);
        // Doubling n divides by √2; quadrupling k doubles.
        let half = rademacher_bound_projected(1, 400, 2.0);
        assert_abs_diff_eq!(half, base / 2.0f64.sqrt(), epsilon = 1e-15);
        assert_eq!(rademacher_bound_projected(4, 200, 2.0), 2.0 * base);
    }

    #[test]
    fn ipm_threshold_known_value() {
        let t = ipm_threshold(&base_params(), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(t, 0.38412911652796833, epsilon = 1e-12);
    }

    #[test]
    fn ipm_threshold_alpha_near_one_limit() {
        let mut p = base_params();
        p.alpha = 1.0 - 1e-12;
        let t = ipm_threshold(&p, 0.0, 0.0).unwrap();
        let limit = (p.lipschitz * p.lipschitz * p.b_mu * p.b_mu / p.n as f64
            * 2.0f64.ln())
        .sqrt();
        assert_abs_diff_eq!(t, limit, epsilon = 1e-9);
    }

    #[test]
    fn two_sample_form_reduces_to_one_sample_form_at_equal_sizes() {
        // (m+n)/(2mn) = 1/n at m = n; the two concentration expressions agree
        // to the last bit.
        for n in [7usize, 100, 1233] {
            let (nf, mf) = (n as f64, n as f64);
            let l2b2 = 4.0;
            let log_term = (2.0f64 / 0.05).ln();
            let part1 = (l2b2 * (mf + nf) / (2.0 * mf * nf) * log_term).sqrt();
            let part2 = (l2b2 / nf * log_term).sqrt();
            assert_eq!(part1, part2);
        }
    }

    #[test]
    fn pw_threshold_known_value() {
        let t = pw_threshold(&base_params()).unwrap();
        assert_abs_diff_eq!(t, 0.6669718290025873, epsilon = 1e-12);
    }

    #[test]
    fn pw_threshold_matches_generic_ipm_path_exactly() {
        for (n, m) in [(100usize, 100usize), (100, 150), (64, 47)] {
            let mut p = base_params();
            p.n = n;
            p.m = m;
            p.second_moment_nu = 1.7;
            let rad_n = rademacher_bound_projected(p.k, p.n, p.second_moment_mu);
            let rad_m = if n == m {
                0.0
            } else {
                rademacher_bound_projected(p.k, p.m, p.second_moment_nu)
            };
            assert_eq!(
                pw_threshold(&p).unwrap(),
                ipm_threshold(&p, rad_n, rad_m).unwrap()
            );
        }
    }

    #[test]
    fn pw_threshold_monotone_in_alpha_and_n() {
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.05, 0.1, 0.3, 0.9] {
            let mut p = base_params();
            p.alpha = alpha;
            let t = pw_threshold(&p).unwrap();
            assert!(t < prev, "threshold must strictly decrease as alpha grows");
            prev = t;
        }
        let mut prev = f64::INFINITY;
        for n in [50usize, 100, 200, 400, 1600] {
            let mut p = base_params();
            p.n = n;
            p.m = n;
            let t = pw_threshold(&p).unwrap();
            assert!(t < prev, "threshold must strictly decrease in n");
            prev = t;
        }
    }

    #[test]
    fn pw_concentration_term_is_linear_in_the_diameter() {
        // The dominant term scales as B, not B²: doubling B_mu doubles the
        // concentration part exactly.
        let r1 = pw_threshold_report(&base_params()).unwrap();
        let mut p = base_params();
        p.b_mu = 4.0;
        let r2 = pw_threshold_report(&p).unwrap();
        assert_abs_diff_eq!(
            r2.concentration_term,
            2.0 * r1.concentration_term,
            epsilon = 1e-12
        );
        assert_eq!(r1.complexity_term, r2.complexity_term);
    }

    #[test]
    fn threshold_report_terms_sum_to_threshold() {
        let r = pw_threshold_report(&base_params()).unwrap();
        assert_abs_diff_eq!(
            r.concentration_term + r.complexity_term,
            r.threshold,
            epsilon = 1e-15
        );
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"concentration_term\""));
        assert!(json.contains("\"threshold\""));
    }

    #[test]
    fn mmd_threshold_known_value_and_scaling() {
        let t = mmd_threshold(1.0, 1.0, 200, 0.05).unwrap();
        assert_abs_diff_eq!(t, 0.33348591450129367, epsilon = 1e-12);
        // Exactly ∝ 1/√n.
        for n in [50usize, 200, 800] {
            let tn = mmd_threshold(1.0, 1.0, n, 0.05).unwrap();
            assert_abs_diff_eq!(tn * (n as f64).sqrt(), t * 200.0f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn thresholds_reject_bad_parameters() {
        let mut p = base_params();
        p.alpha = 0.0;
        assert!(matches!(pw_threshold(&p), Err(Error::Config(_))));
        let mut p = base_params();
        p.b_mu = -1.0;
        assert!(matches!(pw_threshold(&p), Err(Error::Config(_))));
        assert!(matches!(
            mmd_threshold(1.0, 1.0, 100, 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ipm_threshold(&base_params(), -0.1, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sigmoid_maps_into_unit_cube() {
        let x = SampleSet::from_rows(&[
            vec![0.0, 1e9],
            vec![-1e9, 0.3],
            vec![2.0, -2.0],
        ])
        .unwrap();
        let s = sigmoid_preprocess(&x);
        assert_eq!(s.row(0)[0], 0.5);
        for v in s.data() {
            assert!(*v >= 0.0 && *v <= 1.0);
        }
        // Order preservation per coordinate.
        let mut rng = RngSeed::new(9).rng();
        for _ in 0..100 {
            let a: f64 = rng.random_range(-20.0..20.0);
            let b: f64 = rng.random_range(-20.0..20.0);
            let sa = sigmoid_preprocess(&SampleSet::from_values(&[a]).unwrap()).row(0)[0];
            let sb = sigmoid_preprocess(&SampleSet::from_values(&[b]).unwrap()).row(0)[0];
            assert_eq!(a < b, sa < sb);
        }
    }

    #[test]
    fn sigmoid_image_diameter_is_at_most_sqrt_d() {
        let mut rng = RngSeed::new(10).rng();
        for d in [1usize, 3, 8] {
            let rows: Vec<Vec<f64>> = (0..40)
                .map(|_| (0..d).map(|_| rng.random_range(-50.0..50.0)).collect())
                .collect();
            let x = sigmoid_preprocess(&SampleSet::from_rows(&rows).unwrap());
            let c = estimate_constants(&x, &x).unwrap();
            assert!(c.b_mu <= (d as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn constants_on_a_hand_checked_instance() {
        let x = SampleSet::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let c = estimate_constants(&x, &x).unwrap();
        assert_eq!(c.b_mu, 5.0);
        assert_eq!(c.second_moment_mu, 12.5);

        let dup = SampleSet::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(estimate_constants(&dup, &dup).unwrap().b_mu, 0.0);

        let single = SampleSet::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            estimate_constants(&single, &x),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn corner_bound_dominates_exact_diameter() {
        // 1-D: the bound is tight, so the large-n path must equal the range.
        let mut rng = RngSeed::new(11).rng();
        let vals: Vec<f64> = (0..5000).map(|_| rng.random_range(-4.0..4.0)).collect();
        let x = SampleSet::from_values(&vals).unwrap();
        let c = estimate_constants(&x, &x).unwrap();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(c.b_mu, hi - lo, epsilon = 1e-12);

        // 2-D: upper bound, never below the exact pairwise maximum.
        let rows: Vec<Vec<f64>> = (0..4200)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y = SampleSet::from_rows(&rows).unwrap();
        let bound = estimate_constants(&y, &y).unwrap().b_mu;
        let mut exact = 0.0f64;
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                exact = exact.max(l2_distance(&rows[i], &rows[j]));
            }
        }
        assert!(bound >= exact - 1e-12);
        // The box bound can exceed the exact diameter by at most √2 in the
        // unit square; sanity-check it is not wildly loose.
        assert!(bound <= exact * 2.0f64.sqrt() + 1e-9);
    }
}
