//! Seeded generators for the synthetic two-sample benchmarks.
//!
//! Four families, each with a μ role and a ν role:
//!
//! * `blob`: 𝒩(0, I₂) vs 𝒩(0, [[1, Δ], [Δ, 1]]).
//! * `hdgm`: equal mixture of 𝒩(0, I_d) and 𝒩(5·1_d, I_d); the ν role
//!   correlates the first two coordinates inside each component.
//! * `laplace-shift`: independent Laplace(0, 1) coordinates; ν shifts the
//!   first coordinate's location by `shift`.
//! * `gauss-var`: ν is 𝒩(0, I_d); μ inflates the last coordinate's variance
//!   to `variance`.
//!
//! Everything is a pure function of (spec, n, seed). Gaussians come from the
//! seeded uniform stream via the Box-Muller-style transform, Laplace draws
//! via the inverse CDF, and the correlated 2-D blocks use the explicit
//! Cholesky factor [[1, 0], [Δ, √(1−Δ²)]], so outputs are reproducible at
//! the bit level.

use serde::{Deserialize, Serialize};

use crate::core::{GaussianStream, RngSeed, SampleSet};
use crate::error::{Error, Result};

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Blob,
    Hdgm,
    LaplaceShift,
    GaussVar,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Blob => "blob",
            Family::Hdgm => "hdgm",
            Family::LaplaceShift => "laplace-shift",
            Family::GaussVar => "gauss-var",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        match s {
            "blob" => Ok(Family::Blob),
            "hdgm" => Ok(Family::Hdgm),
            "laplace-shift" => Ok(Family::LaplaceShift),
            "gauss-var" => Ok(Family::GaussVar),
            other => Err(Error::Parse(format!(
                "unknown family {other:?}; expected blob, hdgm, laplace-shift or gauss-var"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Mu,
    Nu,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Mu => "mu",
            Role::Nu => "nu",
        }
    }

    pub fn parse(s: &str) -> Result<Role> {
        match s {
            "mu" => Ok(Role::Mu),
            "nu" => Ok(Role::Nu),
            other => Err(Error::Parse(format!(
                "unknown role {other:?}; expected mu or nu"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub family: Family,
    pub role: Role,
    pub d: usize,
    /// Off-diagonal correlation of the 2×2 blocks.
    pub delta: f64,
    /// Location shift of the first coordinate (laplace-shift ν).
    pub shift: f64,
    /// Last-coordinate variance (gauss-var μ).
    pub variance: f64,
}

impl DatasetSpec {
    pub fn new(family: Family, role: Role, d: usize) -> DatasetSpec {
        DatasetSpec {
            family,
            role,
            d,
            delta: 0.81,
            shift: 1.0,
            variance: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.family {
            Family::Blob => self.d == 2,
            Family::Hdgm => self.d >= 2,
            Family::LaplaceShift | Family::GaussVar => self.d >= 1,
        };
        if !ok {
            return Err(Error::Config(format!(
                "family {} does not support d = {} (blob needs d = 2, hdgm d >= 2)",
                self.family.name(),
                self.d
            )));
        }
        if !(self.delta > -1.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (-1, 1), got {}",
                self.delta
            )));
        }
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(Error::Config(format!(
                "variance must be positive and finite, got {}",
                self.variance
            )));
        }
        if !self.shift.is_finite() {
            return Err(Error::Config("shift must be finite".into()));
        }
        Ok(())
    }
}

/// Draws n i.i.d. points. The RNG stream is keyed by family and role, so μ
/// and ν draws under one seed are independent, and different families never
/// share a stream.
pub fn generate(spec: &DatasetSpec, n: usize, seed: RngSeed) -> Result<SampleSet> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyInput("cannot generate 0 samples".into()));
    }
    let base = seed
        .substream_named(spec.family.name())
        .substream_named(spec.role.name());

    let data = match spec.family {
        Family::Blob => {
            let mut g = GaussianStream::new(base);
            let mut out = Vec::with_capacity(n * 2);
            let tail = (1.0 - spec.delta * spec.delta).sqrt();
            for _ in 0..n {
                let z1 = g.next_normal();
                let z2 = g.next_normal();
                match spec.role {
                    Role::Mu => out.extend_from_slice(&[z1, z2]),
                    Role::Nu => out.extend_from_slice(&[z1, spec.delta * z1 + tail * z2]),
                }
            }
            out
        }
        Family::Hdgm => {
            let mut mix = base.substream_named("mix").rng();
            let mut g = GaussianStream::new(base.substream_named("noise"));
            let tail = (1.0 - spec.delta * spec.delta).sqrt();
            let mut out = Vec::with_capacity(n * spec.d);
            for _ in 0..n {
                let mean = if mix.random::<f64>() < 0.5 { 0.0 } else { 5.0 };
                let mut z: Vec<f64> = (0..spec.d).map(|_| g.next_normal()).collect();
                if spec.role == Role::Nu {
                    z[1] = spec.delta * z[0] + tail * z[1];
                }
                out.extend(z.iter().map(|v| mean + v));
            }
            out
        }
        Family::LaplaceShift => {
            let mut rng = base.rng();
            let mut out = Vec::with_capacity(n * spec.d);
            for _ in 0..n {
                for c in 0..spec.d {
                    let loc = if spec.role == Role::Nu && c == 0 {
                        spec.shift
                    } else {
                        0.0
                    };
                    out.push(loc + laplace_standard(&mut rng));
                }
            }
            out
        }
        Family::GaussVar => {
            let mut g = GaussianStream::new(base);
            let scale = spec.variance.sqrt();
            let mut out = Vec::with_capacity(n * spec.d);
            for _ in 0..n {
                for c in 0..spec.d {
                    let z = g.next_normal();
                    let inflate = spec.role == Role::Mu && c == spec.d - 1;
                    out.push(if inflate { scale * z } else { z });
                }
            }
            out
        }
    };
    SampleSet::from_flat(n, spec.d, data)
}

/// Standard Laplace(0, 1) via the inverse CDF
/// F⁻¹(p) = −sgn(p − ½) · ln(1 − 2|p − ½|), with p clamped into (0, 1).
fn laplace_standard(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let p: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let centered = p - 0.5;
    -centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KdeBandwidth {
    Fixed(f64),
    /// 0.9 · min(σ̂, IQR/1.34) · n^{−1/5}.
    Silverman,
}

/// Gaussian kernel density estimate of a 1-D sample on a uniform grid over
/// [min − 3h, max + 3h]. Returns (t, density) pairs.
pub fn kde_export(
    u: &SampleSet,
    grid_points: usize,
    bandwidth: KdeBandwidth,
) -> Result<Vec<(f64, f64)>> {
    let vals = u.values()?;
    if vals.len() < 2 {
        return Err(Error::EmptyInput(
            "KDE needs at least 2 points".into(),
        ));
    }
    if grid_points < 2 {
        return Err(Error::Config("grid must have at least 2 points".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::DegenerateData(
            "zero-variance sample has no density scale".into(),
        ));
    }

    let h = match bandwidth {
        KdeBandwidth::Fixed(h) => {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config(format!(
                    "bandwidth must be positive and finite, got {h}"
                )));
            }
            h
        }
        KdeBandwidth::Silverman => {
            let mut sorted = vals.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
            0.9 * spread * n.powf(-0.2)
        }
    };

    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (grid_points - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..grid_points)
        .map(|i| {
            let t = lo + step * i as f64;
            let density = norm
                * vals
                    .iter()
                    .map(|x| (-0.5 * ((t - x) / h).powi(2)).exp())
                    .sum::<f64>();
            (t, density)
        })
        .collect())
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

// ---------------------------------------------------------------------------
