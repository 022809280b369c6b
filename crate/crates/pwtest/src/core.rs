//! Sample containers, projection matrices, and seeded randomness shared by
//! every other module.
//!
//! Conventions used throughout the crate:
//! * samples are row-major, one observation per row;
//! * a projector is a d×k matrix whose columns span the subspace, applied as
//!   `A^T x`;
//! * every randomized routine is driven by an [`RngSeed`], a `(seed,
//!   stream_id)` pair, and derives private substreams from it so that a single
//!   user-facing seed reproduces entire pipelines bit for bit.

use std::fmt::Write as _;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// ground metric
// ---------------------------------------------------------------------------

/// Ground cost on the projected space. Only the Euclidean metric is offered;
/// the enum keeps the cost pluggable without touching call sites.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundMetric {
    #[default]
    Euclidean,
}

impl GroundMetric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            GroundMetric::Euclidean => l2_distance(a, b),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// dense matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix. Not a linear-algebra library: just the handful of
/// operations the estimators need, kept allocation-light.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("matrix with zero rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "flat buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// `self^T * self`, the k×k Gram matrix of the columns.
    pub fn gram(&self) -> Matrix {
        let k = self.cols;
        let mut g = Matrix::zeros(k, k);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..k {
                for j in i..k {
                    g[(i, j)] += row[i] * row[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        g
    }

    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for inner in 0..self.cols {
                let lhs = self[(r, inner)];
                if lhs == 0.0 {
                    continue;
                }
                for c in 0..rhs.cols {
                    out[(r, c)] += lhs * rhs[(inner, c)];
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Frobenius norm of `A^T A - I_k`: zero exactly when the columns are
/// orthonormal.
pub fn orthogonality_defect(m: &Matrix) -> f64 {
    let mut g = m.gram();
    for i in 0..g.cols() {
        g[(i, i)] -= 1.0;
    }
    g.frobenius_norm()
}

// ---------------------------------------------------------------------------
// projection matrices
// ---------------------------------------------------------------------------

/// A d×k projector candidate with 1 ≤ k ≤ d. Orthonormality is *not*
/// enforced by the type: stochastic training deliberately lets columns drift
/// and reports the defect instead of hiding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProjectorRepr", into = "ProjectorRepr")]
pub struct ProjectionMatrix {
    mat: Matrix,
}

impl ProjectionMatrix {
    pub fn new(mat: Matrix) -> Result<Self> {
        if mat.cols() < 1 || mat.cols() > mat.rows() {
            return Err(Error::Dimension(format!(
                "projector must be d x k with 1 <= k <= d, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        if !mat.is_finite() {
            return Err(Error::DegenerateData("non-finite projector entry".into()));
        }
        Ok(ProjectionMatrix { mat })
    }

    /// Ambient dimension d.
    pub fn d(&self) -> usize {
        self.mat.rows()
    }

    /// Subspace dimension k.
    pub fn k(&self) -> usize {
        self.mat.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.mat.column(j)
    }

    pub fn defect(&self) -> f64 {
        orthogonality_defect(&self.mat)
    }
}

#[derive(Serialize, Deserialize)]
struct ProjectorRepr {
    d: usize,
    k: usize,
    entries: Vec<f64>,
}

impl From<ProjectionMatrix> for ProjectorRepr {
    fn from(p: ProjectionMatrix) -> ProjectorRepr {
        ProjectorRepr {
            d: p.d(),
            k: p.k(),
            entries: p.mat.data.clone(),
        }
    }
}

impl TryFrom<ProjectorRepr> for ProjectionMatrix {
    type Error = Error;
    fn try_from(r: ProjectorRepr) -> Result<ProjectionMatrix> {
        ProjectionMatrix::new(Matrix::from_flat(r.d, r.k, r.entries)?)
    }
}

/// Orthonormalizes the columns of `m` by modified Gram–Schmidt with a second
/// re-orthogonalization pass. After normalization each column is flipped so
/// its largest-magnitude entry (first index on ties) is positive, which pins
/// down the sign ambiguity of subspace bases.
pub fn orthonormalize(m: &Matrix) -> Result<ProjectionMatrix> {
    let (d, k) = (m.rows(), m.cols());
    if k < 1 || k > d {
        return Err(Error::Dimension(format!(
            "cannot orthonormalize a {d}x{k} matrix: need 1 <= k <= d"
        )));
    }
    if !m.is_finite() {
        return Err(Error::DegenerateData("non-finite matrix entry".into()));
    }

    let mut q = m.clone();
    for j in 0..k {
        let original_norm = l2_norm(&q.column(j));
        // Two passes of projection removal keep the defect near machine
        // precision even for badly conditioned inputs.
        for _ in 0..2 {
            for i in 0..j {
                let mut proj = 0.0;
                for r in 0..d {
                    proj += q[(r, i)] * q[(r, j)];
                }
                for r in 0..d {
                    q[(r, j)] -= proj * q[(r, i)];
                }
            }
        }
        let residual = l2_norm(&q.column(j));
        if original_norm == 0.0 || residual <= 1e-10 * original_norm {
            return Err(Error::Rank(format!(
                "column {j} is numerically dependent on the previous columns"
            )));
        }
        for r in 0..d {
            q[(r, j)] /= residual;
        }
    }

    // Sign convention: the entry of largest magnitude in each column is made
    // positive, ties broken by the first index.
    for j in 0..k {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for r in 0..d {
            if q[(r, j)].abs() > best_abs {
                best_abs = q[(r, j)].abs();
                best = r;
            }
        }
        if q[(best, j)] < 0.0 {
            for r in 0..d {
                q[(r, j)] = -q[(r, j)];
            }
        }
    }

    let defect = orthogonality_defect(&q);
    if !(defect <= 1e-6) {
        return Err(Error::Rank(format!(
            "orthonormalization failed to converge (defect {defect:.3e})"
        )));
    }
    ProjectionMatrix::new(q)
}

// ---------------------------------------------------------------------------
// sample sets
// ---------------------------------------------------------------------------

/// n points in R^d, one observation per row. Invariants: n ≥ 1, d ≥ 1, all
/// entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<SampleSet> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("sample set with zero rows".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged sample rows".into()));
        }
        SampleSet::from_flat(rows.len(), d, rows.iter().flatten().copied().collect())
    }

    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::EmptyInput("sample set with zero rows".into()));
        }
        if d == 0 {
            return Err(Error::Dimension("samples must have d >= 1".into()));
        }
        if data.len() != n * d {
            return Err(Error::Dimension(format!(
                "flat buffer of length {} cannot hold {n} samples of dimension {d}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateData("non-finite sample entry".into()));
        }
        Ok(SampleSet { n, d, data })
    }

    /// 1-D convenience constructor.
    pub fn from_values(values: &[f64]) -> Result<SampleSet> {
        SampleSet::from_flat(values.len(), 1, values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Flat view of a one-dimensional sample set.
    pub fn values(&self) -> Result<&[f64]> {
        if self.d != 1 {
            return Err(Error::Dimension(format!(
                "expected 1-dimensional samples, got d = {}",
                self.d
            )));
        }
        Ok(&self.data)
    }

    /// Serializes to the interchange CSV format: header `x1,...,xd`, one row
    /// per observation, shortest round-trip float formatting.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for c in 1..=self.d {
            if c > 1 {
                out.push(',');
            }
            let _ = write!(out, "x{c}");
        }
        out.push('\n');
        for row in self.rows() {
            for (c, v) in row.iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the interchange CSV format. The header must be exactly
    /// `x1,...,xd`; every later non-empty line must hold d finite floats.
    pub fn from_csv_str(s: &str) -> Result<SampleSet> {
        let mut lines = s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::EmptyInput("CSV without a header line".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        for (i, f) in fields.iter().enumerate() {
            let expected = format!("x{}", i + 1);
            if *f != expected {
                return Err(Error::Parse(format!(
                    "bad CSV header field {:?}: expected {:?}",
                    f, expected
                )));
            }
        }
        let d = fields.len();

        let mut data = Vec::new();
        let mut n = 0usize;
        for (lineno, line) in lines {
            let values: Vec<&str> = line.split(',').map(str::trim).collect();
            if values.len() != d {
                return Err(Error::Dimension(format!(
                    "line {}: expected {d} fields, got {}",
                    lineno + 1,
                    values.len()
                )));
            }
            for v in values {
                let parsed: f64 = v.parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad float {:?}", lineno + 1, v))
                })?;
                if !parsed.is_finite() {
                    return Err(Error::Parse(format!(
                        "line {}: non-finite value {:?}",
                        lineno + 1,
                        v
                    )));
                }
                data.push(parsed);
            }
            n += 1;
        }
        SampleSet::from_flat(n, d, data)
    }
}

/// Projects every sample through `a`: the i-th output row is `a^T x_i`.
pub fn project(a: &ProjectionMatrix, x: &SampleSet) -> Result<SampleSet> {
    if a.d() != x.dim() {
        return Err(Error::Dimension(format!(
            "projector expects ambient dimension {}, samples have {}",
            a.d(),
            x.dim()
        )));
    }
    let k = a.k();
    let mut out = vec![0.0; x.n() * k];
    for (i, row) in x.rows().enumerate() {
        project_row(a.matrix(), row, &mut out[i * k..(i + 1) * k]);
    }
    SampleSet::from_flat(x.n(), k, out)
}

/// `out = A^T x` for a single point; `out` must have length k.
pub(crate) fn project_row(a: &Matrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.rows(), x.len());
    debug_assert_eq!(a.cols(), out.len());
    out.fill(0.0);
    for (r, xv) in x.iter().enumerate() {
        let arow = a.row(r);
        for (c, av) in arow.iter().enumerate() {
            out[c] += av * xv;
        }
    }
}

// ---------------------------------------------------------------------------
// seeded randomness
// ---------------------------------------------------------------------------

/// Root seed plus a stream id. Substreams derived through [`RngSeed::substream`]
/// or [`RngSeed::substream_named`] are statistically independent ChaCha
/// streams, so parallel work items can each own one without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> RngSeed {
        RngSeed { seed, stream_id: 0 }
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> RngSeed {
        RngSeed { seed, stream_id }
    }

    pub fn substream(&self, index: u64) -> RngSeed {
        RngSeed {
            seed: self.seed,
            stream_id: mix(self.stream_id, index),
        }
    }

    pub fn substream_named(&self, label: &str) -> RngSeed {
        self.substream(fnv1a64(label.as_bytes()))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn mix(stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(stream) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Standard normals via the Box–Muller transform over a ChaCha stream. One
/// normal consumes exactly two uniforms, which makes the draw order (and so
/// the output) bit-identical across platforms and refactors.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: RngSeed) -> GaussianStream {
        GaussianStream { rng: seed.rng() }
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1: f64 = 1.0 - self.rng.random::<f64>(); // (0, 1]
        let u2: f64 = self.rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform in [0, 1) from the same underlying stream.
    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

// ---------------------------------------------------------------------------
