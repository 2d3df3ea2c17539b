//! Subgaussian random projections of the data-misfit vector.
//!
//! A sketch is the `n x N` matrix `S = n^{-1/2} [r_1, ..., r_n]^T` whose rows
//! hold i.i.d. zero-mean, unit-variance draws. Applying it to a misfit vector
//! `v` gives a reduced misfit whose squared norm `||S v||^2` is an unbiased
//! estimate of `||v||^2` that concentrates at rate `exp(-c n eps^2)`.
//!
//! Row `j` of a sketch is drawn from its own ChaCha stream keyed by
//! `(seed, j)`, so a matrix is a pure function of `(distribution, n, N, seed)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, RmaError};

/// Large-deviation constant used when reporting guarantees.
///
/// With `c = 1/8` the success probability `1 - exp(-c n eps^2)` reproduces
/// 95.6%, 79.0% and 90.4% at `eps = 0.5` and `n = 100, 50, 75`.
pub const DEFAULT_LD_CONSTANT: f64 = 0.125;

/// Half-width of the unit-variance uniform distribution, `sqrt(12)/2`.
const UNIFORM_HALF_WIDTH: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchKind {
    Gaussian,
    Rademacher,
    Achlioptas,
    SparseSign,
    Uniform,
}

/// Entry distribution of a sketch matrix. Every kind has mean 0 and variance 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SketchDistribution {
    kind: SketchKind,
    sparsity: f64,
}

impl SketchDistribution {
    pub fn gaussian() -> Self {
        Self { kind: SketchKind::Gaussian, sparsity: 1.0 }
    }

    pub fn rademacher() -> Self {
        Self { kind: SketchKind::Rademacher, sparsity: 1.0 }
    }

    pub fn achlioptas() -> Self {
        Self { kind: SketchKind::Achlioptas, sparsity: 3.0 }
    }

    pub fn uniform() -> Self {
        Self { kind: SketchKind::Uniform, sparsity: 1.0 }
    }

    /// `+-sqrt(s)` with probability `1/(2s)` each, zero otherwise.
    pub fn sparse_sign(s: f64) -> Result<Self> {
        if !(s.is_finite() && s >= 1.0) {
            return Err(RmaError::InvalidParameter(format!(
                "sparsity s must be finite and >= 1, got {s}"
            )));
        }
        Ok(Self { kind: SketchKind::SparseSign, sparsity: s })
    }

    /// Sparse-sign distribution with a fraction `level` in `[0, 1)` of zeros.
    pub fn percent_sparse(level: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&level) {
            return Err(RmaError::InvalidParameter(format!(
                "sparsity level must lie in [0, 1), got {level}"
            )));
        }
        Self::sparse_sign(1.0 / (1.0 - level))
    }

    pub fn from_kind(kind: SketchKind, s: Option<f64>) -> Result<Self> {
        match kind {
            SketchKind::Gaussian => Ok(Self::gaussian()),
            SketchKind::Rademacher => Ok(Self::rademacher()),
            SketchKind::Achlioptas => Ok(Self::achlioptas()),
            SketchKind::Uniform => Ok(Self::uniform()),
            SketchKind::SparseSign => {
                let s = s.ok_or_else(|| {
                    RmaError::InvalidParameter("sparse_sign requires a sparsity s".into())
                })?;
                Self::sparse_sign(s)
            }
        }
    }

    /// The six distributions compared throughout the experiments.
    pub fn standard_suite() -> [Self; 6] {
        [
            Self::gaussian(),
            Self::rademacher(),
            Self::achlioptas(),
            Self { kind: SketchKind::SparseSign, sparsity: 20.0 },
            Self { kind: SketchKind::SparseSign, sparsity: 100.0 },
            Self::uniform(),
        ]
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    /// Sparsity `s` for the sign kinds, `None` for Gaussian and uniform.
    pub fn sparsity(&self) -> Option<f64> {
        match self.kind {
            SketchKind::Rademacher | SketchKind::Achlioptas | SketchKind::SparseSign => {
                Some(self.sparsity)
            }
            SketchKind::Gaussian | SketchKind::Uniform => None,
        }
    }

    /// Subgaussian moment parameter `b`; `sqrt(s - 2 ln s)` for sign kinds.
    pub fn subgaussian_b(&self) -> f64 {
        match self.sparsity() {
            Some(s) => (s - 2.0 * s.ln()).sqrt(),
            None => 1.0,
        }
    }

    /// Sign kinds with `s >= 3` are stored as index lists.
    pub fn uses_sparse_storage(&self) -> bool {
        self.sparsity().is_some_and(|s| s >= 3.0)
    }

    /// Draws one entry.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            SketchKind::Gaussian => rng.sample(StandardNormal),
            SketchKind::Uniform => (2.0 * rng.random::<f64>() - 1.0) * UNIFORM_HALF_WIDTH,
            SketchKind::Rademacher | SketchKind::Achlioptas | SketchKind::SparseSign => {
                match self.sample_sign(rng) {
                    0 => 0.0,
                    sign => f64::from(sign) * self.sparsity.sqrt(),
                }
            }
        }
    }

    fn sample_sign<R: Rng + ?Sized>(&self, rng: &mut R) -> i8 {
        let u: f64 = rng.random();
        let p = 1.0 / self.sparsity;
        if u < 0.5 * p {
            1
        } else if u < p {
            -1
        } else {
            0
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            SketchKind::Gaussian => "gaussian".into(),
            SketchKind::Rademacher => "rademacher".into(),
            SketchKind::Achlioptas => "achlioptas".into(),
            SketchKind::Uniform => "uniform".into(),
            SketchKind::SparseSign => format!("sparse-{}", self.sparsity),
        }
    }
}

impl fmt::Display for SketchDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for SketchDistribution {
    type Err = RmaError;

    /// Accepts `gaussian`, `rademacher`, `achlioptas`, `uniform` and
    /// `sparse-<s>` / `sparse:<s>`.
    fn from_str(text: &str) -> Result<Self> {
        let lower = text.trim().to_ascii_lowercase();
        match lower.as_str() {
            "gaussian" | "normal" => Ok(Self::gaussian()),
            "rademacher" => Ok(Self::rademacher()),
            "achlioptas" => Ok(Self::achlioptas()),
            "uniform" => Ok(Self::uniform()),
            other => {
                let s = other
                    .strip_prefix("sparse-")
                    .or_else(|| other.strip_prefix("sparse:"))
                    .ok_or_else(|| {
                        RmaError::InvalidParameter(format!("unknown distribution '{text}'"))
                    })?;
                let s: f64 = s.parse().map_err(|_| {
                    RmaError::InvalidParameter(format!("bad sparsity in '{text}'"))
                })?;
                Self::sparse_sign(s)
            }
        }
    }
}

/// Serializable description of a sketch, `{kind, s, n, N, seed}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub kind: SketchKind,
    #[serde(default)]
    pub s: Option<f64>,
    pub n: usize,
    #[serde(rename = "N")]
    pub data_dim: usize,
    pub seed: u64,
}

impl SketchSpec {
    pub fn distribution(&self) -> Result<SketchDistribution> {
        SketchDistribution::from_kind(self.kind, self.s)
    }

    pub fn build(&self) -> Result<SketchMatrix> {
        SketchMatrix::build(self.distribution()?, self.n, self.data_dim, self.seed)
    }
}

#[derive(Clone, Debug)]
struct SignRow {
    plus: Vec<u32>,
    minus: Vec<u32>,
}

#[derive(Clone, Debug)]
enum Storage {
    /// Row-major `n x N` entries.
    Dense(Vec<f64>),
    /// Every nonzero equals `+-scale`.
    Sparse { rows: Vec<SignRow>, scale: f64 },
}

/// Immutable `n x N` sketch matrix.
#[derive(Clone, Debug)]
pub struct SketchMatrix {
    dist: SketchDistribution,
    rows: usize,
    cols: usize,
    seed: u64,
    storage: Storage,
}

/// RNG for row `row` of a sketch with the given seed.
fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

impl SketchMatrix {
    pub fn build(dist: SketchDistribution, n: usize, data_dim: usize, seed: u64) -> Result<Self> {
        if n == 0 || data_dim == 0 {
            return Err(RmaError::InvalidDimension(format!(
                "sketch shape must be positive, got {n} x {data_dim}"
            )));
        }
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();
        let storage = if dist.uses_sparse_storage() {
            let rows = (0..n)
                .map(|j| {
                    let mut rng = row_rng(seed, j);
                    let mut row = SignRow { plus: Vec::new(), minus: Vec::new() };
                    for i in 0..data_dim {
                        match dist.sample_sign(&mut rng) {
                            1 => row.plus.push(i as u32),
                            -1 => row.minus.push(i as u32),
                            _ => {}
                        }
                    }
                    row
                })
                .collect();
            Storage::Sparse { rows, scale: dist.sparsity.sqrt() * inv_sqrt_n }
        } else {
            let mut entries = Vec::with_capacity(n * data_dim);
            for j in 0..n {
                let mut rng = row_rng(seed, j);
                entries.extend((0..data_dim).map(|_| dist.sample(&mut rng) * inv_sqrt_n));
            }
            Storage::Dense(entries)
        };
        Ok(Self { dist, rows: n, cols: data_dim, seed, storage })
    }

    /// Reduced misfit dimension `n`.
    pub fn nrows(&self) -> usize {
        self.rows
    }

    /// Data dimension `N`.
    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn distribution(&self) -> SketchDistribution {
        self.dist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    pub fn spec(&self) -> SketchSpec {
        SketchSpec {
            kind: self.dist.kind,
            s: self.dist.sparsity(),
            n: self.rows,
            data_dim: self.cols,
            seed: self.seed,
        }
    }

    /// Number of stored nonzero entries.
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(entries) => entries.iter().filter(|x| **x != 0.0).count(),
            Storage::Sparse { rows, .. } => {
                rows.iter().map(|r| r.plus.len() + r.minus.len()).sum()
            }
        }
    }

    /// `S v`.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.cols, v.len())?;
        let out = match &self.storage {
            Storage::Dense(entries) => DVector::from_iterator(
                self.rows,
                entries
                    .chunks_exact(self.cols)
                    .map(|row| row.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>()),
            ),
            Storage::Sparse { rows, scale } => DVector::from_iterator(
                self.rows,
                rows.iter().map(|row| {
                    let plus: f64 = row.plus.iter().map(|&i| v[i as usize]).sum();
                    let minus: f64 = row.minus.iter().map(|&i| v[i as usize]).sum();
                    scale * (plus - minus)
                }),
            ),
        };
        Ok(out)
    }

    /// `S^T y`.
    pub fn apply_transpose(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.rows, y.len())?;
        let mut out = DVector::zeros(self.cols);
        match &self.storage {
            Storage::Dense(entries) => {
                for (row, yj) in entries.chunks_exact(self.cols).zip(y.iter()) {
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += a * yj;
                    }
                }
            }
            Storage::Sparse { rows, scale } => {
                for (row, yj) in rows.iter().zip(y.iter()) {
                    let w = scale * yj;
                    for &i in &row.plus {
                        out[i as usize] += w;
                    }
                    for &i in &row.minus {
                        out[i as usize] -= w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `S M` for an `N x k` matrix `M`.
    pub fn apply_matrix(&self, mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.cols, mat.nrows())?;
        match &self.storage {
            Storage::Dense(_) => Ok(self.to_dense() * mat),
            Storage::Sparse { rows, scale } => {
                let mut out = DMatrix::zeros(self.rows, mat.ncols());
                for c in 0..mat.ncols() {
                    let col = mat.column(c);
                    let col = col.as_slice();
                    for (j, row) in rows.iter().enumerate() {
                        let plus: f64 = row.plus.iter().map(|&i| col[i as usize]).sum();
                        let minus: f64 = row.minus.iter().map(|&i| col[i as usize]).sum();
                        out[(j, c)] = scale * (plus - minus);
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(entries) => DMatrix::from_row_slice(self.rows, self.cols, entries),
            Storage::Sparse { rows, scale } => {
                let mut out = DMatrix::zeros(self.rows, self.cols);
                for (j, row) in rows.iter().enumerate() {
                    for &i in &row.plus {
                        out[(j, i as usize)] = *scale;
                    }
                    for &i in &row.minus {
                        out[(j, i as usize)] = -*scale;
                    }
                }
                out
            }
        }
    }

    /// `||S v||^2 / ||v||^2 - 1`.
    pub fn distortion(&self, v: &DVector<f64>) -> Result<f64> {
        let denom = v.norm_squared();
        if denom == 0.0 {
            return Err(RmaError::ZeroVector);
        }
        Ok(self.apply(v)?.norm_squared() / denom - 1.0)
    }
}

/// Parameters of a Johnson-Lindenstrauss style guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JlBudget {
    /// Distortion tolerance.
    pub epsilon: f64,
    /// Failure-rate exponent: the guarantee holds with probability `1 - e^{-beta}`.
    pub beta: f64,
    /// Large-deviation constant.
    pub c: f64,
    /// Union-bound exponent.
    pub alpha: f64,
    /// Number of vectors covered by the union bound.
    pub m: f64,
}

impl JlBudget {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self> {
        let budget = Self { epsilon, beta, c: DEFAULT_LD_CONSTANT, alpha: 0.0, m: 2.0 };
        budget.validate()?;
        Ok(budget)
    }

    pub fn with_union(mut self, alpha: f64, m: f64) -> Result<Self> {
        self.alpha = alpha;
        self.m = m;
        self.validate()?;
        Ok(self)
    }

    pub fn with_constant(mut self, c: f64) -> Result<Self> {
        self.c = c;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        check_constant(self.c)?;
        if !(self.beta > 0.0) {
            return Err(RmaError::InvalidParameter(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.alpha >= 0.0) {
            return Err(RmaError::InvalidParameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn required_n(&self) -> usize {
        ceil_count(self.beta / (self.c * self.epsilon * self.epsilon))
    }

    pub fn required_n_union(&self) -> Result<usize> {
        required_n_union(self.epsilon, self.alpha, self.m, self.c)
    }

    pub fn failure_probability(&self, n: usize) -> f64 {
        failure_probability(n, self.epsilon, self.c)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon <= 1.0 {
        Ok(())
    } else {
        Err(RmaError::InvalidParameter(format!("epsilon must lie in (0, 1], got {epsilon}")))
    }
}

fn check_constant(c: f64) -> Result<()> {
    if c > 0.0 && c <= 0.25 {
        Ok(())
    } else {
        Err(RmaError::InvalidParameter(format!("c must lie in (0, 1/4], got {c}")))
    }
}

/// Smallest integer not below `x`, ignoring round-off just above an integer.
fn ceil_count(x: f64) -> usize {
    let n = (x * (1.0 - 1e-12)).ceil();
    n.max(1.0) as usize
}

/// Smallest `n` with `n >= beta / (c eps^2)`.
pub fn required_n(epsilon: f64, beta: f64, c: f64) -> Result<usize> {
    Ok(JlBudget::new(epsilon, beta)?.with_constant(c)?.required_n())
}

/// Smallest `n` with `n >= (2 + alpha) ln(m) / (c eps^2)`.
///
/// All pairwise distances among `m` points are then preserved to within
/// `eps` with probability at least `1 - m^{-alpha}`.
pub fn required_n_union(epsilon: f64, alpha: f64, m: f64, c: f64) -> Result<usize> {
    check_epsilon(epsilon)?;
    check_constant(c)?;
    if !(m >= 2.0) {
        return Err(RmaError::InvalidParameter(format!("union bound needs m >= 2, got {m}")));
    }
    if !(alpha >= 0.0) {
        return Err(RmaError::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(ceil_count((2.0 + alpha) * m.ln() / (c * epsilon * epsilon)))
}

/// `exp(-c n eps^2)`; the success probability is one minus this.
pub fn failure_probability(n: usize, epsilon: f64, c: f64) -> f64 {
    (-c * n as f64 * epsilon * epsilon).exp()
}

/// Seed for trial `index` under `base`, independent of scheduling order.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
