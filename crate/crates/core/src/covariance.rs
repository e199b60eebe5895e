//! Covariance and ensemble primitives.
//!
//! [`CovarianceMatrix`] is the validated symmetric positive-semidefinite matrix
//! every other module consumes. Inputs are symmetrized as `(A + Aᵀ)/2` on ingest
//! so text round trips that lose a few ulps do not trip validation, but gross
//! asymmetry (above [`SYMMETRY_TOLERANCE`] relative) is rejected.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{substream, RNG_ALGORITHM};

/// Relative asymmetry above which an input is rejected instead of symmetrized.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Eigenvalues down to `-PSD_FLOOR * max|λ|` are accepted as numerically zero.
pub const PSD_FLOOR: f64 = 1e-10;

/// Relative diagonal jitter added once when factorization of a PSD matrix fails.
pub const FACTORIZATION_JITTER: f64 = 1e-12;

/// Symmetric positive-semidefinite N×N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
        }
    }

    /// Diagonal covariance; fails on negative or non-finite variances.
    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParam(
                "diagonal variances must be finite and nonnegative".into(),
            ));
        }
        make_covariance(DMatrix::from_diagonal(&DVector::from_column_slice(
            variances,
        )))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.entries)
    }

    /// `c · C` for `c ≥ 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::InvalidParam(format!(
                "covariance scale must be finite and nonnegative, got {c}"
            )));
        }
        Ok(Self {
            entries: &self.entries * c,
        })
    }

    /// Covariance of the sum of two independent vectors.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            entries: &self.entries + &other.entries,
        })
    }

    /// Rescale so that `tr(C) = target_trace`. Fails on a zero-trace input.
    pub fn with_trace(&self, target_trace: f64) -> Result<Self> {
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(Error::InvalidParam(
                "cannot rescale a zero-trace covariance".into(),
            ));
        }
        self.scaled(target_trace / tr)
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut eig: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Validate and symmetrize a square matrix into a [`CovarianceMatrix`].
pub fn make_covariance(entries: DMatrix<f64>) -> Result<CovarianceMatrix> {
    let n = entries.nrows();
    check_dims(n, entries.ncols())?;
    if n == 0 {
        return Err(Error::InvalidParam(
            "covariance dimension must be positive".into(),
        ));
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam(
            "covariance entries must be finite".into(),
        ));
    }

    let scale = entries.amax();
    let asymmetry = if scale > 0.0 {
        (&entries - entries.transpose()).amax() / scale
    } else {
        0.0
    };
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry });
    }

    let entries = symmetrize(&entries);
    let eig = sorted_eigenvalues(&entries);
    let min = eig[0];
    let max = eig[n - 1];
    let magnitude = min.abs().max(max.abs());
    if min < -PSD_FLOOR * magnitude {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(CovarianceMatrix { entries })
}

/// Symmetric Toeplitz matrix with entry `(i, j) = r[|i − j|]`.
pub fn toeplitz_from_autocorr(r: &[f64]) -> Result<CovarianceMatrix> {
    match r.first() {
        Some(&r0) if r0 > 0.0 => {}
        _ => {
            return Err(Error::InvalidParam(
                "autocorrelation must be nonempty with r[0] > 0".into(),
            ))
        }
    }
    let n = r.len();
    make_covariance(DMatrix::from_fn(n, n, |i, j| r[i.abs_diff(j)]))
}

/// Autocorrelation `σ²·ρ^k`, `k = 0..n`, of a first-order autoregressive process.
pub fn ar1_autocorr(variance: f64, rho: f64, n: usize) -> Result<Vec<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParam(format!(
            "AR(1) needs |rho| < 1, got {rho}"
        )));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidParam(format!(
            "AR(1) variance must be positive, got {variance}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut acc = variance;
    for _ in 0..n {
        out.push(acc);
        acc *= rho;
    }
    Ok(out)
}

/// Non-stationary covariance `D·C·D` with `D = diag(envelope)`.
pub fn modulate(c: &CovarianceMatrix, envelope: &[f64]) -> Result<CovarianceMatrix> {
    check_dims(c.dim(), envelope.len())?;
    if let Some(bad) = envelope.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "envelope entries must be positive, got {bad}"
        )));
    }
    let n = c.dim();
    make_covariance(DMatrix::from_fn(n, n, |i, j| {
        envelope[i] * envelope[j] * c.get(i, j)
    }))
}

/// Average power `tr(C)/N`.
pub fn average_power(c: &CovarianceMatrix) -> f64 {
    c.trace() / c.dim() as f64
}

/// M realizations of an N-dimensional zero-mean random vector, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    data: DMatrix<f64>,
    seed: u64,
    stream: u64,
}

impl SampleBatch {
    /// Wrap rows produced elsewhere (e.g. by mapping another batch).
    pub fn new(data: DMatrix<f64>, seed: u64, stream: u64) -> Self {
        Self { data, seed, stream }
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Row-wise sum; provenance is taken from `self`.
    pub fn add(&self, other: &SampleBatch) -> Result<SampleBatch> {
        check_dims(self.dim(), other.dim())?;
        check_dims(self.count(), other.count())?;
        Ok(SampleBatch {
            data: &self.data + &other.data,
            seed: self.seed,
            stream: self.stream,
        })
    }
}

/// Symmetric square root factor `L` with `L·Lᵀ = C`, eigenvalues clamped at zero.
fn psd_factor(c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = c.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite())
        || eig.eigenvectors.iter().any(|v| !v.is_finite())
    {
        return None;
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut factor = eig.eigenvectors;
    for (j, root) in roots.iter().enumerate() {
        factor.column_mut(j).scale_mut(*root);
    }
    Some(factor)
}

/// Zero-mean Gaussian draws with covariance `C` from substream 0 of `seed`.
pub fn sample_ensemble(c: &CovarianceMatrix, count: usize, seed: u64) -> Result<SampleBatch> {
    sample_ensemble_stream(c, count, seed, 0)
}

/// Zero-mean Gaussian draws with covariance `C` from a chosen substream.
pub fn sample_ensemble_stream(
    c: &CovarianceMatrix,
    count: usize,
    seed: u64,
    stream: u64,
) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let n = c.dim();
    let factor = match psd_factor(c.matrix()) {
        Some(f) => f,
        None => {
            let jitter = FACTORIZATION_JITTER * average_power(c);
            let bumped = c.matrix() + DMatrix::identity(n, n) * jitter;
            psd_factor(&bumped).ok_or_else(|| {
                Error::FactorizationFailure(format!(
                    "eigendecomposition of {n}x{n} covariance is not finite after jitter"
                ))
            })?
        }
    };

    let mut rng = substream(seed, stream);
    let mut z = DMatrix::<f64>::zeros(count, n);
    for i in 0..count {
        for j in 0..n {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    Ok(SampleBatch {
        data: z * factor.transpose(),
        seed,
        stream,
    })
}

/// Second-moment estimate `(1/M)·Σ row·rowᵀ`; the mean is known to be zero.
pub fn empirical_covariance(batch: &SampleBatch) -> Result<DMatrix<f64>> {
    if batch.count() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: batch.count(),
        });
    }
    Ok(batch.data.tr_mul(&batch.data) / batch.count() as f64)
}

/// Render a matrix as CSV: N lines of N comma-separated values, 17 significant digits.
pub fn format_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{:.16e}", m[(i, j)]).expect("writing to String");
        }
        out.push('\n');
    }
    out
}

/// Parse the CSV matrix format; blank lines are ignored.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("line {}: {:?}: {e}", lineno + 1, field.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse("empty matrix file".into()));
    }
    for row in &rows {
        if row.len() != n {
            return Err(Error::Parse(format!(
                "expected {n} values per row, found a row with {}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn read_covariance_csv(path: impl AsRef<Path>) -> Result<CovarianceMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })?;
    make_covariance(parse_matrix_csv(&text)?)
}

pub fn write_covariance_csv(c: &CovarianceMatrix, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_matrix_csv(c.matrix()))?;
    Ok(())
}
