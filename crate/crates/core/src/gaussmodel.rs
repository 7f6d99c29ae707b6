//! Covariance models for a centered Gaussian sequence with common marginal
//! `N(0, s²)`, the correlation mass `Δ_n`, and path sampling.
//!
//! Built-in kinds are stationary, so the matrix is stored by lag. iid, AR(1)
//! and equicorrelated models also have closed-form Cholesky factors, which
//! are applied in `O(n)` per path; everything else goes through a dense
//! lower-triangular factorization.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Largest supported path length.
pub const MAX_N: usize = 1 << 13;

/// Jitter levels (relative to `s²`) tried before declaring a matrix non-PSD.
const JITTER: [f64; 4] = [0.0, 1e-14, 1e-12, 1e-10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceKind {
    Iid,
    Ar1 {
        rho: f64,
    },
    Equicorrelated {
        rho: f64,
    },
    /// `d_ij = (1 + |i − j|)^{−alpha}`
    PowerDecay {
        alpha: f64,
    },
    /// `n × n` CSV file, no header.
    Explicit {
        path: PathBuf,
    },
}

impl fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceKind::Iid => write!(f, "iid"),
            CovarianceKind::Ar1 { rho } => write!(f, "ar1({rho})"),
            CovarianceKind::Equicorrelated { rho } => write!(f, "equicorrelated({rho})"),
            CovarianceKind::PowerDecay { alpha } => write!(f, "power_decay({alpha})"),
            CovarianceKind::Explicit { path } => write!(f, "explicit({})", path.display()),
        }
    }
}

impl CovarianceKind {
    /// Checks parameter ranges; the error names the offending parameter.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        match *self {
            CovarianceKind::Ar1 { rho } if !(rho.is_finite() && rho.abs() < 1.0) => {
                Err(("rho", format!("ar1 needs |rho| < 1, got {rho}")))
            }
            CovarianceKind::Equicorrelated { rho } if !(0.0..1.0).contains(&rho) => Err((
                "rho",
                format!("equicorrelated needs 0 <= rho < 1, got {rho}"),
            )),
            CovarianceKind::PowerDecay { alpha } if !(alpha.is_finite() && alpha > 0.0) => {
                Err(("alpha", format!("power_decay needs alpha > 0, got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub n: usize,
    pub s: f64,
    #[serde(flatten)]
    pub kind: CovarianceKind,
}

impl CovarianceSpec {
    pub fn new(n: usize, s: f64, kind: CovarianceKind) -> Self {
        Self { n, s, kind }
    }

    pub fn iid(n: usize, s: f64) -> Self {
        Self::new(n, s, CovarianceKind::Iid)
    }

    pub fn ar1(n: usize, s: f64, rho: f64) -> Self {
        Self::new(n, s, CovarianceKind::Ar1 { rho })
    }

    pub fn equicorrelated(n: usize, s: f64, rho: f64) -> Self {
        Self::new(n, s, CovarianceKind::Equicorrelated { rho })
    }

    pub fn power_decay(n: usize, s: f64, alpha: f64) -> Self {
        Self::new(n, s, CovarianceKind::PowerDecay { alpha })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_N {
            return Err(Error::invalid(format!(
                "path length must be in 1..={MAX_N}, got {}",
                self.n
            )));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::invalid(format!(
                "standard deviation must be positive, got {}",
                self.s
            )));
        }
        self.kind
            .validate()
            .map_err(|(_, msg)| Error::InvalidInput(msg))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// `Σ d_ij`
    Signed,
    /// `Σ |d_ij|`
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Structure {
    Iid,
    Ar1(f64),
    Equicorrelated(f64),
    General,
}

#[derive(Clone, Debug)]
enum Entries {
    /// Correlation by lag, `d(h)` for `h = 0..n`.
    Toeplitz(Vec<f64>),
    /// Row-major `σ_ij`.
    Dense(Vec<f64>),
}

/// Packed lower-triangular matrix, row `i` holding columns `0..=i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let start = Self::offset(i);
        &self.data[start..start + i + 1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.row(i)[j]
        }
    }

    /// `L · z`
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), &z[..=i]);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for lane in 0..4 {
            acc[lane] += a[4 * c + lane] * b[4 * c + lane];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Clone, Debug)]
enum Factor {
    Scaled(f64),
    Ar1 {
        s: f64,
        rho: f64,
        innovation: f64,
    },
    /// Equicorrelated factor: column `j` is constant (`below[j]`) under the
    /// diagonal.
    Equicorrelated {
        s: f64,
        diag: Vec<f64>,
        below: Vec<f64>,
    },
    Dense(LowerTriangular),
}

impl Factor {
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Factor::Scaled(s) => {
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = s * zi;
                }
            }
            Factor::Ar1 { s, rho, innovation } => {
                let mut prev = s * z[0];
                out[0] = prev;
                for i in 1..z.len() {
                    prev = rho * prev + s * innovation * z[i];
                    out[i] = prev;
                }
            }
            Factor::Equicorrelated { s, diag, below } => {
                let mut prefix = 0.0;
                for i in 0..z.len() {
                    out[i] = s * (prefix + diag[i] * z[i]);
                    prefix += below[i] * z[i];
                }
            }
            Factor::Dense(l) => l.apply(z, out),
        }
    }

    fn dense(&self, n: usize) -> LowerTriangular {
        if let Factor::Dense(l) = self {
            return l.clone();
        }
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                let v = match self {
                    Factor::Scaled(s) => {
                        if i == j {
                            *s
                        } else {
                            0.0
                        }
                    }
                    Factor::Ar1 { s, rho, innovation } => {
                        let scale = if j == 0 { 1.0 } else { *innovation };
                        s * scale * rho.powi((i - j) as i32)
                    }
                    Factor::Equicorrelated { s, diag, below } => {
                        s * if i == j { diag[j] } else { below[j] }
                    }
                    Factor::Dense(_) => unreachable!(),
                };
                data.push(v);
            }
        }
        LowerTriangular { n, data }
    }
}

/// An `n × n` covariance with constant diagonal `s²`.
#[derive(Debug)]
pub struct CovarianceMatrix {
    n: usize,
    s: f64,
    kind: Option<CovarianceKind>,
    structure: Structure,
    entries: Entries,
    factor: OnceLock<std::result::Result<Factor, usize>>,
}

/// Builds the matrix for `spec`. Explicit matrices are read from disk and
/// checked for shape, symmetry, constant diagonal and positive semidefiniteness.
pub fn build_covariance(spec: &CovarianceSpec) -> Result<CovarianceMatrix> {
    spec.validate()?;
    let n = spec.n;
    let s = spec.s;
    let lags = |d: &dyn Fn(usize) -> f64| (0..n).map(d).collect::<Vec<f64>>();
    let (structure, entries) = match spec.kind {
        CovarianceKind::Iid => (Structure::Iid, lags(&|h| if h == 0 { 1.0 } else { 0.0 })),
        CovarianceKind::Ar1 { rho } => (Structure::Ar1(rho), lags(&|h| rho.powi(h as i32))),
        CovarianceKind::Equicorrelated { rho } => (
            Structure::Equicorrelated(rho),
            lags(&|h| if h == 0 { 1.0 } else { rho }),
        ),
        CovarianceKind::PowerDecay { alpha } => {
            (Structure::General, lags(&|h| (1.0 + h as f64).powf(-alpha)))
        }
        CovarianceKind::Explicit { ref path } => {
            let m = read_explicit(path)?;
            if m.n != n {
                return Err(Error::invalid(format!(
                    "{} holds a {}x{} matrix but n = {n}",
                    path.display(),
                    m.n,
                    m.n
                )));
            }
            let m = CovarianceMatrix {
                kind: Some(spec.kind.clone()),
                ..m
            };
            if (m.s - s).abs() > 1e-12 * s {
                return Err(Error::invalid(format!(
                    "{}: diagonal gives s = {}, spec says s = {s}",
                    path.display(),
                    m.s
                )));
            }
            return Ok(m);
        }
    };
    Ok(CovarianceMatrix {
        n,
        s,
        kind: Some(spec.kind.clone()),
        structure,
        entries: Entries::Toeplitz(entries),
        factor: OnceLock::new(),
    })
}

/// Parses an explicit covariance CSV (n rows of n reals) and validates it.
pub fn read_explicit(path: &Path) -> Result<CovarianceMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::invalid(format!(
                        "{}: row {}, column {}: `{field}` is not a number",
                        path.display(),
                        r + 1,
                        c + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    CovarianceMatrix::from_rows(&rows)
}

impl CovarianceMatrix {
    /// Validates and wraps an explicit matrix given by rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n > MAX_N {
            return Err(Error::invalid(format!(
                "explicit matrix must have 1..={MAX_N} rows, got {n}"
            )));
        }
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::invalid(format!(
                "matrix is not square: row {} has {} entries, expected {n}",
                i + 1,
                row.len()
            )));
        }
        let var = rows[0][0];
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::invalid(format!(
                "diagonal entry must be positive, got {var}"
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "row {} holds non-finite value {v}",
                    i + 1
                )));
            }
            if (row[i] - var).abs() > 1e-12 * var {
                return Err(Error::invalid(format!(
                    "diagonal must be constant: entry ({0},{0}) = {1}, expected {var}",
                    i + 1,
                    row[i]
                )));
            }
            for (j, &v) in row.iter().enumerate().take(i) {
                let w = rows[j][i];
                let scale = v.abs().max(w.abs()).max(var);
                if (v - w).abs() > 1e-12 * scale {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({}, {}): {v} vs {w}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let mut dense = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                // average the two triangles so the stored matrix is exactly symmetric
                dense.push(if i == j { var } else { 0.5 * (v + rows[j][i]) });
            }
        }
        let m = Self {
            n,
            s: var.sqrt(),
            kind: None,
            structure: Structure::General,
            entries: Entries::Dense(dense),
            factor: OnceLock::new(),
        };
        m.factor()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn kind(&self) -> Option<&CovarianceKind> {
        self.kind.as_ref()
    }

    /// `σ_ij`
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.entries {
            Entries::Toeplitz(d) => self.s * self.s * d[i.abs_diff(j)],
            Entries::Dense(m) => m[i * self.n + j],
        }
    }

    /// `d_ij = σ_ij / s²`
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        match &self.entries {
            Entries::Toeplitz(d) => d[i.abs_diff(j)],
            Entries::Dense(m) => m[i * self.n + j] / m[0],
        }
    }

    pub fn min_correlation(&self) -> f64 {
        match &self.entries {
            Entries::Toeplitz(d) => d.iter().copied().fold(f64::INFINITY, f64::min),
            Entries::Dense(m) => m.iter().copied().fold(f64::INFINITY, f64::min) / m[0],
        }
    }

    /// `Δ_n`: `Σ d_ij` (signed) or `Σ |d_ij|` (absolute).
    pub fn delta_n(&self, mode: DeltaMode) -> f64 {
        let f = |v: f64| match mode {
            DeltaMode::Signed => v,
            DeltaMode::Absolute => v.abs(),
        };
        match &self.entries {
            Entries::Toeplitz(d) => {
                let n = self.n;
                let off: f64 = (1..n).map(|h| (n - h) as f64 * f(d[h])).sum();
                n as f64 * f(d[0]) + 2.0 * off
            }
            Entries::Dense(m) => {
                let var = m[0];
                m.iter().map(|&v| f(v / var)).sum()
            }
        }
    }

    /// `Δ_n` for bound evaluation. Signed mode is refused when any `d_ij < 0`
    /// since the contraction inequality then no longer follows.
    pub fn bound_delta(&self, mode: DeltaMode) -> Result<f64> {
        if mode == DeltaMode::Signed {
            let min = self.min_correlation();
            if min < 0.0 {
                return Err(Error::NegativeCorrelation {
                    min_correlation: min,
                });
            }
        }
        Ok(self.delta_n(mode))
    }

    fn factor(&self) -> Result<&Factor> {
        self.factor
            .get_or_init(|| self.compute_factor())
            .as_ref()
            .map_err(|&minor| Error::NotPositiveSemidefinite { minor })
    }

    fn compute_factor(&self) -> std::result::Result<Factor, usize> {
        let s = self.s;
        match self.structure {
            Structure::Iid => Ok(Factor::Scaled(s)),
            Structure::Ar1(rho) => Ok(Factor::Ar1 {
                s,
                rho,
                innovation: (1.0 - rho * rho).sqrt(),
            }),
            Structure::Equicorrelated(rho) => {
                let mut diag = Vec::with_capacity(self.n);
                let mut below = Vec::with_capacity(self.n);
                let mut acc = 0.0f64;
                for _ in 0..self.n {
                    let l = (1.0 - acc).sqrt();
                    let c = (rho - acc) / l;
                    diag.push(l);
                    below.push(c);
                    acc += c * c;
                }
                Ok(Factor::Equicorrelated { s, diag, below })
            }
            Structure::General => self.dense_cholesky().map(Factor::Dense),
        }
    }

    /// Numeric Cholesky factor, with a short jitter ladder for rounding noise.
    /// On failure returns the 1-based index of the failing leading minor.
    fn dense_cholesky(&self) -> std::result::Result<LowerTriangular, usize> {
        let var = self.s * self.s;
        let mut failed_at = 0;
        for jitter in JITTER {
            match cholesky_with_jitter(self.n, |i, j| self.entry(i, j), jitter * var) {
                Ok(l) => return Ok(l),
                Err(minor) => failed_at = minor,
            }
        }
        Err(failed_at)
    }

    /// The lower-triangular factor `L` with `L Lᵀ = Σ`, dense.
    pub fn lower_factor(&self) -> Result<LowerTriangular> {
        Ok(self.factor()?.dense(self.n))
    }

    /// Numeric Cholesky regardless of structure.
    pub fn numeric_cholesky(&self) -> Result<LowerTriangular> {
        self.dense_cholesky()
            .map_err(|minor| Error::NotPositiveSemidefinite { minor })
    }

    /// `L·z` for a standard-normal `z` drawn from `rng`, written into `out`.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        z: &mut Vec<f64>,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let factor = self.factor()?;
        z.clear();
        z.extend((0..self.n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        out.resize(self.n, 0.0);
        factor.apply(z, out);
        Ok(())
    }

    pub fn sample_path(&self, key: StreamKey) -> Result<SamplePath> {
        let mut rng = key.rng();
        let mut z = Vec::with_capacity(self.n);
        let mut values = Vec::with_capacity(self.n);
        self.sample_into(&mut rng, &mut z, &mut values)?;
        Ok(SamplePath {
            values,
            provenance: Some(key),
        })
    }
}

fn cholesky_with_jitter(
    n: usize,
    entry: impl Fn(usize, usize) -> f64,
    jitter: f64,
) -> std::result::Result<LowerTriangular, usize> {
    let mut data = vec![0.0; n * (n + 1) / 2];
    for i in 0..n {
        let (done, rest) = data.split_at_mut(LowerTriangular::offset(i));
        let row_i = &mut rest[..=i];
        for j in 0..i {
            let start_j = LowerTriangular::offset(j);
            let row_j = &done[start_j..start_j + j + 1];
            let v = (entry(i, j) - dot(&row_i[..j], &row_j[..j])) / row_j[j];
            row_i[j] = v;
        }
        let pivot = entry(i, i) + jitter - dot(&row_i[..i], &row_i[..i]);
        if !(pivot > 0.0) {
            return Err(i + 1);
        }
        row_i[i] = pivot.sqrt();
    }
    Ok(LowerTriangular { n, data })
}

/// One realization `x_1 … x_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    values: Vec<f64>,
    provenance: Option<StreamKey>,
}

impl SamplePath {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sample path is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "path value x_{} is not finite",
                i + 1
            )));
        }
        Ok(Self {
            values,
            provenance: None,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn provenance(&self) -> Option<StreamKey> {
        self.provenance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn corr_matrix(m: &CovarianceMatrix) -> Vec<Vec<f64>> {
        (0..m.n())
            .map(|i| (0..m.n()).map(|j| m.correlation(i, j)).collect())
            .collect()
    }

    #[test]
    fn build_examples() {
        let iid = build_covariance(&CovarianceSpec::iid(3, 1.0)).unwrap();
        assert_eq!(
            corr_matrix(&iid),
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0]
            ]
        );
        let ar = build_covariance(&CovarianceSpec::ar1(3, 1.0, 0.5)).unwrap();
        assert_eq!(
            corr_matrix(&ar),
            vec![
                vec![1.0, 0.5, 0.25],
                vec![0.5, 1.0, 0.5],
                vec![0.25, 0.5, 1.0]
            ]
        );
        let eq = build_covariance(&CovarianceSpec::equicorrelated(2, 2.0, 0.5)).unwrap();
        assert_eq!(eq.entry(0, 0), 4.0);
        assert_eq!(eq.entry(0, 1), 2.0);
        assert_eq!(eq.entry(1, 0), 2.0);
    }

    #[test]
    fn delta_examples() {
        let iid = build_covariance(&CovarianceSpec::iid(10, 1.0)).unwrap();
        assert_eq!(iid.delta_n(DeltaMode::Signed), 10.0);
        let eq = build_covariance(&CovarianceSpec::equicorrelated(3, 1.0, 0.5)).unwrap();
        assert_eq!(eq.delta_n(DeltaMode::Signed), 6.0);
        let ar = build_covariance(&CovarianceSpec::ar1(3, 1.0, 0.5)).unwrap();
        assert_eq!(ar.delta_n(DeltaMode::Signed), 5.5);
    }

    #[test]
    fn lag_sum_matches_double_sum() {
        let specs = [
            CovarianceSpec::ar1(37, 1.3, -0.6),
            CovarianceSpec::equicorrelated(25, 0.7, 0.3),
            CovarianceSpec::power_decay(40, 2.0, 0.8),
        ];
        for spec in specs {
            let m = build_covariance(&spec).unwrap();
            for mode in [DeltaMode::Signed, DeltaMode::Absolute] {
                let mut brute = 0.0;
                for i in 0..m.n() {
                    for j in 0..m.n() {
                        let d = m.entry(i, j) / (spec.s * spec.s);
                        brute += if mode == DeltaMode::Signed {
                            d
                        } else {
                            d.abs()
                        };
                    }
                }
                let got = m.delta_n(mode);
                assert!(
                    (got - brute).abs() < 1e-10 * brute.abs().max(1.0),
                    "{spec:?}"
                );
            }
        }
    }

    #[test]
    fn signed_mode_refused_for_negative_correlation() {
        let m = build_covariance(&CovarianceSpec::ar1(5, 1.0, -0.4)).unwrap();
        assert!(matches!(
            m.bound_delta(DeltaMode::Signed),
            Err(Error::NegativeCorrelation { .. })
        ));
        let abs = m.bound_delta(DeltaMode::Absolute).unwrap();
        assert!(abs >= m.delta_n(DeltaMode::Signed));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(build_covariance(&CovarianceSpec::ar1(3, 1.0, 1.0)).is_err());
        assert!(build_covariance(&CovarianceSpec::equicorrelated(3, 1.0, -0.1)).is_err());
        assert!(build_covariance(&CovarianceSpec::power_decay(3, 1.0, 0.0)).is_err());
        assert!(build_covariance(&CovarianceSpec::iid(0, 1.0)).is_err());
        assert!(build_covariance(&CovarianceSpec::iid(3, -1.0)).is_err());
        assert!(build_covariance(&CovarianceSpec::iid(MAX_N + 1, 1.0)).is_err());
    }

    #[test]
    fn structured_factors_match_numeric_cholesky() {
        let specs = [
            CovarianceSpec::iid(30, 1.7),
            CovarianceSpec::ar1(30, 0.8, 0.9),
            CovarianceSpec::ar1(30, 1.0, -0.5),
            CovarianceSpec::equicorrelated(30, 2.0, 0.5),
        ];
        for spec in specs {
            let m = build_covariance(&spec).unwrap();
            let structured = m.lower_factor().unwrap();
            let numeric = m.numeric_cholesky().unwrap();
            for i in 0..m.n() {
                for j in 0..=i {
                    assert!(
                        (structured.get(i, j) - numeric.get(i, j)).abs() < 1e-12,
                        "{spec:?} at ({i},{j})"
                    );
                }
            }
            // the O(n) apply agrees with the dense product
            let z: Vec<f64> = (0..m.n())
                .map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0)
                .collect();
            let mut fast = vec![0.0; m.n()];
            m.factor().unwrap().apply(&z, &mut fast);
            let mut slow = vec![0.0; m.n()];
            numeric.apply(&z, &mut slow);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn factor_reproduces_covariance() {
        let m = build_covariance(&CovarianceSpec::power_decay(20, 1.5, 0.7)).unwrap();
        let l = m.lower_factor().unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let v: f64 = (0..=i.min(j)).map(|k| l.get(i, k) * l.get(j, k)).sum();
                assert!((v - m.entry(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_path_is_raw_normals() {
        let m = build_covariance(&CovarianceSpec::iid(2, 1.0)).unwrap();
        let key = StreamKey::from_seed(11);
        let path = m.sample_path(key).unwrap();
        let mut rng = key.rng();
        let z: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        assert_eq!(path.values(), &z[..]);
        assert_eq!(path.provenance(), Some(key));
    }

    #[test]
    fn same_seed_same_path() {
        let m = build_covariance(&CovarianceSpec::power_decay(16, 1.0, 1.2)).unwrap();
        let key = StreamKey::new(5, 1, 2, 3);
        assert_eq!(m.sample_path(key).unwrap(), m.sample_path(key).unwrap());
    }

    #[test]
    fn explicit_matrix_validation() {
        let ok = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let m = CovarianceMatrix::from_rows(&ok).unwrap();
        assert!((m.s() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.delta_n(DeltaMode::Signed), 3.0);

        let not_square = vec![vec![1.0, 0.0], vec![0.0]];
        assert!(CovarianceMatrix::from_rows(&not_square).is_err());
        let asym = vec![vec![1.0, 0.5], vec![0.4, 1.0]];
        assert!(CovarianceMatrix::from_rows(&asym).is_err());
        let non_psd = vec![
            vec![1.0, 0.9, 0.0],
            vec![0.9, 1.0, 0.9],
            vec![0.0, 0.9, 1.0],
        ];
        assert!(matches!(
            CovarianceMatrix::from_rows(&non_psd),
            Err(Error::NotPositiveSemidefinite { minor: 3 })
        ));
        // singular but PSD: accepted through jitter
        let singular = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(CovarianceMatrix::from_rows(&singular).is_ok());
    }

    #[test]
    fn explicit_csv_round_trip() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "1.0, 0.3, 0.1\n0.3, 1.0, 0.3\n0.1, 0.3, 1.0").unwrap();
        let spec = CovarianceSpec::new(
            3,
            1.0,
            CovarianceKind::Explicit {
                path: file.path().to_path_buf(),
            },
        );
        let m = build_covariance(&spec).unwrap();
        assert!((m.delta_n(DeltaMode::Signed) - 4.4).abs() < 1e-12);
        let wrong_n = CovarianceSpec { n: 4, ..spec };
        assert!(build_covariance(&wrong_n).is_err());
    }
}
