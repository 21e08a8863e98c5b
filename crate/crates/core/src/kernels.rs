//! Kernel functions, Gram matrices and the median bandwidth heuristic.
//!
//! Four families are supported: linear `x'y`, polynomial `(x'y + 1)^2` and
//! `(x'y + 1)^3`, and the Gaussian RBF `exp(-|x - y|^2 / (2 sigma^2))`. The
//! polynomial offset is fixed at one; the only free parameter is the RBF
//! bandwidth `sigma^2`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Lin,
    Poly2,
    Poly3,
    Rbf,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [Self::Lin, Self::Poly2, Self::Poly3, Self::Rbf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lin => "lin",
            Self::Poly2 => "poly2",
            Self::Poly3 => "poly3",
            Self::Rbf => "rbf",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lin" | "linear" => Ok(Self::Lin),
            "poly2" => Ok(Self::Poly2),
            "poly3" => Ok(Self::Poly3),
            "rbf" | "gaussian" => Ok(Self::Rbf),
            other => Err(Error::InvalidInput(format!("unknown kernel family {other:?}"))),
        }
    }
}

/// A fully resolved kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec", into = "RawKernelSpec")]
pub enum KernelSpec {
    Lin,
    Poly2,
    Poly3,
    Rbf { bandwidth_sq: f64 },
}

#[derive(Serialize, Deserialize)]
struct RawKernelSpec {
    family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bandwidth_sq: Option<f64>,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        match raw.family {
            KernelFamily::Lin => Ok(Self::Lin),
            KernelFamily::Poly2 => Ok(Self::Poly2),
            KernelFamily::Poly3 => Ok(Self::Poly3),
            KernelFamily::Rbf => {
                let bw = raw.bandwidth_sq.ok_or_else(|| {
                    Error::InvalidInput("rbf kernel requires bandwidth_sq".into())
                })?;
                Self::rbf(bw)
            }
        }
    }
}

impl From<KernelSpec> for RawKernelSpec {
    fn from(k: KernelSpec) -> Self {
        let bandwidth_sq = match k {
            KernelSpec::Rbf { bandwidth_sq } => Some(bandwidth_sq),
            _ => None,
        };
        RawKernelSpec {
            family: k.family(),
            bandwidth_sq,
        }
    }
}

impl KernelSpec {
    pub fn rbf(bandwidth_sq: f64) -> Result<Self> {
        if !(bandwidth_sq.is_finite() && bandwidth_sq > 0.0) {
            return Err(Error::InvalidInput(format!(
                "rbf bandwidth_sq must be positive and finite, got {bandwidth_sq}"
            )));
        }
        Ok(Self::Rbf { bandwidth_sq })
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            Self::Lin => KernelFamily::Lin,
            Self::Poly2 => KernelFamily::Poly2,
            Self::Poly3 => KernelFamily::Poly3,
            Self::Rbf { .. } => KernelFamily::Rbf,
        }
    }

    /// Unchecked evaluation; callers guarantee equal lengths.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match *self {
            Self::Lin => dot(x, y),
            Self::Poly2 => (dot(x, y) + 1.0).powi(2),
            Self::Poly3 => (dot(x, y) + 1.0).powi(3),
            Self::Rbf { bandwidth_sq } => (-sq_dist(x, y) / (2.0 * bandwidth_sq)).exp(),
        }
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Kernel family plus a bandwidth rule that is resolved against data.
///
/// Accepts `{"family": "rbf", "bandwidth_sq": 1.5}`,
/// `{"family": "rbf", "bandwidth": "median"}`, or the short string forms
/// `"lin"`, `"poly2"`, `"poly3"`, `"rbf"`, `"rbf:median"`, `"rbf:1.5"`.
/// An RBF kernel without a bandwidth uses the median heuristic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Median,
    Fixed(f64),
}

impl KernelConfig {
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            bandwidth: Bandwidth::Median,
        }
    }

    pub fn resolve(&self, x: &DataMatrix) -> Result<KernelSpec> {
        match self.family {
            KernelFamily::Lin => Ok(KernelSpec::Lin),
            KernelFamily::Poly2 => Ok(KernelSpec::Poly2),
            KernelFamily::Poly3 => Ok(KernelSpec::Poly3),
            KernelFamily::Rbf => match self.bandwidth {
                Bandwidth::Fixed(bw) => KernelSpec::rbf(bw),
                Bandwidth::Median => KernelSpec::rbf(median_heuristic(x)?),
            },
        }
    }
}

impl From<KernelFamily> for KernelConfig {
    fn from(f: KernelFamily) -> Self {
        Self::new(f)
    }
}

impl FromStr for KernelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (fam, bw) = match s.split_once(':') {
            Some((f, b)) => (f, Some(b)),
            None => (s, None),
        };
        let family: KernelFamily = fam.trim().parse()?;
        let bandwidth = match bw.map(str::trim) {
            None | Some("median") => Bandwidth::Median,
            Some(v) => {
                let bw: f64 = v
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad bandwidth {v:?}")))?;
                KernelSpec::rbf(bw)?;
                Bandwidth::Fixed(bw)
            }
        };
        Ok(Self { family, bandwidth })
    }
}

impl fmt::Display for KernelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.family, self.bandwidth) {
            (KernelFamily::Rbf, Bandwidth::Median) => f.write_str("rbf:median"),
            (KernelFamily::Rbf, Bandwidth::Fixed(bw)) => write!(f, "rbf:{bw}"),
            (fam, _) => write!(f, "{fam}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawKernelConfig {
    Short(String),
    Full {
        family: KernelFamily,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth_sq: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<String>,
    },
}

impl Serialize for KernelConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = match (self.family, self.bandwidth) {
            (KernelFamily::Rbf, Bandwidth::Median) => RawKernelConfig::Full {
                family: self.family,
                bandwidth_sq: None,
                bandwidth: Some("median".into()),
            },
            (KernelFamily::Rbf, Bandwidth::Fixed(bw)) => RawKernelConfig::Full {
                family: self.family,
                bandwidth_sq: Some(bw),
                bandwidth: None,
            },
            (fam, _) => RawKernelConfig::Full {
                family: fam,
                bandwidth_sq: None,
                bandwidth: None,
            },
        };
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for KernelConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match RawKernelConfig::deserialize(d)? {
            RawKernelConfig::Short(s) => s.parse().map_err(D::Error::custom),
            RawKernelConfig::Full {
                family,
                bandwidth_sq,
                bandwidth,
            } => {
                let bandwidth = match (bandwidth_sq, bandwidth.as_deref()) {
                    (Some(_), Some(_)) => {
                        return Err(D::Error::custom(
                            "give either bandwidth_sq or bandwidth, not both",
                        ))
                    }
                    (Some(bw), None) => {
                        KernelSpec::rbf(bw).map_err(D::Error::custom)?;
                        Bandwidth::Fixed(bw)
                    }
                    (None, None) | (None, Some("median")) => Bandwidth::Median,
                    (None, Some(other)) => {
                        return Err(D::Error::custom(format!("unknown bandwidth rule {other:?}")))
                    }
                };
                Ok(Self { family, bandwidth })
            }
        }
    }
}

/// Symmetric `n x n` matrix of kernel values.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    /// Wraps a square matrix after checking it is finite and symmetric to
    /// within `1e-12` relative; the stored matrix is exactly symmetric.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gram matrix"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "Gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Entrywise product with another Gram of the same size.
    pub fn hadamard(&self, other: &GramMatrix) -> Result<GramMatrix> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: other.n(),
            });
        }
        Ok(GramMatrix(self.0.component_mul(&other.0)))
    }
}

fn check_vectors(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel argument"));
    }
    Ok(())
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_vectors(x, y)?;
    Ok(spec.eval(x, y))
}

/// Upper triangle is evaluated and mirrored, so the result is exactly
/// symmetric.
pub fn gram(spec: &KernelSpec, x: &DataMatrix) -> GramMatrix {
    let n = x.nrows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| spec.eval(x.row(i), x.row(j))).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            let j = i + off;
            k[(i, j)] = *v;
            k[(j, i)] = *v;
        }
    }
    GramMatrix(k)
}

/// `m x n` matrix with entry `(i, j) = k(test_i, train_j)`.
pub fn cross_gram(spec: &KernelSpec, test: &DataMatrix, train: &DataMatrix) -> Result<DMatrix<f64>> {
    if test.ncols() != train.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train.ncols(),
            got: test.ncols(),
        });
    }
    Ok(DMatrix::from_fn(test.nrows(), train.nrows(), |i, j| {
        spec.eval(test.row(i), train.row(j))
    }))
}

/// Median of squared Euclidean distances over unordered pairs `i < j`.
/// Even-length lists take the lower median.
pub fn median_heuristic(x: &DataMatrix) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(
            "median heuristic needs at least two points".into(),
        ));
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d2.push(sq_dist(x.row(i), x.row(j)));
        }
    }
    let mid = (d2.len() - 1) / 2;
    let (_, median, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if median > 0.0 {
        Ok(median)
    } else if d2.iter().all(|&v| v == 0.0) {
        Err(Error::DegenerateSample)
    } else {
        // More than half the pairs coincide; fall back to the smallest
        // positive distance so the bandwidth stays strictly positive.
        Ok(d2
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min))
    }
}
