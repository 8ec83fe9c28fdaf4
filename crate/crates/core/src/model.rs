//! The MIMO-NOMA problem instance.
//!
//! `y = H K^{1/2} x + n` with `K = diag(w_i²)`. Everything downstream works on
//! the effective channel `H' = H · diag(w)` and on the gram matrix
//! `B = I + σ⁻² H'ᴴ H'`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Dense complex matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix(CMat);

impl ComplexMatrix {
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if let Some(k) = entries.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "non-finite entry at ({}, {})",
                k / cols.max(1),
                k % cols.max(1)
            )));
        }
        Ok(Self(CMat::from_row_slice(rows, cols, &entries)))
    }

    /// Real matrix given row by row; imaginary parts are zero.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let entries = rows
            .iter()
            .flat_map(|row| row.iter().map(|&x| Complex64::new(x, 0.0)))
            .collect();
        Self::from_row_major(r, c, entries)
    }

    pub fn identity(n: usize) -> Self {
        Self(CMat::identity(n, n))
    }

    pub fn from_matrix(m: CMat) -> Result<Self> {
        let (r, c) = m.shape();
        Self::from_row_major(r, c, m.transpose().iter().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.0[(r, c)]
    }

    pub fn to_row_major(&self) -> Vec<Complex64> {
        self.0.transpose().iter().copied().collect()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }
}

/// Hermitian matrix (checked to 1e-12 absolute, diagonal real).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if !linalg::is_hermitian(&m, 1e-12) {
            return Err(Error::InvalidArgument("matrix is not Hermitian".into()));
        }
        Ok(Self(linalg::hermitize(&m)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.0[(r, c)]
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(linalg::hermitian_eigen(&self.0)?.values)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(f64::INFINITY))
    }
}

/// Channel, per-user amplitude weights and noise variance.
#[derive(Debug, Clone)]
pub struct SystemModel {
    channel: ComplexMatrix,
    weights: Vec<f64>,
    noise_variance: f64,
    effective: CMat,
    // σ⁻² H'ᴴ H', exactly Hermitian
    snr_gram: CMat,
}

impl SystemModel {
    pub fn new(channel: ComplexMatrix, weights: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let (nr, nu) = (channel.rows(), channel.cols());
        if nr == 0 || nu == 0 {
            return Err(Error::Dimension(format!("channel is {nr}x{nu}")));
        }
        if weights.len() != nu {
            return Err(Error::Dimension(format!("{} weights for {nu} users", weights.len())));
        }
        if let Some(i) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "non-positive weight {} for user {i}",
                weights[i]
            )));
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-positive noise variance {noise_variance}"
            )));
        }
        let mut effective = channel.as_matrix().clone();
        for (j, &w) in weights.iter().enumerate() {
            effective.column_mut(j).scale_mut(w);
        }
        let snr_gram = linalg::hermitize(&(effective.adjoint() * &effective / Complex64::new(noise_variance, 0.0)));
        Ok(Self {
            channel,
            weights,
            noise_variance,
            effective,
            snr_gram,
        })
    }

    /// Unit weights.
    pub fn with_unit_weights(channel: ComplexMatrix, noise_variance: f64) -> Result<Self> {
        let nu = channel.cols();
        Self::new(channel, vec![1.0; nu], noise_variance)
    }

    pub fn num_users(&self) -> usize {
        self.channel.cols()
    }

    pub fn num_rx(&self) -> usize {
        self.channel.rows()
    }

    pub fn channel(&self) -> &ComplexMatrix {
        &self.channel
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// `H' = H · diag(w)`.
    pub fn effective_channel(&self) -> &CMat {
        &self.effective
    }

    /// `G = σ⁻² H'ᴴ H'`.
    pub fn snr_gram(&self) -> &CMat {
        &self.snr_gram
    }

    /// `σ⁻² ‖h'_i‖²`, the interference-free SNR of user `i`.
    pub fn matched_filter_snr(&self, i: usize) -> f64 {
        self.snr_gram[(i, i)].re
    }

    /// `I + σ⁻² H'ᴴ H'`.
    pub fn gram_matrix(&self) -> CMat {
        let n = self.num_users();
        &self.snr_gram + CMat::identity(n, n)
    }

    pub fn has_equal_weights(&self) -> bool {
        self.weights
            .iter()
            .all(|&w| (w - self.weights[0]).abs() <= 1e-12 * self.weights[0])
    }

    /// True when `H'ᴴH'` is diagonal to within `tol` relative.
    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let n = self.num_users();
        let scale = (0..n).map(|i| self.snr_gram[(i, i)].re).fold(0.0, f64::max);
        (0..n).all(|i| (0..n).all(|j| i == j || self.snr_gram[(i, j)].norm() <= tol * scale))
    }
}

/// `B = I_{N_u} + σ⁻² H'ᴴ H'`.
pub fn gram(system: &SystemModel) -> HermitianMatrix {
    HermitianMatrix(system.gram_matrix())
}

/// One channel coefficient: a bare real or an `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    pub fn to_complex(self) -> Complex64 {
        match self {
            Entry::Real(x) => Complex64::new(x, 0.0),
            Entry::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// The `system` block of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// `N_r` rows of `N_u` entries each.
    pub channel: Vec<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub noise_variance: f64,
}

/// Validate a parsed config and build the system. Errors carry the field path.
pub fn build_system(config: &SystemConfig) -> Result<SystemModel> {
    let nr = config.channel.len();
    if nr == 0 {
        return Err(Error::config("system.channel", "channel has no rows"));
    }
    let nu = config.channel[0].len();
    if nu == 0 {
        return Err(Error::config("system.channel[0]", "channel has no columns"));
    }
    let mut entries = Vec::with_capacity(nr * nu);
    for (r, row) in config.channel.iter().enumerate() {
        if row.len() != nu {
            return Err(Error::config(
                format!("system.channel[{r}]"),
                format!("dimension mismatch: {} entries, expected {nu}", row.len()),
            ));
        }
        for (c, e) in row.iter().enumerate() {
            let z = e.to_complex();
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::config(format!("system.channel[{r}][{c}]"), "non-finite entry"));
            }
            entries.push(z);
        }
    }
    let weights = match &config.weights {
        None => vec![1.0; nu],
        Some(w) => {
            if w.len() != nu {
                return Err(Error::config(
                    "system.weights",
                    format!("dimension mismatch: {} weights for {nu} users", w.len()),
                ));
            }
            if let Some(i) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::config(
                    format!("system.weights[{i}]"),
                    format!("non-positive weight {}", w[i]),
                ));
            }
            w.clone()
        }
    };
    if !(config.noise_variance > 0.0 && config.noise_variance.is_finite()) {
        return Err(Error::config(
            "system.noise_variance",
            format!("non-positive noise variance {}", config.noise_variance),
        ));
    }
    let channel = ComplexMatrix::from_row_major(nr, nu, entries)?;
    SystemModel::new(channel, weights, config.noise_variance)
}

impl From<&SystemModel> for SystemConfig {
    fn from(system: &SystemModel) -> Self {
        let h = system.channel();
        let channel = (0..h.rows())
            .map(|r| {
                (0..h.cols())
                    .map(|c| {
                        let z = h.get(r, c);
                        if z.im == 0.0 {
                            Entry::Real(z.re)
                        } else {
                            Entry::Complex([z.re, z.im])
                        }
                    })
                    .collect()
            })
            .collect();
        SystemConfig {
            channel,
            weights: Some(system.weights().to_vec()),
            noise_variance: system.noise_variance(),
        }
    }
}
