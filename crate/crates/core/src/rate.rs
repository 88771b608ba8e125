//! Analytic rate and MSE quantities under unit-power independent symbols.
//!
//! Everything here is a function of the cross fields
//! `α_{kj} = Σ_n Ω_{k,n} w_{j,n}` (user `j`'s pattern seen at receiver `k`);
//! [`ReceivedFields`] computes them once so the per-user formulas below are
//! cheap.

use std::f64::consts::LN_2;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::em::{CMat3, CVec3};
use crate::fourier::{approx_field, ChannelProjection, PatternCoefficients};
use crate::{Error, Result};

/// Receive combiners `ψ_k`, one per user.
pub type CombinerSet = Vec<CVec3>;
/// MSE weights `ρ_k`, one per user.
pub type WeightSet = Vec<f64>;

pub(crate) fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    Ok(())
}

fn check_shapes(omega: &ChannelProjection, w: &PatternCoefficients) -> Result<()> {
    if omega.num_users() != w.num_users() || omega.num_indices() != w.num_indices() {
        return Err(Error::Contract(format!(
            "projection is {}x{} (users x indices) but coefficients are {}x{}",
            omega.num_users(),
            omega.num_indices(),
            w.num_users(),
            w.num_indices()
        )));
    }
    Ok(())
}

/// Cross fields `α_{kj}` for every receiver `k` and pattern `j`.
#[derive(Debug, Clone)]
pub struct ReceivedFields {
    fields: Vec<Vec<CVec3>>,
}

impl ReceivedFields {
    pub fn compute(omega: &ChannelProjection, w: &PatternCoefficients) -> Result<Self> {
        check_shapes(omega, w)?;
        let fields = (0..omega.num_users())
            .map(|k| {
                w.iter()
                    .map(|w_j| approx_field(omega.user(k), w_j))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fields })
    }

    pub fn num_users(&self) -> usize {
        self.fields.len()
    }

    /// Field of pattern `j` at receiver `k`.
    pub fn get(&self, k: usize, j: usize) -> CVec3 {
        self.fields[k][j]
    }

    /// Desired-signal vector `α_k`.
    pub fn desired(&self, k: usize) -> CVec3 {
        self.fields[k][k]
    }

    /// `J_k = Σ_{j≠k} α_{kj} α_{kj}^H + σ² I`.
    pub fn interference(&self, k: usize, noise_var: f64) -> CMat3 {
        let mut j_k = CMat3::identity() * Complex64::from(noise_var);
        for (j, a) in self.fields[k].iter().enumerate() {
            if j != k {
                j_k += a * a.adjoint();
            }
        }
        j_k
    }

    /// `Σ_j α_{kj} α_{kj}^H + σ² I`, the covariance of everything received.
    pub fn total_covariance(&self, k: usize, noise_var: f64) -> CMat3 {
        let a = self.desired(k);
        self.interference(k, noise_var) + a * a.adjoint()
    }

    /// `log2(1 + α_k^H J_k^{-1} α_k)` per user.
    pub fn user_rates(&self, noise_var: f64) -> Result<Vec<f64>> {
        check_noise(noise_var)?;
        (0..self.num_users())
            .map(|k| {
                let a = self.desired(k);
                let chol = self.interference(k, noise_var).cholesky().ok_or_else(|| {
                    Error::Numeric(format!("interference matrix of user {k} is not positive definite"))
                })?;
                let sinr = a.dotc(&chol.solve(&a)).re;
                Ok((1.0 + sinr).log2())
            })
            .collect()
    }

    /// `E_k` for combiner `ψ_k`.
    pub fn mse(&self, psi_k: &CVec3, k: usize, noise_var: f64) -> f64 {
        let mut e = (Complex64::from(1.0) - psi_k.dotc(&self.desired(k))).norm_sqr();
        for (j, a) in self.fields[k].iter().enumerate() {
            if j != k {
                e += psi_k.dotc(a).norm_sqr();
            }
        }
        e + noise_var * psi_k.norm_squared()
    }
}

/// Desired-signal vector `α_k = Σ_n Ω_{k,n} w_{k,n}`.
pub fn alpha(omega_k: &[CMat3], w_k: &[CVec3]) -> Result<CVec3> {
    approx_field(omega_k, w_k)
}

/// Interference-plus-noise covariance `J_k` at receiver `k`.
pub fn interference_matrix(omega_k: &[CMat3], w: &PatternCoefficients, k: usize, noise_var: f64) -> Result<CMat3> {
    check_noise(noise_var)?;
    if k >= w.num_users() {
        return Err(Error::Contract(format!("user {k} out of range")));
    }
    let mut j_k = CMat3::identity() * Complex64::from(noise_var);
    for (j, w_j) in w.iter().enumerate() {
        if j != k {
            let a = approx_field(omega_k, w_j)?;
            j_k += a * a.adjoint();
        }
    }
    Ok(j_k)
}

pub fn user_rates(omega: &ChannelProjection, w: &PatternCoefficients, noise_var: f64) -> Result<Vec<f64>> {
    check_noise(noise_var)?;
    ReceivedFields::compute(omega, w)?.user_rates(noise_var)
}

/// Sum-rate in bits/s/Hz, evaluated in the rank-1 form
/// `Σ_k log2(1 + α_k^H J_k^{-1} α_k)`.
pub fn sum_rate(omega: &ChannelProjection, w: &PatternCoefficients, noise_var: f64) -> Result<f64> {
    Ok(user_rates(omega, w, noise_var)?.iter().sum())
}

/// Sum-rate in the determinant form `Σ_k log2 |det(I + α_k α_k^H J_k^{-1})|`.
pub fn sum_rate_det(omega: &ChannelProjection, w: &PatternCoefficients, noise_var: f64) -> Result<f64> {
    check_noise(noise_var)?;
    let fields = ReceivedFields::compute(omega, w)?;
    (0..fields.num_users())
        .map(|k| {
            let a = fields.desired(k);
            let j_inv = fields
                .interference(k, noise_var)
                .try_inverse()
                .ok_or_else(|| Error::Numeric(format!("singular interference matrix for user {k}")))?;
            let m = CMat3::identity() + a * a.adjoint() * j_inv;
            Ok(m.determinant().norm().log2())
        })
        .sum()
}

/// Mean-square error `E_k` of the symbol decoded with combiner `ψ_k`.
pub fn mse(psi_k: &CVec3, omega_k: &[CMat3], w: &PatternCoefficients, k: usize, noise_var: f64) -> Result<f64> {
    if k >= w.num_users() {
        return Err(Error::Contract(format!("user {k} out of range")));
    }
    let mut e = 0.0;
    for (j, w_j) in w.iter().enumerate() {
        let projected = psi_k.dotc(&approx_field(omega_k, w_j)?);
        e += if j == k {
            (Complex64::from(1.0) - projected).norm_sqr()
        } else {
            projected.norm_sqr()
        };
    }
    Ok(e + noise_var * psi_k.norm_squared())
}

pub fn mse_all(psi: &[CVec3], omega: &ChannelProjection, w: &PatternCoefficients, noise_var: f64) -> Result<Vec<f64>> {
    if psi.len() != w.num_users() {
        return Err(Error::Contract(format!(
            "{} combiners for {} users",
            psi.len(),
            w.num_users()
        )));
    }
    let fields = ReceivedFields::compute(omega, w)?;
    Ok(psi
        .iter()
        .enumerate()
        .map(|(k, p)| fields.mse(p, k, noise_var))
        .collect())
}

/// Weighted-MMSE surrogate `Σ log2 ρ_k − (1/ln2) Σ ρ_k E_k + K/ln2`.
pub fn surrogate_from_mse(rho: &[f64], mse: &[f64]) -> Result<f64> {
    if rho.len() != mse.len() {
        return Err(Error::Contract(format!(
            "{} weights for {} users",
            rho.len(),
            mse.len()
        )));
    }
    if let Some(bad) = rho.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Contract(format!("MSE weights must be positive, got {bad}")));
    }
    let k = rho.len() as f64;
    let logs: f64 = rho.iter().map(|r| r.log2()).sum();
    let weighted: f64 = rho.iter().zip(mse).map(|(r, e)| r * e).sum();
    Ok(logs - weighted / LN_2 + k / LN_2)
}

pub fn surrogate(
    rho: &[f64],
    psi: &[CVec3],
    w: &PatternCoefficients,
    omega: &ChannelProjection,
    noise_var: f64,
) -> Result<f64> {
    surrogate_from_mse(rho, &mse_all(psi, omega, w, noise_var)?)
}

/// `h_k`: the stack of `Ω_{k,n}^H ψ_k` in index order, length `3 N_F`.
pub fn effective_channel(omega_k: &[CMat3], psi_k: &CVec3) -> DVector<Complex64> {
    DVector::from_iterator(
        3 * omega_k.len(),
        omega_k
            .iter()
            .flat_map(|m| (m.adjoint() * psi_k).into_iter().copied().collect::<Vec<_>>()),
    )
}
