//! Reference schemes for comparison with the optimized patterns.

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::em::CVec3;
use crate::fourier::{ChannelProjection, FourierIndex, IndexSet, PatternCoefficients};
use crate::rate::{check_noise, ReceivedFields};
use crate::{Error, Result};

/// Per-user basis index and polarization for wavenumber-division
/// multiplexing.
#[derive(Debug, Clone, PartialEq)]
pub struct WdmAssignment {
    pub indices: Vec<FourierIndex>,
    pub polarizations: Vec<Vector3<f64>>,
}

impl WdmAssignment {
    /// The `K` lowest spatial frequencies, ordered by
    /// `(|n_x| + |n_y| + |n_z|, n_x, n_y, n_z)`, all with the same
    /// polarization. User `k` gets the `k`-th index.
    pub fn lowest_frequencies(num_users: usize, indices: &IndexSet, polarization: Vector3<f64>) -> Result<Self> {
        if num_users > indices.len() {
            return Err(Error::InvalidConfig(format!(
                "{num_users} users but only {} basis functions",
                indices.len()
            )));
        }
        let norm = polarization.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidConfig("WDM polarization must be a nonzero vector".into()));
        }
        let mut order: Vec<FourierIndex> = indices.indices().to_vec();
        order.sort_by_key(|n| (n.l1(), n.nx, n.ny, n.nz));
        order.truncate(num_users);
        Ok(Self {
            indices: order,
            polarizations: vec![polarization / norm; num_users],
        })
    }

    pub fn num_users(&self) -> usize {
        self.indices.len()
    }
}

/// Equal-power single-basis patterns for the given assignment.
pub fn wdm_patterns_for(assignment: &WdmAssignment, indices: &IndexSet, power: f64) -> Result<PatternCoefficients> {
    let k = assignment.num_users();
    if k == 0 {
        return Ok(PatternCoefficients::zeros(0, indices.len()));
    }
    let mut seen = assignment.indices.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != k {
        return Err(Error::InvalidConfig("WDM indices must be distinct".into()));
    }
    let amplitude = Complex64::from((power / k as f64).sqrt());
    let mut w = PatternCoefficients::zeros(k, indices.len());
    for (user, (n, pol)) in assignment.indices.iter().zip(&assignment.polarizations).enumerate() {
        let pos = indices
            .position(n)
            .ok_or_else(|| Error::InvalidConfig(format!("WDM index {n:?} is not in the retained set")))?;
        w.user_mut(user)[pos] = pol.map(Complex64::from) * amplitude;
    }
    Ok(w)
}

/// Default WDM baseline: lowest spatial frequencies, x-polarized, equal power.
pub fn wdm_patterns(num_users: usize, indices: &IndexSet, power: f64) -> Result<PatternCoefficients> {
    let assignment = WdmAssignment::lowest_frequencies(num_users, indices, Vector3::x())?;
    wdm_patterns_for(&assignment, indices, power)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmseEvaluation {
    pub sum_rate: f64,
    pub per_user_rates: Vec<f64>,
    /// MSE of each user under its MMSE combiner.
    pub mse: Vec<f64>,
    pub combiners: Vec<CVec3>,
}

/// Sum-rate of fixed patterns together with the per-user MSE an MMSE
/// receiver would achieve.
pub fn evaluate_with_mmse(
    w: &PatternCoefficients,
    omega: &ChannelProjection,
    noise_var: f64,
) -> Result<MmseEvaluation> {
    check_noise(noise_var)?;
    let fields = ReceivedFields::compute(omega, w)?;
    let per_user_rates = fields.user_rates(noise_var)?;
    let mut combiners = Vec::with_capacity(w.num_users());
    let mut mse = Vec::with_capacity(w.num_users());
    for k in 0..fields.num_users() {
        let psi = fields
            .total_covariance(k, noise_var)
            .cholesky()
            .ok_or_else(|| Error::Numeric(format!("receive covariance of user {k} is singular")))?
            .solve(&fields.desired(k));
        mse.push(fields.mse(&psi, k, noise_var));
        combiners.push(psi);
    }
    Ok(MmseEvaluation {
        sum_rate: per_user_rates.iter().sum(),
        per_user_rates,
        mse,
        combiners,
    })
}

/// Per-user rates with every interference term removed: `log2(1 + ‖α_k‖²/σ²)`.
pub fn interference_free_rates(w: &PatternCoefficients, omega: &ChannelProjection, noise_var: f64) -> Result<Vec<f64>> {
    check_noise(noise_var)?;
    let fields = ReceivedFields::compute(omega, w)?;
    Ok((0..fields.num_users())
        .map(|k| (1.0 + fields.desired(k).norm_squared() / noise_var).log2())
        .collect())
}

pub fn interference_free_rate(w: &PatternCoefficients, omega: &ChannelProjection, noise_var: f64) -> Result<f64> {
    Ok(interference_free_rates(w, omega, noise_var)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{integrate_surface, ApertureGrid, CMat3};
    use crate::fourier::{coefficient_power, index_set, synthesize_pattern, tests::random_coefficients};
    use crate::rate::sum_rate;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_projection(users: usize, n: usize, seed: u64) -> ChannelProjection {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ChannelProjection::from_blocks(
            (0..users)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            CMat3::from_fn(|_, _| {
                                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                            })
                        })
                        .collect()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn lowest_frequency_order() {
        let set = index_set(5, 5, 0).unwrap();
        let a = WdmAssignment::lowest_frequencies(8, &set, Vector3::x()).unwrap();
        let expected = [(0, 0), (-1, 0), (0, -1), (0, 1), (1, 0), (-2, 0), (-1, -1), (-1, 1)];
        let got: Vec<(i64, i64)> = a.indices.iter().map(|n| (n.nx, n.ny)).collect();
        assert_eq!(got, expected);
        assert!(WdmAssignment::lowest_frequencies(37, &set, Vector3::x()).is_err());
        assert!(WdmAssignment::lowest_frequencies(2, &set, Vector3::zeros()).is_err());
    }

    #[test]
    fn wdm_power_split() {
        let set = index_set(5, 5, 0).unwrap();
        let w = wdm_patterns(8, &set, 1e-4).unwrap();
        assert_relative_eq!(coefficient_power(&w), 1e-4, max_relative = 1e-14);
        for k in 0..8 {
            assert_relative_eq!(w.user_power(k), 1e-4 / 8.0, max_relative = 1e-14);
        }
        let single = wdm_patterns(1, &set, 2.0).unwrap();
        let nonzero: Vec<_> = single.user(0).iter().filter(|v| v.norm() > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_relative_eq!(nonzero[0][0].re, 2f64.sqrt());
    }

    #[test]
    fn wdm_patterns_are_orthogonal_on_aperture() {
        let grid = ApertureGrid::midpoint(0.5, 0.5, 1024).unwrap();
        let set = index_set(5, 5, 0).unwrap();
        let w = wdm_patterns(8, &set, 1e-4).unwrap();
        let patterns: Vec<Vec<CVec3>> = (0..8)
            .map(|k| synthesize_pattern(w.user(k), &grid, &set).unwrap())
            .collect();
        for k in 0..8 {
            for j in 0..8 {
                let prod: Vec<Complex64> = patterns[k].iter().zip(&patterns[j]).map(|(a, b)| a.dotc(b)).collect();
                let ip = integrate_surface(&prod, &grid).unwrap();
                if k == j {
                    assert_relative_eq!(ip.re, 1e-4 / 8.0, max_relative = 1e-12);
                } else {
                    assert!(ip.norm() <= 1e-12 * 1e-4 / 8.0);
                }
            }
        }
    }

    #[test]
    fn evaluate_zero_patterns() {
        let omega = random_projection(3, 4, 1);
        let eval = evaluate_with_mmse(&PatternCoefficients::zeros(3, 4), &omega, 0.1).unwrap();
        assert_eq!(eval.sum_rate, 0.0);
        assert_eq!(eval.mse, vec![1.0; 3]);
    }

    #[test]
    fn mmse_relation_to_rate() {
        // MMSE error and SINR: E_k = 1/(1 + SINR_k)
        let omega = random_projection(4, 5, 2);
        let w = random_coefficients(4, 5, 3);
        let eval = evaluate_with_mmse(&w, &omega, 0.5).unwrap();
        for (e, r) in eval.mse.iter().zip(&eval.per_user_rates) {
            assert_relative_eq!(-e.log2(), *r, max_relative = 1e-10);
        }
    }

    #[test]
    fn interference_free_bounds_sum_rate() {
        for seed in 0..20 {
            let omega = random_projection(4, 6, seed);
            let w = random_coefficients(4, 6, seed + 100);
            let bound = interference_free_rate(&w, &omega, 0.2).unwrap();
            assert!(bound >= sum_rate(&omega, &w, 0.2).unwrap());
        }
        let omega = random_projection(1, 6, 5);
        let w = random_coefficients(1, 6, 6);
        assert_relative_eq!(
            interference_free_rate(&w, &omega, 0.2).unwrap(),
            sum_rate(&omega, &w, 0.2).unwrap(),
            max_relative = 1e-13
        );
    }
}
