//! Alternating weighted-MMSE optimizer over (ρ, ψ, w).
//!
//! Each round fixes two blocks and solves for the third in closed form:
//!
//! 1. `ρ_k = 1/E_k`
//! 2. `ψ_k` = the MMSE combiner for the current patterns
//! 3. `w_k = ρ_k (Σ_j ρ_j h_j h_j^H + ζ I)^{-1} h_k`, with `h_k = [Ω_{k,n}^H ψ_k]_n`
//!    and the multiplier `ζ ≥ 0` chosen by bisection so the total power
//!    meets the budget.
//!
//! The normal matrix in step 3 is the same for every user. It is
//! eigendecomposed once per round; the radiated power is then a cheap
//! scalar function of `ζ`, which makes the bisection essentially free.
//!
//! The weighted-MMSE surrogate is non-decreasing across rounds, and at a
//! fixed point it equals the sum-rate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::em::CVec3;
use crate::fourier::{ChannelProjection, PatternCoefficients};
use crate::rate::{check_noise, effective_channel, surrogate_from_mse, CombinerSet, ReceivedFields, WeightSet};
use crate::{Error, Result};

/// Doubling limit when bracketing the power multiplier.
const ZETA_DOUBLING_LIMIT: f64 = 1.606_938_044_258_990_3e60; // 2^200
const BISECTION_ITERS: usize = 200;
/// Eigenvalues below this fraction of the largest are treated as exact zeros.
const NULL_EIGEN_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub bisect_tol: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for OptSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-4,
            bisect_tol: 1e-12,
            seed: 0,
        }
    }
}

impl OptSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("optimizer.max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "optimizer.rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if !(self.bisect_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "optimizer.bisect_tol must be positive, got {}",
                self.bisect_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub surrogate: f64,
    pub sum_rate: f64,
}

#[derive(Debug, Clone)]
pub struct OptState {
    pub w: PatternCoefficients,
    pub psi: CombinerSet,
    pub rho: WeightSet,
    pub iter: usize,
    pub trace: Vec<TraceEntry>,
    /// Multiplier from the most recent pattern update.
    pub zeta: f64,
    pub converged: bool,
}

/// Everything the optimizer needs from a scenario.
#[derive(Debug, Clone)]
pub struct Problem {
    pub omega: ChannelProjection,
    pub noise_var: f64,
    pub power: f64,
}

impl Problem {
    pub fn new(omega: ChannelProjection, noise_var: f64, power: f64) -> Result<Self> {
        check_noise(noise_var)?;
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "power budget must be positive, got {power}"
            )));
        }
        if omega.num_users() == 0 || omega.num_indices() == 0 {
            return Err(Error::InvalidConfig(
                "need at least one user and one basis function".into(),
            ));
        }
        Ok(Self {
            omega,
            noise_var,
            power,
        })
    }

    pub fn num_users(&self) -> usize {
        self.omega.num_users()
    }
}

fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Random start: i.i.d. complex Gaussian coefficients scaled to the full
/// power budget, unit-norm Gaussian combiners, unit weights.
pub fn init_state(num_users: usize, num_indices: usize, power: f64, seed: u64) -> OptState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..num_users)
        .map(|_| {
            (0..num_indices)
                .map(|_| CVec3::from_fn(|_, _| complex_gaussian(&mut rng)))
                .collect()
        })
        .collect();
    let mut w = PatternCoefficients::new(users).expect("rectangular by construction");
    let current = w.power();
    if current > 0.0 {
        w.scale((power / current).sqrt());
    }
    let psi = (0..num_users)
        .map(|_| {
            let v = CVec3::from_fn(|_, _| complex_gaussian(&mut rng));
            v.unscale(v.norm())
        })
        .collect();
    OptState {
        w,
        psi,
        rho: vec![1.0; num_users],
        iter: 0,
        trace: Vec::new(),
        zeta: 0.0,
        converged: false,
    }
}

/// `ρ_k = 1/E_k` for the current combiners and patterns.
pub fn update_rho(state: &OptState, problem: &Problem) -> Result<WeightSet> {
    let fields = ReceivedFields::compute(&problem.omega, &state.w)?;
    state
        .psi
        .iter()
        .enumerate()
        .map(|(k, psi_k)| {
            let e = fields.mse(psi_k, k, problem.noise_var);
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Numeric(format!("MSE of user {k} is {e}; cannot invert")));
            }
            Ok(1.0 / e)
        })
        .collect()
}

/// MMSE combiners `ψ_k = (Σ_j α_{kj} α_{kj}^H + σ² I)^{-1} α_k`.
pub fn update_psi(state: &OptState, problem: &Problem) -> Result<CombinerSet> {
    let fields = ReceivedFields::compute(&problem.omega, &state.w)?;
    (0..fields.num_users())
        .map(|k| {
            let chol = fields
                .total_covariance(k, problem.noise_var)
                .cholesky()
                .ok_or_else(|| Error::Numeric(format!("receive covariance of user {k} is singular")))?;
            Ok(chol.solve(&fields.desired(k)))
        })
        .collect()
}

/// Combiner update with the weights left in: `A_k^{-1} (ρ_k α_k)` where
/// `A_k = ρ_k (Σ_j α_{kj} α_{kj}^H + σ² I)`. Equal to [`update_psi`].
pub fn update_psi_weighted(state: &OptState, problem: &Problem) -> Result<CombinerSet> {
    let fields = ReceivedFields::compute(&problem.omega, &state.w)?;
    (0..fields.num_users())
        .map(|k| {
            let rho = Complex64::from(state.rho[k]);
            let a = fields.total_covariance(k, problem.noise_var) * rho;
            let inv = a
                .try_inverse()
                .ok_or_else(|| Error::Numeric(format!("A_{k} is singular")))?;
            Ok(inv * (fields.desired(k) * rho))
        })
        .collect()
}

/// `h_k` for every user.
pub fn effective_channels(omega: &ChannelProjection, psi: &[CVec3]) -> Vec<DVector<Complex64>> {
    psi.iter()
        .enumerate()
        .map(|(k, p)| effective_channel(omega.user(k), p))
        .collect()
}

/// Eigendecomposed normal system `Σ_j ρ_j h_j h_j^H = U Λ U^H` with the
/// right-hand sides pre-rotated into the eigenbasis.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    rho: Vec<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<Complex64>,
    /// `U^H h_k` restricted to the retained eigenvalues.
    rotated: Vec<DVector<Complex64>>,
    active: Vec<usize>,
}

impl NormalSystem {
    pub fn new(rho: &[f64], h: &[DVector<Complex64>]) -> Result<Self> {
        if rho.len() != h.len() || h.is_empty() {
            return Err(Error::Contract(format!(
                "{} weights for {} channels",
                rho.len(),
                h.len()
            )));
        }
        let dim = h[0].len();
        if h.iter().any(|v| v.len() != dim) {
            return Err(Error::Contract("effective channels differ in length".into()));
        }
        let gram = gram_matrix(rho, h);
        let eig = SymmetricEigen::new(gram);
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("non-finite eigenvalue in normal matrix".into()));
        }
        let largest = eigenvalues.iter().copied().fold(0.0, f64::max);
        let active: Vec<usize> = (0..dim)
            .filter(|&i| largest > 0.0 && eigenvalues[i] > NULL_EIGEN_RATIO * largest)
            .collect();
        let u_h = eig.eigenvectors.adjoint();
        let rotated = h.iter().map(|hk| &u_h * hk).collect();
        Ok(Self {
            rho: rho.to_vec(),
            eigenvalues,
            eigenvectors: eig.eigenvectors,
            rotated,
            active,
        })
    }

    /// Total power `Σ_k ‖w_k(ζ)‖²`.
    pub fn power(&self, zeta: f64) -> f64 {
        self.rotated
            .iter()
            .zip(&self.rho)
            .map(|(c, rho)| {
                let s: f64 = self
                    .active
                    .iter()
                    .map(|&i| c[i].norm_sqr() / (self.eigenvalues[i] + zeta).powi(2))
                    .sum();
                rho * rho * s
            })
            .sum()
    }

    /// `w_k(ζ) = ρ_k (Σ_j ρ_j h_j h_j^H + ζ I)^{-1} h_k` for every user. At
    /// `ζ = 0` this is the minimum-norm solution.
    pub fn solve(&self, zeta: f64) -> Vec<DVector<Complex64>> {
        let dim = self.eigenvalues.len();
        self.rotated
            .iter()
            .zip(&self.rho)
            .map(|(c, &rho)| {
                let mut scaled = DVector::zeros(dim);
                for &i in &self.active {
                    scaled[i] = c[i] * (rho / (self.eigenvalues[i] + zeta));
                }
                &self.eigenvectors * scaled
            })
            .collect()
    }
}

pub(crate) fn gram_matrix(rho: &[f64], h: &[DVector<Complex64>]) -> DMatrix<Complex64> {
    let dim = h.first().map(|v| v.len()).unwrap_or(0);
    let mut gram = DMatrix::zeros(dim, dim);
    for (hk, &r) in h.iter().zip(rho) {
        gram.ger(Complex64::from(r), hk, &hk.conjugate(), Complex64::from(1.0));
    }
    gram
}

/// Smallest `ζ ≥ 0` whose solution fits the power budget.
///
/// Returns 0 when the unconstrained solution already fits. Otherwise an
/// upper bracket is found by doubling from 1 and the bracket is bisected
/// until `(P − power(ζ))/P ≤ tol`. The returned value is always on the
/// feasible side.
pub fn solve_zeta(system: &NormalSystem, power_budget: f64, tol: f64) -> Result<f64> {
    if !(power_budget > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "power budget must be positive, got {power_budget}"
        )));
    }
    if system.power(0.0) <= power_budget {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while system.power(hi) > power_budget {
        lo = hi;
        hi *= 2.0;
        if hi > ZETA_DOUBLING_LIMIT {
            return Err(Error::Numeric(
                "power multiplier exceeded 2^200 while bracketing".into(),
            ));
        }
    }
    for _ in 0..BISECTION_ITERS {
        if (power_budget - system.power(hi)) / power_budget <= tol {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if system.power(mid) > power_budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (power_budget - system.power(hi)) / power_budget <= tol {
        Ok(hi)
    } else {
        Err(Error::Optimizer(format!(
            "multiplier bisection stalled at zeta={hi:e} with power {:e} (budget {power_budget:e})",
            system.power(hi)
        )))
    }
}

#[derive(Debug, Clone)]
pub struct WUpdate {
    pub w: PatternCoefficients,
    pub zeta: f64,
    pub h: Vec<DVector<Complex64>>,
}

/// Power-constrained pattern update for fixed weights and combiners.
pub fn update_w(state: &OptState, problem: &Problem, bisect_tol: f64) -> Result<WUpdate> {
    let h = effective_channels(&problem.omega, &state.psi);
    let system = NormalSystem::new(&state.rho, &h)?;
    let zeta = solve_zeta(&system, problem.power, bisect_tol)?;
    let w = PatternCoefficients::from_stacked(&system.solve(zeta))?;
    Ok(WUpdate { w, zeta, h })
}

/// Replace ψ by the MMSE combiners for the current patterns, then ρ by the
/// matching inverse MSEs. Afterwards the surrogate equals the sum-rate.
pub fn refresh_fixed_point(state: &mut OptState, problem: &Problem) -> Result<()> {
    state.psi = update_psi(state, problem)?;
    state.rho = update_rho(state, problem)?;
    Ok(())
}

/// Run the alternating optimizer from a seeded random start.
///
/// Stops when `|R'_t − R'_{t−1}| ≤ rel_tol · max(1, |R'_t|)` or after
/// `max_iters` rounds. The returned combiners and weights are refreshed for
/// the final patterns.
pub fn run(problem: &Problem, settings: &OptSettings) -> Result<OptState> {
    settings.validate()?;
    let mut state = init_state(
        problem.num_users(),
        problem.omega.num_indices(),
        problem.power,
        settings.seed,
    );
    for iter in 1..=settings.max_iters {
        state.rho = update_rho(&state, problem)?;
        state.psi = update_psi(&state, problem)?;
        let update = update_w(&state, problem, settings.bisect_tol)?;
        state.w = update.w;
        state.zeta = update.zeta;
        state.iter = iter;

        let fields = ReceivedFields::compute(&problem.omega, &state.w)?;
        let mse: Vec<f64> = state
            .psi
            .iter()
            .enumerate()
            .map(|(k, p)| fields.mse(p, k, problem.noise_var))
            .collect();
        let surrogate = surrogate_from_mse(&state.rho, &mse)?;
        let sum_rate = fields.user_rates(problem.noise_var)?.iter().sum();
        if !surrogate.is_finite() || !f64::is_finite(sum_rate) {
            return Err(Error::Numeric(format!("non-finite objective at iteration {iter}")));
        }
        let previous = state.trace.last().map(|t| t.surrogate);
        state.trace.push(TraceEntry {
            iter,
            surrogate,
            sum_rate,
        });
        if let Some(prev) = previous {
            if (surrogate - prev).abs() <= settings.rel_tol * surrogate.abs().max(1.0) {
                state.converged = true;
                break;
            }
        }
    }
    refresh_fixed_point(&mut state, problem)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::CMat3;
    use crate::rate::{mse_all, sum_rate, surrogate};
    use approx::assert_relative_eq;

    fn identity_problem(noise: f64, power: f64) -> Problem {
        let omega = ChannelProjection::from_blocks(vec![vec![CMat3::identity()]]).unwrap();
        Problem::new(omega, noise, power).unwrap()
    }

    #[test]
    fn init_is_seeded_and_full_power() {
        let a = init_state(4, 9, 2.5e-3, 7);
        let b = init_state(4, 9, 2.5e-3, 7);
        let c = init_state(4, 9, 2.5e-3, 8);
        assert_eq!(a.w, b.w);
        assert_eq!(a.psi, b.psi);
        assert_ne!(a.w, c.w);
        assert_relative_eq!(a.w.power(), 2.5e-3, max_relative = 1e-12);
        assert_eq!(a.rho, vec![1.0; 4]);
        for p in &a.psi {
            assert_relative_eq!(p.norm(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn rho_is_inverse_mse() {
        let problem = identity_problem(0.25, 1.0);
        let mut state = init_state(1, 1, 1.0, 0);
        state.psi = vec![CVec3::zeros()];
        assert_eq!(update_rho(&state, &problem).unwrap(), vec![1.0]);

        // |1 − p|² + σ² p² = 0.5 with σ² = 0.25
        let p = (2.0 - 1.5f64.sqrt()) / 2.5;
        state.w = PatternCoefficients::new(vec![vec![CVec3::x().map(Complex64::from)]]).unwrap();
        state.psi = vec![CVec3::x().map(Complex64::from) * Complex64::from(p)];
        assert_relative_eq!(update_rho(&state, &problem).unwrap()[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn psi_examples() {
        let problem = identity_problem(0.3, 1.0);
        let mut state = init_state(1, 1, 1.0, 3);
        state.w = PatternCoefficients::zeros(1, 1);
        assert_eq!(update_psi(&state, &problem).unwrap(), vec![CVec3::zeros()]);

        let state = init_state(1, 1, 1.0, 4);
        let w = state.w.user(0)[0];
        let expected = w / Complex64::from(w.norm_squared() + 0.3);
        let psi = update_psi(&state, &problem).unwrap();
        assert!((psi[0] - expected).norm() < 1e-14);
    }

    #[test]
    fn weighted_and_cancelled_psi_agree() {
        let omega = ChannelProjection::from_blocks(
            (0..3)
                .map(|k| {
                    (0..4)
                        .map(|n| CMat3::from_fn(|i, j| Complex64::new((i + k) as f64 - n as f64, (j * n) as f64 * 0.3)))
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        let problem = Problem::new(omega, 0.2, 0.5).unwrap();
        let mut state = init_state(3, 4, 0.5, 5);
        state.rho = vec![0.7, 3.0, 12.0];
        let a = update_psi(&state, &problem).unwrap();
        let b = update_psi_weighted(&state, &problem).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-12 * x.norm());
        }
    }

    #[test]
    fn zeta_zero_channel() {
        let h = vec![DVector::zeros(6)];
        let system = NormalSystem::new(&[1.0], &h).unwrap();
        assert_eq!(solve_zeta(&system, 1.0, 1e-12).unwrap(), 0.0);
        assert_eq!(system.solve(0.0)[0], DVector::zeros(6));
    }

    #[test]
    fn zeta_zero_when_interior() {
        // one user, ‖w(0)‖² = ρ²/(ρ|h|²)² · |h|² = 1/|h|² = 0.25
        let h = vec![DVector::from_vec(vec![Complex64::new(2.0, 0.0)])];
        let system = NormalSystem::new(&[1.0], &h).unwrap();
        assert_eq!(solve_zeta(&system, 1.0, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn zeta_scalar_closed_form() {
        for &(rho, h_abs, budget) in &[(1.0, 2.0, 0.01f64), (3.5, 0.2, 0.3), (0.2, 40.0, 1e-6)] {
            let h = vec![DVector::from_vec(vec![Complex64::from_polar(h_abs, 0.7)])];
            let system = NormalSystem::new(&[rho], &h).unwrap();
            // ρ²|h|²/(ρ|h|² + ζ)² = P
            let exact = rho * h_abs / budget.sqrt() - rho * h_abs * h_abs;
            assert!(exact > 0.0);
            let tol = 1e-10;
            let zeta = solve_zeta(&system, budget, tol).unwrap();
            let p = system.power(zeta);
            assert!(p <= budget && (budget - p) / budget <= tol);
            assert_relative_eq!(zeta, exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn orthogonal_channels_decouple() {
        let mut h = vec![DVector::zeros(6), DVector::zeros(6)];
        h[0][0] = Complex64::new(3.0, 0.0);
        h[1][4] = Complex64::new(0.0, 3.0);
        let rho = [1.0, 1.0];
        let system = NormalSystem::new(&rho, &h).unwrap();
        let zeta = solve_zeta(&system, 10.0, 1e-12).unwrap();
        assert_eq!(zeta, 0.0);
        let w = system.solve(zeta);
        for k in 0..2 {
            let parallel = h[k].dotc(&w[k]).norm();
            assert_relative_eq!(parallel, h[k].norm() * w[k].norm(), max_relative = 1e-12);
            assert!(h[1 - k].dotc(&w[k]).norm() < 1e-14);
        }
    }

    #[test]
    fn single_pass_has_one_trace_entry() {
        let problem = identity_problem(0.1, 1.0);
        let settings = OptSettings {
            max_iters: 1,
            ..OptSettings::default()
        };
        let state = run(&problem, &settings).unwrap();
        assert_eq!(state.trace.len(), 1);
        assert_eq!(state.iter, 1);
    }

    #[test]
    fn refreshed_state_sits_at_fixed_point() {
        let problem = identity_problem(0.1, 2.0);
        let state = run(&problem, &OptSettings::default()).unwrap();
        let value = surrogate(&state.rho, &state.psi, &state.w, &problem.omega, problem.noise_var).unwrap();
        let rate = sum_rate(&problem.omega, &state.w, problem.noise_var).unwrap();
        assert_relative_eq!(value, rate, epsilon = 1e-10);
        // single user, identity channel: capacity log2(1 + P/σ²)
        assert_relative_eq!(rate, (1.0f64 + 20.0).log2(), max_relative = 1e-9);
        let mse = mse_all(&state.psi, &problem.omega, &state.w, problem.noise_var).unwrap();
        assert_relative_eq!(state.rho[0] * mse[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn invalid_settings_rejected() {
        let problem = identity_problem(0.1, 1.0);
        for settings in [
            OptSettings {
                max_iters: 0,
                ..Default::default()
            },
            OptSettings {
                rel_tol: 0.0,
                ..Default::default()
            },
            OptSettings {
                bisect_tol: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(run(&problem, &settings), Err(Error::InvalidConfig(_))));
        }
    }
}
