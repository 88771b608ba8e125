//! Truncated Fourier basis on the aperture.
//!
//! A pattern `θ_k(s)` is represented by its coefficients `w_{k,n}` on the
//! basis
//!
//! ```text
//! Ψ_n(s) = exp(j2π(n_x s_x/L_x + n_y s_y/L_y + n_z s_z/L_z)) / √A
//! ```
//!
//! and each receiver's Green function by its projections
//! `Ω_{k,n} = ∫ G_k(s) Ψ_n(s) ds`. With both in hand the received field is
//! `Σ_n Ω_{k,n} w_{j,n}` and the radiated power is `Σ ‖w_{k,n}‖²`.
//!
//! Axes with zero extent carry no phase term and only admit `n = 0` along
//! them.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::em::{green_dyadic, integrate_surface, ApertureGrid, CMat3, CVec3, Extents, Medium, Point3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FourierIndex {
    pub nx: i64,
    pub ny: i64,
    pub nz: i64,
}

impl FourierIndex {
    pub const fn new(nx: i64, ny: i64, nz: i64) -> Self {
        Self { nx, ny, nz }
    }

    /// Sum of absolute components.
    pub fn l1(&self) -> i64 {
        self.nx.abs() + self.ny.abs() + self.nz.abs()
    }
}

/// Ordered set of retained indices, lexicographic in `(n_x, n_y, n_z)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<FourierIndex>,
    caps: [i64; 3],
}

fn axis_range(cap: i64) -> std::ops::RangeInclusive<i64> {
    (-cap).div_euclid(2)..=cap.div_euclid(2)
}

/// Per-axis range `⌊−N/2⌋ ..= ⌊N/2⌋`, i.e. `N + 1` values. For odd `N` the
/// range is one longer on the negative side (`N = 5` gives `−3..=2`).
pub fn index_set(nx: i64, ny: i64, nz: i64) -> Result<IndexSet> {
    if nx < 0 || ny < 0 || nz < 0 {
        return Err(Error::InvalidConfig(format!(
            "truncation caps must be non-negative, got ({nx}, {ny}, {nz})"
        )));
    }
    let mut indices = Vec::with_capacity(((nx + 1) * (ny + 1) * (nz + 1)) as usize);
    for ix in axis_range(nx) {
        for iy in axis_range(ny) {
            for iz in axis_range(nz) {
                indices.push(FourierIndex::new(ix, iy, iz));
            }
        }
    }
    Ok(IndexSet {
        indices,
        caps: [nx, ny, nz],
    })
}

impl IndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn caps(&self) -> [i64; 3] {
        self.caps
    }

    pub fn indices(&self) -> &[FourierIndex] {
        &self.indices
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FourierIndex> {
        self.indices.iter()
    }

    pub fn position(&self, n: &FourierIndex) -> Option<usize> {
        self.indices.binary_search(n).ok()
    }

    /// Largest `|n|` along any axis.
    pub fn max_abs(&self) -> i64 {
        self.indices
            .iter()
            .map(|n| n.nx.abs().max(n.ny.abs()).max(n.nz.abs()))
            .max()
            .unwrap_or(0)
    }
}

fn axis_phase(n: i64, s: f64, l: f64, axis: char) -> Result<f64> {
    if l == 0.0 {
        if n != 0 {
            return Err(Error::Contract(format!(
                "index n_{axis}={n} on an axis with zero extent"
            )));
        }
        return Ok(0.0);
    }
    Ok(n as f64 * s / l)
}

/// Value of `Ψ_n` at aperture point `s`.
pub fn basis_eval(n: &FourierIndex, s: &Point3, extents: &Extents, area: f64) -> Result<Complex64> {
    let cycles = axis_phase(n.nx, s.x, extents.lx, 'x')?
        + axis_phase(n.ny, s.y, extents.ly, 'y')?
        + axis_phase(n.nz, s.z, extents.lz, 'z')?;
    Ok(Complex64::from_polar(1.0 / area.sqrt(), 2.0 * PI * cycles))
}

/// `Ψ_n` sampled at every grid node.
pub fn basis_samples(n: &FourierIndex, grid: &ApertureGrid) -> Result<Vec<Complex64>> {
    let extents = grid.extents();
    grid.nodes
        .iter()
        .map(|s| basis_eval(n, s, &extents, grid.area))
        .collect()
}

/// Green function of one receiver sampled at every grid node.
pub fn green_samples(receiver: &Point3, medium: &Medium, grid: &ApertureGrid) -> Result<Vec<CMat3>> {
    grid.nodes.iter().map(|s| green_dyadic(receiver, s, medium)).collect()
}

/// `Ω_{k,n} = Σ_i weight_i G_k(s_i) Ψ_n(s_i)`.
pub fn project_green(samples: &[CMat3], n: &FourierIndex, grid: &ApertureGrid) -> Result<CMat3> {
    if samples.len() != grid.len() {
        return Err(Error::Contract(format!(
            "{} Green samples for {} grid nodes",
            samples.len(),
            grid.len()
        )));
    }
    let psi = basis_samples(n, grid)?;
    let weighted: Vec<CMat3> = samples.iter().zip(&psi).map(|(g, p)| g * *p).collect();
    integrate_surface(&weighted, grid)
}

/// Projections `Ω_{k,n}` of every receiver's Green function onto the basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProjection {
    blocks: Vec<Vec<CMat3>>,
}

impl ChannelProjection {
    pub fn from_blocks(blocks: Vec<Vec<CMat3>>) -> Result<Self> {
        let n = blocks.first().map(Vec::len).unwrap_or(0);
        if blocks.iter().any(|b| b.len() != n) {
            return Err(Error::Contract(
                "every user needs the same number of projections".into(),
            ));
        }
        Ok(Self { blocks })
    }

    pub fn compute(receivers: &[Point3], medium: &Medium, grid: &ApertureGrid, indices: &IndexSet) -> Result<Self> {
        let blocks = receivers
            .par_iter()
            .map(|r| {
                let samples = green_samples(r, medium, grid)?;
                indices
                    .iter()
                    .map(|n| project_green(&samples, n, grid))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn num_users(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_indices(&self) -> usize {
        self.blocks.first().map(Vec::len).unwrap_or(0)
    }

    pub fn user(&self, k: usize) -> &[CMat3] {
        &self.blocks[k]
    }

    /// Projections restricted to a subset of users, in the given order.
    pub fn select(&self, users: &[usize]) -> Self {
        Self {
            blocks: users.iter().map(|&k| self.blocks[k].clone()).collect(),
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| b.iter().map(|m| m * factor).collect())
                .collect(),
        }
    }
}

/// Coefficients `w_{k,n}`, one 3-vector per user and retained index.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCoefficients {
    users: Vec<Vec<CVec3>>,
}

impl PatternCoefficients {
    pub fn new(users: Vec<Vec<CVec3>>) -> Result<Self> {
        let n = users.first().map(Vec::len).unwrap_or(0);
        if users.iter().any(|u| u.len() != n) {
            return Err(Error::Contract(
                "every user needs the same number of coefficients".into(),
            ));
        }
        Ok(Self { users })
    }

    pub fn zeros(num_users: usize, num_indices: usize) -> Self {
        Self {
            users: vec![vec![CVec3::zeros(); num_indices]; num_users],
        }
    }

    /// Inverse of [`PatternCoefficients::stacked`].
    pub fn from_stacked(stacked: &[DVector<Complex64>]) -> Result<Self> {
        let users = stacked
            .iter()
            .map(|v| {
                if v.len() % 3 != 0 {
                    return Err(Error::Contract(format!(
                        "stacked coefficient length {} is not a multiple of 3",
                        v.len()
                    )));
                }
                Ok(v.as_slice()
                    .chunks_exact(3)
                    .map(|c| CVec3::new(c[0], c[1], c[2]))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(users)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_indices(&self) -> usize {
        self.users.first().map(Vec::len).unwrap_or(0)
    }

    pub fn user(&self, k: usize) -> &[CVec3] {
        &self.users[k]
    }

    pub fn user_mut(&mut self, k: usize) -> &mut [CVec3] {
        &mut self.users[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[CVec3]> {
        self.users.iter().map(Vec::as_slice)
    }

    /// Flattened coefficients of user `k`: index-major, then x, y, z.
    pub fn stacked(&self, k: usize) -> DVector<Complex64> {
        DVector::from_iterator(
            3 * self.num_indices(),
            self.users[k].iter().flat_map(|v| v.iter().copied()),
        )
    }

    pub fn user_power(&self, k: usize) -> f64 {
        self.users[k].iter().map(|v| v.norm_squared()).sum()
    }

    pub fn power(&self) -> f64 {
        coefficient_power(self)
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.users.iter_mut().flatten() {
            *v *= Complex64::from(factor);
        }
    }
}

/// Total radiated power `Σ_k Σ_n ‖w_{k,n}‖²`.
pub fn coefficient_power(w: &PatternCoefficients) -> f64 {
    w.users.iter().flatten().map(|v| v.norm_squared()).sum()
}

/// Pattern `θ_k(s_i) = Σ_n w_{k,n} Ψ_n(s_i)` at every grid node.
pub fn synthesize_pattern(w_k: &[CVec3], grid: &ApertureGrid, indices: &IndexSet) -> Result<Vec<CVec3>> {
    if w_k.len() != indices.len() {
        return Err(Error::Contract(format!(
            "{} coefficients for {} basis functions",
            w_k.len(),
            indices.len()
        )));
    }
    let mut pattern = vec![CVec3::zeros(); grid.len()];
    for (n, w) in indices.iter().zip(w_k) {
        if w.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
            continue;
        }
        for (value, psi) in pattern.iter_mut().zip(basis_samples(n, grid)?) {
            *value += w * psi;
        }
    }
    Ok(pattern)
}

/// Received field `Σ_n Ω_{k,n} w_{j,n}`.
pub fn approx_field(omega_k: &[CMat3], w_j: &[CVec3]) -> Result<CVec3> {
    if omega_k.len() != w_j.len() {
        return Err(Error::Contract(format!(
            "{} projections against {} coefficients",
            omega_k.len(),
            w_j.len()
        )));
    }
    Ok(omega_k
        .iter()
        .zip(w_j)
        .fold(CVec3::zeros(), |acc, (omega, w)| acc + omega * w))
}
