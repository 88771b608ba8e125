//! Scenario configuration, experiment orchestration and CSV export.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{evaluate_with_mmse, interference_free_rates, wdm_patterns_for, WdmAssignment};
use crate::em::{integrate_surface, ApertureGrid, Medium, Point3};
use crate::fourier::{index_set, synthesize_pattern, ChannelProjection, IndexSet, PatternCoefficients};
use crate::optimizer::{self, OptSettings, Problem, TraceEntry};
use crate::rate::surrogate_from_mse;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApertureConfig {
    #[serde(default = "rectangle")]
    pub shape: String,
    pub lx_m: f64,
    pub ly_m: f64,
}

fn rectangle() -> String {
    "rectangle".into()
}

/// Basis counts per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub nx: i64,
    pub ny: i64,
    pub nz: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WdmConfig {
    /// Polarization shared by every WDM pattern.
    pub polarization: [f64; 3],
}

impl Default for WdmConfig {
    fn default() -> Self {
        Self {
            polarization: [1.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub frequency_hz: f64,
    pub impedance_ohm: f64,
    pub power_a2: f64,
    pub noise_v2m2: f64,
    pub quadrature_samples: usize,
    pub seed: u64,
    /// Optional; must equal the receiver count when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
    pub receivers_m: Vec<[f64; 3]>,
    pub aperture: ApertureConfig,
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub optimizer: OptSettings,
    #[serde(default)]
    pub wdm: WdmConfig,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl ScenarioConfig {
    pub fn num_users(&self) -> usize {
        self.receivers_m.len()
    }

    pub fn receivers(&self) -> Vec<Point3> {
        self.receivers_m.iter().map(|r| Point3::new(r[0], r[1], r[2])).collect()
    }

    pub fn medium(&self) -> Result<Medium> {
        Medium::new(self.frequency_hz, self.impedance_ohm)
    }

    pub fn validate(&self) -> Result<()> {
        positive("frequency_hz", self.frequency_hz)?;
        positive("impedance_ohm", self.impedance_ohm)?;
        positive("power_a2", self.power_a2)?;
        positive("noise_v2m2", self.noise_v2m2)?;
        if self.aperture.shape != "rectangle" {
            return Err(Error::InvalidConfig(format!(
                "aperture.shape: only \"rectangle\" is supported, got {:?}",
                self.aperture.shape
            )));
        }
        positive("aperture.lx_m", self.aperture.lx_m)?;
        positive("aperture.ly_m", self.aperture.ly_m)?;
        let t = self.truncation;
        if t.nx < 1 || t.ny < 1 {
            return Err(Error::InvalidConfig(format!(
                "truncation.nx and truncation.ny must be at least 1, got ({}, {})",
                t.nx, t.ny
            )));
        }
        if t.nz != 0 {
            return Err(Error::InvalidConfig(format!(
                "truncation.nz must be 0 for a planar aperture, got {}",
                t.nz
            )));
        }
        let side = (self.quadrature_samples as f64).sqrt().round() as usize;
        if self.quadrature_samples == 0 || side * side != self.quadrature_samples {
            return Err(Error::InvalidConfig(format!(
                "quadrature_samples must be a positive perfect square, got {}",
                self.quadrature_samples
            )));
        }
        if self.receivers_m.is_empty() {
            return Err(Error::InvalidConfig(
                "receivers_m must list at least one receiver".into(),
            ));
        }
        if let Some(k) = self.users {
            if k != self.receivers_m.len() {
                return Err(Error::InvalidConfig(format!(
                    "users = {k} but receivers_m lists {} receivers",
                    self.receivers_m.len()
                )));
            }
        }
        let medium = self
            .medium()
            .map_err(|e| Error::InvalidConfig(format!("frequency_hz: {e}")))?;
        let grid = ApertureGrid::midpoint(self.aperture.lx_m, self.aperture.ly_m, self.quadrature_samples)?;
        for (i, r) in self.receivers().iter().enumerate() {
            if !(r.x.is_finite() && r.y.is_finite() && r.z.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "receivers_m[{i}] has a non-finite coordinate"
                )));
            }
            let d = grid.distance_to(r);
            if d < medium.min_distance() {
                return Err(Error::InvalidConfig(format!(
                    "receivers_m[{i}] is {d:e} m from the aperture, minimum is {:e} m",
                    medium.min_distance()
                )));
            }
        }
        self.optimizer.validate()?;
        let p = Vector3::from(self.wdm.polarization);
        if !(p.norm() > 0.0) || !p.norm().is_finite() {
            return Err(Error::InvalidConfig(
                "wdm.polarization must be a nonzero finite vector".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Copy with a square aperture of the given area.
    pub fn with_area(&self, area_m2: f64) -> Result<Self> {
        positive("area", area_m2)?;
        let mut config = self.clone();
        config.aperture.lx_m = area_m2.sqrt();
        config.aperture.ly_m = area_m2.sqrt();
        config.validate()?;
        Ok(config)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A validated configuration with its channel projection computed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub medium: Medium,
    pub grid: ApertureGrid,
    pub indices: IndexSet,
    pub receivers: Vec<Point3>,
    pub omega: ChannelProjection,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let medium = config.medium()?;
        let grid = ApertureGrid::midpoint(config.aperture.lx_m, config.aperture.ly_m, config.quadrature_samples)?;
        let t = config.truncation;
        let indices = index_set(t.nx, t.ny, t.nz)?;
        let receivers = config.receivers();
        let omega = ChannelProjection::compute(&receivers, &medium, &grid, &indices)?;
        Ok(Self {
            config: config.clone(),
            medium,
            grid,
            indices,
            receivers,
            omega,
        })
    }

    pub fn area(&self) -> f64 {
        self.grid.area
    }

    pub fn problem(&self) -> Problem {
        Problem {
            omega: self.omega.clone(),
            noise_var: self.config.noise_v2m2,
            power: self.config.power_a2,
        }
    }

    pub fn settings(&self, seed: u64) -> OptSettings {
        OptSettings {
            seed,
            ..self.config.optimizer
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Pdm,
    Wdm,
    InterferenceFree,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Pdm, Scheme::Wdm, Scheme::InterferenceFree];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Pdm => "pdm",
            Scheme::Wdm => "wdm",
            Scheme::InterferenceFree => "ifree",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pdm" => Ok(Scheme::Pdm),
            "wdm" => Ok(Scheme::Wdm),
            "ifree" | "interference-free" => Ok(Scheme::InterferenceFree),
            _ => Err(Error::InvalidConfig(format!(
                "unknown scheme {s:?}; expected pdm, wdm or ifree"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scheme: Scheme,
    pub area_m2: f64,
    pub seed: u64,
    pub sum_rate: f64,
    pub per_user_rates: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub wall_time_s: f64,
    pub patterns: PatternCoefficients,
}

fn pdm_result(scenario: &Scenario, seed: u64) -> Result<RunResult> {
    let start = Instant::now();
    let problem = scenario.problem();
    let state = optimizer::run(&problem, &scenario.settings(seed))?;
    let per_user_rates = crate::rate::user_rates(&problem.omega, &state.w, problem.noise_var)?;
    Ok(RunResult {
        scheme: Scheme::Pdm,
        area_m2: scenario.area(),
        seed,
        sum_rate: per_user_rates.iter().sum(),
        per_user_rates,
        iterations: state.iter,
        converged: state.converged,
        trace: state.trace,
        wall_time_s: start.elapsed().as_secs_f64(),
        patterns: state.w,
    })
}

/// Interference-free rates of the patterns in a PDM result.
fn ifree_from(pdm: &RunResult, scenario: &Scenario) -> Result<RunResult> {
    let start = Instant::now();
    let per_user_rates = interference_free_rates(&pdm.patterns, &scenario.omega, scenario.config.noise_v2m2)?;
    Ok(RunResult {
        scheme: Scheme::InterferenceFree,
        sum_rate: per_user_rates.iter().sum(),
        per_user_rates,
        wall_time_s: pdm.wall_time_s + start.elapsed().as_secs_f64(),
        ..pdm.clone()
    })
}

fn wdm_result(scenario: &Scenario, seed: u64) -> Result<RunResult> {
    let start = Instant::now();
    let config = &scenario.config;
    let assignment = WdmAssignment::lowest_frequencies(
        config.num_users(),
        &scenario.indices,
        Vector3::from(config.wdm.polarization),
    )?;
    let w = wdm_patterns_for(&assignment, &scenario.indices, config.power_a2)?;
    let eval = evaluate_with_mmse(&w, &scenario.omega, config.noise_v2m2)?;
    let rho: Vec<f64> = eval.mse.iter().map(|e| 1.0 / e).collect();
    let surrogate = surrogate_from_mse(&rho, &eval.mse)?;
    Ok(RunResult {
        scheme: Scheme::Wdm,
        area_m2: scenario.area(),
        seed,
        sum_rate: eval.sum_rate,
        per_user_rates: eval.per_user_rates,
        iterations: 0,
        converged: true,
        trace: vec![TraceEntry {
            iter: 0,
            surrogate,
            sum_rate: eval.sum_rate,
        }],
        wall_time_s: start.elapsed().as_secs_f64(),
        patterns: w,
    })
}

/// Run one scheme. The interference-free scheme optimizes with PDM and then
/// drops the interference terms from the rate of the resulting patterns.
pub fn run_experiment(scenario: &Scenario, scheme: Scheme, seed: u64) -> Result<RunResult> {
    match scheme {
        Scheme::Pdm => pdm_result(scenario, seed),
        Scheme::Wdm => wdm_result(scenario, seed),
        Scheme::InterferenceFree => ifree_from(&pdm_result(scenario, seed)?, scenario),
    }
}

/// All three schemes for every area (square aperture `L = √A`) and seed.
/// Rows are ordered by area, then scheme, then seed.
pub fn sweep_aperture(config: &ScenarioConfig, areas: &[f64], seeds: &[u64]) -> Result<Vec<RunResult>> {
    let mut rows = Vec::with_capacity(areas.len() * seeds.len() * Scheme::ALL.len());
    for &area in areas {
        let scenario = Scenario::build(&config.with_area(area)?)?;
        let per_seed = seeds
            .par_iter()
            .map(|&seed| {
                let pdm = pdm_result(&scenario, seed)?;
                let ifree = ifree_from(&pdm, &scenario)?;
                let wdm = wdm_result(&scenario, seed)?;
                Ok([pdm, wdm, ifree])
            })
            .collect::<Result<Vec<_>>>()?;
        for scheme in 0..Scheme::ALL.len() {
            // the requested area, free of the roundoff in √A·√A
            rows.extend(per_seed.iter().map(|r| RunResult {
                area_m2: area,
                ..r[scheme].clone()
            }));
        }
    }
    Ok(rows)
}

pub const RESULTS_HEADER: &str = "area_m2,scheme,seed,sum_rate_bpshz,iterations,converged,wall_time_s";
pub const TRACE_HEADER: &str = "iter,surrogate,sum_rate";
pub const PATTERN_HEADER: &str = "s_x,s_y,component,re,im,amp_norm,phase";
pub const ORTHOGONALITY_HEADER: &str = "k,j,overlap";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn results_csv(results: &[RunResult], timing: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in results {
        let wall = if timing { r.wall_time_s } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.area_m2, r.scheme, r.seed, r.sum_rate, r.iterations, r.converged, wall
        );
    }
    out
}

pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for t in trace {
        let _ = writeln!(out, "{},{},{}", t.iter, t.surrogate, t.sum_rate);
    }
    out
}

/// Write `results.csv` and one `trace_<scheme>_<seed>.csv` per result.
/// When the results span several areas the traces go to `area_<A>/`
/// subdirectories. Wall times are written as 0 unless `timing` is set, so
/// that the files are byte-deterministic by default. Returns the paths
/// written.
pub fn export_results(results: &[RunResult], out_dir: &Path, timing: bool) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let results_path = out_dir.join("results.csv");
    write_file(&results_path, &results_csv(results, timing))?;
    let mut written = vec![results_path];

    let areas: BTreeSet<u64> = results.iter().map(|r| r.area_m2.to_bits()).collect();
    for r in results {
        let dir = if areas.len() > 1 {
            out_dir.join(format!("area_{}", r.area_m2))
        } else {
            out_dir.to_path_buf()
        };
        ensure_dir(&dir)?;
        let path = dir.join(format!("trace_{}_{}.csv", r.scheme, r.seed));
        write_file(&path, &trace_csv(&r.trace))?;
        written.push(path);
    }
    Ok(written)
}

/// Principal phase in (−π, π]; zero maps to 0.
pub fn principal_phase(z: Complex64) -> f64 {
    if z.norm() == 0.0 {
        return 0.0;
    }
    let p = z.arg();
    if p == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        p
    }
}

const COMPONENTS: [&str; 3] = ["x", "y", "z"];

pub fn pattern_csv(w_k: &[crate::em::CVec3], grid: &ApertureGrid, indices: &IndexSet) -> Result<String> {
    let theta = synthesize_pattern(w_k, grid, indices)?;
    let mut peak = [0.0f64; 3];
    for t in &theta {
        for (c, p) in peak.iter_mut().enumerate() {
            *p = p.max(t[c].norm());
        }
    }
    let mut out = String::from(PATTERN_HEADER);
    out.push('\n');
    for (node, t) in grid.nodes.iter().zip(&theta) {
        for c in 0..3 {
            let v = t[c];
            let amp = if peak[c] > 0.0 { v.norm() / peak[c] } else { 0.0 };
            let phase = if peak[c] > 0.0 { principal_phase(v) } else { 0.0 };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                node.x, node.y, COMPONENTS[c], v.re, v.im, amp, phase
            );
        }
    }
    Ok(out)
}

/// Normalized aperture inner products `|⟨θ_k, θ_j⟩|/(‖θ_k‖‖θ_j‖)` for
/// every pair `k < j`, by quadrature on `grid`.
pub fn pattern_overlaps(
    w: &PatternCoefficients,
    grid: &ApertureGrid,
    indices: &IndexSet,
) -> Result<Vec<(usize, usize, f64)>> {
    let patterns = w
        .iter()
        .map(|w_k| synthesize_pattern(w_k, grid, indices))
        .collect::<Result<Vec<_>>>()?;
    let inner = |a: &[crate::em::CVec3], b: &[crate::em::CVec3]| -> Result<Complex64> {
        let prod: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x.dotc(y)).collect();
        integrate_surface(&prod, grid)
    };
    let norms = patterns
        .iter()
        .map(|p| inner(p, p).map(|v| v.re.max(0.0).sqrt()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for k in 0..patterns.len() {
        for j in (k + 1)..patterns.len() {
            let denom = norms[k] * norms[j];
            let overlap = if denom > 0.0 {
                inner(&patterns[k], &patterns[j])?.norm() / denom
            } else {
                0.0
            };
            out.push((k, j, overlap));
        }
    }
    Ok(out)
}

pub fn mean_overlap(overlaps: &[(usize, usize, f64)]) -> f64 {
    if overlaps.is_empty() {
        0.0
    } else {
        overlaps.iter().map(|o| o.2).sum::<f64>() / overlaps.len() as f64
    }
}

/// `orthogonality.csv`: one row per user pair, then a final `all,all,<mean>`
/// row.
pub fn orthogonality_csv(overlaps: &[(usize, usize, f64)]) -> String {
    let mut out = String::from(ORTHOGONALITY_HEADER);
    out.push('\n');
    for (k, j, o) in overlaps {
        let _ = writeln!(out, "{k},{j},{o}");
    }
    let _ = writeln!(out, "all,all,{}", mean_overlap(overlaps));
    out
}

/// Write `pattern_k<k>.csv` (users numbered from 1) and
/// `orthogonality.csv` for the given patterns on the scenario grid.
pub fn export_patterns(w: &PatternCoefficients, scenario: &Scenario, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for (k, w_k) in w.iter().enumerate() {
        let path = out_dir.join(format!("pattern_k{}.csv", k + 1));
        write_file(&path, &pattern_csv(w_k, &scenario.grid, &scenario.indices)?)?;
        written.push(path);
    }
    let overlaps = pattern_overlaps(w, &scenario.grid, &scenario.indices)?;
    let path = out_dir.join("orthogonality.csv");
    write_file(&path, &orthogonality_csv(&overlaps))?;
    written.push(path);
    Ok(written)
}
