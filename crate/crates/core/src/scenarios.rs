//! End-to-end pipelines: free dispersion, Landau spectrum, helicity and
//! particle/antiparticle trajectories. Each run returns named tables and a
//! list of pass/fail checks.

use std::f64::consts::{SQRT_2, TAU};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyze::{
    azimuth_pair_series, fit_circle, fit_polynomial, fourier_spectrum, linear_fit_through_origin,
    predict_two_mode_sigma_z, signed_area, Peak, RatioValue, Spectrum, TimeSeries,
};
use crate::error::{Error, Result};
use crate::evolve::{
    evolve_lindblad_report, sparse_observable_series, LindbladOptions, NoiseSpec, TimeGrid,
    UnitaryPropagator, POSITIVITY_FLOOR,
};
use crate::fockspace::{
    coherent_state, expectation, quadrature, quadrature_matrix, Axis, Mode, QState, Quadrature,
    SpaceSpec, SpinState, C64,
};
use crate::model::{
    khz_from_angular, weyl_hamiltonian, weyl_hamiltonian_sparse, QuadratureTarget, SimParams,
};
use crate::probe::{
    default_energy_grid, kinetic_momentum_series, measure_all_quadratures, spin_series, EnergyProbe,
};
use crate::sparse::SparseOp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Dispersion,
    Landau,
    Helicity,
    Trajectory,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        Self::Dispersion,
        Self::Landau,
        Self::Helicity,
        Self::Trajectory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dispersion => "dispersion",
            Self::Landau => "landau",
            Self::Helicity => "helicity",
            Self::Trajectory => "trajectory",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown scenario '{s}'")))
    }
}

/// Fully resolved inputs of one scenario run.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    /// Dephasing times in `params` are used only when `noise_on` is set,
    /// which only the Landau scenario allows.
    pub params: SimParams,
    pub space: SpaceSpec,
    /// Landau only: smaller space for the density-matrix run, whose cost
    /// grows with the square of the dimension. `None` reuses `space`.
    pub noise_space: Option<SpaceSpec>,
    pub grid: TimeGrid,
    /// Landau only: long noiseless window for the fine-resolution spectrum.
    pub long_grid: Option<TimeGrid>,
    /// Dispersion only: momentum magnitudes p.
    pub sweep: Option<Vec<f64>>,
    /// Dispersion only: momentum direction.
    pub theta: f64,
    /// Ignored by the trajectory scenario, which always runs |+x⟩ and |−x⟩.
    pub initial_spin: SpinState,
    pub alpha_x: C64,
    pub alpha_y: C64,
    pub noise_on: bool,
    pub pad_factor: usize,
    pub peak_frac: f64,
    /// Helicity only: emulate the quadrature readout at every k-th sample
    /// (0 disables it).
    pub probe_every: usize,
}

pub const DEFAULT_N_MAX: usize = 15;
/// Landau: max |predicted − simulated| for the noiseless ⟨σ̂z(t)⟩.
pub const PREDICTOR_LIMIT: f64 = 1e-8;
/// Landau density-matrix truncation per mode.
pub const NOISE_N_MAX: usize = 10;
pub const DEFAULT_SWEEP: [f64; 4] = [0.59, 1.19, 1.78, 2.38];
pub const DEFAULT_PAD: usize = 8;
pub const DEFAULT_PEAK_FRAC: f64 = 0.15;
/// Peak threshold for the long-window spectrum, where n = 3, 4 are weak.
pub const LONG_PEAK_FRAC: f64 = 0.02;
/// Helicity acceptance: time-mean |φ_S − φ_π| in radians.
pub const MISALIGNMENT_LIMIT: f64 = 0.5;
/// Trajectory acceptance: minimum RMS deviation from the fitted circle.
pub const ZITTERBEWEGUNG_FLOOR: f64 = 1e-3;
const MEASURED_TAU_X: f64 = 4.0;
const MEASURED_TAU_Y: f64 = 3.5;

impl ScenarioConfig {
    /// Defaults: Ω = 2π × {4.75, 4.2, 4.2, 5.0} kHz, dephasing 4 ms (x) /
    /// 3.5 ms (y) when noise is on. Truncations are per scenario: Landau
    /// needs x headroom because each p_y sector shifts the cyclotron orbit
    /// along x, and trajectories spread to ⟨y²⟩ ≈ 9.
    pub fn defaults(name: ScenarioName) -> Self {
        let (omega_khz, r) = match name {
            ScenarioName::Dispersion => (4.75, 0.0),
            ScenarioName::Landau | ScenarioName::Helicity => (4.2, 1.0),
            ScenarioName::Trajectory => (5.0, 1.0),
        };
        let params = SimParams::new(omega_khz, r)
            .and_then(|p| p.with_dephasing(MEASURED_TAU_X, MEASURED_TAU_Y))
            .expect("default parameters are valid");
        let (nx, ny) = match name {
            ScenarioName::Landau => (40, DEFAULT_N_MAX),
            ScenarioName::Trajectory => (40, 80),
            _ => (DEFAULT_N_MAX, DEFAULT_N_MAX),
        };
        let space = SpaceSpec::two_mode(nx, ny).expect("valid space");
        let grid = match name {
            ScenarioName::Dispersion => {
                let p_max = DEFAULT_SWEEP.iter().copied().fold(0.0, f64::max);
                default_energy_grid(&params, p_max).expect("valid grid")
            }
            ScenarioName::Landau => TimeGrid::new(0.0, 0.6, 201).expect("valid grid"),
            ScenarioName::Helicity => TimeGrid::new(0.0, 0.75, 201).expect("valid grid"),
            ScenarioName::Trajectory => TimeGrid::new(0.0, 0.5, 201).expect("valid grid"),
        };
        Self {
            name,
            params,
            space,
            noise_space: (name == ScenarioName::Landau)
                .then(|| SpaceSpec::two_mode(NOISE_N_MAX, NOISE_N_MAX).expect("valid space")),
            grid,
            long_grid: (name == ScenarioName::Landau)
                .then(|| TimeGrid::new(0.0, 5.0, 501).expect("valid grid")),
            sweep: (name == ScenarioName::Dispersion).then(|| DEFAULT_SWEEP.to_vec()),
            theta: 0.0,
            initial_spin: match name {
                ScenarioName::Dispersion | ScenarioName::Landau => SpinState::PlusZ,
                _ => SpinState::PlusX,
            },
            alpha_x: C64::new(0.0, 1.0),
            alpha_y: C64::new(0.0, 0.0),
            noise_on: name == ScenarioName::Landau,
            pad_factor: DEFAULT_PAD,
            peak_frac: DEFAULT_PEAK_FRAC,
            probe_every: if name == ScenarioName::Helicity {
                10
            } else {
                0
            },
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        if self.noise_on {
            NoiseSpec {
                tau_d_x: self.params.tau_d_x,
                tau_d_y: self.params.tau_d_y,
            }
        } else {
            NoiseSpec::noiseless()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.grid.validate()?;
        if let Some(g) = &self.long_grid {
            g.validate()?;
        }
        if self.space.is_single_mode() {
            return Err(Error::InvalidSpace(
                "scenarios run on the two-mode space".into(),
            ));
        }
        if self.pad_factor < 1 {
            return Err(Error::InvalidParams("pad_factor must be at least 1".into()));
        }
        if !(self.peak_frac > 0.0 && self.peak_frac < 1.0) {
            return Err(Error::InvalidParams("peak_frac must lie in (0, 1)".into()));
        }
        match self.name {
            ScenarioName::Dispersion => {
                if self.params.r != 0.0 {
                    return Err(Error::InvalidParams("dispersion needs r = 0".into()));
                }
                match &self.sweep {
                    Some(s) if !s.is_empty() => {
                        if s.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                            return Err(Error::InvalidParams(
                                "sweep momenta must be finite and ≥ 0".into(),
                            ));
                        }
                    }
                    _ => {
                        return Err(Error::InvalidParams(
                            "dispersion needs a nonempty sweep".into(),
                        ))
                    }
                }
            }
            _ => {
                if !(self.params.r > 0.0) {
                    return Err(Error::InvalidParams(format!("{} needs r > 0", self.name)));
                }
                if self.sweep.is_some() {
                    return Err(Error::InvalidParams(
                        "sweep applies to dispersion only".into(),
                    ));
                }
            }
        }
        if self.long_grid.is_some() && self.name != ScenarioName::Landau {
            return Err(Error::InvalidParams(
                "long_grid applies to landau only".into(),
            ));
        }
        if self.noise_on && self.name != ScenarioName::Landau {
            return Err(Error::InvalidParams("noise applies to landau only".into()));
        }
        if let Some(ns) = &self.noise_space {
            if self.name != ScenarioName::Landau {
                return Err(Error::InvalidParams(
                    "noise_space applies to landau only".into(),
                ));
            }
            if ns.is_single_mode() {
                return Err(Error::InvalidSpace(
                    "noise_space must have both modes".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "values")]
pub enum ColumnData {
    Real(Vec<f64>),
    /// Real values with gaps (ratio poles, missing peaks).
    Optional(Vec<Option<f64>>),
    Text(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            Self::Real(v) => v.len(),
            Self::Optional(v) => v.len(),
            Self::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: Option<String>,
    pub data: ColumnData,
}

impl Column {
    pub fn real(name: &str, unit: Option<&str>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            unit: unit.map(Into::into),
            data: ColumnData::Real(values),
        }
    }

    pub fn text(name: &str, values: Vec<String>) -> Self {
        Self {
            name: name.into(),
            unit: None,
            data: ColumnData::Text(values),
        }
    }

    pub fn optional(name: &str, unit: Option<&str>, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            unit: unit.map(Into::into),
            data: ColumnData::Optional(values),
        }
    }

    /// `name(unit)` or bare `name`.
    pub fn header(&self) -> String {
        match &self.unit {
            Some(u) => format!("{}({u})", self.name),
            None => self.name.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn new(name: &str, columns: Vec<Column>) -> Result<Self> {
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.data.len() != first.data.len()) {
                return Err(Error::InvalidParams(format!(
                    "table '{name}' has ragged columns"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            columns,
        })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Where the expected value of a check comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Behaviour reported for the trapped-ion experiment.
    Observed,
    /// An analytic or numerical oracle computed from the model.
    Oracle,
    /// Holds identically by construction.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// |actual − expected| ≤ tolerance
    Within,
    /// actual ≤ expected
    AtMost,
    /// actual ≥ expected
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub comparison: Comparison,
    pub expected: f64,
    pub actual: f64,
    pub tolerance: f64,
    pub unit: Option<String>,
    pub pass: bool,
    pub basis: Basis,
}

impl Check {
    pub fn within(
        name: &str,
        expected: f64,
        actual: f64,
        tolerance: f64,
        unit: Option<&str>,
        basis: Basis,
    ) -> Self {
        Self::build(
            name,
            Comparison::Within,
            expected,
            actual,
            tolerance,
            unit,
            basis,
        )
    }

    pub fn at_most(name: &str, limit: f64, actual: f64, unit: Option<&str>, basis: Basis) -> Self {
        Self::build(name, Comparison::AtMost, limit, actual, 0.0, unit, basis)
    }

    pub fn at_least(name: &str, limit: f64, actual: f64, unit: Option<&str>, basis: Basis) -> Self {
        Self::build(name, Comparison::AtLeast, limit, actual, 0.0, unit, basis)
    }

    fn build(
        name: &str,
        comparison: Comparison,
        expected: f64,
        actual: f64,
        tolerance: f64,
        unit: Option<&str>,
        basis: Basis,
    ) -> Self {
        // NaN comparisons are false, so missing values fail
        let pass = match comparison {
            Comparison::Within => (actual - expected).abs() <= tolerance,
            Comparison::AtMost => actual <= expected,
            Comparison::AtLeast => actual >= expected,
        };
        Self {
            name: name.into(),
            comparison,
            expected,
            actual,
            tolerance,
            unit: unit.map(Into::into),
            pass,
            basis,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: ScenarioConfig,
    pub version: &'static str,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioResult {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub manifest: RunRecord,
}

impl ScenarioResult {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

pub fn run(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    match cfg.name {
        ScenarioName::Dispersion => run_dispersion(cfg),
        ScenarioName::Landau => run_landau(cfg),
        ScenarioName::Helicity => run_helicity(cfg),
        ScenarioName::Trajectory => run_trajectory(cfg),
    }
}

fn finish(
    cfg: &ScenarioConfig,
    start: Instant,
    tables: Vec<Table>,
    checks: Vec<Check>,
) -> ScenarioResult {
    ScenarioResult {
        tables,
        checks,
        manifest: RunRecord {
            config: cfg.clone(),
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    }
}

fn micros(times: &[f64]) -> Vec<f64> {
    times.iter().map(|t| t * 1e3).collect()
}

fn expect_name(cfg: &ScenarioConfig, name: ScenarioName) -> Result<()> {
    if cfg.name != name {
        return Err(Error::InvalidParams(format!(
            "config is for {} not {name}",
            cfg.name
        )));
    }
    cfg.validate()
}

pub fn run_dispersion(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let start = Instant::now();
    expect_name(cfg, ScenarioName::Dispersion)?;
    let sweep = cfg.sweep.as_deref().unwrap_or_default();
    let probe = EnergyProbe::new(cfg.space, &cfg.params)?;
    let readouts = sweep
        .par_iter()
        .map(|&p| probe.measure(p, cfg.theta, &cfg.grid))
        .collect::<Result<Vec<_>>>()?;
    let energies: Vec<f64> = readouts.iter().map(|r| r.energy).collect();
    let slope = linear_fit_through_origin(sweep, &energies)?;
    let ideal = cfg.params.omega / SQRT_2;
    let worst_residual = sweep
        .iter()
        .zip(&energies)
        .map(|(p, e)| {
            // a p = 0 row is judged against the unit-momentum energy
            let scale = if *p == 0.0 { ideal } else { ideal * p };
            (e - ideal * p).abs() / scale
        })
        .fold(0.0, f64::max);

    let mut tables = vec![Table::new(
        "dispersion",
        vec![
            Column::real("p", None, sweep.to_vec()),
            Column::real(
                "E_over_2pi",
                Some("kHz"),
                energies.iter().map(|e| khz_from_angular(*e)).collect(),
            ),
            Column::real(
                "fit_residual_rms",
                None,
                readouts.iter().map(|r| r.fit.residual_rms).collect(),
            ),
        ],
    )?];
    let mut signal_cols = vec![Column::real("t", Some("us"), micros(&cfg.grid.times()))];
    for (p, r) in sweep.iter().zip(&readouts) {
        signal_cols.push(Column::real(
            &format!("sigma_perp_p{p}"),
            None,
            r.signal.values.clone(),
        ));
    }
    tables.push(Table::new("early_signal", signal_cols)?);

    let expected_khz = khz_from_angular(ideal);
    let checks = vec![
        Check::within(
            "dispersion_slope",
            expected_khz,
            khz_from_angular(slope),
            0.02 * expected_khz,
            Some("kHz"),
            Basis::Observed,
        ),
        Check::at_most(
            "max_point_residual",
            0.02,
            worst_residual,
            None,
            Basis::Oracle,
        ),
    ];
    Ok(finish(cfg, start, tables, checks))
}

/// Sparse Taylor stepping; cheaper than a dense eigendecomposition even
/// at the smallest useful truncations.
fn weyl_propagator(space: SpaceSpec, params: &SimParams) -> Result<UnitaryPropagator> {
    UnitaryPropagator::from_sparse(weyl_hamiltonian_sparse(space, params)?)
}

fn sparse_quadrature(space: SpaceSpec, mode: Mode, which: Quadrature) -> Result<SparseOp> {
    let n = space
        .n_max(mode)
        .ok_or_else(|| Error::InvalidSpace(format!("mode {mode:?} absent")))?;
    SparseOp::on_mode(space, mode, quadrature_matrix(n, which))
}

fn sigma_z_series(prop: &UnitaryPropagator, psi: &QState, grid: &TimeGrid) -> Result<TimeSeries> {
    let states = prop.run(psi, grid)?;
    spin_series(&states, Axis::Z, grid)
}

fn level_khz(params: &SimParams, n: usize) -> f64 {
    khz_from_angular(2.0 * params.omega * (n as f64 * params.r).sqrt())
}

fn nearest_freq(spec: &Spectrum, target: f64) -> f64 {
    spec.nearest_peak(target).map_or(f64::NAN, |p| p.freq)
}

fn peaks_rows(label: &str, peaks: &[Peak], rows: &mut (Vec<String>, Vec<f64>, Vec<f64>)) {
    for p in peaks {
        rows.0.push(label.into());
        rows.1.push(p.freq);
        rows.2.push(p.amp);
    }
}

fn spectrum_table(name: &str, spec: &Spectrum, extra: Option<&Spectrum>) -> Result<Table> {
    let mut cols = vec![
        Column::real("f", Some("kHz"), spec.freqs.clone()),
        Column::real("amp", None, spec.amps.clone()),
    ];
    if let Some(s) = extra {
        cols.push(Column::real("amp_noisy", None, s.amps.clone()));
    }
    Table::new(name, cols)
}

pub fn run_landau(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let start = Instant::now();
    expect_name(cfg, ScenarioName::Landau)?;
    let p = &cfg.params;
    let psi = coherent_state(cfg.space, cfg.alpha_x, cfg.alpha_y, cfg.initial_spin)?;
    let prop = weyl_propagator(cfg.space, p)?;

    let sz = sigma_z_series(&prop, &psi, &cfg.grid)?;
    let spec = fourier_spectrum(&sz, cfg.pad_factor)?.with_peaks(cfg.peak_frac)?;
    let mut checks = Vec::new();
    for n in 1..=2 {
        checks.push(Check::within(
            &format!("peak_n{n}"),
            level_khz(p, n),
            nearest_freq(&spec, level_khz(p, n)),
            spec.resolution,
            Some("kHz"),
            Basis::Observed,
        ));
    }

    let mut sz_cols = vec![
        Column::real("t", Some("us"), micros(&sz.times)),
        Column::real("sigma_z", None, sz.values.clone()),
    ];
    // the closed-form two-mode prediction is available for r = 1
    if (p.r - 1.0).abs() <= 1e-12 {
        let predicted =
            predict_two_mode_sigma_z(cfg.alpha_x, cfg.alpha_y, cfg.initial_spin, p, &cfg.grid)?;
        checks.push(Check::at_most(
            "predictor_max_abs_dev",
            PREDICTOR_LIMIT,
            predicted.max_abs_diff(&sz),
            None,
            Basis::Oracle,
        ));
        sz_cols.push(Column::real("sigma_z_predicted", None, predicted.values));
    }

    let mut peak_rows = (Vec::new(), Vec::new(), Vec::new());
    peaks_rows("noiseless", &spec.peaks, &mut peak_rows);

    let mut noisy_spec = None;
    if cfg.noise_on {
        let ns = cfg.noise_space.unwrap_or(cfg.space);
        let h = weyl_hamiltonian(ns, p)?;
        let rho0 = coherent_state(ns, cfg.alpha_x, cfg.alpha_y, cfg.initial_spin)?;
        let (states, diag) = evolve_lindblad_report(
            &h,
            &cfg.noise(),
            &rho0,
            &cfg.grid,
            &LindbladOptions::default(),
        )?;
        let noisy = spin_series(&states, Axis::Z, &cfg.grid)?;
        let ns = fourier_spectrum(&noisy, cfg.pad_factor)?.with_peaks(cfg.peak_frac)?;
        let top = ns.strongest_peaks();
        let deviation = if top.len() >= 2 {
            let (mut a, mut b) = (top[0].freq, top[1].freq);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            (a - level_khz(p, 1)).abs().max((b - level_khz(p, 2)).abs())
        } else {
            f64::NAN
        };
        checks.push(Check::at_most(
            "noisy_top_two_peak_offset",
            ns.resolution,
            deviation,
            Some("kHz"),
            Basis::Observed,
        ));
        checks.push(Check::at_most(
            "lindblad_trace_drift",
            1e-8,
            diag.max_trace_drift,
            None,
            Basis::Exact,
        ));
        checks.push(Check::at_most(
            "lindblad_hermiticity_error",
            1e-8,
            diag.max_hermiticity_error,
            None,
            Basis::Exact,
        ));
        checks.push(Check::at_least(
            "lindblad_min_eigenvalue",
            -1e-8,
            // a passed Cholesky certificate bounds the spectrum below by −floor
            diag.worst_min_eigenvalue.unwrap_or(-POSITIVITY_FLOOR),
            None,
            Basis::Exact,
        ));
        sz_cols.push(Column::real("sigma_z_noisy", None, noisy.values));
        peaks_rows("noisy", &ns.peaks, &mut peak_rows);
        noisy_spec = Some(ns);
    }

    let mut tables = vec![
        Table::new("sigma_z", sz_cols)?,
        spectrum_table("spectrum", &spec, noisy_spec.as_ref())?,
    ];

    if let Some(long) = &cfg.long_grid {
        let lz = sigma_z_series(&prop, &psi, long)?;
        let ls = fourier_spectrum(&lz, cfg.pad_factor)?.with_peaks(LONG_PEAK_FRAC)?;
        for n in 1..=4 {
            checks.push(Check::within(
                &format!("long_peak_n{n}"),
                level_khz(p, n),
                nearest_freq(&ls, level_khz(p, n)),
                ls.resolution,
                Some("kHz"),
                Basis::Oracle,
            ));
        }
        peaks_rows("long", &ls.peaks, &mut peak_rows);
        tables.push(Table::new(
            "sigma_z_long",
            vec![
                Column::real("t", Some("us"), micros(&lz.times)),
                Column::real("sigma_z", None, lz.values.clone()),
            ],
        )?);
        tables.push(spectrum_table("spectrum_long", &ls, None)?);
    }

    tables.push(Table::new(
        "peaks",
        vec![
            Column::text("series", peak_rows.0),
            Column::real("f", Some("kHz"), peak_rows.1),
            Column::real("amp", None, peak_rows.2),
        ],
    )?);
    Ok(finish(cfg, start, tables, checks))
}

fn ratio_column(name: &str, ratios: &[RatioValue]) -> Column {
    Column::optional(
        name,
        None,
        ratios
            .iter()
            .map(|r| match r {
                RatioValue::Finite(v) => Some(*v),
                RatioValue::Pole => None,
            })
            .collect(),
    )
}

pub fn run_helicity(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let start = Instant::now();
    expect_name(cfg, ScenarioName::Helicity)?;
    let p = &cfg.params;
    let space = cfg.space;
    let psi = coherent_state(space, cfg.alpha_x, cfg.alpha_y, cfg.initial_spin)?;
    let states = weyl_propagator(space, p)?.run(&psi, &cfg.grid)?;
    let g = &cfg.grid;

    let sx = spin_series(&states, Axis::X, g)?;
    let sy = spin_series(&states, Axis::Y, g)?;
    let sz = spin_series(&states, Axis::Z, g)?;
    let (pix, piy) = kinetic_momentum_series(&states, p, g)?;
    let py = sparse_observable_series(
        &states,
        &sparse_quadrature(space, Mode::Y, Quadrature::Momentum)?,
        g,
        "p_y",
    )?;
    let x = sparse_observable_series(
        &states,
        &sparse_quadrature(space, Mode::X, Quadrature::Position)?,
        g,
        "x",
    )?;
    let az = azimuth_pair_series(&sx, &sy, &pix, &piy)?;

    let py_drift = py
        .values
        .iter()
        .map(|v| (v - py.values[0]).abs())
        .fold(0.0, f64::max);
    let rotation = {
        let v = &az.momentum.values;
        (v[v.len() - 1] - v[0]).abs()
    };
    let mut checks = vec![
        Check::within(
            "initial_sigma_x",
            1.0,
            sx.values[0],
            1e-9,
            None,
            Basis::Exact,
        ),
        Check::within(
            "initial_angle_gap",
            0.0,
            az.spin.values[0] - az.momentum.values[0],
            1e-9,
            Some("rad"),
            Basis::Exact,
        ),
        Check::at_most("py_conservation", 1e-6, py_drift, None, Basis::Exact),
        Check::at_least(
            "kinetic_rotation",
            TAU,
            rotation,
            Some("rad"),
            Basis::Oracle,
        ),
        Check::at_most(
            "mean_misalignment",
            MISALIGNMENT_LIMIT,
            az.mean_misalignment(),
            Some("rad"),
            Basis::Observed,
        ),
    ];

    let mut tables = vec![
        Table::new(
            "spin",
            vec![
                Column::real("t", Some("us"), micros(&sx.times)),
                Column::real("sigma_x", None, sx.values.clone()),
                Column::real("sigma_y", None, sy.values.clone()),
                Column::real("sigma_z", None, sz.values),
            ],
        )?,
        Table::new(
            "kinetic_momentum",
            vec![
                Column::real("t", Some("us"), micros(&sx.times)),
                Column::real("pi_x", None, pix.values.clone()),
                Column::real("pi_y", None, piy.values.clone()),
                Column::real("p_y", None, py.values),
                Column::real("x", None, x.values),
            ],
        )?,
        Table::new(
            "azimuth",
            vec![
                Column::real("t", Some("us"), micros(&sx.times)),
                Column::real("phi_spin", Some("rad"), az.spin.values.clone()),
                Column::real("phi_kinetic", Some("rad"), az.momentum.values.clone()),
                ratio_column("ratio_spin", &az.spin_ratio),
                ratio_column("ratio_kinetic", &az.momentum_ratio),
            ],
        )?,
    ];

    if cfg.probe_every > 0 {
        let picks: Vec<usize> = (0..states.len()).step_by(cfg.probe_every).collect();
        let measured = picks
            .par_iter()
            .map(|&k| measure_all_quadratures(&states[k], p))
            .collect::<Result<Vec<_>>>()?;
        let ops = QuadratureTarget::ALL
            .iter()
            .map(|t| quadrature(space, t.mode(), t.quadrature()))
            .collect::<Result<Vec<_>>>()?;
        let mut worst: f64 = 0.0;
        for (&k, m) in picks.iter().zip(&measured) {
            for (op, est) in ops.iter().zip(m) {
                let direct = expectation(op, &states[k])?;
                worst = worst.max((est - direct).abs() / direct.abs().max(1.0));
            }
        }
        checks.push(Check::at_most(
            "probe_readout_deviation",
            0.02,
            worst,
            None,
            Basis::Oracle,
        ));
        let times: Vec<f64> = picks.iter().map(|&k| g.times()[k]).collect();
        let col = |i: usize| measured.iter().map(|m| m[i]).collect::<Vec<f64>>();
        tables.push(Table::new(
            "measured",
            vec![
                Column::real("t", Some("us"), micros(&times)),
                Column::real("x", None, col(0)),
                Column::real("p_x", None, col(1)),
                Column::real("y", None, col(2)),
                Column::real("p_y", None, col(3)),
                Column::real(
                    "pi_y",
                    None,
                    measured.iter().map(|m| m[3] - p.r * m[0]).collect(),
                ),
            ],
        )?);
    }
    Ok(finish(cfg, start, tables, checks))
}

struct Branch {
    x: TimeSeries,
    y: TimeSeries,
    area: f64,
    velocity: f64,
    circle_residual: f64,
}

/// Samples used for the early-time fit of ⟨x̂(t)⟩.
const VELOCITY_SAMPLES: usize = 8;

fn trajectory_branch(
    cfg: &ScenarioConfig,
    prop: &UnitaryPropagator,
    spin: SpinState,
) -> Result<Branch> {
    let space = cfg.space;
    let psi = coherent_state(space, cfg.alpha_x, cfg.alpha_y, spin)?;
    let states = prop.run(&psi, &cfg.grid)?;
    let x = sparse_observable_series(
        &states,
        &sparse_quadrature(space, Mode::X, Quadrature::Position)?,
        &cfg.grid,
        "x",
    )?;
    let y = sparse_observable_series(
        &states,
        &sparse_quadrature(space, Mode::Y, Quadrature::Position)?,
        &cfg.grid,
        "y",
    )?;
    let n = VELOCITY_SAMPLES.min(x.len());
    let early = TimeSeries::new(
        x.times[..n].iter().map(|t| t - cfg.grid.t_start).collect(),
        x.values[..n].to_vec(),
        "x_early",
    )?;
    let velocity = fit_polynomial(&early, 3)?.slope_at_zero;
    let circle = fit_circle(&x.values, &y.values)?;
    Ok(Branch {
        area: signed_area(&x.values, &y.values),
        x,
        y,
        velocity,
        circle_residual: circle.rms_radial_residual,
    })
}

pub fn run_trajectory(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    let start = Instant::now();
    expect_name(cfg, ScenarioName::Trajectory)?;
    let prop = weyl_propagator(cfg.space, &cfg.params)?;
    let (plus, minus) = rayon::join(
        || trajectory_branch(cfg, &prop, SpinState::PlusX),
        || trajectory_branch(cfg, &prop, SpinState::MinusX),
    );
    let (plus, minus) = (plus?, minus?);
    // d⟨x̂⟩/dt = (Ω/√2)⟨σ̂x⟩ at t = 0; reported per µs
    let v0 = cfg.params.omega / SQRT_2 * 1e-3;
    let checks = vec![
        Check::at_most("signed_area_plus_x", 0.0, plus.area, None, Basis::Observed),
        Check::at_least(
            "signed_area_minus_x",
            0.0,
            minus.area,
            None,
            Basis::Observed,
        ),
        Check::within(
            "initial_velocity_plus_x",
            v0,
            plus.velocity * 1e-3,
            0.02 * v0,
            Some("1/us"),
            Basis::Oracle,
        ),
        Check::within(
            "initial_velocity_minus_x",
            -v0,
            minus.velocity * 1e-3,
            0.02 * v0,
            Some("1/us"),
            Basis::Oracle,
        ),
        Check::at_least(
            "zitterbewegung_rms_plus_x",
            ZITTERBEWEGUNG_FLOOR,
            plus.circle_residual,
            None,
            Basis::Observed,
        ),
        Check::at_least(
            "zitterbewegung_rms_minus_x",
            ZITTERBEWEGUNG_FLOOR,
            minus.circle_residual,
            None,
            Basis::Observed,
        ),
    ];
    let tables = vec![Table::new(
        "trajectory",
        vec![
            Column::real("t", Some("us"), micros(&plus.x.times)),
            Column::real("x_plus", None, plus.x.values.clone()),
            Column::real("y_plus", None, plus.y.values.clone()),
            Column::real("x_minus", None, minus.x.values.clone()),
            Column::real("y_minus", None, minus.y.values.clone()),
        ],
    )?];
    Ok(finish(cfg, start, tables, checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
            assert_eq!(n.to_string(), n.as_str());
        }
        assert!("landau2".parse::<ScenarioName>().is_err());
    }

    #[test]
    fn defaults_validate() {
        for n in ScenarioName::ALL {
            let cfg = ScenarioConfig::defaults(n);
            cfg.validate().unwrap();
            assert_eq!(cfg.name, n);
        }
        let l = ScenarioConfig::defaults(ScenarioName::Landau);
        assert!(l.noise_on && l.long_grid.is_some() && l.noise_space.is_some());
        assert!(!ScenarioConfig::defaults(ScenarioName::Helicity).noise_on);
    }

    #[test]
    fn validate_rejects_misplaced_fields() {
        let mut d = ScenarioConfig::defaults(ScenarioName::Dispersion);
        d.params.r = 1.0;
        assert!(d.validate().is_err());
        let mut d = ScenarioConfig::defaults(ScenarioName::Dispersion);
        d.sweep = Some(vec![]);
        assert!(d.validate().is_err());
        d.sweep = Some(vec![1.0, -0.5]);
        assert!(d.validate().is_err());

        let mut t = ScenarioConfig::defaults(ScenarioName::Trajectory);
        t.sweep = Some(vec![1.0]);
        assert!(t.validate().is_err());
        let mut t = ScenarioConfig::defaults(ScenarioName::Trajectory);
        t.long_grid = Some(TimeGrid::new(0.0, 1.0, 3).unwrap());
        assert!(t.validate().is_err());
        let mut t = ScenarioConfig::defaults(ScenarioName::Trajectory);
        t.noise_space = Some(SpaceSpec::two_mode(4, 4).unwrap());
        assert!(t.validate().is_err());
        let mut t = ScenarioConfig::defaults(ScenarioName::Trajectory);
        t.params.r = 0.0;
        assert!(t.validate().is_err());
        let mut t = ScenarioConfig::defaults(ScenarioName::Trajectory);
        t.peak_frac = 1.0;
        assert!(t.validate().is_err());
        let mut t = ScenarioConfig::defaults(ScenarioName::Trajectory);
        t.space = SpaceSpec::single_mode(5).unwrap();
        assert!(t.validate().is_err());
    }

    #[test]
    fn wrong_runner_is_rejected() {
        let cfg = ScenarioConfig::defaults(ScenarioName::Helicity);
        assert!(run_trajectory(&cfg).is_err());
    }

    #[test]
    fn checks_compare_and_fail_on_nan() {
        assert!(Check::within("a", 1.0, 1.05, 0.1, None, Basis::Oracle).pass);
        assert!(!Check::within("a", 1.0, 1.2, 0.1, None, Basis::Oracle).pass);
        assert!(Check::at_most("b", 1.0, 1.0, None, Basis::Exact).pass);
        assert!(!Check::at_least("c", 1.0, 0.5, None, Basis::Exact).pass);
        assert!(!Check::at_most("d", 1.0, f64::NAN, None, Basis::Exact).pass);
        assert!(!Check::within("e", 0.0, f64::NAN, 1.0, None, Basis::Exact).pass);
    }

    #[test]
    fn tables_reject_ragged_columns() {
        let ok = Table::new(
            "t",
            vec![
                Column::real("a", Some("kHz"), vec![1.0]),
                Column::text("b", vec!["x".into()]),
            ],
        )
        .unwrap();
        assert_eq!(ok.rows(), 1);
        assert_eq!(ok.column("a").unwrap().header(), "a(kHz)");
        assert_eq!(ok.column("b").unwrap().header(), "b");
        assert!(Table::new(
            "t",
            vec![
                Column::real("a", None, vec![1.0]),
                Column::real("b", None, vec![])
            ]
        )
        .is_err());
    }

    #[test]
    fn dispersion_zero_momentum_row_is_zero() {
        let mut cfg = ScenarioConfig::defaults(ScenarioName::Dispersion);
        cfg.space = SpaceSpec::two_mode(10, 10).unwrap();
        cfg.sweep = Some(vec![0.0, 1.19]);
        let res = run(&cfg).unwrap();
        let t = res.table("dispersion").unwrap();
        let ColumnData::Real(e) = &t.column("E_over_2pi").unwrap().data else {
            panic!("energy column is not real")
        };
        assert!(e[0].abs() < 1e-6, "E(0) = {}", e[0]);
        assert!(res.check("dispersion_slope").unwrap().pass);
    }

    #[test]
    fn small_trajectory_has_opposite_chirality() {
        let mut cfg = ScenarioConfig::defaults(ScenarioName::Trajectory);
        cfg.space = SpaceSpec::two_mode(12, 16).unwrap();
        cfg.grid = TimeGrid::new(0.0, 0.3, 61).unwrap();
        let res = run(&cfg).unwrap();
        let a = res.check("signed_area_plus_x").unwrap().actual;
        let b = res.check("signed_area_minus_x").unwrap().actual;
        assert!(a < 0.0 && b > 0.0);
        assert_eq!(res.table("trajectory").unwrap().rows(), 61);
        assert_eq!(res.manifest.config, cfg);
    }

    #[test]
    fn small_landau_reports_expected_tables() {
        let mut cfg = ScenarioConfig::defaults(ScenarioName::Landau);
        cfg.space = SpaceSpec::two_mode(12, 8).unwrap();
        cfg.noise_space = Some(SpaceSpec::two_mode(4, 4).unwrap());
        cfg.long_grid = None;
        cfg.grid = TimeGrid::new(0.0, 0.6, 121).unwrap();
        let res = run(&cfg).unwrap();
        for t in ["sigma_z", "spectrum", "peaks"] {
            assert!(res.table(t).is_some(), "{t}");
        }
        let sz = res.table("sigma_z").unwrap();
        assert!(sz.column("sigma_z_noisy").is_some() && sz.column("sigma_z_predicted").is_some());
        assert!(res.check("lindblad_trace_drift").unwrap().pass);
        assert!(res.check("long_peak_n1").is_none());
    }
}
