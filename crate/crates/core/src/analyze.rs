//! Post-processing: amplitude spectra and peaks, least-squares fits, the
//! closed-form Landau-basis σ̂z predictor, and 2D trajectory geometry.

use std::f64::consts::{PI, SQRT_2, TAU};

use nalgebra::{DMatrix, DVector};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::TimeGrid;
use crate::fockspace::{coherent_amplitudes, QState, SpaceSpec, SpinState, C64};
use crate::model::{landau_energy, Branch, SimParams};

/// Relative tolerance on sample spacing.
pub const UNIFORM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// ms
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub label: String,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidParams(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::InvalidParams(
                "a series needs at least two samples".into(),
            ));
        }
        Ok(Self {
            times,
            values,
            label: label.into(),
        })
    }

    pub fn from_fn(grid: &TimeGrid, label: &str, f: impl Fn(f64) -> f64) -> Result<Self> {
        let times = grid.times();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values, label)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64
    }

    /// Spacing deviations within [`UNIFORM_TOL`] of the record's time scale.
    pub fn is_uniform(&self) -> bool {
        let h = self.spacing();
        let scale = self.times.iter().map(|t| t.abs()).fold(h, f64::max);
        h > 0.0
            && self
                .times
                .windows(2)
                .all(|w| ((w[1] - w[0]) - h).abs() <= UNIFORM_TOL * scale)
    }

    pub fn duration(&self) -> f64 {
        self.times[self.len() - 1] - self.times[0]
    }

    pub fn max_abs_diff(&self, other: &TimeSeries) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn map(&self, label: &str, f: impl Fn(f64) -> f64) -> TimeSeries {
        TimeSeries {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            label: label.into(),
        }
    }

    /// Samples with t ≤ `t_max`, if at least two remain.
    pub fn head_until(&self, t_max: f64) -> Result<TimeSeries> {
        let n = self
            .times
            .iter()
            .take_while(|&&t| t <= t_max + 1e-15)
            .count();
        TimeSeries::new(
            self.times[..n].to_vec(),
            self.values[..n].to_vec(),
            self.label.clone(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// kHz (ω/2π)
    pub freq: f64,
    pub amp: f64,
}

/// One-sided amplitude spectrum of a mean-subtracted series.
///
/// `amps` are RMS amplitudes per bin, normalised by the unpadded length, so a
/// cosine of amplitude A shows a peak of height A/√2 and, without padding,
/// Σ amps² equals the mean square of the mean-subtracted series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// kHz
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
    /// 1 / record length, kHz.
    pub resolution: f64,
    /// Spacing of the (possibly padded) frequency grid, kHz.
    pub bin_width: f64,
    pub peaks: Vec<Peak>,
    /// Removed DC level (the zero-frequency line).
    pub mean: f64,
}

pub fn fourier_spectrum(series: &TimeSeries, pad_factor: usize) -> Result<Spectrum> {
    if pad_factor < 1 {
        return Err(Error::InvalidParams("pad_factor must be at least 1".into()));
    }
    if !series.is_uniform() {
        return Err(Error::Grid(format!(
            "series '{}' is not uniformly sampled",
            series.label
        )));
    }
    let n = series.len();
    let dt = series.spacing();
    let mean = series.mean();
    let m = n * pad_factor;
    let mut buf: Vec<C64> = series
        .values
        .iter()
        .map(|&v| C64::new(v - mean, 0.0))
        .chain(std::iter::repeat_n(C64::new(0.0, 0.0), m - n))
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let half = m / 2;
    let mut freqs = Vec::with_capacity(half + 1);
    let mut amps = Vec::with_capacity(half + 1);
    for (k, x) in buf.iter().enumerate().take(half + 1) {
        let edge = k == 0 || (m.is_multiple_of(2) && k == half);
        let scale = if edge { 1.0 } else { SQRT_2 };
        freqs.push(k as f64 / (m as f64 * dt));
        amps.push(scale * x.norm() / n as f64);
    }
    Ok(Spectrum {
        freqs,
        amps,
        resolution: 1.0 / series.duration(),
        bin_width: 1.0 / (m as f64 * dt),
        peaks: Vec::new(),
        mean,
    })
}

impl Spectrum {
    pub fn with_peaks(mut self, min_amp_frac: f64) -> Result<Self> {
        self.peaks = find_peaks(&self, min_amp_frac)?;
        Ok(self)
    }

    /// Peak closest to `freq`, if any.
    pub fn nearest_peak(&self, freq: f64) -> Option<Peak> {
        self.peaks.iter().copied().min_by(|a, b| {
            (a.freq - freq)
                .abs()
                .partial_cmp(&(b.freq - freq).abs())
                .unwrap()
        })
    }

    /// Peaks sorted by decreasing amplitude.
    pub fn strongest_peaks(&self) -> Vec<Peak> {
        let mut p = self.peaks.clone();
        p.sort_by(|a, b| b.amp.partial_cmp(&a.amp).unwrap());
        p
    }
}

/// Interior local maxima above `min_amp_frac` × global maximum, refined by a
/// parabola through the three surrounding bins; ascending in frequency.
pub fn find_peaks(spec: &Spectrum, min_amp_frac: f64) -> Result<Vec<Peak>> {
    if !(min_amp_frac > 0.0 && min_amp_frac < 1.0) {
        return Err(Error::InvalidParams(format!(
            "min_amp_frac must lie in (0, 1) (got {min_amp_frac})"
        )));
    }
    let a = &spec.amps;
    let global = a.iter().copied().fold(0.0, f64::max);
    if global <= 0.0 || a.len() < 3 {
        return Ok(Vec::new());
    }
    let threshold = min_amp_frac * global;
    let mut peaks = Vec::new();
    for k in 1..a.len() - 1 {
        let (l, c, r) = (a[k - 1], a[k], a[k + 1]);
        if c > l && c >= r && c >= threshold {
            let denom = l - 2.0 * c + r;
            let delta = if denom < 0.0 {
                (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            peaks.push(Peak {
                freq: spec.freqs[k] + delta * spec.bin_width,
                amp: c - 0.25 * (l - r) * delta,
            });
        }
    }
    Ok(peaks)
}

/// Least-squares polynomial fit; `slope_at_zero` is the linear coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// c0, c1, ... in powers of t (ms).
    pub coefficients: Vec<f64>,
    pub slope_at_zero: f64,
    pub window: (f64, f64),
    pub residual_rms: f64,
}

impl SlopeFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * t + c)
    }
}

pub fn fit_polynomial(series: &TimeSeries, order: usize) -> Result<SlopeFit> {
    if order < 1 {
        return Err(Error::InvalidParams(
            "polynomial order must be at least 1".into(),
        ));
    }
    let n = series.len();
    if n <= order + 1 {
        return Err(Error::InvalidParams(format!(
            "{n} samples cannot constrain an order-{order} fit"
        )));
    }
    // fit in u = t/scale for conditioning
    let scale = series.times.iter().map(|t| t.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Rank);
    }
    let design = DMatrix::from_fn(n, order + 1, |i, k| {
        (series.times[i] / scale).powi(k as i32)
    });
    let rhs = DVector::from_column_slice(&series.values);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::Rank);
    }
    let sol = svd.solve(&rhs, 0.0).map_err(|_| Error::Rank)?;
    let residual = &design * &sol - &rhs;
    let residual_rms = (residual.norm_squared() / n as f64).sqrt();
    let coefficients: Vec<f64> = sol
        .iter()
        .enumerate()
        .map(|(k, a)| a / scale.powi(k as i32))
        .collect();
    Ok(SlopeFit {
        slope_at_zero: coefficients[1],
        coefficients,
        window: (series.times[0], series.times[n - 1]),
        residual_rms,
    })
}

/// Least-squares k for y = kx.
pub fn linear_fit_through_origin(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidParams(
            "need equal, nonzero numbers of points".into(),
        ));
    }
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all abscissae are zero".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    Ok(sxy / sxx)
}

/// Coefficients of a single-mode state in the Landau eigenbasis of the
/// transformed Hamiltonian, as needed by the σ̂z predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct LandauExpansion {
    /// ⟨E0|ρ|E0⟩ = |c0|²
    pub ground_weight: f64,
    /// ⟨E_n^−|ρ|E_n^+⟩ = c*_{n,+} c_{n,−}, index n−1.
    pub coherences: Vec<C64>,
    /// Weight of the decoupled |−z⟩|n_max⟩ state left over by truncation.
    pub edge_weight: f64,
    /// Norm captured by |E0⟩ and the |E_n^±⟩.
    pub captured: f64,
}

const CAPTURE_TOL: f64 = 1e-8;

impl LandauExpansion {
    pub fn of(state: &QState) -> Result<Self> {
        let space = state.space();
        if !space.is_single_mode() {
            return Err(Error::InvalidSpace(
                "Landau expansion needs a single-mode state".into(),
            ));
        }
        let n_max = space.levels_x() - 1;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let up = |n: usize| space.index(0, n, 0);
        let down = |n: usize| space.index(1, n, 0);
        let rho = |i: usize, j: usize| -> C64 {
            match (state.amplitudes(), state.density()) {
                (Some(v), _) => v[i] * v[j].conj(),
                (None, Some(m)) => m[(i, j)],
                _ => unreachable!(),
            }
        };
        // |E_n^±⟩ = (|−z,n−1⟩ ± i|+z,n⟩)/√2
        let branch = |n: usize, sign: f64| {
            [
                (down(n - 1), C64::new(h, 0.0)),
                (up(n), C64::new(0.0, sign * h)),
            ]
        };
        let sandwich = |bra: [(usize, C64); 2], ket: [(usize, C64); 2]| -> C64 {
            let mut acc = C64::new(0.0, 0.0);
            for &(i, bi) in &bra {
                for &(j, kj) in &ket {
                    acc += bi.conj() * rho(i, j) * kj;
                }
            }
            acc
        };
        let ground_weight = rho(up(0), up(0)).re;
        let mut captured = ground_weight;
        let mut coherences = Vec::with_capacity(n_max);
        for n in 1..=n_max {
            let plus = branch(n, 1.0);
            let minus = branch(n, -1.0);
            captured += sandwich(plus, plus).re + sandwich(minus, minus).re;
            coherences.push(sandwich(minus, plus));
        }
        let edge_weight = rho(down(n_max), down(n_max)).re;
        let total = state.trace();
        if captured < total * (1.0 - CAPTURE_TOL) {
            return Err(Error::Truncation(format!(
                "Landau basis captures {captured:.12} of the norm {total:.12}"
            )));
        }
        Ok(Self {
            ground_weight,
            coherences,
            edge_weight,
            captured,
        })
    }

    /// ⟨σ̂z⟩ at time t (ms) after preparation:
    /// |c0|² − Σ_n [c*_{n,+}c_{n,−} e^{i(E_n^+ − E_n^−)t} + c.c.].
    pub fn sigma_z(&self, params: &SimParams, t: f64) -> f64 {
        let mut v = self.ground_weight - self.edge_weight;
        for (k, c) in self.coherences.iter().enumerate() {
            let n = k + 1;
            let split =
                landau_energy(n, Branch::Plus, params) - landau_energy(n, Branch::Minus, params);
            v -= 2.0 * (c * C64::from_polar(1.0, split * t)).re;
        }
        v
    }
}

/// Closed-form ⟨σ̂z(t)⟩ under the transformed Hamiltonian for a single-mode
/// initial state prepared at `grid.t_start`.
pub fn predict_sigma_z_series(
    psi0: &QState,
    params: &SimParams,
    grid: &TimeGrid,
) -> Result<TimeSeries> {
    if !(params.r > 0.0) {
        return Err(Error::Domain("the Landau predictor needs r > 0".into()));
    }
    let exp = LandauExpansion::of(psi0)?;
    TimeSeries::from_fn(grid, "sigma_z_predicted", |t| {
        exp.sigma_z(params, t - grid.t_start)
    })
}

/// Gauss–Hermite nodes and weights for ∫ e^{−u²} f(u) du (Golub–Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            ((i.max(j)) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            (
                eig.eigenvalues[k],
                PI.sqrt() * eig.eigenvectors[(0, k)].powi(2),
            )
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Quadrature order used by [`predict_two_mode_sigma_z`].
pub const MOMENTUM_NODES: usize = 48;

/// Closed-form ⟨σ̂z(t)⟩ for the full two-mode problem started in
/// spin ⊗ |α_x⟩ ⊗ |α_y⟩.
///
/// The Hamiltonian conserves p̂y; for a fixed eigenvalue p it equals the
/// transformed single-mode model conjugated by a displacement of x by p/r,
/// which maps |α_x⟩ to |α_x − p/(r√2)⟩. The σ̂z signal is therefore the
/// single-mode prediction averaged over the Gaussian p̂y distribution of
/// |α_y⟩, done here with Gauss–Hermite quadrature. For r ≠ 1 the
/// single-mode rescaling turns the coherent state into a squeezed one, which
/// is not handled.
pub fn predict_two_mode_sigma_z(
    alpha_x: C64,
    alpha_y: C64,
    spin: SpinState,
    params: &SimParams,
    grid: &TimeGrid,
) -> Result<TimeSeries> {
    if (params.r - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!(
            "two-mode predictor implemented for r = 1 only (got {})",
            params.r
        )));
    }
    let (nodes, weights) = gauss_hermite(MOMENTUM_NODES);
    let p0 = SQRT_2 * alpha_y.im;
    let times = grid.times();
    let mut values = vec![0.0; times.len()];
    for (u, w) in nodes.iter().zip(&weights) {
        let p = p0 + u;
        let shifted = alpha_x - C64::new(p / (params.r * SQRT_2), 0.0);
        let a2 = shifted.norm_sqr();
        let cutoff = (a2 + 12.0 * a2.sqrt() + 40.0).ceil() as usize;
        let space = SpaceSpec::single_mode(cutoff)?;
        let (mut amps, _) = coherent_amplitudes(shifted, cutoff);
        let norm = amps.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|c| *c /= norm);
        let state = QState::product(space, spin.amplitudes(), &amps, &[])?;
        let exp = LandauExpansion::of(&state)?;
        let weight = w / PI.sqrt();
        for (v, &t) in values.iter_mut().zip(&times) {
            *v += weight * exp.sigma_z(params, t - grid.t_start);
        }
    }
    TimeSeries::new(times, values, "sigma_z_predicted")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioValue {
    Finite(f64),
    Pole,
}

/// Unwrapped in-plane angles of the spin and kinetic momentum, with the
/// x/y component ratios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AzimuthPair {
    pub spin: TimeSeries,
    pub momentum: TimeSeries,
    pub spin_ratio: Vec<RatioValue>,
    pub momentum_ratio: Vec<RatioValue>,
    /// Sample indices where both components were below [`POLE_TOL`].
    pub spin_poles: Vec<usize>,
    pub momentum_poles: Vec<usize>,
}

pub const POLE_TOL: f64 = 1e-6;

impl AzimuthPair {
    /// |φ_S − φ_π| wrapped to [0, π] at each sample.
    pub fn misalignment(&self) -> Vec<f64> {
        self.spin
            .values
            .iter()
            .zip(&self.momentum.values)
            .map(|(a, b)| wrap_angle(a - b).abs())
            .collect()
    }

    pub fn mean_misalignment(&self) -> f64 {
        let m = self.misalignment();
        m.iter().sum::<f64>() / m.len() as f64
    }
}

/// Reduces an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

fn unwrapped_angles(xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(xs.len());
    let mut poles = Vec::new();
    let mut prev: Option<f64> = None;
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        if x.abs() < POLE_TOL && y.abs() < POLE_TOL {
            poles.push(k);
            out.push(prev.unwrap_or(0.0));
            continue;
        }
        let raw = y.atan2(x);
        let a = match prev {
            None => raw,
            Some(p) => p + wrap_angle(raw - p),
        };
        prev = Some(a);
        out.push(a);
    }
    (out, poles)
}

fn ratios(xs: &[f64], ys: &[f64]) -> Vec<RatioValue> {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            if y.abs() < POLE_TOL {
                RatioValue::Pole
            } else {
                RatioValue::Finite(x / y)
            }
        })
        .collect()
}

pub fn azimuth_pair_series(
    sx: &TimeSeries,
    sy: &TimeSeries,
    pix: &TimeSeries,
    piy: &TimeSeries,
) -> Result<AzimuthPair> {
    for s in [sy, pix, piy] {
        if s.times != sx.times {
            return Err(Error::Grid(
                "azimuth inputs do not share a time grid".into(),
            ));
        }
    }
    let (spin_angle, spin_poles) = unwrapped_angles(&sx.values, &sy.values);
    let (mom_angle, momentum_poles) = unwrapped_angles(&pix.values, &piy.values);
    Ok(AzimuthPair {
        spin: TimeSeries::new(sx.times.clone(), spin_angle, "phi_spin")?,
        momentum: TimeSeries::new(sx.times.clone(), mom_angle, "phi_kinetic")?,
        spin_ratio: ratios(&sx.values, &sy.values),
        momentum_ratio: ratios(&pix.values, &piy.values),
        spin_poles,
        momentum_poles,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chirality {
    Clockwise,
    Counterclockwise,
}

/// ½ Σ (x_i y_{i+1} − x_{i+1} y_i) with coordinates taken relative to the
/// first sample; positive for counterclockwise motion.
pub fn signed_area(xs: &[f64], ys: &[f64]) -> f64 {
    let (x0, y0) = (xs[0], ys[0]);
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[0] - x0) * (y[1] - y0) - (x[1] - x0) * (y[0] - y0))
        .sum::<f64>()
        / 2.0
}

pub fn trajectory_chirality(x: &TimeSeries, y: &TimeSeries) -> Result<Chirality> {
    if x.len() < 3 || x.len() != y.len() {
        return Err(Error::InvalidParams(
            "chirality needs at least three paired points".into(),
        ));
    }
    let area = signed_area(&x.values, &y.values);
    if area.abs() < 1e-9 {
        return Err(Error::Degenerate(format!(
            "signed area {area:e} resolves no rotation"
        )));
    }
    Ok(if area < 0.0 {
        Chirality::Clockwise
    } else {
        Chirality::Counterclockwise
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    pub center: (f64, f64),
    pub radius: f64,
    pub rms_radial_residual: f64,
}

/// Algebraic least-squares circle x² + y² + Dx + Ey + F = 0.
pub fn fit_circle(xs: &[f64], ys: &[f64]) -> Result<CircleFit> {
    let n = xs.len();
    if n < 3 || n != ys.len() {
        return Err(Error::InvalidParams(
            "circle fit needs at least three points".into(),
        ));
    }
    let design = DMatrix::from_fn(n, 3, |i, k| match k {
        0 => xs[i],
        1 => ys[i],
        _ => 1.0,
    });
    let rhs = DVector::from_fn(n, |i, _| -(xs[i] * xs[i] + ys[i] * ys[i]));
    let svd = design.svd(true, true);
    if !(svd.singular_values.min() > 1e-12 * svd.singular_values.max()) {
        return Err(Error::Rank);
    }
    let sol = svd.solve(&rhs, 0.0).map_err(|_| Error::Rank)?;
    let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = cx * cx + cy * cy - sol[2];
    if !(r2 > 0.0) {
        return Err(Error::Degenerate("points do not lie near a circle".into()));
    }
    let radius = r2.sqrt();
    let ms = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| ((x - cx).hypot(y - cy) - radius).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok(CircleFit {
        center: (cx, cy),
        radius,
        rms_radial_residual: ms.sqrt(),
    })
}
