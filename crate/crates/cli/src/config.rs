//! TOML run configuration.
//!
//! A file holds optional `[dispersion]`, `[landau]`, `[helicity]` and
//! `[trajectory]` sections. Every key is optional and falls back to the
//! scenario default. Units follow the output files: frequencies in kHz
//! (ω/2π), times in µs.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use weylsim::evolve::DEFAULT_DT_MAX;
use weylsim::model::khz_from_angular;
use weylsim::scenarios::{ScenarioConfig, ScenarioName};
use weylsim::{SimParams, SpaceSpec, SpinState, TimeGrid, C64};

#[derive(Debug)]
pub enum ConfigError {
    Read {
        path: String,
        source: std::io::Error,
    },
    Parse {
        path: String,
        message: String,
    },
    /// `key` is a dotted path such as `landau.r`.
    Invalid {
        key: String,
        message: String,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Read { path, source } => write!(f, "cannot read config file {path}: {source}"),
            Self::Parse { path, message } => write!(f, "invalid config file {path}:\n{message}"),
            Self::Invalid { key, message } => write!(f, "invalid value for {key}: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A dephasing time in µs, or `"inf"` for no dephasing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tau {
    Finite(f64),
    Infinite,
}

impl Tau {
    fn from_ms(ms: f64) -> Self {
        if ms.is_infinite() {
            Self::Infinite
        } else {
            Self::Finite(tidy(ms * 1e3))
        }
    }

    fn to_ms(self) -> f64 {
        match self {
            Self::Finite(us) => us / 1e3,
            Self::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for Tau {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Finite(v) => s.serialize_f64(*v),
            Self::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Self::Finite(v)),
            Repr::Text(t) if t == "inf" => Ok(Self::Infinite),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number of microseconds or \"inf\", found \"{t}\""
            ))),
        }
    }
}

/// One scenario section as written in a file. Also the serialized form of
/// a fully resolved configuration, where every applicable key is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    /// Sideband Rabi frequency Ω/2π, kHz.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Probe Rabi frequency Ωp/2π, kHz.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_probe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_d_x: Option<Tau>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_d_y: Option<Tau>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max_x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max_y: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_n_max_x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_n_max_y: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Master-equation substep cap, µs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_window: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// One of `+z`, `-z`, `+x`, `-x`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_spin: Option<String>,
    /// `[re, im]`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_x: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_y: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pad_factor: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_every: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<Section>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landau: Option<Section>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub helicity: Option<Section>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Section>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: shown.clone(),
            source,
        })?;
        Self::parse(&text, &shown)
    }

    pub fn section(&self, name: ScenarioName) -> Option<&Section> {
        match name {
            ScenarioName::Dispersion => self.dispersion.as_ref(),
            ScenarioName::Landau => self.landau.as_ref(),
            ScenarioName::Helicity => self.helicity.as_ref(),
            ScenarioName::Trajectory => self.trajectory.as_ref(),
        }
    }

    pub fn set_section(&mut self, name: ScenarioName, s: Section) {
        let slot = match name {
            ScenarioName::Dispersion => &mut self.dispersion,
            ScenarioName::Landau => &mut self.landau,
            ScenarioName::Helicity => &mut self.helicity,
            ScenarioName::Trajectory => &mut self.trajectory,
        };
        *slot = Some(s);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Overrides given on the command line.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub no_noise: bool,
    pub n_max: Option<usize>,
}

/// Rounds to 12 significant digits so unit conversions of the built-in
/// defaults print as the literal values (4.2 rather than 4.200000000000001).
fn tidy(x: f64) -> f64 {
    format!("{x:.11e}").parse().expect("formatted float parses")
}

fn complex_pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

fn spin_label(s: SpinState) -> &'static str {
    match s {
        SpinState::PlusZ => "+z",
        SpinState::MinusZ => "-z",
        SpinState::PlusX => "+x",
        SpinState::MinusX => "-x",
    }
}

fn parse_spin(label: &str) -> Option<SpinState> {
    Some(match label {
        "+z" => SpinState::PlusZ,
        "-z" => SpinState::MinusZ,
        "+x" => SpinState::PlusX,
        "-x" => SpinState::MinusX,
        _ => return None,
    })
}

/// Built-in defaults for `name`, expressed as a complete section.
pub fn default_section(name: ScenarioName) -> Section {
    let cfg = ScenarioConfig::defaults(name);
    let p = &cfg.params;
    let landau = name == ScenarioName::Landau;
    let long = cfg.long_grid;
    Section {
        omega: Some(tidy(khz_from_angular(p.omega))),
        omega_probe: Some(tidy(khz_from_angular(p.omega_probe))),
        r: Some(p.r),
        tau_d_x: Some(Tau::from_ms(p.tau_d_x)),
        tau_d_y: Some(Tau::from_ms(p.tau_d_y)),
        noise: Some(cfg.noise_on),
        n_max_x: cfg.space.n_max(weylsim::fockspace::Mode::X),
        n_max_y: cfg.space.n_max(weylsim::fockspace::Mode::Y),
        noise_n_max_x: cfg
            .noise_space
            .and_then(|s| s.n_max(weylsim::fockspace::Mode::X)),
        noise_n_max_y: cfg
            .noise_space
            .and_then(|s| s.n_max(weylsim::fockspace::Mode::Y)),
        t_start: Some(tidy(cfg.grid.t_start * 1e3)),
        t_end: Some(tidy(cfg.grid.t_end * 1e3)),
        samples: Some(cfg.grid.n_samples),
        dt_max: Some(tidy(cfg.grid.dt_max * 1e3)),
        long_window: landau.then_some(long.is_some()),
        long_t_end: long.map(|g| tidy(g.t_end * 1e3)),
        long_samples: long.map(|g| g.n_samples),
        sweep: cfg.sweep.clone(),
        theta: (name == ScenarioName::Dispersion).then_some(cfg.theta),
        initial_spin: (name != ScenarioName::Trajectory)
            .then(|| spin_label(cfg.initial_spin).to_string()),
        alpha_x: Some(complex_pair(cfg.alpha_x)),
        alpha_y: Some(complex_pair(cfg.alpha_y)),
        pad_factor: Some(cfg.pad_factor),
        peak_frac: Some(cfg.peak_frac),
        probe_every: (name == ScenarioName::Helicity).then_some(cfg.probe_every),
    }
}

/// Keys that only make sense for one scenario.
fn scenario_only_keys(s: &Section) -> [(&'static str, bool, ScenarioName); 8] {
    use ScenarioName::*;
    [
        ("noise_n_max_x", s.noise_n_max_x.is_some(), Landau),
        ("noise_n_max_y", s.noise_n_max_y.is_some(), Landau),
        ("long_window", s.long_window.is_some(), Landau),
        ("long_t_end", s.long_t_end.is_some(), Landau),
        ("long_samples", s.long_samples.is_some(), Landau),
        ("sweep", s.sweep.is_some(), Dispersion),
        ("theta", s.theta.is_some(), Dispersion),
        ("probe_every", s.probe_every.is_some(), Helicity),
    ]
}

/// Section values layered over the defaults, with command-line overrides
/// applied last. The result has every applicable key set.
pub fn resolve(
    name: ScenarioName,
    given: Option<&Section>,
    ov: Overrides,
) -> Result<Section, ConfigError> {
    let mut out = default_section(name);
    if let Some(s) = given {
        for (key, present, owner) in scenario_only_keys(s) {
            if present && owner != name {
                return Err(ConfigError::Invalid {
                    key: format!("{name}.{key}"),
                    message: format!("applies to the {owner} scenario only"),
                });
            }
        }
        if s.initial_spin.is_some() && name == ScenarioName::Trajectory {
            return Err(ConfigError::Invalid {
                key: format!("{name}.initial_spin"),
                message: "trajectory always runs both +x and -x".into(),
            });
        }
        macro_rules! layer {
            ($($f:ident),*) => { $( if s.$f.is_some() { out.$f = s.$f.clone(); } )* };
        }
        layer!(
            omega,
            omega_probe,
            r,
            tau_d_x,
            tau_d_y,
            noise,
            n_max_x,
            n_max_y,
            noise_n_max_x,
            noise_n_max_y,
            t_start,
            t_end,
            samples,
            dt_max,
            long_window,
            long_t_end,
            long_samples,
            sweep,
            theta,
            initial_spin,
            alpha_x,
            alpha_y,
            pad_factor,
            peak_frac,
            probe_every
        );
        // a file that sets only omega should probe at the same frequency
        if s.omega.is_some() && s.omega_probe.is_none() {
            out.omega_probe = s.omega;
        }
    }
    if ov.no_noise {
        out.noise = Some(false);
    }
    if let Some(n) = ov.n_max {
        out.n_max_x = Some(n);
        out.n_max_y = Some(n);
        if name == ScenarioName::Landau {
            out.noise_n_max_x = Some(n);
            out.noise_n_max_y = Some(n);
        }
    }
    Ok(out)
}

fn invalid(name: ScenarioName, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: format!("{name}.{key}"),
        message: message.into(),
    }
}

fn need<T: Clone>(name: ScenarioName, key: &str, v: &Option<T>) -> Result<T, ConfigError> {
    v.clone().ok_or_else(|| invalid(name, key, "missing"))
}

fn positive(name: ScenarioName, key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(
            name,
            key,
            format!("must be a positive number (got {v})"),
        ))
    }
}

/// Converts a resolved section to simulator units and validates it.
pub fn to_scenario(name: ScenarioName, s: &Section) -> Result<ScenarioConfig, ConfigError> {
    let omega = positive(name, "omega", need(name, "omega", &s.omega)?)?;
    let omega_probe = positive(
        name,
        "omega_probe",
        need(name, "omega_probe", &s.omega_probe)?,
    )?;
    let r = need(name, "r", &s.r)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid(
            name,
            "r",
            format!("must be non-negative (got {r})"),
        ));
    }
    let tau = |key: &str, t: &Option<Tau>| -> Result<f64, ConfigError> {
        match need(name, key, t)? {
            Tau::Infinite => Ok(f64::INFINITY),
            Tau::Finite(v) => positive(name, key, v).map(|_| Tau::Finite(v).to_ms()),
        }
    };
    let (tx, ty) = (tau("tau_d_x", &s.tau_d_x)?, tau("tau_d_y", &s.tau_d_y)?);
    let mut params = SimParams::new(omega, r)
        .and_then(|p| p.with_dephasing(tx, ty))
        .map_err(|e| invalid(name, "omega", e.to_string()))?;
    params.omega_probe = weylsim::model::angular_from_khz(omega_probe);

    let space_of = |kx: &str,
                    ky: &str,
                    x: &Option<usize>,
                    y: &Option<usize>|
     -> Result<SpaceSpec, ConfigError> {
        let (nx, ny) = (need(name, kx, x)?, need(name, ky, y)?);
        for (k, n) in [(kx, nx), (ky, ny)] {
            if n == 0 {
                return Err(invalid(name, k, "must be at least 1"));
            }
        }
        SpaceSpec::two_mode(nx, ny).map_err(|e| invalid(name, kx, e.to_string()))
    };
    let space = space_of("n_max_x", "n_max_y", &s.n_max_x, &s.n_max_y)?;
    let noise_space = match (s.noise_n_max_x, s.noise_n_max_y) {
        (None, None) => None,
        _ => Some(space_of(
            "noise_n_max_x",
            "noise_n_max_y",
            &s.noise_n_max_x,
            &s.noise_n_max_y,
        )?),
    };

    let t_start = need(name, "t_start", &s.t_start)?;
    let t_end = need(name, "t_end", &s.t_end)?;
    if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
        return Err(invalid(
            name,
            "t_end",
            format!("must exceed t_start (got {t_start} .. {t_end})"),
        ));
    }
    let samples = need(name, "samples", &s.samples)?;
    if samples < 2 {
        return Err(invalid(name, "samples", "must be at least 2"));
    }
    let dt_max = positive(name, "dt_max", s.dt_max.unwrap_or(DEFAULT_DT_MAX * 1e3))? / 1e3;
    let grid = TimeGrid::with_dt_max(t_start / 1e3, t_end / 1e3, samples, dt_max)
        .map_err(|e| invalid(name, "t_end", e.to_string()))?;
    let long_grid = if s.long_window.unwrap_or(false) {
        let end = need(name, "long_t_end", &s.long_t_end)?;
        let n = need(name, "long_samples", &s.long_samples)?;
        if !(end.is_finite() && end > t_start) {
            return Err(invalid(
                name,
                "long_t_end",
                format!("must exceed t_start (got {end})"),
            ));
        }
        if n < 2 {
            return Err(invalid(name, "long_samples", "must be at least 2"));
        }
        Some(
            TimeGrid::with_dt_max(t_start / 1e3, end / 1e3, n, dt_max)
                .map_err(|e| invalid(name, "long_t_end", e.to_string()))?,
        )
    } else {
        None
    };

    let initial_spin = match &s.initial_spin {
        Some(label) => parse_spin(label).ok_or_else(|| {
            invalid(
                name,
                "initial_spin",
                format!("expected +z, -z, +x or -x (got \"{label}\")"),
            )
        })?,
        None => ScenarioConfig::defaults(name).initial_spin,
    };
    let pair = |v: [f64; 2]| C64::new(v[0], v[1]);
    let cfg = ScenarioConfig {
        name,
        params,
        space,
        noise_space,
        grid,
        long_grid,
        sweep: s.sweep.clone(),
        theta: s.theta.unwrap_or(0.0),
        initial_spin,
        alpha_x: pair(need(name, "alpha_x", &s.alpha_x)?),
        alpha_y: pair(need(name, "alpha_y", &s.alpha_y)?),
        noise_on: need(name, "noise", &s.noise)?,
        pad_factor: need(name, "pad_factor", &s.pad_factor)?,
        peak_frac: need(name, "peak_frac", &s.peak_frac)?,
        probe_every: s.probe_every.unwrap_or(0),
    };
    cfg.validate().map_err(|e| ConfigError::Invalid {
        key: name.to_string(),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

/// Resolved section and simulator config for `name`.
pub fn load_scenario(
    file: Option<&ConfigFile>,
    name: ScenarioName,
    ov: Overrides,
) -> Result<(Section, ScenarioConfig), ConfigError> {
    let resolved = resolve(name, file.and_then(|f| f.section(name)), ov)?;
    let cfg = to_scenario(name, &resolved)?;
    Ok((resolved, cfg))
}
