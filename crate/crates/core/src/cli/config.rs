//! Experiment configuration: TOML schema, preset resolution and validation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::presets::{self, Preset};
use super::CliError;
use crate::energy::{EnergyForm, Gradient, Internal, Potential};
use crate::flow::{FlowConfig, DEFAULT_CLAMP_THRESHOLD};
use crate::grid::{GridSpec, InitialProfile};
use crate::mobility::MobilitySpec;
use crate::solver::SolveOptions;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilityChoice {
    Linear {
        m_bar: f64,
    },
    Power {
        c: f64,
        alpha: f64,
    },
    Bounded {
        c: f64,
        alpha1: f64,
        alpha2: f64,
        m_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InternalChoice {
    None,
    Entropy,
    PowerLaw { q: f64 },
    DoubleWell,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialChoice {
    Zero,
    Quadratic { a: f64, center: f64 },
    Table(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientChoice {
    None,
    Dirichlet { theta: f64 },
}

/// Initial datum selector.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialChoice {
    /// `cos(8πx) + 1`
    FpCosine,
    /// `(cos(8πx) + 1) / 2`
    ChCosine,
    /// `(x − 1/2)⁴ + 10⁻³`
    ThinFilm,
    Constant(f64),
    /// Samples on uniform nodes, linearly interpolated.
    Table(Vec<f64>),
}

impl MobilityChoice {
    pub fn build(&self) -> crate::Result<MobilitySpec> {
        match *self {
            Self::Linear { m_bar } => MobilitySpec::linear(m_bar),
            Self::Power { c, alpha } => MobilitySpec::power(c, alpha),
            Self::Bounded {
                c,
                alpha1,
                alpha2,
                m_max,
            } => MobilitySpec::bounded(c, alpha1, alpha2, m_max),
        }
    }
}

impl InternalChoice {
    pub fn build(&self) -> Internal {
        match *self {
            Self::None => Internal::None,
            Self::Entropy => Internal::Entropy,
            Self::PowerLaw { q } => Internal::PowerLaw { q },
            Self::DoubleWell => Internal::DoubleWell,
        }
    }
}

impl PotentialChoice {
    pub fn build(&self) -> Potential {
        match self {
            Self::Zero => Potential::Zero,
            Self::Quadratic { a, center } => Potential::Quadratic {
                a: *a,
                center: *center,
            },
            Self::Table(v) => Potential::Table(v.clone()),
        }
    }
}

impl GradientChoice {
    pub fn build(&self) -> Gradient {
        match *self {
            Self::None => Gradient::None,
            Self::Dirichlet { theta } => Gradient::QuadraticDirichlet { theta },
        }
    }
}

impl InitialChoice {
    pub fn build(&self) -> InitialProfile {
        match self {
            Self::FpCosine => InitialProfile::function(|x| (8.0 * PI * x).cos() + 1.0),
            Self::ChCosine => InitialProfile::function(|x| 0.5 * ((8.0 * PI * x).cos() + 1.0)),
            Self::ThinFilm => InitialProfile::function(|x| (x - 0.5).powi(4) + 0.001),
            Self::Constant(c) => {
                let c = *c;
                InitialProfile::function(move |_| c)
            }
            Self::Table(v) => InitialProfile::Table(v.clone()),
        }
    }
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub preset: Option<String>,
    pub n_t: usize,
    pub n_x: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub snapshot_every: usize,
    pub scale: f64,
    pub mobility: MobilityChoice,
    pub internal: InternalChoice,
    pub potential: PotentialChoice,
    pub gradient: GradientChoice,
    pub initial: InitialChoice,
    pub solver: SolveOptions,
    pub clamp_threshold: f64,
    pub out_dir: Option<PathBuf>,
    /// Reserved; the core is deterministic.
    pub seed: u64,
}

impl ExperimentConfig {
    /// Converts to library types, reporting every invalid parameter at once.
    pub fn flow_config(&self) -> Result<FlowConfig, CliError> {
        let mut bad = Vec::new();
        let grid = GridSpec::new(self.n_t, self.n_x)
            .map_err(|e| bad.push(e.to_string()))
            .ok();
        let mobility = self
            .mobility
            .build()
            .map_err(|e| bad.push(format!("mobility: {e}")))
            .ok();
        let energy = EnergyForm::new(
            self.internal.build(),
            self.potential.build(),
            self.gradient.build(),
        )
        .map_err(|e| bad.push(format!("energy: {e}")))
        .ok();
        if let (Some(grid), Some(mobility), Some(energy)) = (grid, mobility, energy) {
            let cfg = FlowConfig {
                tau: self.tau,
                steps: self.steps,
                epsilon: self.epsilon,
                grid,
                mobility,
                energy,
                snapshot_every: self.snapshot_every,
                solver: self.solver,
                clamp_threshold: self.clamp_threshold,
            };
            match cfg.validate() {
                Ok(()) => return Ok(cfg),
                Err(e) => bad.push(e.to_string()),
            }
        }
        Err(CliError::Invalid(bad))
    }

    pub fn initial_profile(&self) -> InitialProfile {
        self.initial.build()
    }
}

/// Command-line overrides, applied last.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub steps: Option<usize>,
    pub snapshot_every: Option<usize>,
    pub scale: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub name: Option<String>,
    pub preset: Option<String>,
    pub steps: Option<usize>,
    pub snapshot_every: Option<usize>,
    pub scale: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid: Option<GridSection>,
    pub mobility: Option<MobilitySection>,
    pub energy: Option<EnergySection>,
    pub initial: Option<InitialSection>,
    pub solver: Option<SolverSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_t: Option<usize>,
    pub n_x: Option<usize>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilitySection {
    pub kind: Option<String>,
    pub m_bar: Option<f64>,
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub m_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub internal: Option<String>,
    pub q: Option<f64>,
    pub potential: Option<String>,
    pub a: Option<f64>,
    pub center: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub gradient: Option<String>,
    pub theta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: Option<String>,
    pub value: Option<f64>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub grad_tol_abs: Option<f64>,
    pub grad_tol_rel: Option<f64>,
    pub max_iter: Option<usize>,
    pub fraction_to_boundary: Option<f64>,
    pub armijo_slope: Option<f64>,
    pub backtrack_factor: Option<f64>,
    pub damping_init: Option<f64>,
    pub damping_growth: Option<f64>,
    pub decrement_tol: Option<f64>,
    pub clamp_threshold: Option<f64>,
}

/// Parses a TOML configuration file. Syntax errors and unknown keys carry
/// line context.
pub fn parse_config_str(text: &str, origin: &str) -> Result<ConfigFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })
}

pub fn parse_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string())
}

/// Collects missing/invalid keys while resolving.
struct Resolver {
    errors: Vec<String>,
}

impl Resolver {
    fn require<T>(&mut self, key: &str, value: Option<T>) -> Option<T> {
        if value.is_none() {
            self.errors.push(format!("missing key `{key}`"));
        }
        value
    }

    /// Section value, else the preset's value when the kinds agree.
    fn param(&mut self, key: &str, explicit: Option<f64>, inherited: Option<f64>) -> f64 {
        self.require(key, explicit.or(inherited))
            .unwrap_or(f64::NAN)
    }
}

fn resolve_mobility(
    r: &mut Resolver,
    base: Option<MobilityChoice>,
    sec: Option<&MobilitySection>,
) -> Option<MobilityChoice> {
    let Some(sec) = sec else {
        return r.require("mobility.kind", base);
    };
    let kind = match (&sec.kind, base) {
        (Some(k), _) => k.clone(),
        (None, Some(MobilityChoice::Linear { .. })) => "linear".into(),
        (None, Some(MobilityChoice::Power { .. })) => "power".into(),
        (None, Some(MobilityChoice::Bounded { .. })) => "bounded".into(),
        (None, None) => {
            r.errors.push("missing key `mobility.kind`".into());
            return None;
        }
    };
    let mut extra = |names: &[(&str, Option<f64>)]| {
        for (n, v) in names {
            if v.is_some() {
                r.errors.push(format!(
                    "key `mobility.{n}` does not apply to mobility kind `{kind}`"
                ));
            }
        }
    };
    match kind.as_str() {
        "linear" => {
            extra(&[
                ("c", sec.c),
                ("alpha", sec.alpha),
                ("alpha1", sec.alpha1),
                ("alpha2", sec.alpha2),
                ("m_max", sec.m_max),
            ]);
            let inh = match base {
                Some(MobilityChoice::Linear { m_bar }) => Some(m_bar),
                _ => None,
            };
            Some(MobilityChoice::Linear {
                m_bar: r.param("mobility.m_bar", sec.m_bar, inh),
            })
        }
        "power" => {
            extra(&[
                ("m_bar", sec.m_bar),
                ("alpha1", sec.alpha1),
                ("alpha2", sec.alpha2),
                ("m_max", sec.m_max),
            ]);
            let inh = match base {
                Some(MobilityChoice::Power { c, alpha }) => (Some(c), Some(alpha)),
                _ => (None, None),
            };
            Some(MobilityChoice::Power {
                c: r.param("mobility.c", sec.c, inh.0),
                alpha: r.param("mobility.alpha", sec.alpha, inh.1),
            })
        }
        "bounded" => {
            extra(&[("m_bar", sec.m_bar), ("alpha", sec.alpha)]);
            let inh = match base {
                Some(MobilityChoice::Bounded {
                    c,
                    alpha1,
                    alpha2,
                    m_max,
                }) => (Some(c), Some(alpha1), Some(alpha2), Some(m_max)),
                _ => (None, None, None, None),
            };
            Some(MobilityChoice::Bounded {
                c: r.param("mobility.c", sec.c, inh.0),
                alpha1: r.param("mobility.alpha1", sec.alpha1, inh.1),
                alpha2: r.param("mobility.alpha2", sec.alpha2, inh.2),
                m_max: r.param("mobility.m_max", sec.m_max, inh.3),
            })
        }
        other => {
            r.errors.push(format!(
                "unknown mobility kind `{other}` (expected linear, power or bounded)"
            ));
            None
        }
    }
}

fn resolve_internal(
    r: &mut Resolver,
    base: Option<InternalChoice>,
    sec: Option<&EnergySection>,
) -> Option<InternalChoice> {
    let name = sec.and_then(|s| s.internal.clone());
    let q = sec.and_then(|s| s.q);
    let Some(name) = name else {
        if let (Some(q), Some(InternalChoice::PowerLaw { .. })) = (q, base) {
            return Some(InternalChoice::PowerLaw { q });
        }
        if q.is_some() {
            r.errors
                .push("key `energy.q` requires `energy.internal = \"power-law\"`".into());
        }
        return r.require("energy.internal", base);
    };
    if q.is_some() && name != "power-law" {
        r.errors.push(format!(
            "key `energy.q` does not apply to internal energy `{name}`"
        ));
    }
    match name.as_str() {
        "none" => Some(InternalChoice::None),
        "entropy" => Some(InternalChoice::Entropy),
        "double-well" => Some(InternalChoice::DoubleWell),
        "power-law" => {
            let inh = match base {
                Some(InternalChoice::PowerLaw { q }) => Some(q),
                _ => None,
            };
            Some(InternalChoice::PowerLaw {
                q: r.param("energy.q", q, inh),
            })
        }
        other => {
            r.errors.push(format!(
                "unknown internal energy `{other}` (expected none, entropy, power-law or double-well)"
            ));
            None
        }
    }
}

fn resolve_potential(
    r: &mut Resolver,
    base: Option<PotentialChoice>,
    sec: Option<&EnergySection>,
) -> Option<PotentialChoice> {
    let (name, a, center, values) = match sec {
        Some(s) => (s.potential.clone(), s.a, s.center, s.values.clone()),
        None => (None, None, None, None),
    };
    let name = match (name, &base) {
        (Some(n), _) => n,
        (None, Some(PotentialChoice::Quadratic { .. })) if a.is_some() || center.is_some() => {
            "quadratic".into()
        }
        (None, _) if a.is_some() || center.is_some() || values.is_some() => {
            r.errors
                .push("potential parameters given without `energy.potential`".into());
            return None;
        }
        (None, _) => return r.require("energy.potential", base),
    };
    match name.as_str() {
        "zero" => {
            if a.is_some() || center.is_some() || values.is_some() {
                r.errors.push("potential `zero` takes no parameters".into());
            }
            Some(PotentialChoice::Zero)
        }
        "quadratic" => {
            if values.is_some() {
                r.errors
                    .push("key `energy.values` does not apply to potential `quadratic`".into());
            }
            let inh = match &base {
                Some(PotentialChoice::Quadratic { a, center }) => (Some(*a), Some(*center)),
                _ => (None, None),
            };
            Some(PotentialChoice::Quadratic {
                a: r.param("energy.a", a, inh.0),
                center: r.param("energy.center", center, inh.1),
            })
        }
        "table" => {
            if a.is_some() || center.is_some() {
                r.errors.push(
                    "keys `energy.a`/`energy.center` do not apply to potential `table`".into(),
                );
            }
            let inh = match &base {
                Some(PotentialChoice::Table(v)) => Some(v.clone()),
                _ => None,
            };
            r.require("energy.values", values.or(inh))
                .map(PotentialChoice::Table)
        }
        other => {
            r.errors.push(format!(
                "unknown potential `{other}` (expected zero, quadratic or table)"
            ));
            None
        }
    }
}

fn resolve_gradient(
    r: &mut Resolver,
    base: Option<GradientChoice>,
    sec: Option<&EnergySection>,
) -> Option<GradientChoice> {
    let name = sec.and_then(|s| s.gradient.clone());
    let theta = sec.and_then(|s| s.theta);
    let name = match (name, base) {
        (Some(n), _) => n,
        (None, Some(GradientChoice::Dirichlet { .. })) if theta.is_some() => "dirichlet".into(),
        (None, _) if theta.is_some() => {
            r.errors
                .push("key `energy.theta` requires `energy.gradient = \"dirichlet\"`".into());
            return None;
        }
        (None, _) => return r.require("energy.gradient", base),
    };
    match name.as_str() {
        "none" => {
            if theta.is_some() {
                r.errors
                    .push("key `energy.theta` does not apply to gradient `none`".into());
            }
            Some(GradientChoice::None)
        }
        "dirichlet" => {
            let inh = match base {
                Some(GradientChoice::Dirichlet { theta }) => Some(theta),
                _ => None,
            };
            Some(GradientChoice::Dirichlet {
                theta: r.param("energy.theta", theta, inh),
            })
        }
        other => {
            r.errors.push(format!(
                "unknown gradient term `{other}` (expected none or dirichlet)"
            ));
            None
        }
    }
}

fn resolve_initial(
    r: &mut Resolver,
    base: Option<InitialChoice>,
    sec: Option<&InitialSection>,
) -> Option<InitialChoice> {
    let Some(sec) = sec else {
        return r.require("initial.kind", base);
    };
    let kind = match (&sec.kind, &base) {
        (Some(k), _) => k.clone(),
        (None, Some(InitialChoice::Constant(_))) if sec.value.is_some() => "constant".into(),
        (None, Some(InitialChoice::Table(_))) if sec.values.is_some() => "table".into(),
        (None, _) => {
            r.errors.push("missing key `initial.kind`".into());
            return None;
        }
    };
    let no_params = |r: &mut Resolver| {
        if sec.value.is_some() || sec.values.is_some() {
            r.errors
                .push(format!("initial datum `{kind}` takes no parameters"));
        }
    };
    match kind.as_str() {
        "fp-cosine" => {
            no_params(r);
            Some(InitialChoice::FpCosine)
        }
        "ch-cosine" => {
            no_params(r);
            Some(InitialChoice::ChCosine)
        }
        "thin-film" => {
            no_params(r);
            Some(InitialChoice::ThinFilm)
        }
        "constant" => r
            .require("initial.value", sec.value)
            .map(InitialChoice::Constant),
        "table" => {
            let values = r.require("initial.values", sec.values.clone())?;
            if values.len() < 2 {
                r.errors
                    .push("`initial.values` needs at least two samples".into());
            }
            Some(InitialChoice::Table(values))
        }
        other => {
            r.errors.push(format!(
                "unknown initial datum `{other}` (expected fp-cosine, ch-cosine, thin-film, constant or table)"
            ));
            None
        }
    }
}

/// Applies a resolution scale factor: `N_Δx ← round(N_Δx / s)`, `τ ← s τ`, and
/// the preset step count (when not given explicitly) `← ⌈K / s⌉`.
pub fn apply_scale(
    n_x: usize,
    tau: f64,
    steps: usize,
    scale: f64,
    steps_explicit: bool,
) -> (usize, f64, usize) {
    if scale == 1.0 {
        return (n_x, tau, steps);
    }
    let n = ((n_x as f64 / scale).round() as usize).max(2);
    let k = if steps_explicit {
        steps
    } else {
        (steps as f64 / scale).ceil() as usize
    };
    (n, tau * scale, k)
}

/// Merges preset, file and command-line values into a validated experiment.
pub fn resolve(file: Option<&ConfigFile>, cli: &Overrides) -> Result<ExperimentConfig, CliError> {
    let empty = ConfigFile::default();
    let file = file.unwrap_or(&empty);
    let preset_name = cli.preset.clone().or_else(|| file.preset.clone());
    let preset: Option<Preset> = match &preset_name {
        Some(name) => Some(presets::find(name).ok_or_else(|| CliError::UnknownPreset {
            name: name.clone(),
            known: presets::names().join(", "),
        })?),
        None => None,
    };
    let p = preset.as_ref();
    let mut r = Resolver { errors: Vec::new() };

    let grid = file.grid.as_ref();
    let n_t = r.require("grid.n_t", grid.and_then(|g| g.n_t).or(p.map(|p| p.n_t)));
    let n_x = r.require("grid.n_x", grid.and_then(|g| g.n_x).or(p.map(|p| p.n_x)));
    let tau = r.require("grid.tau", grid.and_then(|g| g.tau).or(p.map(|p| p.tau)));
    let epsilon = r.require(
        "grid.epsilon",
        grid.and_then(|g| g.epsilon).or(p.map(|p| p.epsilon)),
    );
    let explicit_steps = cli.steps.or(file.steps);
    let steps = r.require("steps", explicit_steps.or(p.map(|p| p.steps)));
    let snapshot_every = cli
        .snapshot_every
        .or(file.snapshot_every)
        .or(p.map(|p| p.snapshot_every))
        .unwrap_or(1);
    let scale = cli.scale.or(file.scale).unwrap_or(1.0);
    if !(scale >= 1.0 && scale.is_finite()) {
        r.errors
            .push(format!("scale must be a finite number ≥ 1, got {scale}"));
    }

    let mobility = resolve_mobility(&mut r, p.map(|p| p.mobility), file.mobility.as_ref());
    let energy = file.energy.as_ref();
    let internal = resolve_internal(&mut r, p.map(|p| p.internal), energy);
    let potential = resolve_potential(&mut r, p.map(|p| p.potential.clone()), energy);
    let gradient = resolve_gradient(&mut r, p.map(|p| p.gradient), energy);
    let initial = resolve_initial(&mut r, p.map(|p| p.initial.clone()), file.initial.as_ref());

    let d = SolveOptions::default();
    let s = file.solver.as_ref();
    let solver = SolveOptions {
        grad_tol_abs: s.and_then(|s| s.grad_tol_abs).unwrap_or(d.grad_tol_abs),
        grad_tol_rel: s.and_then(|s| s.grad_tol_rel).unwrap_or(d.grad_tol_rel),
        max_iter: s.and_then(|s| s.max_iter).unwrap_or(d.max_iter),
        fraction_to_boundary: s
            .and_then(|s| s.fraction_to_boundary)
            .unwrap_or(d.fraction_to_boundary),
        armijo_slope: s.and_then(|s| s.armijo_slope).unwrap_or(d.armijo_slope),
        backtrack_factor: s
            .and_then(|s| s.backtrack_factor)
            .unwrap_or(d.backtrack_factor),
        damping_init: s.and_then(|s| s.damping_init).unwrap_or(d.damping_init),
        damping_growth: s.and_then(|s| s.damping_growth).unwrap_or(d.damping_growth),
        decrement_tol: s.and_then(|s| s.decrement_tol).unwrap_or(d.decrement_tol),
    };
    let clamp_threshold = s
        .and_then(|s| s.clamp_threshold)
        .unwrap_or(DEFAULT_CLAMP_THRESHOLD);

    let (
        Some(n_t),
        Some(n_x),
        Some(tau),
        Some(epsilon),
        Some(steps),
        Some(mobility),
        Some(internal),
        Some(potential),
        Some(gradient),
        Some(initial),
    ) = (
        n_t, n_x, tau, epsilon, steps, mobility, internal, potential, gradient, initial,
    )
    else {
        return Err(CliError::Invalid(r.errors));
    };
    if !r.errors.is_empty() {
        return Err(CliError::Invalid(r.errors));
    }
    let (n_x, tau, steps) = apply_scale(n_x, tau, steps, scale, explicit_steps.is_some());
    let name = file
        .name
        .clone()
        .or_else(|| preset_name.clone())
        .unwrap_or_else(|| "experiment".to_string());
    let cfg = ExperimentConfig {
        name,
        preset: preset_name,
        n_t,
        n_x,
        tau,
        epsilon,
        steps,
        snapshot_every,
        scale,
        mobility,
        internal,
        potential,
        gradient,
        initial,
        solver,
        clamp_threshold,
        out_dir: cli.out_dir.clone().or_else(|| file.out_dir.clone()),
        seed: file.seed.unwrap_or(0),
    };
    cfg.flow_config()?;
    Ok(cfg)
}

/// Resolves a preset by name with optional command-line overrides.
pub fn from_preset(name: &str, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let o = Overrides {
        preset: Some(name.to_string()),
        ..overrides.clone()
    };
    resolve(None, &o)
}
