//! Line-oriented configuration files.
//!
//! ```text
//! # comment
//! [grid]
//! geometry = rectangle
//! nx = 128
//! lx = pi
//! [model]
//! chi = 1
//! lambda = 0.1
//! [u_init]
//! preset = gaussian
//! mass = 0.9*4*pi
//! ```
//!
//! Keys before the first header belong to the top-level section. Reals accept
//! products and quotients of numbers and `pi`. Every error names the offending
//! key and the line it came from; unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use kslab_core::dynamics::StepperConfig;
use kslab_core::experiments::{RefinementPlan, ScanOptions, Scenario, SweepOptions, VInit};
use kslab_core::functionals::DiagnosticsSpec;
use kslab_core::theory::{Selector, SemigroupCheckSpec};
use kslab_core::{Geometry, GridSpec, Preset};

/// A configuration problem, reported with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(key: &str, line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError { key: Some(key.to_string()), line, message: message.into() }
    }

    fn bare(message: impl Into<String>) -> Self {
        ConfigError { key: None, line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.key, self.line) {
            (Some(k), Some(l)) => write!(f, "line {l}: `{k}`: {}", self.message),
            (Some(k), None) => write!(f, "`{k}`: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type Res<T> = Result<T, ConfigError>;

/// Accepted sections and their keys.
const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["experiment", "output_dir", "seed"]),
    ("grid", &["geometry", "lx", "ly", "nx", "ny", "radius", "nr"]),
    ("model", &["chi", "lambda", "lambdas"]),
    ("u_init", &["preset", "value", "base", "amplitude", "mode", "center", "width", "mass"]),
    ("v_init", &["preset", "value", "base", "amplitude", "mode", "center", "width", "mass"]),
    (
        "stepper",
        &[
            "dt_max",
            "dt_min",
            "cfl_safety",
            "linear_tol",
            "max_iter",
            "t_end",
            "diag_stride",
            "blowup_linf_threshold",
            "blowup_linf_factor",
            "diag_theta",
            "diag_q",
        ],
    ),
    ("sweep", &["t0", "lambda_cap", "coarse_control"]),
    ("blowup", &["masses", "growth_factor", "linf_factor", "double_chi"]),
    ("stability", &["delta", "bump_center", "bump_width"]),
    ("refine", &["space_cells", "dt_factor", "space_t_end", "dt_levels", "time_t_end", "time_lambda"]),
    ("smalldata", &["epsilon", "n", "p", "q", "selector"]),
    ("semigroup", &["dt", "t_min", "t_max", "samples", "tail_start", "pairs"]),
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    /// `None` for values injected on the command line.
    line: Option<usize>,
}

/// Raw `section.key -> value` table, preserving line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

fn check_known(section: &str, key: &str, line: Option<usize>) -> Res<()> {
    let full = qualified(section, key);
    match SCHEMA.iter().find(|(s, _)| *s == section) {
        None => Err(ConfigError::at(&full, line, format!("unknown section `[{section}]`"))),
        Some((_, keys)) if !keys.contains(&key) => Err(ConfigError::at(&full, line, "unknown key")),
        _ => Ok(()),
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Res<RawConfig> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError {
                    key: None,
                    line: Some(ln),
                    message: format!("line {ln}: malformed section header `{body}`"),
                })?;
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) || name.is_empty() {
                    return Err(ConfigError::at(&format!("[{name}]"), Some(ln), "unknown section"));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| ConfigError {
                key: None,
                line: Some(ln),
                message: format!("line {ln}: expected `key = value`, got `{body}`"),
            })?;
            let key = k.trim();
            check_known(&section, key, Some(ln))?;
            let full = qualified(&section, key);
            if raw.entries.contains_key(&full) {
                return Err(ConfigError::at(&full, Some(ln), "duplicate key"));
            }
            raw.entries.insert(full, Entry { value: v.trim().to_string(), line: Some(ln) });
        }
        Ok(raw)
    }

    /// Applies a `section.key=value` override; overrides win over the file.
    pub fn set(&mut self, assignment: &str) -> Res<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::bare(format!("override `{assignment}` is not `key=value`")))?;
        let k = k.trim();
        let (section, key) = k.rsplit_once('.').unwrap_or(("", k));
        check_known(section, key, None)?;
        self.entries.insert(k.to_string(), Entry { value: v.trim().to_string(), line: None });
        Ok(())
    }

    fn get(&self, key: &str) -> Option<(&str, Option<usize>)> {
        self.entries.get(key).map(|e| (e.value.as_str(), e.line))
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).and_then(|e| e.line)
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn has_section(&self, section: &str) -> bool {
        let prefix = format!("{section}.");
        self.entries.keys().any(|k| k.starts_with(&prefix))
    }

    fn string(&self, key: &str) -> Option<String> {
        self.get(key).map(|(v, _)| v.to_string())
    }

    fn req_string(&self, key: &str) -> Res<String> {
        self.string(key).ok_or_else(|| ConfigError::at(key, None, "missing required key"))
    }

    fn real(&self, key: &str) -> Res<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => parse_real(v).map(Some).map_err(|m| ConfigError::at(key, line, m)),
        }
    }

    fn req_real(&self, key: &str) -> Res<f64> {
        self.real(key)?.ok_or_else(|| ConfigError::at(key, None, "missing required key"))
    }

    fn real_or(&self, key: &str, default: f64) -> Res<f64> {
        Ok(self.real(key)?.unwrap_or(default))
    }

    fn int(&self, key: &str) -> Res<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| ConfigError::at(key, line, format!("expected a nonnegative integer, got `{v}`"))),
        }
    }

    fn int_or(&self, key: &str, default: usize) -> Res<usize> {
        Ok(self.int(key)?.unwrap_or(default))
    }

    fn boolean_or(&self, key: &str, default: bool) -> Res<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(("true", _)) => Ok(true),
            Some(("false", _)) => Ok(false),
            Some((v, line)) => Err(ConfigError::at(key, line, format!("expected true or false, got `{v}`"))),
        }
    }

    fn reals(&self, key: &str) -> Res<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|s| parse_real(s.trim()))
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|m| ConfigError::at(key, line, m)),
        }
    }

    fn ints(&self, key: &str) -> Res<Option<Vec<usize>>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| ConfigError::at(key, line, format!("expected a list of integers, got `{v}`"))),
        }
    }

    fn pair(&self, key: &str) -> Res<Option<(f64, f64)>> {
        match self.reals(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
            Some(_) => Err(ConfigError::at(key, self.line(key), "expected two comma-separated values")),
        }
    }

    /// Canonical `key = value` listing, sorted by key.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, e)| format!("{k} = {}\n", e.value)).collect()
    }
}

/// Parses `a*b/c` where each factor is a decimal number or `pi`.
pub fn parse_real(text: &str) -> Result<f64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err("expected a number, got an empty value".into());
    }
    let factor = |f: &str| -> Result<f64, String> {
        match f {
            "pi" => Ok(std::f64::consts::PI),
            "inf" => Ok(f64::INFINITY),
            _ => f.parse::<f64>().map_err(|_| format!("expected a number, got `{text}`")),
        }
    };
    let mut value = 1.0;
    let mut op = '*';
    let mut start = 0;
    let bytes: Vec<char> = s.chars().collect();
    for i in 0..=bytes.len() {
        let at_end = i == bytes.len();
        // a sign after an exponent marker belongs to the number
        let is_op = !at_end && (bytes[i] == '*' || bytes[i] == '/');
        if at_end || is_op {
            let f: String = bytes[start..i].iter().collect();
            let x = factor(&f)?;
            value = if op == '*' { value * x } else { value / x };
            if !at_end {
                op = bytes[i];
                start = i + 1;
            }
        }
    }
    if value.is_nan() {
        return Err(format!("`{text}` is not a number"));
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Run,
    Sweep,
    Blowup,
    Intervals,
    Semigroup,
    Refine,
    Stability,
    Smalldata,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Run => "run",
            Experiment::Sweep => "sweep",
            Experiment::Blowup => "blowup",
            Experiment::Intervals => "intervals",
            Experiment::Semigroup => "semigroup",
            Experiment::Refine => "refine",
            Experiment::Stability => "stability",
            Experiment::Smalldata => "smalldata",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "run" => Experiment::Run,
            "sweep" => Experiment::Sweep,
            "blowup" => Experiment::Blowup,
            "intervals" => Experiment::Intervals,
            "semigroup" => Experiment::Semigroup,
            "refine" => Experiment::Refine,
            "stability" => Experiment::Stability,
            "smalldata" => Experiment::Smalldata,
            other => return Err(format!("unknown experiment `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallDataParams {
    pub epsilon: f64,
    pub n: u32,
    pub p: f64,
    pub q: f64,
    pub selector: Selector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupParams {
    pub masses: Vec<f64>,
    pub options: ScanOptions,
    pub linf_factor: f64,
    pub double_chi: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityParams {
    pub delta: f64,
    pub bump: Preset,
}

/// A fully validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub scenario: Scenario,
    pub lambda: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub sweep: SweepOptions,
    pub blowup: BlowupParams,
    pub stability: StabilityParams,
    pub refine: RefinementPlan,
    pub smalldata: SmallDataParams,
    pub semigroup: SemigroupCheckSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Canonical listing of the raw inputs, hashed into the manifest.
    pub canonical: String,
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_config_with(path, &[])
}

/// [`parse_config`] with `section.key=value` overrides applied on top.
pub fn parse_config_with(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::bare(format!("cannot read {}: {e}", path.display())))?;
    let mut raw = RawConfig::parse(&text)?;
    for o in overrides {
        raw.set(o)?;
    }
    build(&raw)
}

fn preset(raw: &RawConfig, section: &str, allow_consistent: bool) -> Res<Option<Preset>> {
    let key = |k: &str| format!("{section}.{k}");
    let kind = raw.req_string(&key("preset"))?;
    let p = match kind.as_str() {
        "consistent" if allow_consistent => return Ok(None),
        "constant" => Preset::Constant { value: raw.req_real(&key("value"))? },
        "cosine" => {
            let mode = match raw.ints(&key("mode"))? {
                None => (1, 0),
                Some(m) if m.len() == 2 => (m[0] as u32, m[1] as u32),
                Some(_) => return Err(ConfigError::at(&key("mode"), raw.line(&key("mode")), "expected `kx, ky`")),
            };
            Preset::CosinePerturbed {
                base: raw.req_real(&key("base"))?,
                amplitude: raw.req_real(&key("amplitude"))?,
                mode,
            }
        }
        "gaussian" => Preset::GaussianBump {
            center: raw
                .pair(&key("center"))?
                .ok_or_else(|| ConfigError::at(&key("center"), None, "missing required key"))?,
            width: raw.req_real(&key("width"))?,
            target_mass: raw.req_real(&key("mass"))?,
        },
        "radial_gaussian" => {
            Preset::RadialGaussian { width: raw.req_real(&key("width"))?, target_mass: raw.req_real(&key("mass"))? }
        }
        other => {
            return Err(ConfigError::at(
                &key("preset"),
                raw.line(&key("preset")),
                format!(
                    "unknown preset `{other}` (constant, cosine, gaussian, radial_gaussian{})",
                    if allow_consistent { ", consistent" } else { "" }
                ),
            ))
        }
    };
    Ok(Some(p))
}

fn positive(raw: &RawConfig, key: &str, x: f64) -> Res<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(ConfigError::at(key, raw.line(key), format!("must be positive, got {x}")))
    }
}

fn build(raw: &RawConfig) -> Res<RunConfig> {
    let experiment = match raw.get("experiment") {
        None => None,
        Some((v, line)) => Some(v.parse::<Experiment>().map_err(|m| ConfigError::at("experiment", line, m))?),
    };
    let needs_model = !matches!(experiment, Some(Experiment::Intervals));

    // grid
    let grid = if raw.has("grid.geometry") || needs_model {
        let gkey = "grid.geometry";
        let geometry: Geometry = raw
            .req_string(gkey)?
            .parse()
            .map_err(|e: kslab_core::Error| ConfigError::at(gkey, raw.line(gkey), e.to_string()))?;
        match geometry {
            Geometry::Rectangle => {
                let nx = raw.int("grid.nx")?.ok_or_else(|| ConfigError::at("grid.nx", None, "missing required key"))?;
                let ny = raw.int_or("grid.ny", nx)?;
                let lx = positive(raw, "grid.lx", raw.real_or("grid.lx", std::f64::consts::PI)?)?;
                let ly = positive(raw, "grid.ly", raw.real_or("grid.ly", lx)?)?;
                for (k, n) in [("grid.nx", nx), ("grid.ny", ny)] {
                    if n < 4 {
                        return Err(ConfigError::at(k, raw.line(k), format!("needs at least 4 cells, got {n}")));
                    }
                }
                GridSpec::rectangle(lx, ly, nx, ny)
            }
            Geometry::RadialDisk => {
                let nk = if raw.has("grid.nr") { "grid.nr" } else { "grid.nx" };
                let nr = raw.int(nk)?.ok_or_else(|| ConfigError::at("grid.nr", None, "missing required key"))?;
                if nr < 4 {
                    return Err(ConfigError::at(nk, raw.line(nk), format!("needs at least 4 cells, got {nr}")));
                }
                let r = positive(raw, "grid.radius", raw.real_or("grid.radius", 1.0)?)?;
                GridSpec::radial_disk(r, nr)
            }
        }
    } else {
        GridSpec::rectangle(std::f64::consts::PI, std::f64::consts::PI, 128, 128)
    };

    // model
    let chi = if needs_model || raw.has("model.chi") {
        let chi = raw.req_real("model.chi")?;
        if !(chi.is_finite() && chi > 0.0) {
            return Err(ConfigError::at("model.chi", raw.line("model.chi"), format!("chi must be > 0, got {chi}")));
        }
        chi
    } else {
        1.0
    };
    let lambda = raw.real("model.lambda")?;
    if let Some(l) = lambda {
        if !(l.is_finite() && l >= 0.0) {
            return Err(ConfigError::at(
                "model.lambda",
                raw.line("model.lambda"),
                format!("lambda must be >= 0, got {l}"),
            ));
        }
    }
    let lambdas = raw.reals("model.lambdas")?;
    if let Some(ls) = &lambdas {
        if ls.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(ConfigError::at("model.lambdas", raw.line("model.lambdas"), "every lambda must be >= 0"));
        }
    }

    let u_init = if needs_model || raw.has_section("u_init") {
        preset(raw, "u_init", false)?.expect("u_init is never consistent")
    } else {
        Preset::Constant { value: 1.0 }
    };
    let v_init = if raw.has_section("v_init") {
        match preset(raw, "v_init", true)? {
            None => VInit::Consistent,
            Some(p) => VInit::Preset(p),
        }
    } else {
        VInit::Consistent
    };

    // stepper
    let d = StepperConfig::default();
    let diagnostics = DiagnosticsSpec {
        theta: raw.real_or("stepper.diag_theta", DiagnosticsSpec::default().theta)?,
        q: raw.real_or("stepper.diag_q", DiagnosticsSpec::default().q)?,
    };
    let stepper = StepperConfig {
        dt_max: positive(raw, "stepper.dt_max", raw.real_or("stepper.dt_max", d.dt_max)?)?,
        dt_min: positive(raw, "stepper.dt_min", raw.real_or("stepper.dt_min", d.dt_min)?)?,
        cfl_safety: raw.real_or("stepper.cfl_safety", d.cfl_safety)?,
        linear_tol: positive(raw, "stepper.linear_tol", raw.real_or("stepper.linear_tol", d.linear_tol)?)?,
        max_iter: raw.int_or("stepper.max_iter", d.max_iter)?,
        blowup_linf_threshold: raw.real("stepper.blowup_linf_threshold")?,
        blowup_linf_factor: raw.real_or("stepper.blowup_linf_factor", d.blowup_linf_factor)?,
        t_end: positive(raw, "stepper.t_end", raw.real_or("stepper.t_end", d.t_end)?)?,
        diag_stride: raw.int_or("stepper.diag_stride", d.diag_stride)?,
        diagnostics,
    };
    if let Err(e) = stepper.validate() {
        // attribute the failure to the most specific key we can find
        let msg = e.to_string();
        let key = [
            "dt_min",
            "dt_max",
            "cfl_safety",
            "blowup_linf_threshold",
            "blowup_linf_factor",
            "diag_stride",
            "max_iter",
        ]
        .into_iter()
        .find(|k| msg.contains(k))
        .map(|k| format!("stepper.{k}"))
        .unwrap_or_else(|| "stepper".into());
        let line = raw.line(&key);
        return Err(ConfigError::at(&key, line, msg));
    }

    let sweep = SweepOptions {
        t0: raw.real_or("sweep.t0", 0.1)?,
        lambda_cap: raw.real_or("sweep.lambda_cap", 1.0)?,
        t_end: stepper.t_end,
        coarse_control: raw.boolean_or("sweep.coarse_control", true)?,
    };
    if !(sweep.t0 >= 0.0) {
        return Err(ConfigError::at("sweep.t0", raw.line("sweep.t0"), "must be >= 0"));
    }

    let blowup = BlowupParams {
        masses: raw.reals("blowup.masses")?.unwrap_or_default(),
        options: ScanOptions {
            growth_factor: raw.real_or("blowup.growth_factor", ScanOptions::default().growth_factor)?,
        },
        linf_factor: raw.real_or("blowup.linf_factor", 5.0)?,
        double_chi: raw.boolean_or("blowup.double_chi", false)?,
    };
    if blowup.linf_factor <= 1.0 {
        return Err(ConfigError::at("blowup.linf_factor", raw.line("blowup.linf_factor"), "must exceed 1"));
    }

    let stability = StabilityParams {
        delta: raw.real_or("stability.delta", 1e-6)?,
        bump: Preset::GaussianBump {
            center: raw.pair("stability.bump_center")?.unwrap_or((0.75 * grid.lx, 0.25 * grid.ly.max(grid.lx))),
            width: raw.real_or("stability.bump_width", 0.4)?,
            target_mass: 1.0,
        },
    };
    if !(stability.delta >= 0.0) {
        return Err(ConfigError::at("stability.delta", raw.line("stability.delta"), "must be >= 0"));
    }

    let refine = RefinementPlan {
        lx: if grid.geometry == Geometry::Rectangle { grid.lx } else { std::f64::consts::PI },
        ly: if grid.geometry == Geometry::Rectangle { grid.ly } else { std::f64::consts::PI },
        space_cells: raw.ints("refine.space_cells")?.unwrap_or_else(|| vec![32, 64, 128]),
        dt_factor: raw.real_or("refine.dt_factor", 0.5)?,
        space_t_end: raw.real_or("refine.space_t_end", 0.5)?,
        time_lambda: raw.real_or("refine.time_lambda", lambda.unwrap_or(0.1))?,
        dt_levels: raw.reals("refine.dt_levels")?.unwrap_or_else(|| vec![0.02, 0.01, 0.005]),
        time_t_end: raw.real_or("refine.time_t_end", 0.4)?,
    };

    let smalldata = SmallDataParams {
        epsilon: raw.real_or("smalldata.epsilon", 0.05)?,
        n: raw.int_or("smalldata.n", 3)? as u32,
        p: raw.real_or("smalldata.p", 2.0)?,
        q: raw.real_or("smalldata.q", 4.0)?,
        selector: match raw.get("smalldata.selector") {
            None => Selector::Midpoint,
            Some((v, line)) => {
                v.parse().map_err(|e: kslab_core::Error| ConfigError::at("smalldata.selector", line, e.to_string()))?
            }
        },
    };

    let sd = SemigroupCheckSpec::default();
    let pairs = match raw.get("semigroup.pairs") {
        None => sd.pairs.clone(),
        Some((v, line)) => v
            .split(',')
            .map(|pq| {
                let (p, q) = pq.trim().split_once(':').ok_or_else(|| format!("expected `p:q`, got `{pq}`"))?;
                Ok((parse_real(p)?, parse_real(q)?))
            })
            .collect::<Result<Vec<_>, String>>()
            .map_err(|m| ConfigError::at("semigroup.pairs", line, m))?,
    };
    let semigroup = SemigroupCheckSpec {
        dt: raw.real_or("semigroup.dt", sd.dt)?,
        t_min: raw.real_or("semigroup.t_min", sd.t_min)?,
        t_max: raw.real_or("semigroup.t_max", sd.t_max)?,
        samples: raw.int_or("semigroup.samples", sd.samples)?,
        tail_start: raw.real_or("semigroup.tail_start", sd.tail_start)?,
        pairs,
    };

    let seed = match raw.int("seed")? {
        Some(s) => s as u64,
        None => 0,
    };
    Ok(RunConfig {
        experiment,
        scenario: Scenario { grid, chi, u_init, v_init, stepper },
        lambda,
        lambdas,
        sweep,
        blowup,
        stability,
        refine,
        smalldata,
        semigroup,
        output_dir: PathBuf::from(raw.string("output_dir").unwrap_or_else(|| "kslab-out".into())),
        seed,
        canonical: raw.canonical(),
    })
}

impl RunConfig {
    /// Checks that the selected experiment has what it needs.
    pub fn require_for(&self, exp: Experiment) -> Res<()> {
        match exp {
            Experiment::Run if self.lambda.is_none() => {
                Err(ConfigError::at("model.lambda", None, "missing required key for `run`"))
            }
            Experiment::Sweep if self.lambdas.is_none() => {
                Err(ConfigError::at("model.lambdas", None, "missing required key for `sweep`"))
            }
            Experiment::Sweep if self.sweep.t0 >= self.sweep.t_end => {
                Err(ConfigError::at("sweep.t0", None, "must lie below stepper.t_end"))
            }
            Experiment::Blowup if self.blowup.masses.is_empty() => {
                Err(ConfigError::at("blowup.masses", None, "missing required key for `blowup`"))
            }
            _ => Ok(()),
        }
    }
}
