//! Experiment configuration: one flat JSON document, fully validated
//! before any sampling starts. Every quantity is in base units and every
//! seed is a 64-bit unsigned integer; gate seeds derive from
//! (master seed, test label, replica index) via `RngStream::substream`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use glauber::{
    Configuration, IntensityMeasure, Point, RangeClass, RngStream, TestFunction, Window,
};

fn default_fd_step() -> f64 {
    1e-3
}

fn default_feller_delta() -> f64 {
    0.01
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    /// One [a, b] pair per axis.
    window: Vec<[f64; 2]>,
    /// Density grid resolution per axis.
    grid: Vec<usize>,
    /// One density per grid cell, row-major.
    densities: Vec<f64>,
    /// Overall intensity scale z (the measure is z * density * Lebesgue).
    z: f64,
    battery: Vec<RawProfile>,
    initial: InitialSpec,
    times: Vec<f64>,
    horizon: f64,
    replicas: u64,
    /// Path simulations are costlier than kernel draws; this caps them
    /// separately (defaults to `replicas`).
    #[serde(default)]
    path_replicas: Option<u64>,
    seed: u64,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    feller: Option<RawFeller>,
    #[serde(default = "default_fd_step")]
    fd_step: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeller {
    /// Start configuration for the continuity gate. The halving check
    /// wants points whose shifted copies stay on a single linear piece of
    /// the hat profile and whose slope contributions do not cancel.
    points: Option<Vec<Vec<f64>>>,
    delta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    name: String,
    kind: ProfileKind,
    /// Step profiles: cells per axis.
    #[serde(default)]
    grid: Option<Vec<usize>>,
    /// Hat profiles: 1-d node abscissae.
    #[serde(default)]
    nodes: Option<Vec<f64>>,
    values: Vec<f64>,
    class: String,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProfileKind {
    Step,
    Hat,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum InitialSpec {
    /// The string "poisson": draw the start state from the invariant law.
    Named(String),
    Points { points: Vec<Vec<f64>> },
}

/// A validated experiment: domain objects ready to hand to the library.
pub struct Experiment {
    pub measure: IntensityMeasure,
    /// Raw measure ingredients, kept so negative controls can rebuild a
    /// deliberately tampered copy.
    pub grid: Vec<usize>,
    pub densities: Vec<f64>,
    pub z: f64,
    /// Step profiles, used by every Laplace-functional gate.
    pub battery: Vec<NamedProfile>,
    /// First hat profile, used by the continuity gate.
    pub hat: Option<NamedProfile>,
    pub initial: Configuration,
    pub feller_initial: Configuration,
    pub feller_delta: f64,
    pub fd_step: f64,
    pub times: Vec<f64>,
    pub horizon: f64,
    pub replicas: u64,
    pub path_replicas: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub config_sha256: String,
}

pub struct NamedProfile {
    pub name: String,
    pub phi: TestFunction,
}

/// CLI flag overrides applied on top of the config file.
#[derive(Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replicas: Option<u64>,
}

fn parse_class(s: &str) -> Result<RangeClass> {
    match s {
        "non_pos" => Ok(RangeClass::NonPos),
        "c_class" => Ok(RangeClass::CClass),
        "generic" => Ok(RangeClass::Generic),
        other => bail!("battery class must be non_pos, c_class or generic, got {other:?}"),
    }
}

fn build_points(window: &Window, raw: &[Vec<f64>], field: &str) -> Result<Configuration> {
    for p in raw {
        if !window.contains(p) {
            bail!("config field '{field}': point {p:?} lies outside the window");
        }
    }
    Configuration::from_locations(raw.iter().map(|p| Point::new(p.clone())).collect())
        .with_context(|| format!("config field '{field}'"))
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Experiment> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let config_sha256 = format!("{:x}", Sha256::digest(&bytes));
    let raw: RawConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("malformed config {}", path.display()))?;

    let seed = overrides.seed.unwrap_or(raw.seed);
    let replicas = overrides.replicas.unwrap_or(raw.replicas);
    let out = overrides
        .out
        .clone()
        .or(raw.out)
        .unwrap_or_else(|| PathBuf::from("out"));

    let window = Window::new(raw.window.iter().map(|[a, b]| (*a, *b)).collect())
        .context("config field 'window'")?;
    let measure = IntensityMeasure::new(
        window.clone(),
        raw.grid.clone(),
        raw.densities.clone(),
        raw.z,
    )
    .context("config fields 'grid'/'densities'/'z'")?;

    if raw.battery.is_empty() {
        bail!("config field 'battery': at least one profile is required");
    }
    let mut battery = Vec::new();
    let mut hat = None;
    for (k, p) in raw.battery.iter().enumerate() {
        let class = parse_class(&p.class)
            .with_context(|| format!("config field 'battery[{k}].class'"))?;
        if matches!(class, RangeClass::Generic) {
            bail!(
                "config field 'battery[{k}].class': generic profiles admit no \
                 Laplace-functional gate; use non_pos or c_class"
            );
        }
        let phi = match p.kind {
            ProfileKind::Step => {
                let grid = p.grid.clone().with_context(|| {
                    format!("config field 'battery[{k}]': step profiles need 'grid'")
                })?;
                TestFunction::step(window.clone(), grid, p.values.clone(), class)
            }
            ProfileKind::Hat => {
                let nodes = p.nodes.clone().with_context(|| {
                    format!("config field 'battery[{k}]': hat profiles need 'nodes'")
                })?;
                TestFunction::hat(window.clone(), nodes, p.values.clone(), class)
            }
        }
        .with_context(|| format!("config field 'battery[{k}]' ({})", p.name))?;
        match p.kind {
            ProfileKind::Step => battery.push(NamedProfile {
                name: p.name.clone(),
                phi,
            }),
            ProfileKind::Hat => {
                if hat.is_none() {
                    hat = Some(NamedProfile {
                        name: p.name.clone(),
                        phi,
                    });
                }
            }
        }
    }
    if battery.is_empty() {
        bail!("config field 'battery': at least one step profile is required");
    }

    let initial = match &raw.initial {
        InitialSpec::Named(s) if s == "poisson" => {
            let mut rng = RngStream::substream(seed, "initial", 0);
            glauber::poisson::sample_poisson(&measure, &mut rng)
                .context("config field 'initial': drawing the start state")?
        }
        InitialSpec::Named(s) => {
            bail!("config field 'initial': expected \"poisson\" or {{\"points\": ...}}, got {s:?}")
        }
        InitialSpec::Points { points } => build_points(&window, points, "initial")?,
    };

    let (feller_points, feller_delta) = match &raw.feller {
        Some(f) => (f.points.clone(), f.delta.unwrap_or_else(default_feller_delta)),
        None => (None, default_feller_delta()),
    };
    let feller_initial = match feller_points {
        Some(pts) => build_points(&window, &pts, "feller.points")?,
        None => initial.clone(),
    };
    if !(feller_delta.is_finite() && feller_delta >= 0.0) {
        bail!("config field 'feller.delta': must be finite and nonnegative");
    }

    if raw.times.is_empty() {
        bail!("config field 'times': at least one time is required");
    }
    for (k, t) in raw.times.iter().enumerate() {
        if !(t.is_finite() && *t > 0.0) {
            bail!("config field 'times[{k}]': must be positive and finite, got {t}");
        }
    }
    if !(raw.horizon.is_finite() && raw.horizon > 0.0) {
        bail!("config field 'horizon': must be positive and finite");
    }
    if replicas == 0 {
        bail!("config field 'replicas': must be at least 1");
    }
    if !(raw.fd_step > 0.0 && raw.fd_step <= 0.1) {
        bail!("config field 'fd_step': must lie in (0, 0.1]");
    }
    let path_replicas = raw.path_replicas.unwrap_or(replicas).max(1);

    Ok(Experiment {
        measure,
        grid: raw.grid,
        densities: raw.densities,
        z: raw.z,
        battery,
        hat,
        initial,
        feller_initial,
        feller_delta,
        fd_step: raw.fd_step,
        times: raw.times,
        horizon: raw.horizon,
        replicas,
        path_replicas,
        seed,
        out,
        config_sha256,
    })
}

impl Experiment {
    pub fn window(&self) -> &Window {
        self.measure.window()
    }

    pub fn step_functions(&self) -> Vec<TestFunction> {
        self.battery.iter().map(|p| p.phi.clone()).collect()
    }
}
