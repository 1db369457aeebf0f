//! Simulation and verification toolkit for the Glauber birth-death dynamics
//! of free (non-interacting) particles on a compact box window.
//!
//! The dynamics kills every particle at rate 1 and creates new particles with
//! a fixed intensity measure; its transition kernel is available in closed
//! form as "thin the current configuration with survival probability e^{-t},
//! then add an independent Poisson configuration with intensity
//! (1 - e^{-t})·m". Everything here is built around that exactness:
//!
//! * [`measure`]: box windows, piecewise-constant intensity measures, and
//!   step/hat test profiles whose integrals against the measure are exact.
//! * [`poisson`]: Poisson configuration sampling, Laplace functionals
//!   (empirical and closed form), and the Mecke identity check.
//! * [`kernel`]: the transition kernel sampler, its closed-form Laplace
//!   functionals, exact window count laws, and the Chapman-Kolmogorov,
//!   Feller, and ergodicity checks.
//! * [`generator`]: cylinder functions, discrete gradients, the generator,
//!   the Dirichlet form in both representations, and spectral checks.
//! * [`path`]: event-driven cadlag path construction (death clocks plus a
//!   space-time Poisson birth stream) and its marginal checks.
//! * [`stats`]: the statistical gates (z, chi-square, Kolmogorov-Smirnov)
//!   shared by every verification routine.
//!
//! All samplers are deterministic given an [`rng::RngStream`]; replica work
//! derives independent substreams from (master seed, label, replica index).

pub mod error;
pub mod generator;
pub mod kernel;
pub mod measure;
pub mod path;
pub mod poisson;
pub mod rng;
pub mod stats;

pub use error::Error;
pub use generator::{CylinderFunction, DirichletMode, GradientDirection, OuterMap};
pub use kernel::{CountDistribution, KernelParams};
pub use measure::{IntensityMeasure, Point, RangeClass, TestFunction, Window};
pub use path::{EventKind, EventLog, PathEvent};
pub use poisson::{Configuration, MeckeTestCase};
pub use rng::RngStream;
pub use stats::{McEstimate, Reference, TestReport, Verdict};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
