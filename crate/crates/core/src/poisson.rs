//! Poisson point process on the window: configurations with stable
//! particle identities, exact sampling, Laplace functionals, and the Mecke
//! identity gate.

use std::collections::HashSet;

use rand_distr::Distribution;

use crate::error::Error;
use crate::measure::{
    integrate, integrate_expm1, integrate_map, IntensityMeasure, Point, RangeClass, TestFunction,
};
use crate::rng::RngStream;
use crate::stats::{z_gate, McEstimate, RunningMoments, TestReport};
use crate::Result;

/// A finite simple point configuration. Every particle carries a stable
/// id so paths and kernel steps can track survivors; locations are
/// pairwise distinct (simple process) and ids are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Configuration {
    points: Vec<(u64, Point)>,
}

/// Bit patterns of the coordinates, so distinctness is exact (no epsilon).
fn location_key(p: &Point) -> Vec<u64> {
    p.coords().iter().map(|c| c.to_bits()).collect()
}

impl Configuration {
    pub fn empty() -> Self {
        Configuration { points: Vec::new() }
    }

    /// Validates simplicity: distinct ids, distinct locations, one common
    /// dimension.
    pub fn new(points: Vec<(u64, Point)>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut locations = HashSet::new();
        let dim = points.first().map(|(_, p)| p.dim());
        for (id, p) in &points {
            if Some(p.dim()) != dim {
                return Err(Error::InvalidConfiguration(
                    "points have mixed dimensions".into(),
                ));
            }
            if !ids.insert(*id) {
                return Err(Error::InvalidConfiguration(format!(
                    "duplicate particle id {id}"
                )));
            }
            if !locations.insert(location_key(p)) {
                return Err(Error::InvalidConfiguration(
                    "duplicate location breaks simplicity".into(),
                ));
            }
        }
        Ok(Configuration { points })
    }

    /// Ids assigned 0..n-1 in the given order.
    pub fn from_locations(locations: Vec<Point>) -> Result<Self> {
        Self::new(
            locations
                .into_iter()
                .enumerate()
                .map(|(i, p)| (i as u64, p))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(u64, Point)] {
        &self.points
    }

    pub fn max_id(&self) -> Option<u64> {
        self.points.iter().map(|(id, _)| *id).max()
    }

    /// Sum of the profile over the configuration's locations.
    pub fn sum_profile(&self, phi: &TestFunction) -> f64 {
        self.points.iter().map(|(_, p)| phi.eval(p.coords())).sum()
    }

    /// Number of points inside a box region (boundary included).
    pub fn count_in(&self, region: &crate::measure::Window) -> usize {
        self.points
            .iter()
            .filter(|(_, p)| region.contains(p.coords()))
            .count()
    }

    /// Exact (bitwise) location membership; the collision check used when
    /// resampling.
    pub fn contains_location(&self, x: &Point) -> bool {
        let key = location_key(x);
        self.points.iter().any(|(_, p)| location_key(p) == key)
    }

    /// Internal builder for samplers that guarantee distinctness themselves.
    pub(crate) fn push(&mut self, id: u64, location: Point) {
        debug_assert!(!self.points.iter().any(|(i, _)| *i == id));
        debug_assert!(!self.contains_location(&location));
        self.points.push((id, location));
    }
}

/// Exact Poisson count. Delegates to the inversion / PTRD rejection
/// sampler (exact for every rate, not an approximation); deterministic
/// given the stream state.
pub(crate) fn poisson_count(lambda: f64, rng: &mut RngStream) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let dist = rand_distr::Poisson::new(lambda).expect("finite positive rate");
    let draw: f64 = dist.sample(rng);
    draw as u64
}

/// Draw one configuration of the Poisson process with the given intensity:
/// count N from Poisson(total mass), then N i.i.d. locations from the
/// normalized measure. Ids are 0..N-1 in draw order. A duplicate location
/// (a zero-probability event surfaced only by finite precision) is
/// resampled so simplicity always holds.
pub fn sample_poisson(measure: &IntensityMeasure, rng: &mut RngStream) -> Result<Configuration> {
    let mass = measure.total_mass();
    if mass == 0.0 {
        return Ok(Configuration::empty());
    }
    let n = poisson_count(mass, rng);
    let mut gamma = Configuration::empty();
    for id in 0..n {
        loop {
            let loc = measure.sample_location(rng)?;
            if !gamma.contains_location(&loc) {
                gamma.push(id, loc);
                break;
            }
        }
    }
    Ok(gamma)
}

/// Monte Carlo mean and standard error of e^{<phi, gamma>} over the given
/// samples. The profile must be tagged non-positive (either class), which
/// bounds the integrand by 1; anything that could take positive values is
/// rejected.
pub fn empirical_laplace(samples: &[Configuration], phi: &TestFunction) -> Result<McEstimate> {
    if !matches!(phi.class(), RangeClass::NonPos | RangeClass::CClass) {
        return Err(Error::RangeClass {
            need: "non_pos or c_class",
            found: phi.class().name(),
        });
    }
    let mut acc = RunningMoments::new();
    for gamma in samples {
        acc.push(gamma.sum_profile(phi).exp());
    }
    acc.finish()
}

/// Closed-form Laplace functional of the Poisson process:
/// exp(integral of (e^{phi} - 1) dm), with the z scale inside the measure.
pub fn exact_poisson_laplace(phi: &TestFunction, measure: &IntensityMeasure) -> Result<f64> {
    Ok(integrate_expm1(phi, measure)?.exp())
}

/// The two built-in families F(gamma, x) for the Mecke gate. Both have a
/// closed-form right-hand side, so the check is one-sided in noise.
#[derive(Debug, Clone)]
pub enum MeckeTestCase {
    /// F(gamma, x) = phi(x).
    Linear { phi: TestFunction },
    /// F(gamma, x) = phi(x) e^{<psi, gamma>} (the exponent includes x).
    ExpWeighted { phi: TestFunction, psi: TestFunction },
}

/// Verify the defining identity of the Poisson process,
/// E sum_{x in gamma} F(gamma, x) = integral of E F(gamma + x, x) z m(dx),
/// for one built-in family: the left side by Monte Carlo over n fresh
/// samples, the right side in closed form, gated at 4 standard errors.
pub fn mecke_check(
    measure: &IntensityMeasure,
    family: &MeckeTestCase,
    rng: &mut RngStream,
    n: u64,
) -> Result<TestReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("need n >= 1 samples".into()));
    }
    let (name, identity, rhs): (&str, &str, f64) = match family {
        MeckeTestCase::Linear { phi } => (
            "mecke.linear",
            "E sum_{x in gamma} phi(x) = integral phi d(zm)",
            integrate(phi, measure)?,
        ),
        MeckeTestCase::ExpWeighted { phi, psi } => {
            if !matches!(psi.class(), RangeClass::NonPos | RangeClass::CClass) {
                return Err(Error::RangeClass {
                    need: "non_pos or c_class",
                    found: psi.class().name(),
                });
            }
            // Adding the new point x to the exponent turns F(gamma+x, x)
            // into phi(x) e^{psi(x)} e^{<psi,gamma>}; the expectation
            // factorizes into a closed integral times the Laplace
            // functional.
            let weighted = integrate_map(measure, &[phi, psi], |v| v[0] * v[1].exp())?;
            (
                "mecke.exp_weighted",
                "E sum phi(x) e^{<psi,gamma>} = (integral phi e^{psi} d(zm)) * E e^{<psi,gamma>}",
                weighted * exact_poisson_laplace(psi, measure)?,
            )
        }
    };
    let mut acc = RunningMoments::new();
    for _ in 0..n {
        let gamma = sample_poisson(measure, rng)?;
        let value = match family {
            MeckeTestCase::Linear { phi } => gamma.sum_profile(phi),
            MeckeTestCase::ExpWeighted { phi, psi } => {
                gamma.sum_profile(phi) * gamma.sum_profile(psi).exp()
            }
        };
        acc.push(value);
    }
    let est = acc.finish()?;
    Ok(z_gate(name, &est, rhs, 4.0).with_identity(identity))
}

#[cfg(test)]
// Oracle constants below carry two guard digits beyond f64 precision.
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::measure::{RangeClass, Window};
    use crate::stats::variance_estimate;

    fn unit_measure(z: f64) -> IntensityMeasure {
        IntensityMeasure::uniform(Window::unit_interval(), 1.0, z).unwrap()
    }

    fn constant_phi(v: f64, class: RangeClass) -> TestFunction {
        TestFunction::constant(Window::unit_interval(), v, class).unwrap()
    }

    #[test]
    fn zero_mass_gives_empty_configuration() {
        let m = IntensityMeasure::uniform(Window::unit_interval(), 0.0, 1.0).unwrap();
        let mut rng = RngStream::substream(20260819, "poisson.zero", 0);
        assert!(sample_poisson(&m, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn count_moments_match_poisson_law() {
        let m = unit_measure(1.0);
        let mut rng = RngStream::substream(20260819, "poisson.count", 0);
        let counts: Vec<f64> = (0..100_000)
            .map(|_| sample_poisson(&m, &mut rng).unwrap().len() as f64)
            .collect();
        let mean = McEstimate::from_values(&counts).unwrap();
        assert!(z_gate("count.mean", &mean, 1.0, 4.0).passed());
        let var = variance_estimate(&counts).unwrap();
        assert!(z_gate("count.var", &var, 1.0, 4.0).passed());
    }

    #[test]
    fn samples_are_simple_with_sequential_ids() {
        let m = unit_measure(3.0);
        let mut rng = RngStream::substream(20260819, "poisson.simple", 0);
        for _ in 0..1000 {
            let gamma = sample_poisson(&m, &mut rng).unwrap();
            let mut seen = std::collections::HashSet::new();
            for (i, (id, p)) in gamma.points().iter().enumerate() {
                assert_eq!(*id, i as u64);
                assert!(seen.insert(location_key(p)), "duplicate location");
                assert!(m.window().contains(p.coords()));
            }
        }
    }

    #[test]
    fn counts_in_disjoint_cells_are_uncorrelated() {
        let m = unit_measure(4.0);
        let left = Window::new(vec![(0.0, 0.5)]).unwrap();
        let right = Window::new(vec![(0.5, 1.0)]).unwrap();
        let mut rng = RngStream::substream(20260819, "poisson.disjoint", 0);
        let n = 20_000;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let gamma = sample_poisson(&m, &mut rng).unwrap();
            let a = gamma.count_in(&left) as f64;
            let b = gamma.count_in(&right) as f64;
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sxx / nf - (sx / nf) * (sx / nf);
        let vy = syy / nf - (sy / nf) * (sy / nf);
        let r = cov / (vx * vy).sqrt();
        // Under independence r is asymptotically Normal(0, 1/n).
        assert!(r.abs() <= 4.0 / nf.sqrt(), "correlation {r} too large");
    }

    #[test]
    fn laplace_of_zero_profile_is_exactly_one() {
        let m = unit_measure(1.0);
        let mut rng = RngStream::substream(20260819, "poisson.lap0", 0);
        let samples: Vec<Configuration> =
            (0..100).map(|_| sample_poisson(&m, &mut rng).unwrap()).collect();
        let phi = constant_phi(0.0, RangeClass::NonPos);
        let est = empirical_laplace(&samples, &phi).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn empirical_laplace_rejections() {
        let phi = constant_phi(-0.5, RangeClass::NonPos);
        assert_eq!(empirical_laplace(&[], &phi), Err(Error::EmptySamples));
        let generic = constant_phi(0.5, RangeClass::Generic);
        assert_eq!(
            empirical_laplace(&[Configuration::empty()], &generic),
            Err(Error::RangeClass {
                need: "non_pos or c_class",
                found: "generic"
            })
        );
    }

    #[test]
    fn exact_laplace_closed_forms() {
        // Oracle (30-digit arithmetic): exp(e^{-1/2} - 1).
        let phi = constant_phi(-0.5, RangeClass::NonPos);
        let got = exact_poisson_laplace(&phi, &unit_measure(1.0)).unwrap();
        let want = 0.674712003735899647;
        assert!((got - want).abs() <= 1e-15 * want);
        // Doubling z squares the functional: exp(2 (e^{-1/2} - 1)).
        let got2 = exact_poisson_laplace(&phi, &unit_measure(2.0)).unwrap();
        let want2 = 0.455236287985312660;
        assert!((got2 - want2).abs() <= 1e-15 * want2);
        let zero = constant_phi(0.0, RangeClass::NonPos);
        assert_eq!(exact_poisson_laplace(&zero, &unit_measure(1.0)).unwrap(), 1.0);
    }

    #[test]
    fn empirical_laplace_matches_exact_battery() {
        let m = unit_measure(1.0);
        let mut rng = RngStream::substream(20260819, "poisson.laplace", 0);
        let samples: Vec<Configuration> = (0..100_000)
            .map(|_| sample_poisson(&m, &mut rng).unwrap())
            .collect();
        let w = Window::unit_interval();
        let battery = vec![
            constant_phi(-0.5, RangeClass::NonPos),
            constant_phi(-0.25, RangeClass::NonPos),
            constant_phi(-0.75, RangeClass::CClass),
            TestFunction::step(w.clone(), vec![2], vec![-0.5, 0.0], RangeClass::NonPos).unwrap(),
            TestFunction::step(w.clone(), vec![4], vec![-1.2, -0.1, 0.0, -0.6], RangeClass::NonPos)
                .unwrap(),
        ];
        for phi in &battery {
            let est = empirical_laplace(&samples, phi).unwrap();
            let exact = exact_poisson_laplace(phi, &m).unwrap();
            let rep = z_gate("laplace", &est, exact, 4.0);
            assert!(rep.passed(), "laplace mismatch: {rep:?}");
        }
    }

    #[test]
    fn mecke_linear_recovers_mean_measure() {
        let m = unit_measure(1.0);
        let phi = constant_phi(-0.5, RangeClass::NonPos);
        let mut rng = RngStream::substream(20260819, "poisson.mecke1", 0);
        let rep = mecke_check(&m, &MeckeTestCase::Linear { phi }, &mut rng, 50_000).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.reference, crate::stats::Reference::Value(-0.5));
    }

    #[test]
    fn mecke_constant_one_counts_points() {
        let m = unit_measure(1.0);
        let one = constant_phi(1.0, RangeClass::Generic);
        let mut rng = RngStream::substream(20260819, "poisson.mecke-one", 0);
        let rep = mecke_check(&m, &MeckeTestCase::Linear { phi: one }, &mut rng, 50_000).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.reference, crate::stats::Reference::Value(1.0));
    }

    #[test]
    fn mecke_exp_weighted_matches_closed_form() {
        let m = unit_measure(1.0);
        let phi = constant_phi(-0.5, RangeClass::NonPos);
        let psi = constant_phi(-0.5, RangeClass::NonPos);
        let mut rng = RngStream::substream(20260819, "poisson.mecke2", 0);
        let rep =
            mecke_check(&m, &MeckeTestCase::ExpWeighted { phi, psi }, &mut rng, 100_000).unwrap();
        assert!(rep.passed(), "{rep:?}");
        // Oracle: (-1/2 e^{-1/2}) exp(e^{-1/2} - 1).
        let want = -0.204616758370984000;
        match rep.reference {
            crate::stats::Reference::Value(v) => {
                assert!((v - want).abs() <= 1e-15 * want.abs())
            }
            _ => panic!("expected closed-form reference"),
        }
    }

    #[test]
    fn mecke_rejects_positive_exponent() {
        let m = unit_measure(1.0);
        let phi = constant_phi(-0.5, RangeClass::NonPos);
        let psi = constant_phi(0.5, RangeClass::Generic);
        let mut rng = RngStream::substream(20260819, "poisson.mecke3", 0);
        assert!(matches!(
            mecke_check(&m, &MeckeTestCase::ExpWeighted { phi, psi }, &mut rng, 10),
            Err(Error::RangeClass { .. })
        ));
    }

    #[test]
    fn configuration_validation() {
        let p = |x: f64| Point::new(vec![x]);
        assert!(Configuration::new(vec![(0, p(0.1)), (1, p(0.2))]).is_ok());
        assert!(matches!(
            Configuration::new(vec![(0, p(0.1)), (0, p(0.2))]),
            Err(Error::InvalidConfiguration(_))
        ));
        assert!(matches!(
            Configuration::from_locations(vec![p(0.3), p(0.3)]),
            Err(Error::InvalidConfiguration(_))
        ));
        assert!(matches!(
            Configuration::new(vec![(0, p(0.1)), (1, Point::new(vec![0.1, 0.2]))]),
            Err(Error::InvalidConfiguration(_))
        ));
        let gamma = Configuration::from_locations(vec![p(0.25), p(0.75)]).unwrap();
        assert_eq!(gamma.max_id(), Some(1));
        assert!(gamma.contains_location(&p(0.25)));
        assert!(!gamma.contains_location(&p(0.5)));
        assert_eq!(gamma.count_in(&Window::new(vec![(0.0, 0.5)]).unwrap()), 1);
    }
}
