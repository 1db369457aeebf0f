//! Event-driven construction of the cadlag path of the dynamics.
//!
//! The path over [0, T] is assembled from two independent ingredients:
//! every initial particle carries an Exp(1) death clock, and births come
//! from a Poisson stream on window x (0, T] with intensity m x dt, each
//! born particle carrying its own Exp(1) residual lifetime. Events are
//! replayed in time order; the marginal at any fixed time must agree with
//! the one-step kernel, which is what `marginal_check` verifies.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::Error;
use crate::kernel::{count_histogram, count_pmf_auto, kernel_sample, KernelParams};
use crate::measure::{IntensityMeasure, Point, TestFunction};
use crate::poisson::{poisson_count, Configuration};
use crate::rng::RngStream;
use crate::stats::{chi_square_gof, ks_two_sample, TestReport};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Birth,
    Death,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Birth => "BIRTH",
            EventKind::Death => "DEATH",
        }
    }
}

/// One jump of the path: a particle appears or disappears.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEvent {
    pub time: f64,
    pub kind: EventKind,
    pub particle_id: u64,
    pub location: Point,
}

/// A full sample path over [0, horizon]: the initial state plus every
/// jump, ordered by (time, id). The id tiebreak only matters on the
/// measure-zero event of equal times and keeps replay deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    initial: Configuration,
    horizon: f64,
    events: Vec<PathEvent>,
}

impl EventLog {
    /// Validates the log invariants: events strictly ordered by
    /// (time, id), every time in (0, horizon], no birth of an initial id,
    /// at most one birth and one death per id, deaths strictly after
    /// births, death locations matching the birth (or initial) location.
    pub fn new(initial: Configuration, horizon: f64, events: Vec<PathEvent>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(
                "horizon must be a positive finite real".into(),
            ));
        }
        for pair in events.windows(2) {
            let a = (pair[0].time, pair[0].particle_id);
            let b = (pair[1].time, pair[1].particle_id);
            if a >= b {
                return Err(Error::InvalidParameter(
                    "events must be strictly ordered by (time, id)".into(),
                ));
            }
        }
        let mut born = std::collections::HashMap::new();
        let mut dead = std::collections::HashSet::new();
        let initial_ids: std::collections::HashSet<u64> =
            initial.points().iter().map(|(id, _)| *id).collect();
        for e in &events {
            if !(e.time > 0.0 && e.time <= horizon) {
                return Err(Error::InvalidParameter(format!(
                    "event time {} outside (0, {horizon}]",
                    e.time
                )));
            }
            match e.kind {
                EventKind::Birth => {
                    if initial_ids.contains(&e.particle_id)
                        || born.insert(e.particle_id, e.time).is_some()
                    {
                        return Err(Error::InvalidParameter(format!(
                            "id {} born twice or already initial",
                            e.particle_id
                        )));
                    }
                }
                EventKind::Death => {
                    let known = initial_ids.contains(&e.particle_id)
                        || born.get(&e.particle_id).is_some_and(|t| *t < e.time);
                    if !known || !dead.insert(e.particle_id) {
                        return Err(Error::InvalidParameter(format!(
                            "death of id {} without a prior life",
                            e.particle_id
                        )));
                    }
                }
            }
        }
        Ok(EventLog {
            initial,
            horizon,
            events,
        })
    }

    pub fn initial(&self) -> &Configuration {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn events(&self) -> &[PathEvent] {
        &self.events
    }
}

/// Simulate one path over (0, T].
///
/// Draw order is fixed so a seed pins the whole log bit-for-bit: one
/// Exp(1) clock per initial particle in stored order, then the birth
/// count from Poisson(m(window) T), then per proposal its time
/// T (1 - U), its location (resampled against every location seen so
/// far), and its Exp(1) lifetime. Proposals born after T are never
/// materialized by construction of the time draw. Fresh ids continue
/// above the initial ids in birth-time order.
pub fn simulate_path(
    gamma0: &Configuration,
    horizon: f64,
    measure: &IntensityMeasure,
    rng: &mut RngStream,
) -> Result<EventLog> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(
            "horizon must be a positive finite real".into(),
        ));
    }
    for (_, p) in gamma0.points() {
        if !measure.window().contains(p.coords()) {
            return Err(Error::Membership(
                "initial point outside the window".into(),
            ));
        }
    }
    let mut events = Vec::new();
    for (id, loc) in gamma0.points() {
        let clock: f64 = Exp1.sample(rng);
        if clock <= horizon {
            events.push(PathEvent {
                time: clock,
                kind: EventKind::Death,
                particle_id: *id,
                location: loc.clone(),
            });
        }
    }
    let n_births = poisson_count(measure.total_mass() * horizon, rng);
    let mut seen: Vec<Point> = gamma0.points().iter().map(|(_, p)| p.clone()).collect();
    let mut proposals = Vec::with_capacity(n_births as usize);
    for k in 0..n_births {
        let time = horizon * (1.0 - rng.random::<f64>());
        let location = loop {
            let candidate = measure.sample_location(rng)?;
            if !seen.contains(&candidate) {
                break candidate;
            }
        };
        seen.push(location.clone());
        let lifetime = loop {
            let draw: f64 = Exp1.sample(rng);
            if draw > 0.0 {
                break draw;
            }
        };
        proposals.push((time, k, location, lifetime));
    }
    // Ids in birth-time order, continuing above the initial ids.
    proposals.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
    let base = gamma0.max_id().map_or(0, |m| m + 1);
    for (rank, (time, _, location, lifetime)) in proposals.into_iter().enumerate() {
        let id = base + rank as u64;
        events.push(PathEvent {
            time,
            kind: EventKind::Birth,
            particle_id: id,
            location: location.clone(),
        });
        if time + lifetime <= horizon {
            events.push(PathEvent {
                time: time + lifetime,
                kind: EventKind::Death,
                particle_id: id,
                location,
            });
        }
    }
    events.sort_by(|a, b| {
        (a.time, a.particle_id)
            .partial_cmp(&(b.time, b.particle_id))
            .unwrap()
    });
    EventLog::new(gamma0.clone(), horizon, events)
}

/// The state at time t: every event with time <= t applied to the initial
/// configuration (right-continuous, so an event at exactly t counts).
pub fn configuration_at(log: &EventLog, t: f64) -> Result<Configuration> {
    if !(0.0..=log.horizon).contains(&t) {
        return Err(Error::TimeOutsideHorizon {
            t,
            horizon: log.horizon,
        });
    }
    let mut alive: Vec<(u64, Point)> = log.initial.points().to_vec();
    for e in &log.events {
        if e.time > t {
            break;
        }
        match e.kind {
            EventKind::Birth => alive.push((e.particle_id, e.location.clone())),
            EventKind::Death => alive.retain(|(id, _)| *id != e.particle_id),
        }
    }
    Configuration::new(alive)
}

/// Verify that the time-t marginal of the simulated path has the law of
/// one kernel step: n paths against n direct kernel draws, with the
/// window count gated against the exact count law (chi-square) and the
/// profile sums <phi, .> gated pairwise (two-sample KS), all at
/// alpha = 0.001.
pub fn marginal_check(
    gamma0: &Configuration,
    t: f64,
    measure: &IntensityMeasure,
    rng: &mut RngStream,
    n: u64,
    battery: &[TestFunction],
) -> Result<Vec<TestReport>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(
            "marginal time must be positive and finite".into(),
        ));
    }
    let params = KernelParams::new(t, measure.clone())?;
    let mut path_counts = Vec::with_capacity(n as usize);
    let mut path_sums: Vec<Vec<f64>> = vec![Vec::with_capacity(n as usize); battery.len()];
    for _ in 0..n {
        let log = simulate_path(gamma0, t, measure, rng)?;
        let state = configuration_at(&log, t)?;
        path_counts.push(state.len());
        for (k, phi) in battery.iter().enumerate() {
            path_sums[k].push(state.sum_profile(phi));
        }
    }
    let mut kernel_sums: Vec<Vec<f64>> = vec![Vec::with_capacity(n as usize); battery.len()];
    for _ in 0..n {
        let state = kernel_sample(gamma0, &params, rng)?;
        for (k, phi) in battery.iter().enumerate() {
            kernel_sums[k].push(state.sum_profile(phi));
        }
    }
    let identity = "path marginal at t ~ P_t(gamma0, .)";
    let law = count_pmf_auto(gamma0.len(), &params, measure.window())?;
    let mut reports = vec![chi_square_gof(
        "marginal.count_law",
        &count_histogram(path_counts),
        &law,
        0.001,
    )?
    .with_identity(identity)];
    for (k, (ps, ks)) in path_sums.iter().zip(&kernel_sums).enumerate() {
        reports.push(
            ks_two_sample(&format!("marginal.laplace_ks.{k}"), ps, ks, 0.001)?
                .with_identity(identity),
        );
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{RangeClass, Window};
    use crate::stats::{chi_square_two_sample, z_gate, McEstimate};

    fn unit_measure() -> IntensityMeasure {
        IntensityMeasure::uniform(Window::unit_interval(), 1.0, 1.0).unwrap()
    }

    fn point(x: f64) -> Point {
        Point::new(vec![x])
    }

    #[test]
    fn zero_mass_empty_start_gives_empty_log() {
        let m = IntensityMeasure::uniform(Window::unit_interval(), 0.0, 1.0).unwrap();
        let mut rng = RngStream::substream(20260819, "path.empty", 0);
        let log = simulate_path(&Configuration::empty(), 3.0, &m, &mut rng).unwrap();
        assert!(log.events().is_empty());
        assert_eq!(configuration_at(&log, 3.0).unwrap(), Configuration::empty());
    }

    #[test]
    fn survival_frequency_matches_exponential_clock() {
        let gamma0 = Configuration::from_locations(vec![point(0.5)]).unwrap();
        let m = IntensityMeasure::uniform(Window::unit_interval(), 0.0, 1.0).unwrap();
        let mut rng = RngStream::substream(20260819, "path.survival", 0);
        let horizon = 1.0;
        let survived: Vec<f64> = (0..100_000)
            .map(|_| {
                let log = simulate_path(&gamma0, horizon, &m, &mut rng).unwrap();
                if log.events().is_empty() { 1.0 } else { 0.0 }
            })
            .collect();
        let est = McEstimate::from_values(&survived).unwrap();
        assert!(z_gate("path.survival", &est, (-horizon).exp(), 4.0).passed());
    }

    #[test]
    fn mean_birth_count_is_mass_times_horizon() {
        let mut rng = RngStream::substream(20260819, "path.births", 0);
        let births: Vec<f64> = (0..50_000)
            .map(|_| {
                let log =
                    simulate_path(&Configuration::empty(), 2.0, &unit_measure(), &mut rng)
                        .unwrap();
                log.events()
                    .iter()
                    .filter(|e| e.kind == EventKind::Birth)
                    .count() as f64
            })
            .collect();
        let est = McEstimate::from_values(&births).unwrap();
        assert!(z_gate("path.births", &est, 2.0, 4.0).passed());
    }

    #[test]
    fn replay_by_hand() {
        let gamma0 = Configuration::new(vec![(0, point(0.1))]).unwrap();
        let log = EventLog::new(
            gamma0.clone(),
            1.0,
            vec![
                PathEvent {
                    time: 0.3,
                    kind: EventKind::Birth,
                    particle_id: 7,
                    location: point(0.6),
                },
                PathEvent {
                    time: 0.9,
                    kind: EventKind::Death,
                    particle_id: 7,
                    location: point(0.6),
                },
            ],
        )
        .unwrap();
        assert_eq!(configuration_at(&log, 0.0).unwrap(), gamma0);
        assert_eq!(configuration_at(&log, 0.29).unwrap().len(), 1);
        // Right-continuity: the birth at exactly t = 0.3 is included.
        let at_birth = configuration_at(&log, 0.3).unwrap();
        assert!(at_birth.points().iter().any(|(id, _)| *id == 7));
        assert!(configuration_at(&log, 0.5).unwrap().len() == 2);
        // ... and the death at exactly t = 0.9 has already removed it.
        let at_death = configuration_at(&log, 0.9).unwrap();
        assert!(!at_death.points().iter().any(|(id, _)| *id == 7));
        assert!(matches!(
            configuration_at(&log, 1.5),
            Err(Error::TimeOutsideHorizon { .. })
        ));
        assert!(matches!(
            configuration_at(&log, -0.1),
            Err(Error::TimeOutsideHorizon { .. })
        ));
    }

    #[test]
    fn log_validation_rejects_malformed_logs() {
        let gamma0 = Configuration::new(vec![(0, point(0.1))]).unwrap();
        let birth = |time, id| PathEvent {
            time,
            kind: EventKind::Birth,
            particle_id: id,
            location: point(0.6),
        };
        let death = |time, id| PathEvent {
            time,
            kind: EventKind::Death,
            particle_id: id,
            location: point(0.6),
        };
        // Unordered times.
        assert!(EventLog::new(gamma0.clone(), 1.0, vec![birth(0.5, 1), birth(0.3, 2)]).is_err());
        // Death before birth.
        assert!(EventLog::new(gamma0.clone(), 1.0, vec![death(0.2, 7), birth(0.4, 7)]).is_err());
        // Birth of an initial id.
        assert!(EventLog::new(gamma0.clone(), 1.0, vec![birth(0.2, 0)]).is_err());
        // Event beyond the horizon.
        assert!(EventLog::new(gamma0.clone(), 1.0, vec![birth(1.2, 1)]).is_err());
        // Two deaths of one id.
        assert!(EventLog::new(
            gamma0.clone(),
            1.0,
            vec![death(0.2, 0), death(0.4, 0)]
        )
        .is_err());
        // Ties broken by id are accepted in order...
        assert!(EventLog::new(gamma0.clone(), 1.0, vec![birth(0.5, 1), birth(0.5, 2)]).is_ok());
        // ... and rejected out of order.
        assert!(EventLog::new(gamma0, 1.0, vec![birth(0.5, 2), birth(0.5, 1)]).is_err());
    }

    #[test]
    fn simulated_logs_satisfy_every_invariant() {
        let gamma0 = Configuration::from_locations(vec![point(0.25), point(0.75)]).unwrap();
        let m = unit_measure();
        let mut rng = RngStream::substream(20260819, "path.invariants", 0);
        for _ in 0..500 {
            let log = simulate_path(&gamma0, 2.0, &m, &mut rng).unwrap();
            // EventLog::new already validated ordering, id life cycle and
            // horizon membership; check the rest.
            let mut id_events = std::collections::HashMap::new();
            for e in log.events() {
                *id_events.entry(e.particle_id).or_insert(0u32) += 1;
                assert!(m.window().contains(e.location.coords()));
            }
            assert!(id_events.values().all(|&c| c <= 2));
            // Initial descendants only disappear: their alive set is
            // decreasing along any increasing time grid.
            let mut previous: Option<Vec<u64>> = None;
            for k in 0..=20 {
                let state = configuration_at(&log, 2.0 * k as f64 / 20.0).unwrap();
                let alive: Vec<u64> = state
                    .points()
                    .iter()
                    .map(|(id, _)| *id)
                    .filter(|id| *id <= 1)
                    .collect();
                if let Some(prev) = &previous {
                    assert!(alive.iter().all(|id| prev.contains(id)));
                }
                previous = Some(alive);
                // Simplicity of the live state is re-validated here by
                // Configuration::new inside configuration_at.
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_the_log_bit_for_bit() {
        let gamma0 = Configuration::from_locations(vec![point(0.25), point(0.75)]).unwrap();
        let m = unit_measure();
        let mut a = RngStream::substream(20260819, "path.replay", 3);
        let mut b = RngStream::substream(20260819, "path.replay", 3);
        let log_a = simulate_path(&gamma0, 5.0, &m, &mut a).unwrap();
        let log_b = simulate_path(&gamma0, 5.0, &m, &mut b).unwrap();
        assert_eq!(log_a, log_b);
    }

    #[test]
    fn near_zero_horizon_keeps_the_initial_state() {
        let gamma0 = Configuration::from_locations(vec![point(0.25), point(0.75)]).unwrap();
        let m = unit_measure();
        let mut rng = RngStream::substream(20260819, "path.tiny", 0);
        let t = 1e-6;
        for _ in 0..2000 {
            let log = simulate_path(&gamma0, t, &m, &mut rng).unwrap();
            assert_eq!(configuration_at(&log, t).unwrap(), gamma0);
        }
    }

    #[test]
    fn marginal_matches_kernel_at_ln_two() {
        let locs: Vec<Point> = (0..5).map(|k| point(0.1 + 0.2 * k as f64)).collect();
        let gamma0 = Configuration::from_locations(locs).unwrap();
        let w = Window::unit_interval();
        let battery = [
            TestFunction::constant(w.clone(), -0.5, RangeClass::NonPos).unwrap(),
            TestFunction::step(w.clone(), vec![2], vec![-0.8, -0.2], RangeClass::NonPos).unwrap(),
        ];
        let mut rng = RngStream::substream(20260819, "path.marginal", 0);
        let reports = marginal_check(
            &gamma0,
            std::f64::consts::LN_2,
            &unit_measure(),
            &mut rng,
            20_000,
            &battery,
        )
        .unwrap();
        assert_eq!(reports.len(), 3);
        for rep in &reports {
            assert!(rep.passed(), "{rep:?}");
        }
    }

    #[test]
    fn long_horizon_marginal_reaches_the_invariant_law() {
        let gamma0 = Configuration::from_locations(vec![point(0.25), point(0.75)]).unwrap();
        let mut rng = RngStream::substream(20260819, "path.long", 0);
        let reports =
            marginal_check(&gamma0, 10.0, &unit_measure(), &mut rng, 10_000, &[]).unwrap();
        assert!(reports[0].passed(), "{:?}", reports[0]);
    }

    #[test]
    fn restart_reproduces_the_marginal_law() {
        // Markov property at the level of counts: running to t directly
        // vs restarting from the state at s with horizon t - s.
        let gamma0 = Configuration::from_locations(vec![point(0.25), point(0.75)]).unwrap();
        let m = unit_measure();
        let (s, t) = (0.4, 1.1);
        let mut rng = RngStream::substream(20260819, "path.markov", 0);
        let n = 20_000;
        let direct: Vec<usize> = (0..n)
            .map(|_| {
                let log = simulate_path(&gamma0, t, &m, &mut rng).unwrap();
                configuration_at(&log, t).unwrap().len()
            })
            .collect();
        let restarted: Vec<usize> = (0..n)
            .map(|_| {
                let first = simulate_path(&gamma0, s, &m, &mut rng).unwrap();
                let mid = configuration_at(&first, s).unwrap();
                let second = simulate_path(&mid, t - s, &m, &mut rng).unwrap();
                configuration_at(&second, t - s).unwrap().len()
            })
            .collect();
        let rep = chi_square_two_sample(
            "path.markov",
            &count_histogram(direct),
            &count_histogram(restarted),
            0.001,
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}
