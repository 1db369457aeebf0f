//! One driver per verification subcommand. Every driver derives its
//! substreams from (master seed, label), so the suite can run on a worker
//! pool in any order with identical results. Each test also supports one
//! named negative control (`--fault-inject <name>`) that tampers a single
//! constant by a few percent; the gate must then fail, which demonstrates
//! it has the power to catch an error of that size.

use anyhow::{bail, Context, Result};

use glauber::generator::{
    apply_generator, dirichlet_form, generator_fd_check, semigroup_mean_exact, spectral_gap_check,
};
use glauber::kernel::{
    chapman_check, count_histogram, count_pmf_auto, ergodic_check, feller_check,
    kernel_exp_laplace_exact, kernel_laplace_exact, kernel_sample,
};
use glauber::measure::{integrate, integrate_expm1};
use glauber::path::{configuration_at, marginal_check, simulate_path};
use glauber::poisson::{empirical_laplace, exact_poisson_laplace, mecke_check, sample_poisson};
use glauber::stats::{chi_square_gof, chi_square_two_sample, variance_estimate, z_gate};
use glauber::{
    Configuration, CylinderFunction, DirichletMode, IntensityMeasure, KernelParams, McEstimate,
    MeckeTestCase, Point, RangeClass, Reference, RngStream, TestReport, Verdict,
};

use crate::config::Experiment;

/// Relative size of an injected fault where a few percent is enough for
/// the gate to see it at the configured replica counts.
const FAULT_SCALE: f64 = 1.10;

fn sub(exp: &Experiment, label: &str) -> RngStream {
    RngStream::substream(exp.seed, label, 0)
}

fn stamp(reports: Vec<TestReport>, exp: &Experiment, label: &str) -> Vec<TestReport> {
    let seed = RngStream::report_seed(exp.seed, label);
    reports
        .into_iter()
        .map(|mut r| {
            r.seed = Some(seed);
            r
        })
        .collect()
}

fn tampered_measure(exp: &Experiment, factor: f64) -> Result<IntensityMeasure> {
    IntensityMeasure::new(
        exp.window().clone(),
        exp.grid.clone(),
        exp.densities.clone(),
        exp.z * factor,
    )
    .context("building the tampered intensity measure")
}

fn draw_invariant(exp: &Experiment, label: &str, n: u64) -> Result<Vec<Configuration>> {
    let mut rng = sub(exp, label);
    (0..n)
        .map(|_| sample_poisson(&exp.measure, &mut rng).map_err(Into::into))
        .collect()
}

/// Gate |mean_a - mean_b| against 4 (SE_a + SE_b).
fn agreement_report(name: &str, a: &McEstimate, b: &McEstimate, identity: &str) -> TestReport {
    let dev = a.mean - b.mean;
    let se = a.std_error + b.std_error;
    let sigma = if se == 0.0 {
        if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        dev.abs() / se
    };
    TestReport::new(
        name,
        dev,
        Reference::Value(0.0),
        sigma,
        Verdict::from_bool(sigma <= 4.0),
        a.n_samples.min(b.n_samples),
    )
    .with_identity(identity)
}

pub fn laplace(exp: &Experiment) -> Result<Vec<TestReport>> {
    let samples = draw_invariant(exp, "laplace", exp.replicas)?;
    let mut reports = Vec::new();
    for p in &exp.battery {
        let est = empirical_laplace(&samples, &p.phi)?;
        let exact = exact_poisson_laplace(&p.phi, &exp.measure)?;
        reports.push(
            z_gate(&format!("laplace.{}", p.name), &est, exact, 4.0)
                .with_identity("E e^{<phi,gamma>} = exp integral (e^phi - 1) d(zm)"),
        );
    }
    Ok(stamp(reports, exp, "laplace"))
}

pub fn mecke(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let n = exp.replicas;
    if fault {
        // Samples drawn at 1.10 z, identity gated at z.
        let tampered = tampered_measure(exp, FAULT_SCALE)?;
        let phi = &exp.battery[0].phi;
        let mut rng = sub(exp, "mecke.fault");
        let values: Vec<f64> = (0..n)
            .map(|_| sample_poisson(&tampered, &mut rng).map(|g| g.sum_profile(phi)))
            .collect::<glauber::Result<_>>()?;
        let est = McEstimate::from_values(&values)?;
        let rhs = integrate(phi, &exp.measure)?;
        let rep = z_gate("mecke.fault", &est, rhs, 4.0)
            .with_identity("E sum_{x in gamma} phi(x) = integral phi d(zm)");
        return Ok(stamp(vec![rep], exp, "mecke.fault"));
    }
    let mut reports = Vec::new();
    let psi = exp.battery[0].phi.clone();
    for (k, p) in exp.battery.iter().enumerate() {
        let label = format!("mecke.linear.{k}");
        let mut rng = sub(exp, &label);
        let mut rep = mecke_check(
            &exp.measure,
            &MeckeTestCase::Linear { phi: p.phi.clone() },
            &mut rng,
            n,
        )?;
        rep.name = format!("mecke.linear.{}", p.name);
        reports.extend(stamp(vec![rep], exp, &label));

        let label = format!("mecke.exp.{k}");
        let mut rng = sub(exp, &label);
        let mut rep = mecke_check(
            &exp.measure,
            &MeckeTestCase::ExpWeighted {
                phi: p.phi.clone(),
                psi: psi.clone(),
            },
            &mut rng,
            n,
        )?;
        rep.name = format!("mecke.exp_weighted.{}", p.name);
        reports.extend(stamp(vec![rep], exp, &label));
    }
    Ok(reports)
}

pub fn chapman(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let t = exp.times[0];
    let s = exp.times.get(1).copied().unwrap_or(t);
    let n = exp.replicas;
    if fault {
        // The second stage runs for 1.5 s while the reference composition
        // uses s: both the closed-form identity and the two-sample count
        // homogeneity must notice.
        let s_bad = 1.5 * s;
        let mut reports = Vec::new();
        let params_first = KernelParams::new(t, exp.measure.clone())?;
        let params_second = KernelParams::new(s_bad, exp.measure.clone())?;
        let params_direct = KernelParams::new(t + s, exp.measure.clone())?;
        if let Some(p) = exp
            .battery
            .iter()
            .find(|p| p.phi.class() == RangeClass::CClass)
        {
            let direct = kernel_laplace_exact(&exp.initial, &params_direct, &p.phi)?;
            let scaled = p.phi.scale_values((-s_bad).exp())?;
            let composed = (params_second.birth_fraction() * integrate(&p.phi, &exp.measure)?)
                .exp()
                * kernel_laplace_exact(&exp.initial, &params_first, &scaled)?;
            let rel = ((composed - direct) / direct).abs();
            reports.push(
                TestReport::new(
                    "chapman.exact.fault",
                    rel,
                    Reference::Value(0.0),
                    rel / 1e-12,
                    Verdict::from_bool(rel <= 1e-12),
                    0,
                )
                .with_identity("P_t P_s = P_{t+s}"),
            );
        }
        let mut rng = sub(exp, "chapman.fault");
        let mut two_stage = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let mid = kernel_sample(&exp.initial, &params_first, &mut rng)?;
            two_stage.push(kernel_sample(&mid, &params_second, &mut rng)?.len());
        }
        let mut one_stage = Vec::with_capacity(n as usize);
        for _ in 0..n {
            one_stage.push(kernel_sample(&exp.initial, &params_direct, &mut rng)?.len());
        }
        reports.push(
            chi_square_two_sample(
                "chapman.sampled.fault",
                &count_histogram(two_stage),
                &count_histogram(one_stage),
                0.001,
            )?
            .with_identity("P_t P_s = P_{t+s}"),
        );
        return Ok(stamp(reports, exp, "chapman.fault"));
    }
    let battery: Vec<_> = exp
        .battery
        .iter()
        .filter(|p| p.phi.class() == RangeClass::CClass)
        .map(|p| p.phi.clone())
        .collect();
    let mut rng = sub(exp, "chapman");
    let reports = chapman_check(&exp.initial, t, s, &exp.measure, &mut rng, n, &battery)?;
    Ok(stamp(reports, exp, "chapman"))
}

pub fn count_law(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let n = exp.replicas;
    let n0 = exp.initial.len();
    let identity = "N_t ~ Binomial(n0, e^{-t}) * Poisson((1 - e^{-t}) m(window))";
    let mut reports = Vec::new();
    for (i, &t) in exp.times.iter().enumerate() {
        let label = format!("count_law.{i}");
        let mut rng = sub(exp, &label);
        // The fault samples with a decay clock running 20% fast while the
        // reference law stays at t.
        let t_sample = if fault { 1.2 * t } else { t };
        let params_sample = KernelParams::new(t_sample, exp.measure.clone())?;
        let params_gate = KernelParams::new(t, exp.measure.clone())?;
        let mut counts = Vec::with_capacity(n as usize);
        for _ in 0..n {
            counts.push(kernel_sample(&exp.initial, &params_sample, &mut rng)?.len());
        }
        let law = count_pmf_auto(n0, &params_gate, exp.window())?;
        let name = if fault {
            format!("count_law.fault.{i}")
        } else {
            format!("count_law.chi_square.{i}")
        };
        let rep = chi_square_gof(&name, &count_histogram(counts), &law, 0.001)?
            .with_identity(identity);
        reports.extend(stamp(vec![rep], exp, &label));
    }
    Ok(reports)
}

pub fn dirichlet(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let identity = "E_pi sum_x D-F D-G = E_pi integral D+F D+G d(zm)";
    let samples = draw_invariant(exp, "dirichlet", exp.replicas)?;
    if fault {
        // The birth-side integral is taken against 1.10 z.
        let tampered = tampered_measure(exp, FAULT_SCALE)?;
        let f = CylinderFunction::linear(exp.battery[0].phi.clone());
        let gamma_side = dirichlet_form(&f, &f, DirichletMode::GammaSide, &samples, &exp.measure)?;
        let m_side = dirichlet_form(&f, &f, DirichletMode::MSide, &samples, &tampered)?;
        let rep = agreement_report("dirichlet.fault", &gamma_side, &m_side, identity);
        return Ok(stamp(vec![rep], exp, "dirichlet"));
    }
    let mut reports = Vec::new();
    for p in &exp.battery {
        let f = CylinderFunction::linear(p.phi.clone());
        let gamma_side = dirichlet_form(&f, &f, DirichletMode::GammaSide, &samples, &exp.measure)?;
        let m_side = dirichlet_form(&f, &f, DirichletMode::MSide, &samples, &exp.measure)?;
        reports.push(agreement_report(
            &format!("dirichlet.agreement.{}", p.name),
            &gamma_side,
            &m_side,
            identity,
        ));
        // For linear F the birth side is exact (zero SE), so it doubles
        // as the closed-form reference for the death side.
        reports.push(
            z_gate(
                &format!("dirichlet.exact.{}", p.name),
                &gamma_side,
                m_side.mean,
                4.0,
            )
            .with_identity(identity),
        );
    }
    Ok(stamp(reports, exp, "dirichlet"))
}

pub fn generator(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let identity = "(P_h F - F)/h -> -HF as h -> 0";
    if fault {
        // HF scaled by 1.05: the residual no longer vanishes with h.
        let phi = &exp.battery[0].phi;
        let f = CylinderFunction::linear(phi.clone());
        let base = f.eval(&exp.initial);
        let hf = apply_generator(&f, &exp.initial, &exp.measure)? * 1.05;
        let residual = |h: f64| -> glauber::Result<f64> {
            Ok((semigroup_mean_exact(phi, &exp.initial, h, &exp.measure)? - base) / h + hf)
        };
        let r_h = residual(exp.fd_step)?;
        let r_half = residual(exp.fd_step / 2.0)?;
        let ratio = if r_h == 0.0 { 0.0 } else { r_half / r_h };
        let pass = r_h.abs() <= 1e-2 && (0.45..=0.55).contains(&ratio);
        let rep = TestReport::new(
            "generator.fault",
            r_h,
            Reference::Value(0.0),
            r_h.abs() / 1e-2,
            Verdict::from_bool(pass),
            0,
        )
        .with_identity(identity)
        .with_detail("halving_ratio", ratio);
        return Ok(stamp(vec![rep], exp, "generator"));
    }
    let mut reports = Vec::new();
    for p in &exp.battery {
        let f = CylinderFunction::linear(p.phi.clone());
        let mut rep = generator_fd_check(&f, &exp.initial, &exp.measure, exp.fd_step)?;
        rep.name = format!("generator.finite_difference.{}", p.name);
        reports.push(rep);
    }
    Ok(stamp(reports, exp, "generator"))
}

pub fn gap(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let identity = "Var_pi(F) <= E(F, F)";
    let samples = draw_invariant(exp, "gap", exp.replicas)?;
    if fault {
        // Dirichlet energy scaled by 0.90: the gap inequality flips for
        // the saturating (linear) family.
        let f = CylinderFunction::linear(exp.battery[0].phi.clone());
        let values: Vec<f64> = samples.iter().map(|g| f.eval(g)).collect();
        let var = variance_estimate(&values)?;
        let energy = dirichlet_form(&f, &f, DirichletMode::MSide, &samples, &exp.measure)?;
        let gap = 0.90 * energy.mean - var.mean;
        let se = 0.90 * energy.std_error + var.std_error;
        let sigma = if se == 0.0 {
            if gap >= 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            gap / se
        };
        let rep = TestReport::new(
            "gap.fault",
            gap,
            Reference::Value(0.0),
            sigma,
            Verdict::from_bool(gap >= -4.0 * se),
            samples.len() as u64,
        )
        .with_identity(identity);
        return Ok(stamp(vec![rep], exp, "gap"));
    }
    let mut reports = Vec::new();
    for p in &exp.battery {
        let f = CylinderFunction::linear(p.phi.clone());
        let mut rep = spectral_gap_check(&f, &samples, &exp.measure)?;
        rep.name = format!("spectral_gap.{}", p.name);
        reports.push(rep);
    }
    // One strictly sub-saturating function: the square of a linear one.
    let quad = CylinderFunction::polynomial(
        vec![exp.battery[0].phi.clone()],
        vec![(vec![2], 1.0)],
    )?;
    let mut rep = spectral_gap_check(&quad, &samples, &exp.measure)?;
    rep.name = format!("spectral_gap.{}^2", exp.battery[0].name);
    reports.push(rep);
    Ok(stamp(reports, exp, "gap"))
}

pub fn marginal(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let t = exp.times[0];
    let n = exp.path_replicas;
    if fault {
        // Paths run to 1.2 t but are gated against the count law at t.
        let mut rng = sub(exp, "marginal.fault");
        let mut counts = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let log = simulate_path(&exp.initial, 1.2 * t, &exp.measure, &mut rng)?;
            counts.push(configuration_at(&log, 1.2 * t)?.len());
        }
        let params = KernelParams::new(t, exp.measure.clone())?;
        let law = count_pmf_auto(exp.initial.len(), &params, exp.window())?;
        let rep = chi_square_gof(
            "marginal.fault",
            &count_histogram(counts),
            &law,
            0.001,
        )?
        .with_identity("path marginal at t ~ P_t(gamma0, .)");
        return Ok(stamp(vec![rep], exp, "marginal.fault"));
    }
    let battery = exp.step_functions();
    let mut rng = sub(exp, "marginal");
    let mut reports = marginal_check(&exp.initial, t, &exp.measure, &mut rng, n, &battery)?;
    for r in &mut reports {
        if let Some(rest) = r.name.strip_prefix("marginal.laplace_ks.") {
            if let Ok(k) = rest.parse::<usize>() {
                r.name = format!("marginal.laplace_ks.{}", exp.battery[k].name);
            }
        }
    }
    Ok(stamp(reports, exp, "marginal"))
}

pub fn feller(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let hat = exp
        .hat
        .as_ref()
        .context("the continuity gate needs a hat profile in the battery")?;
    let t = exp.times[0];
    let params = KernelParams::new(t, exp.measure.clone())?;
    if fault {
        // The "zero shift" is tampered to 1e-3, so the exact difference
        // it asserts to vanish is strictly positive.
        let delta = 1e-3;
        let shifted: Vec<(u64, Point)> = exp
            .feller_initial
            .points()
            .iter()
            .map(|(id, p)| {
                let mut c = p.coords().to_vec();
                c[0] += delta;
                (*id, Point::new(c))
            })
            .collect();
        let shifted = Configuration::new(shifted)?;
        let base = kernel_laplace_exact(&exp.feller_initial, &params, &hat.phi)?;
        let moved = kernel_laplace_exact(&shifted, &params, &hat.phi)?;
        let d = (moved - base).abs();
        let rep = TestReport::new(
            "feller.fault",
            d,
            Reference::Value(0.0),
            if d == 0.0 { 0.0 } else { f64::INFINITY },
            Verdict::from_bool(d == 0.0),
            0,
        )
        .with_identity("gamma -> P_t L_phi(gamma) is continuous");
        return Ok(stamp(vec![rep], exp, "feller"));
    }
    let mut rng = sub(exp, "feller");
    let reports = feller_check(
        &exp.feller_initial,
        exp.feller_delta,
        &hat.phi,
        &params,
        &mut rng,
        exp.path_replicas,
    )?;
    Ok(stamp(reports, exp, "feller"))
}

pub fn ergodic(exp: &Experiment, fault: bool) -> Result<Vec<TestReport>> {
    let phi = &exp.battery[0].phi;
    if fault {
        // The decay clock runs 5% fast; the compensated t = 8 deviation
        // overshoots its first-order limit by e^{0.4} - 1.
        let t = 8.0;
        let pi_lap = exact_poisson_laplace(phi, &exp.measure)?;
        let params = KernelParams::new(1.05 * t, exp.measure.clone())?;
        let dev = kernel_exp_laplace_exact(&exp.initial, &params, phi)? - pi_lap;
        let sum_c: f64 = exp
            .initial
            .points()
            .iter()
            .map(|(_, x)| phi.eval(x.coords()).exp_m1())
            .sum();
        let coefficient = pi_lap * (sum_c - integrate_expm1(phi, &exp.measure)?);
        if coefficient == 0.0 {
            bail!("the first-order deviation coefficient vanishes for this configuration");
        }
        let rel = ((t.exp() * dev - coefficient) / coefficient).abs();
        let rep = TestReport::new(
            "ergodic.fault",
            rel,
            Reference::Value(0.0),
            rel / 1e-3,
            Verdict::from_bool(rel <= 1e-3),
            0,
        )
        .with_identity("P_t(gamma, .) -> pi_m as t -> infinity");
        return Ok(stamp(vec![rep], exp, "ergodic"));
    }
    let mut rng = sub(exp, "ergodic");
    let reports = ergodic_check(&exp.initial, phi, &exp.measure, &mut rng, exp.replicas)?;
    Ok(stamp(reports, exp, "ergodic"))
}

/// Point-sample artifacts for the non-test subcommands.
pub fn invariant_samples(exp: &Experiment) -> Result<Vec<Configuration>> {
    draw_invariant(exp, "sample-poisson", exp.replicas)
}

pub fn kernel_step_samples(exp: &Experiment) -> Result<Vec<Configuration>> {
    let params = KernelParams::new(exp.times[0], exp.measure.clone())?;
    let mut rng = sub(exp, "kernel-step");
    (0..exp.replicas)
        .map(|_| kernel_sample(&exp.initial, &params, &mut rng).map_err(Into::into))
        .collect()
}

pub fn one_path(exp: &Experiment) -> Result<glauber::EventLog> {
    let mut rng = sub(exp, "simulate-path");
    simulate_path(&exp.initial, exp.horizon, &exp.measure, &mut rng).map_err(Into::into)
}
