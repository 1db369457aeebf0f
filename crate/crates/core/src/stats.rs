//! Statistical gates shared by every verification routine.
//!
//! Three gates cover the whole suite: a z-gate for Monte Carlo means
//! against closed-form values, a Pearson chi-square goodness-of-fit gate
//! for count histograms against exact pmfs (plus a two-sample variant for
//! comparing two sampled histograms), and a two-sample Kolmogorov-Smirnov
//! gate for continuous statistics. All p-values are asymptotic:
//!
//! * chi-square: valid once every pooled bin has expected count >= 5
//!   (enforced by pooling);
//! * KS: the Kolmogorov series is accurate for effective sample sizes
//!   n_e = n*m/(n+m) above roughly 35; callers here use thousands;
//! * z-gate: normality of the mean, fine for the n >= 10^3 used throughout.
//!
//! Gates are deterministic functions of their inputs; randomness lives
//! entirely in the samplers.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::kernel::CountDistribution;
use crate::Result;
use serde::Serialize;

/// Monte Carlo estimate: sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation / sqrt(n).
    pub std_error: f64,
    pub n_samples: u64,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut acc = RunningMoments::new();
        for &v in values {
            acc.push(v);
        }
        acc.finish()
    }
}

/// Streaming mean / second central moment (Welford), mergeable across
/// replica batches. Merging is associative and order-independent up to
/// floating-point reassociation (~1e-12 relative); deterministic replay
/// therefore merges batches in replica order.
#[derive(Debug, Clone, Copy)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Default for RunningMoments {
    fn default() -> Self {
        Self::new()
    }
}

impl RunningMoments {
    pub fn new() -> Self {
        RunningMoments {
            n: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let d = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += d * n2 / n;
        self.m2 += other.m2 + d * d * n1 * n2 / n;
        self.n += other.n;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn finish(&self) -> Result<McEstimate> {
        if self.n == 0 {
            return Err(Error::EmptySamples);
        }
        Ok(McEstimate {
            mean: self.mean,
            std_error: (self.variance() / self.n as f64).sqrt(),
            n_samples: self.n,
        })
    }
}

/// Estimate of the population variance from a sample, with the asymptotic
/// standard error sqrt((m4 - m2^2)/n) from the fourth central moment.
pub fn variance_estimate(values: &[f64]) -> Result<McEstimate> {
    if values.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    Ok(McEstimate {
        mean: m2 * n / (n - 1.0).max(1.0),
        std_error: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
        n_samples: values.len() as u64,
    })
}

/// Pass/fail outcome of a gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// The reference a statistic was gated against: a closed-form value or a
/// named distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Reference {
    Value(f64),
    Law(String),
}

/// Outcome of one verification gate. The verdict is determined solely by
/// the recorded statistic and the declared threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub name: String,
    /// Observed statistic (MC mean, Pearson statistic, KS distance, ...).
    pub statistic: f64,
    pub reference: Reference,
    /// p-value for distributional gates; SE-multiple for z-gates; relative
    /// error for exact identities.
    pub p_or_sigma: f64,
    pub verdict: Verdict,
    /// Derived substream seed, attached by the experiment driver.
    pub seed: Option<u64>,
    #[serde(rename = "n")]
    pub n_samples: u64,
    /// The identity under test, spelled out, so a failure points at the
    /// equation it checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    /// Auxiliary named values (extrapolated limits, bounds, ...).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl TestReport {
    pub fn new(
        name: impl Into<String>,
        statistic: f64,
        reference: Reference,
        p_or_sigma: f64,
        verdict: Verdict,
        n_samples: u64,
    ) -> Self {
        TestReport {
            name: name.into(),
            statistic,
            reference,
            p_or_sigma,
            verdict,
            seed: None,
            n_samples,
            identity: None,
            details: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = Some(identity.into());
        self
    }

    pub fn with_detail(mut self, key: impl Into<String>, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

/// Gate a Monte Carlo mean against an exact value at k-sigma. A zero
/// standard error demands exact equality (degenerate estimator).
pub fn z_gate(name: &str, estimate: &McEstimate, exact: f64, k_sigma: f64) -> TestReport {
    let dev = (estimate.mean - exact).abs();
    let (sigma, pass) = if estimate.std_error == 0.0 {
        if dev == 0.0 {
            (0.0, true)
        } else {
            (f64::INFINITY, false)
        }
    } else {
        let s = dev / estimate.std_error;
        (s, s <= k_sigma)
    };
    TestReport::new(
        name,
        estimate.mean,
        Reference::Value(exact),
        sigma,
        Verdict::from_bool(pass),
        estimate.n_samples,
    )
}

/// Upper chi-square tail via the regularized incomplete gamma function.
fn chi_square_tail(statistic: f64, dof: f64) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(0.5 * dof, 0.5 * statistic)
}

/// Histogram bins pooled so every expected count reaches this minimum;
/// standard validity condition for the Pearson statistic.
const MIN_EXPECTED: f64 = 5.0;

/// Pool (observed, expected) pairs left to right until each pooled bin has
/// expected >= MIN_EXPECTED; a deficient final bin merges backwards.
fn pool_bins(observed: &[f64], expected: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= MIN_EXPECTED {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
            *lo += o_acc;
            *le += e_acc;
        } else {
            obs.push(o_acc);
            exp.push(e_acc);
        }
    }
    (obs, exp)
}

/// Pearson goodness-of-fit gate: histogram of counts (index = count value)
/// against an exact count distribution. Pass iff the chi-square tail
/// probability is >= alpha.
pub fn chi_square_gof(
    name: &str,
    counts: &[u64],
    pmf: &CountDistribution,
    alpha: f64,
) -> Result<TestReport> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyHistogram);
    }
    let probs = pmf.pmf();
    // Observed values beyond the pmf support carry expected mass pmf.tail
    // (< 1e-12 by construction); nonzero observations there cannot be
    // explained by the reference law.
    for (i, &c) in counts.iter().enumerate() {
        if i >= probs.len() && c > 0 && pmf.tail_mass() <= 0.0 {
            return Err(Error::SupportMismatch);
        }
    }
    let len = probs.len().max(counts.len());
    let mut observed = vec![0.0; len + 1];
    let mut expected = vec![0.0; len + 1];
    for (i, &c) in counts.iter().enumerate() {
        observed[i] = c as f64;
    }
    for (i, &p) in probs.iter().enumerate() {
        expected[i] = n as f64 * p;
    }
    expected[len] = n as f64 * pmf.tail_mass();
    let (obs, exp) = pool_bins(&observed, &expected);
    if obs.len() < 2 {
        return Err(Error::InvalidParameter(
            "chi-square needs at least two pooled bins".into(),
        ));
    }
    if exp.iter().zip(&obs).any(|(&e, &o)| e == 0.0 && o > 0.0) {
        return Err(Error::SupportMismatch);
    }
    let statistic: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (obs.len() - 1) as f64;
    let p = chi_square_tail(statistic, dof);
    Ok(TestReport::new(
        name,
        statistic,
        Reference::Law(format!("chi-square({} dof)", dof as u64)),
        p,
        Verdict::from_bool(p >= alpha),
        n,
    ))
}

/// Two-sample chi-square homogeneity gate on a pair of count histograms
/// (index = count value): do both samples come from one law? Pooling is on
/// the combined histogram. Pass iff p >= alpha.
pub fn chi_square_two_sample(
    name: &str,
    a: &[u64],
    b: &[u64],
    alpha: f64,
) -> Result<TestReport> {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::EmptyHistogram);
    }
    let len = a.len().max(b.len());
    let at = |s: &[u64], i: usize| *s.get(i).unwrap_or(&0) as f64;
    // Pool on the smaller sample's expected counts so both rows clear the
    // minimum.
    let total = (na + nb) as f64;
    let frac = na.min(nb) as f64 / total;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut oa, mut ob) = (0.0, 0.0);
    for i in 0..len {
        oa += at(a, i);
        ob += at(b, i);
        if (oa + ob) * frac >= MIN_EXPECTED {
            bins.push((oa, ob));
            oa = 0.0;
            ob = 0.0;
        }
    }
    if oa > 0.0 || ob > 0.0 {
        if let Some(last) = bins.last_mut() {
            last.0 += oa;
            last.1 += ob;
        } else {
            bins.push((oa, ob));
        }
    }
    if bins.len() < 2 {
        return Err(Error::InvalidParameter(
            "chi-square needs at least two pooled bins".into(),
        ));
    }
    let mut statistic = 0.0;
    for &(ca, cb) in &bins {
        let col = ca + cb;
        let ea = col * na as f64 / total;
        let eb = col * nb as f64 / total;
        statistic += (ca - ea) * (ca - ea) / ea + (cb - eb) * (cb - eb) / eb;
    }
    let dof = (bins.len() - 1) as f64;
    let p = chi_square_tail(statistic, dof);
    Ok(TestReport::new(
        name,
        statistic,
        Reference::Law(format!("chi-square({} dof)", dof as u64)),
        p,
        Verdict::from_bool(p >= alpha),
        na + nb,
    ))
}

/// Kolmogorov distribution tail Q(lambda) = 2 sum (-1)^{j-1} e^{-2 j^2 lambda^2}.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-10 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov gate with the asymptotic p-value
/// (Kolmogorov tail with the small-sample correction on lambda). Pass iff
/// p >= alpha.
pub fn ks_two_sample(name: &str, a: &[f64], b: &[f64], alpha: f64) -> Result<TestReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = xs[i].min(ys[j]);
        while i < na && xs[i] <= v {
            i += 1;
        }
        while j < nb && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let p = kolmogorov_tail(lambda);
    Ok(TestReport::new(
        name,
        d,
        Reference::Law("Kolmogorov".into()),
        p,
        Verdict::from_bool(p >= alpha),
        (na + nb) as u64,
    ))
}
