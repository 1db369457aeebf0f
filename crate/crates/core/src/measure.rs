//! Window geometry, grid intensity measures, and test profiles.
//!
//! The window is an axis-aligned box in R^d. The intensity measure m is
//! piecewise constant on a rectangular grid over the window, scaled by a
//! global factor z > 0; every mass and integral below includes z. Test
//! functions are window-aligned step profiles (a value per grid cell, any
//! dimension) or one-dimensional hat profiles (piecewise linear, compact
//! support). Step profiles make every integral in the verification suite an
//! exact finite sum over the common grid refinement; hats appear only in the
//! Feller continuity check.

use crate::error::Error;
use crate::rng::RngStream;
use crate::Result;
use rand::Rng;

/// A location in the window: d real coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(coords: Vec<f64>) -> Self {
        Point(coords)
    }
}

/// Axis-aligned box with nonempty interior.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    bounds: Vec<(f64, f64)>,
}

impl Window {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidWindow("dimension must be positive".into()));
        }
        for &(a, b) in &bounds {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidWindow("bounds must be finite".into()));
            }
            if a >= b {
                return Err(Error::InvalidWindow(format!(
                    "empty axis: lower bound {a} is not below upper bound {b}"
                )));
            }
        }
        Ok(Window { bounds })
    }

    /// The unit interval [0, 1]; the reference window of the test suite.
    pub fn unit_interval() -> Self {
        Window {
            bounds: vec![(0.0, 1.0)],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|&(a, b)| b - a).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(&v, &(a, b))| v >= a && v <= b)
    }

    /// Whether `other` lies inside this box (closed inclusion).
    pub fn contains_box(&self, other: &Window) -> bool {
        other.dim() == self.dim()
            && other
                .bounds
                .iter()
                .zip(&self.bounds)
                .all(|(&(oa, ob), &(a, b))| oa >= a && ob <= b)
    }
}

/// Grid edge i of axis `axis` for `n` cells over [a, b]: a + (b-a)*i/n.
/// Shared by measures and step profiles so aligned grids produce
/// bit-identical breakpoints.
fn grid_edge(a: f64, b: f64, i: usize, n: usize) -> f64 {
    if i == 0 {
        a
    } else if i == n {
        b
    } else {
        a + (b - a) * (i as f64 / n as f64)
    }
}

/// Cell index of coordinate x on an n-cell axis over [a, b]: cells are
/// half-open on the right except the last, so every window point lands in
/// exactly one cell.
fn cell_of(a: f64, b: f64, x: f64, n: usize) -> usize {
    let t = (x - a) / (b - a) * n as f64;
    (t.floor() as isize).clamp(0, n as i64 as isize - 1) as usize
}

/// Piecewise-constant intensity on a grid over a window, with a global
/// scale z. The measure of a region is z * sum_k density_k * vol(cell_k
/// intersect region); non-atomic by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMeasure {
    window: Window,
    cells_per_axis: Vec<usize>,
    densities: Vec<f64>,
    scale: f64,
    /// Cumulative scaled cell masses, for location sampling.
    cum_mass: Vec<f64>,
    total_mass: f64,
}

impl IntensityMeasure {
    pub fn new(
        window: Window,
        cells_per_axis: Vec<usize>,
        densities: Vec<f64>,
        scale: f64,
    ) -> Result<Self> {
        if cells_per_axis.len() != window.dim() {
            return Err(Error::InvalidMeasure(
                "one cell count per axis required".into(),
            ));
        }
        if cells_per_axis.contains(&0) {
            return Err(Error::InvalidMeasure("cell counts must be positive".into()));
        }
        let n_cells: usize = cells_per_axis.iter().product();
        if densities.len() != n_cells {
            return Err(Error::InvalidMeasure(format!(
                "expected {n_cells} densities, got {}",
                densities.len()
            )));
        }
        if densities.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidMeasure(
                "densities must be finite and nonnegative".into(),
            ));
        }
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidMeasure("scale z must be positive".into()));
        }
        let mut m = IntensityMeasure {
            window,
            cells_per_axis,
            densities,
            scale,
            cum_mass: Vec::new(),
            total_mass: 0.0,
        };
        let mut acc = 0.0;
        let cum: Vec<f64> = (0..n_cells)
            .map(|k| {
                acc += m.scale * m.densities[k] * m.cell_volume(k);
                acc
            })
            .collect();
        m.total_mass = acc;
        m.cum_mass = cum;
        Ok(m)
    }

    /// Constant density over the whole window.
    pub fn uniform(window: Window, density: f64, scale: f64) -> Result<Self> {
        let d = window.dim();
        IntensityMeasure::new(window, vec![1; d], vec![density], scale)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    fn n_cells(&self) -> usize {
        self.densities.len()
    }

    /// Decode a linear cell index into per-axis indices (last axis fastest).
    fn decode(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.cells_per_axis.len()];
        for axis in (0..self.cells_per_axis.len()).rev() {
            idx[axis] = k % self.cells_per_axis[axis];
            k /= self.cells_per_axis[axis];
        }
        idx
    }

    fn cell_volume(&self, k: usize) -> f64 {
        let idx = self.decode(k);
        idx.iter()
            .zip(&self.cells_per_axis)
            .zip(self.window.bounds())
            .map(|((&i, &n), &(a, b))| grid_edge(a, b, i + 1, n) - grid_edge(a, b, i, n))
            .product()
    }

    /// Density value at a point (no scale).
    fn density_at(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        for (axis, &(a, b)) in self.window.bounds().iter().enumerate() {
            let n = self.cells_per_axis[axis];
            k = k * n + cell_of(a, b, x[axis], n);
        }
        self.densities[k]
    }

    /// Exact measure of `region`: z * sum_k density_k * vol(cell_k intersect
    /// region). Box-box intersections are boxes, so the value is exact for
    /// any box region, grid-aligned or not.
    pub fn mass(&self, region: &Window) -> Result<f64> {
        if !self.window.contains_box(region) {
            return Err(Error::RegionOutsideWindow);
        }
        // Per-axis overlap length of each cell with the region.
        let overlaps: Vec<Vec<f64>> = self
            .window
            .bounds()
            .iter()
            .enumerate()
            .map(|(axis, &(a, b))| {
                let n = self.cells_per_axis[axis];
                let (ra, rb) = region.bounds()[axis];
                (0..n)
                    .map(|i| {
                        let lo = grid_edge(a, b, i, n).max(ra);
                        let hi = grid_edge(a, b, i + 1, n).min(rb);
                        (hi - lo).max(0.0)
                    })
                    .collect()
            })
            .collect();
        let mut total = 0.0;
        for k in 0..self.n_cells() {
            let idx = self.decode(k);
            let vol: f64 = idx.iter().enumerate().map(|(axis, &i)| overlaps[axis][i]).product();
            total += self.scale * self.densities[k] * vol;
        }
        Ok(total)
    }

    /// z * m(window); cached at construction.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// One point distributed as m / m(window): a cell chosen with
    /// probability proportional to its scaled mass, then a uniform point
    /// inside that cell.
    pub fn sample_location(&self, rng: &mut RngStream) -> Result<Point> {
        if self.total_mass <= 0.0 {
            return Err(Error::DegenerateMeasure);
        }
        let u = rng.random::<f64>() * self.total_mass;
        let k = self.cum_mass.partition_point(|&c| c <= u).min(self.n_cells() - 1);
        let idx = self.decode(k);
        let coords = idx
            .iter()
            .zip(&self.cells_per_axis)
            .zip(self.window.bounds())
            .map(|((&i, &n), &(a, b))| {
                let lo = grid_edge(a, b, i, n);
                let hi = grid_edge(a, b, i + 1, n);
                lo + (hi - lo) * rng.random::<f64>()
            })
            .collect();
        Ok(Point::new(coords))
    }
}

/// Range class of a test profile. The kernel's Laplace identities hold on
/// specific ranges, so profiles carry their class and the closed-form
/// routines check it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeClass {
    /// All values in (-1, 0]; the domain of log(1 + phi).
    CClass,
    /// All values <= 0; keeps e^{<phi,gamma>} bounded by 1.
    NonPos,
    /// No range constraint.
    Generic,
}

impl RangeClass {
    pub fn name(self) -> &'static str {
        match self {
            RangeClass::CClass => "c_class",
            RangeClass::NonPos => "non_pos",
            RangeClass::Generic => "generic",
        }
    }

    fn admits(self, v: f64) -> bool {
        match self {
            RangeClass::CClass => v > -1.0 && v <= 0.0,
            RangeClass::NonPos => v <= 0.0,
            RangeClass::Generic => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Profile {
    /// One value per grid cell over the whole window; zero cells are the
    /// complement of the support.
    Step {
        cells_per_axis: Vec<usize>,
        values: Vec<f64>,
    },
    /// d = 1 piecewise-linear profile through (nodes[i], values[i]), zero
    /// outside [nodes.first(), nodes.last()]; boundary values vanish so the
    /// profile is continuous with compact support.
    Hat { nodes: Vec<f64>, values: Vec<f64> },
}

/// A compactly supported test profile on a window, tagged with its range
/// class. Evaluation is exact at every point.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    window: Window,
    profile: Profile,
    class: RangeClass,
}

impl TestFunction {
    /// Step profile: `values[k]` on grid cell k (cells half-open on the
    /// right except at the window boundary).
    pub fn step(
        window: Window,
        cells_per_axis: Vec<usize>,
        values: Vec<f64>,
        class: RangeClass,
    ) -> Result<Self> {
        if cells_per_axis.len() != window.dim() {
            return Err(Error::InvalidTestFunction(
                "one cell count per axis required".into(),
            ));
        }
        if cells_per_axis.contains(&0) {
            return Err(Error::InvalidTestFunction(
                "cell counts must be positive".into(),
            ));
        }
        let n_cells: usize = cells_per_axis.iter().product();
        if values.len() != n_cells {
            return Err(Error::InvalidTestFunction(format!(
                "expected {n_cells} cell values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTestFunction("values must be finite".into()));
        }
        if let Some(v) = values.iter().find(|v| !class.admits(**v)) {
            return Err(Error::InvalidTestFunction(format!(
                "value {v} violates range class {}",
                class.name()
            )));
        }
        Ok(TestFunction {
            window,
            profile: Profile::Step {
                cells_per_axis,
                values,
            },
            class,
        })
    }

    /// Constant value over the whole window.
    pub fn constant(window: Window, value: f64, class: RangeClass) -> Result<Self> {
        let d = window.dim();
        TestFunction::step(window, vec![1; d], vec![value], class)
    }

    /// Hat profile (d = 1): piecewise linear through the nodes, zero
    /// outside them. The first and last node values must be zero.
    pub fn hat(window: Window, nodes: Vec<f64>, values: Vec<f64>, class: RangeClass) -> Result<Self> {
        if window.dim() != 1 {
            return Err(Error::InvalidTestFunction(
                "hat profiles are one-dimensional".into(),
            ));
        }
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(Error::InvalidTestFunction(
                "need at least two nodes, one value per node".into(),
            ));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidTestFunction("nodes must be finite".into()));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTestFunction(
                "nodes must be strictly increasing".into(),
            ));
        }
        let (a, b) = window.bounds()[0];
        if nodes[0] < a || *nodes.last().unwrap() > b {
            return Err(Error::InvalidTestFunction(
                "nodes must lie inside the window".into(),
            ));
        }
        if values[0] != 0.0 || *values.last().unwrap() != 0.0 {
            return Err(Error::InvalidTestFunction(
                "boundary node values must vanish (compact support)".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTestFunction("values must be finite".into()));
        }
        // Linear interpolation attains its extremes at nodes, so checking
        // node values (plus the implicit outside value 0) covers the range.
        if let Some(v) = values.iter().find(|v| !class.admits(**v)) {
            return Err(Error::InvalidTestFunction(format!(
                "value {v} violates range class {}",
                class.name()
            )));
        }
        Ok(TestFunction {
            window,
            profile: Profile::Hat { nodes, values },
            class,
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn class(&self) -> RangeClass {
        self.class
    }

    pub fn is_step(&self) -> bool {
        matches!(self.profile, Profile::Step { .. })
    }

    /// Exact value at x; zero outside the window and outside the support.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if !self.window.contains(x) {
            return 0.0;
        }
        match &self.profile {
            Profile::Step {
                cells_per_axis,
                values,
            } => {
                let mut k = 0;
                for (axis, &(a, b)) in self.window.bounds().iter().enumerate() {
                    let n = cells_per_axis[axis];
                    k = k * n + cell_of(a, b, x[axis], n);
                }
                values[k]
            }
            Profile::Hat { nodes, values } => {
                let t = x[0];
                if t < nodes[0] || t > *nodes.last().unwrap() {
                    return 0.0;
                }
                // Segment index: rightmost node <= t, capped at the last
                // segment so t == nodes.last() evaluates on it.
                let j = nodes.partition_point(|&n| n <= t).saturating_sub(1).min(nodes.len() - 2);
                let (n0, n1) = (nodes[j], nodes[j + 1]);
                let (v0, v1) = (values[j], values[j + 1]);
                v0 + (v1 - v0) * ((t - n0) / (n1 - n0))
            }
        }
    }

    /// The profile multiplied by c, revalidated against its class.
    pub fn scale_values(&self, c: f64) -> Result<TestFunction> {
        let mut out = self.clone();
        let values = match &mut out.profile {
            Profile::Step { values, .. } => values,
            Profile::Hat { values, .. } => values,
        };
        for v in values.iter_mut() {
            *v *= c;
            if !self.class.admits(*v) {
                return Err(Error::InvalidTestFunction(format!(
                    "scaling by {c} leaves range class {}",
                    self.class.name()
                )));
            }
        }
        Ok(out)
    }

    /// Largest absolute slope (hat profiles); the Lipschitz constant used by
    /// the Feller bound.
    pub fn max_abs_slope(&self) -> f64 {
        match &self.profile {
            Profile::Step { .. } => f64::INFINITY,
            Profile::Hat { nodes, values } => nodes
                .windows(2)
                .zip(values.windows(2))
                .map(|(n, v)| ((v[1] - v[0]) / (n[1] - n[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Per-axis breakpoints of a step profile (window edges included).
    fn step_edges(&self, axis: usize) -> Vec<f64> {
        match &self.profile {
            Profile::Step { cells_per_axis, .. } => {
                let (a, b) = self.window.bounds()[axis];
                let n = cells_per_axis[axis];
                (0..=n).map(|i| grid_edge(a, b, i, n)).collect()
            }
            Profile::Hat { .. } => unreachable!("step_edges on hat profile"),
        }
    }
}

pub(crate) fn check_same_window(phi: &TestFunction, measure: &IntensityMeasure) -> Result<()> {
    if phi.window != *measure.window() {
        return Err(Error::InvalidTestFunction(
            "profile window differs from the measure window".into(),
        ));
    }
    Ok(())
}

/// Sorted union of per-axis breakpoints of the measure grid and every step
/// profile; both are generated by `grid_edge`, so shared fractions dedupe
/// bit-exactly.
fn refined_edges(measure: &IntensityMeasure, phis: &[&TestFunction], axis: usize) -> Vec<f64> {
    let (a, b) = measure.window().bounds()[axis];
    let n = measure.cells_per_axis()[axis];
    let mut edges: Vec<f64> = (0..=n).map(|i| grid_edge(a, b, i, n)).collect();
    for phi in phis {
        edges.extend(phi.step_edges(axis));
    }
    edges.sort_by(|p, q| p.partial_cmp(q).unwrap());
    edges.dedup();
    edges
}

/// Exact integral of f(phi_1(x), ..., phi_k(x)) dm over the window, for
/// step profiles: every integrand is constant on the cells of the common
/// grid refinement, so the integral is a finite sum of
/// f(values) * z * density * volume terms.
pub(crate) fn integrate_map<F: Fn(&[f64]) -> f64>(
    measure: &IntensityMeasure,
    phis: &[&TestFunction],
    f: F,
) -> Result<f64> {
    for phi in phis {
        check_same_window(phi, measure)?;
        if !phi.is_step() {
            return Err(Error::HatUnsupported);
        }
    }
    let d = measure.window().dim();
    let axes: Vec<Vec<f64>> = (0..d).map(|axis| refined_edges(measure, phis, axis)).collect();
    let counts: Vec<usize> = axes.iter().map(|e| e.len() - 1).collect();
    let n_cells: usize = counts.iter().product();

    let mut total = 0.0;
    let mut mid = vec![0.0; d];
    let mut values = vec![0.0; phis.len()];
    for mut k in 0..n_cells {
        let mut vol = 1.0;
        for axis in (0..d).rev() {
            let i = k % counts[axis];
            k /= counts[axis];
            let (lo, hi) = (axes[axis][i], axes[axis][i + 1]);
            vol *= hi - lo;
            mid[axis] = 0.5 * (lo + hi);
        }
        for (v, phi) in values.iter_mut().zip(phis) {
            *v = phi.eval(&mid);
        }
        total += f(&values) * measure.scale() * measure.density_at(&mid) * vol;
    }
    Ok(total)
}

/// Exact integral of phi dm (z included). Step profiles reduce to cell
/// sums; hats integrate segment-by-segment with the trapezoid rule, exact
/// for a linear integrand against a cell-constant density.
pub fn integrate(phi: &TestFunction, measure: &IntensityMeasure) -> Result<f64> {
    check_same_window(phi, measure)?;
    match &phi.profile {
        Profile::Step { .. } => integrate_map(measure, &[phi], |v| v[0]),
        Profile::Hat { nodes, .. } => {
            let mut edges = refined_edges(measure, &[], 0);
            edges.extend_from_slice(nodes);
            edges.sort_by(|p, q| p.partial_cmp(q).unwrap());
            edges.dedup();
            let mut total = 0.0;
            for w in edges.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let rho = measure.density_at(&[0.5 * (lo + hi)]);
                total += measure.scale()
                    * rho
                    * 0.5
                    * (phi.eval(&[lo]) + phi.eval(&[hi]))
                    * (hi - lo);
            }
            Ok(total)
        }
    }
}

/// Absolute tolerance for the hat-profile quadrature in
/// [`integrate_expm1`].
const HAT_QUADRATURE_TOL: f64 = 1e-12;

/// Exact integral of (e^{phi} - 1) dm for step profiles; adaptive Simpson
/// quadrature with absolute tolerance 1e-12 for hat profiles.
pub fn integrate_expm1(phi: &TestFunction, measure: &IntensityMeasure) -> Result<f64> {
    check_same_window(phi, measure)?;
    match &phi.profile {
        Profile::Step { .. } => integrate_map(measure, &[phi], |v| v[0].exp_m1()),
        Profile::Hat { nodes, .. } => {
            let mut edges = refined_edges(measure, &[], 0);
            edges.extend_from_slice(nodes);
            edges.sort_by(|p, q| p.partial_cmp(q).unwrap());
            edges.dedup();
            let span: f64 = edges.last().unwrap() - edges.first().unwrap();
            let mut total = 0.0;
            for w in edges.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let rho = measure.density_at(&[0.5 * (lo + hi)]);
                let tol = HAT_QUADRATURE_TOL * ((hi - lo) / span).max(1e-3);
                let f = |x: f64| phi.eval(&[x]).exp_m1();
                total += measure.scale() * rho * adaptive_simpson(&f, lo, hi, tol);
            }
            Ok(total)
        }
    }
}

/// Adaptive Simpson with interval-halving error control.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}
