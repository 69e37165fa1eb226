//! Symmetric jump intensities J(x, y): closed-form families, tabulated
//! data, declared bound constants, and sampled certificates that the
//! declared constants actually hold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::point::Point;
use crate::quad::{self, Estimate, QuadBudget};

/// Surface measure of the unit sphere in R^d (the lab supports d <= 2).
pub fn sphere_surface(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        d => panic!("dimension {d} not supported"),
    }
}

/// Declared intensity constants: the two-sided band inside radius one, the
/// tail-mass bound, and the local lower-bound pair (kappa4, alpha) around a
/// chosen center. `kappa5` switches on the optional defect-bound check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct KernelBounds {
    pub kappa1: f64,
    pub kappa2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub alpha: f64,
    pub kappa5: Option<f64>,
}

impl KernelBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("kappa3", self.kappa3),
            ("kappa4", self.kappa4),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0 && v < 2.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 2), got {v}")));
            }
        }
        // At separation one the band reads kappa1 <= J <= kappa2 whatever
        // the exponents are, so an inverted pair can never hold.
        if self.kappa1 > self.kappa2 {
            return Err(Error::Config(format!(
                "kappa1 = {} exceeds kappa2 = {}: empty band at unit separation",
                self.kappa1, self.kappa2
            )));
        }
        if let Some(k5) = self.kappa5 {
            if !(k5 >= 0.0) || !k5.is_finite() {
                return Err(Error::Config(format!(
                    "kappa5 must be nonnegative, got {k5}"
                )));
            }
        }
        Ok(())
    }
}

/// Closed-form spatially varying order fields s(x).
#[derive(Clone, Copy, Debug, Serialize)]
pub enum OrderFieldKind {
    Constant(f64),
    /// s(x) = base + amplitude · sin(frequency · x_1)
    Sinusoid {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
}

/// A variable order s: R^d -> (epsilon, 2 - epsilon) together with its
/// declared log-modulus constant: |s(x) - s(y)| <= c / log(2/|x-y|) for
/// |x-y| < 1.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OrderField {
    pub kind: OrderFieldKind,
    pub epsilon: f64,
    pub log_lip_c: f64,
}

impl OrderField {
    pub fn new(kind: OrderFieldKind, epsilon: f64, log_lip_c: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(log_lip_c >= 0.0) {
            return Err(Error::Config(format!(
                "log-modulus constant must be nonnegative, got {log_lip_c}"
            )));
        }
        let (lo, hi) = match kind {
            OrderFieldKind::Constant(a) => (a, a),
            OrderFieldKind::Sinusoid {
                base, amplitude, ..
            } => (base - amplitude.abs(), base + amplitude.abs()),
        };
        if lo < epsilon || hi > 2.0 - epsilon {
            return Err(Error::Config(format!(
                "order field range [{lo}, {hi}] escapes ({epsilon}, {})",
                2.0 - epsilon
            )));
        }
        Ok(Self {
            kind,
            epsilon,
            log_lip_c,
        })
    }

    #[inline]
    pub fn value(&self, x: &Point) -> f64 {
        match self.kind {
            OrderFieldKind::Constant(a) => a,
            OrderFieldKind::Sinusoid {
                base,
                amplitude,
                frequency,
            } => base + amplitude * (frequency * x.coord(0)).sin(),
        }
    }

    /// Range of s over the whole space.
    pub fn global_range(&self) -> (f64, f64) {
        match self.kind {
            OrderFieldKind::Constant(a) => (a, a),
            OrderFieldKind::Sinusoid {
                base, amplitude, ..
            } => (base - amplitude.abs(), base + amplitude.abs()),
        }
    }

    /// Minimum of s over a deterministic grid in the ball B(center, radius).
    pub fn min_on_ball(&self, center: &Point, radius: f64, grid_per_axis: usize) -> f64 {
        let mut min = self.value(center);
        for p in ball_grid(center, radius, grid_per_axis) {
            min = min.min(self.value(&p));
        }
        min
    }

    /// Declared modulus at separation |x-y| < 1.
    pub fn modulus_holds(&self, x: &Point, y: &Point) -> bool {
        let d = x.dist(y);
        if d >= 1.0 || d == 0.0 {
            return true;
        }
        (self.value(x) - self.value(y)).abs() <= self.log_lip_c / (2.0 / d).ln() + 1e-13
    }
}

/// Deterministic grid covering the closed ball (always includes the center).
pub fn ball_grid(center: &Point, radius: f64, per_axis: usize) -> Vec<Point> {
    let dim = center.dim();
    let m = per_axis.max(2);
    let mut pts = vec![*center];
    let coord =
        |k: usize, i: usize| center.coord(k) - radius + 2.0 * radius * i as f64 / (m - 1) as f64;
    match dim {
        1 => {
            for i in 0..m {
                let p = Point::new_1d(coord(0, i));
                if p.dist(center) <= radius {
                    pts.push(p);
                }
            }
        }
        2 => {
            for i in 0..m {
                for j in 0..m {
                    let p = Point::new_2d(coord(0, i), coord(1, j));
                    if p.dist(center) <= radius {
                        pts.push(p);
                    }
                }
            }
        }
        d => panic!("dimension {d} not supported"),
    }
    pts
}

/// Tabulated symmetric kernel on a shared 1-d grid, bilinear in between,
/// zero outside the table hull.
#[derive(Clone, Debug, Serialize)]
pub struct TabulatedKernel {
    grid: Vec<f64>,
    values: Vec<f64>, // row-major grid x grid
}

impl TabulatedKernel {
    /// Build from (x, y, value) triples covering a full square grid.
    /// Values are symmetrized by averaging the two orientations.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::Config("tabulated kernel has no rows".into()));
        }
        let mut grid: Vec<f64> = triples.iter().map(|t| t.0).collect();
        grid.extend(triples.iter().map(|t| t.1));
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        let n = grid.len();
        if triples.len() != n * n {
            return Err(Error::Config(format!(
                "tabulated kernel needs a full {n}x{n} grid, got {} triples",
                triples.len()
            )));
        }
        let locate = |v: f64| -> Result<usize> {
            grid.iter()
                .position(|g| (g - v).abs() <= 1e-12)
                .ok_or_else(|| Error::Config(format!("coordinate {v} off the tabulated grid")))
        };
        let mut values = vec![f64::NAN; n * n];
        for &(x, y, v) in triples {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "tabulated value at ({x}, {y}) must be finite and nonnegative"
                )));
            }
            values[locate(x)? * n + locate(y)?] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Config("tabulated grid has missing entries".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (values[i * n + j] + values[j * n + i]);
                values[i * n + j] = avg;
                values[j * n + i] = avg;
            }
        }
        Ok(Self { grid, values })
    }

    /// Parse the CSV wire format: one header line, then `x,y,value` rows.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut triples = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut field = |name: &str| -> Result<f64> {
                parts
                    .next()
                    .ok_or_else(|| Error::Config(format!("line {}: missing {name}", ln + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("line {}: bad {name}: {e}", ln + 1)))
            };
            let x = field("x")?;
            let y = field("y")?;
            let v = field("value")?;
            triples.push((x, y, v));
        }
        Self::from_triples(&triples)
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let n = self.grid.len();
        let locate = |v: f64| -> Option<(usize, f64)> {
            if v < self.grid[0] || v > self.grid[n - 1] {
                return None;
            }
            let i = match self.grid.binary_search_by(|g| g.partial_cmp(&v).unwrap()) {
                Ok(i) => i.min(n - 2),
                Err(i) => i.saturating_sub(1).min(n - 2),
            };
            let t = (v - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
            Some((i, t.clamp(0.0, 1.0)))
        };
        let (Some((i, tx)), Some((j, ty))) = (locate(x), locate(y)) else {
            return 0.0;
        };
        let v = |a: usize, b: usize| self.values[a * n + b];
        (1.0 - tx) * ((1.0 - ty) * v(i, j) + ty * v(i, j + 1))
            + tx * ((1.0 - ty) * v(i + 1, j) + ty * v(i + 1, j + 1))
    }
}

/// The kernel families the lab knows how to evaluate.
#[derive(Clone, Debug, Serialize)]
pub enum KernelFamily {
    /// kappa · |x-y|^{-d-alpha}
    IsotropicStable {
        alpha: f64,
        kappa: f64,
    },
    /// sqrt(c1 c2) · |x-y|^{-d-(s(x)+s(y))/2}; symmetric because the
    /// exponent averages the order field at the two endpoints.
    VariableOrder {
        order: OrderField,
        c1: f64,
        c2: f64,
    },
    /// base kernel times 1 + amplitude·sin(frequency·(x_1+y_1)).
    Modulated {
        base: Box<KernelSpec>,
        amplitude: f64,
        frequency: f64,
    },
    Tabulated(TabulatedKernel),
}

/// A symmetric jump intensity with declared bound constants and an
/// optional support cutoff.
#[derive(Clone, Debug, Serialize)]
pub struct KernelSpec {
    pub dimension: usize,
    pub family: KernelFamily,
    pub bounds: KernelBounds,
    pub truncation: Option<f64>,
}

impl KernelSpec {
    pub fn isotropic_stable(dimension: usize, alpha: f64, kappa: f64) -> Result<Self> {
        check_dim(dimension)?;
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 2), got {alpha}"
            )));
        }
        if !(kappa > 0.0) {
            return Err(Error::Config(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        let bounds = KernelBounds {
            kappa1: kappa,
            kappa2: kappa,
            beta1: alpha,
            beta2: alpha,
            kappa3: kappa * sphere_surface(dimension) / alpha,
            kappa4: kappa,
            alpha,
            kappa5: None,
        };
        bounds.validate()?;
        Ok(Self {
            dimension,
            family: KernelFamily::IsotropicStable { alpha, kappa },
            bounds,
            truncation: None,
        })
    }

    pub fn variable_order(dimension: usize, order: OrderField, c1: f64, c2: f64) -> Result<Self> {
        check_dim(dimension)?;
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::Config(
                "variable-order coefficients must be positive".into(),
            ));
        }
        // The band with constants (c1, c2) holds for the mean-exponent
        // family iff the coefficient sqrt(c1 c2) clears e^{c/2} on both
        // sides, i.e. c2/c1 >= e^{c}.
        if c2 < c1 * order.log_lip_c.exp() - 1e-12 {
            return Err(Error::Config(format!(
                "variable-order band needs c2/c1 >= e^logLipC = {}, got {}",
                order.log_lip_c.exp(),
                c2 / c1
            )));
        }
        let coeff = (c1 * c2).sqrt();
        let (s_lo, s_hi) = order.global_range();
        let bounds = KernelBounds {
            kappa1: coeff,
            kappa2: coeff,
            beta1: s_lo,
            beta2: s_hi,
            kappa3: coeff * sphere_surface(dimension) / s_lo,
            kappa4: coeff,
            alpha: s_lo,
            kappa5: None,
        };
        bounds.validate()?;
        Ok(Self {
            dimension,
            family: KernelFamily::VariableOrder { order, c1, c2 },
            bounds,
            truncation: None,
        })
    }

    pub fn modulated(base: KernelSpec, amplitude: f64, frequency: f64) -> Result<Self> {
        if !(amplitude.abs() < 1.0) {
            return Err(Error::Config(format!(
                "modulation amplitude must satisfy |a| < 1, got {amplitude}"
            )));
        }
        let b = &base.bounds;
        let bounds = KernelBounds {
            kappa1: b.kappa1 * (1.0 - amplitude.abs()),
            kappa2: b.kappa2 * (1.0 + amplitude.abs()),
            beta1: b.beta1,
            beta2: b.beta2,
            kappa3: b.kappa3 * (1.0 + amplitude.abs()),
            kappa4: b.kappa4 * (1.0 - amplitude.abs()),
            alpha: b.alpha,
            kappa5: b.kappa5,
        };
        bounds.validate()?;
        let dimension = base.dimension;
        let truncation = base.truncation;
        Ok(Self {
            dimension,
            family: KernelFamily::Modulated {
                base: Box::new(base),
                amplitude,
                frequency,
            },
            bounds,
            truncation,
        })
    }

    pub fn tabulated(table: TabulatedKernel, bounds: KernelBounds) -> Result<Self> {
        bounds.validate()?;
        Ok(Self {
            dimension: 1,
            family: KernelFamily::Tabulated(table),
            bounds,
            truncation: None,
        })
    }

    /// Set the support cutoff: the intensity vanishes beyond this radius.
    pub fn with_truncation(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!(
                "truncation radius must be positive, got {radius}"
            )));
        }
        self.truncation = Some(radius);
        Ok(self)
    }

    pub fn order_field(&self) -> Option<&OrderField> {
        match &self.family {
            KernelFamily::VariableOrder { order, .. } => Some(order),
            KernelFamily::Modulated { base, .. } => base.order_field(),
            _ => None,
        }
    }

    /// Evaluate J(x, y) with full domain checks.
    pub fn eval(&self, x: &Point, y: &Point) -> Result<f64> {
        if x.dim() != self.dimension || y.dim() != self.dimension {
            return Err(Error::Domain(format!(
                "points of dimension {}/{} fed to a {}-dimensional kernel",
                x.dim(),
                y.dim(),
                self.dimension
            )));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Domain("non-finite coordinates".into()));
        }
        if x == y {
            return Err(Error::Domain(
                "diagonal evaluation: the intensity is off-diagonal only".into(),
            ));
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Hot-path evaluation; the caller guarantees x != y and finiteness.
    #[inline]
    pub fn eval_unchecked(&self, x: &Point, y: &Point) -> f64 {
        if let Some(cut) = self.truncation {
            if x.dist(y) > cut {
                return 0.0;
            }
        }
        self.eval_family(x, y)
    }

    fn eval_family(&self, x: &Point, y: &Point) -> f64 {
        match &self.family {
            KernelFamily::IsotropicStable { alpha, kappa } => {
                let r = x.dist(y);
                kappa * r.powf(-(self.dimension as f64 + alpha))
            }
            KernelFamily::VariableOrder { order, c1, c2 } => {
                let r = x.dist(y);
                let s = 0.5 * (order.value(x) + order.value(y));
                (c1 * c2).sqrt() * r.powf(-(self.dimension as f64 + s))
            }
            KernelFamily::Modulated {
                base,
                amplitude,
                frequency,
            } => {
                let factor = 1.0 + amplitude * (frequency * (x.coord(0) + y.coord(0))).sin();
                factor * base.eval_unchecked(x, y)
            }
            KernelFamily::Tabulated(table) => table.eval(x.coord(0), y.coord(0)),
        }
    }

    /// ∫_{|y-x| > r} J(x, y) dy by annular quadrature.
    pub fn tail_mass(&self, x: &Point, r: f64) -> Result<Estimate> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!(
                "tail radius must be positive, got {r}"
            )));
        }
        let budget = QuadBudget::default();
        let dirs = quad::angular_rule(self.dimension);
        let dm1 = self.dimension as f64 - 1.0;
        let f = |rad: f64| -> f64 {
            let mut acc = 0.0;
            for (dir, w) in &dirs {
                acc += w * self.eval_family(&x.add_scaled(dir, rad), x);
            }
            acc * rad.powf(dm1)
        };
        quad::integrate_radial_tail_capped(f, r, self.truncation, &budget)
    }
}

fn check_dim(dimension: usize) -> Result<()> {
    if dimension == 0 || dimension > crate::point::MAX_DIM {
        return Err(Error::Capability(format!(
            "dimension {dimension} not supported (max {})",
            crate::point::MAX_DIM
        )));
    }
    Ok(())
}

/// Where and how densely the bound certificates sample.
#[derive(Clone, Copy, Debug)]
pub struct SamplingPlan {
    /// Low-discrepancy samples per condition.
    pub grid_points: usize,
    /// Extra seeded random pairs per condition.
    pub random_pairs: usize,
    pub seed: u64,
    /// Center z0 of the local lower-bound ball.
    pub center: Point,
    /// Radius r; the local bound is checked on pairs in B(z0, 3r).
    pub radius: f64,
    /// Dyadic delta levels for the defect-bound check.
    pub delta_levels: usize,
    /// Half-width of the box around the center where the band and
    /// tail-mass conditions sample their base points.
    pub sample_halfwidth: f64,
}

impl SamplingPlan {
    pub fn new(center: Point, radius: f64) -> Self {
        Self {
            grid_points: 64,
            random_pairs: 128,
            seed: 1,
            center,
            radius,
            delta_levels: 6,
            sample_halfwidth: 2.0,
        }
    }
}

/// Outcome of one sampled condition.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub pass: bool,
    /// Worst violation ratio; <= 1 means the condition held everywhere
    /// sampled.
    pub worst_ratio: f64,
    pub witness: Option<(Point, Point)>,
    pub witness_value: f64,
    pub bound_value: f64,
}

/// Report of all sampled certificates for one kernel.
#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub checks: Vec<ConditionCheck>,
    pub pass: bool,
}

impl BoundsReport {
    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Ratio slack accepted as a pass (covers quadrature noise only).
pub const BOUND_PASS_SLACK: f64 = 1e-9;

fn van_der_corput(mut i: u64, base: u64) -> f64 {
    let mut q = 0.0;
    let mut bk = 1.0 / base as f64;
    while i > 0 {
        q += (i % base) as f64 * bk;
        i /= base;
        bk /= base as f64;
    }
    q
}

/// Sampled verification of the declared constants: the two-sided band
/// inside radius one, the tail-mass bound, the local lower bound on
/// B(z0, 3r), and (when kappa5 is declared) the defect bound on a dyadic
/// delta grid.
pub fn verify_bounds(spec: &KernelSpec, plan: &SamplingPlan) -> Result<BoundsReport> {
    spec.bounds.validate()?;
    if !(plan.radius > 0.0) {
        return Err(Error::Config(format!(
            "plan radius must be positive, got {}",
            plan.radius
        )));
    }
    let d = spec.dimension;
    let b = spec.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut checks = Vec::new();

    // Base points for the global conditions.
    let base_points: Vec<Point> = sample_points(
        d,
        &plan.center,
        plan.sample_halfwidth,
        plan.grid_points,
        &mut rng,
        plan.random_pairs,
    );

    // Two-sided band at separations up to one.
    {
        let mut worst = ConditionCheck {
            name: "band".into(),
            pass: true,
            worst_ratio: 0.0,
            witness: None,
            witness_value: 0.0,
            bound_value: 0.0,
        };
        let offsets = sample_offsets(d, 1e-5, 1.0, plan.grid_points + plan.random_pairs, &mut rng);
        for (pi, x) in base_points.iter().enumerate() {
            let w = &offsets[pi % offsets.len()];
            let y =
                Point::from_slice(&(0..d).map(|k| x.coord(k) + w.coord(k)).collect::<Vec<_>>())?;
            let r = x.dist(&y);
            let j = spec.eval_unchecked(x, &y);
            let lower = b.kappa1 * r.powf(-(d as f64 + b.beta1));
            let upper = b.kappa2 * r.powf(-(d as f64 + b.beta2));
            let ratio = (j / upper).max(if j > 0.0 { lower / j } else { f64::INFINITY });
            if ratio > worst.worst_ratio {
                worst.worst_ratio = ratio;
                worst.witness = Some((*x, y));
                worst.witness_value = j;
                worst.bound_value = if j > upper { upper } else { lower };
            }
        }
        worst.pass = worst.worst_ratio <= 1.0 + BOUND_PASS_SLACK;
        checks.push(worst);
    }

    // Tail mass at radius one.
    {
        let mut worst = ConditionCheck {
            name: "tail-mass".into(),
            pass: true,
            worst_ratio: 0.0,
            witness: None,
            witness_value: 0.0,
            bound_value: b.kappa3,
        };
        for x in base_points.iter().take((plan.grid_points / 2).max(4)) {
            let tm = spec.tail_mass(x, 1.0)?;
            let ratio = tm.value / b.kappa3;
            if ratio > worst.worst_ratio {
                worst.worst_ratio = ratio;
                worst.witness = Some((*x, *x));
                worst.witness_value = tm.value;
            }
        }
        worst.pass = worst.worst_ratio <= 1.0 + BOUND_PASS_SLACK;
        checks.push(worst);
    }

    // Local lower bound on pairs in B(z0, 3r).
    {
        let mut worst = ConditionCheck {
            name: "local-lower".into(),
            pass: true,
            worst_ratio: 0.0,
            witness: None,
            witness_value: 0.0,
            bound_value: 0.0,
        };
        let ball_pts = sample_points(
            d,
            &plan.center,
            3.0 * plan.radius,
            plan.grid_points,
            &mut rng,
            plan.random_pairs,
        )
        .into_iter()
        .filter(|p| p.dist(&plan.center) <= 3.0 * plan.radius)
        .collect::<Vec<_>>();
        for (i, x) in ball_pts.iter().enumerate() {
            let y = &ball_pts[(i + 7) % ball_pts.len()];
            let r = x.dist(y);
            if r == 0.0 {
                continue;
            }
            let j = spec.eval_unchecked(x, y);
            let bound = b.kappa4 * r.powf(-(d as f64 + b.alpha));
            let ratio = if j > 0.0 { bound / j } else { f64::INFINITY };
            if ratio > worst.worst_ratio {
                worst.worst_ratio = ratio;
                worst.witness = Some((*x, *y));
                worst.witness_value = j;
                worst.bound_value = bound;
            }
        }
        worst.pass = worst.worst_ratio <= 1.0 + BOUND_PASS_SLACK;
        checks.push(worst);
    }

    // Optional defect bound: the clipped shortfall below the local power
    // law must carry at most kappa5·delta^{-alpha} mass near the diagonal.
    if let Some(kappa5) = b.kappa5 {
        let mut worst = ConditionCheck {
            name: "defect".into(),
            pass: true,
            worst_ratio: 0.0,
            witness: None,
            witness_value: 0.0,
            bound_value: 0.0,
        };
        let dirs = quad::angular_rule(d);
        let budget = QuadBudget::default();
        let xs = sample_points(
            d,
            &plan.center,
            3.0 * plan.radius,
            (plan.grid_points / 4).max(3),
            &mut rng,
            0,
        )
        .into_iter()
        .filter(|p| p.dist(&plan.center) <= 3.0 * plan.radius)
        .collect::<Vec<_>>();
        for j_level in 0..=plan.delta_levels {
            let delta = plan.radius / (1u64 << j_level) as f64;
            for x in &xs {
                let f = |rad: f64| -> f64 {
                    let mut acc = 0.0;
                    for (dir, w) in &dirs {
                        let y = x.add_scaled(dir, rad);
                        let floor = b.kappa4 * rad.powf(-(d as f64 + b.alpha));
                        let mut shortfall = floor - spec.eval_unchecked(x, &y);
                        // Rounding in the point arithmetic leaves noise of
                        // relative size ~1e-16 where the kernel sits exactly
                        // on the floor; clamp it so the noise cannot
                        // masquerade as a divergent defect.
                        if shortfall <= 1e-12 * floor {
                            shortfall = 0.0;
                        }
                        acc += w * shortfall;
                    }
                    acc * rad.powf(d as f64 - 1.0)
                };
                // A support cutoff inside the delta-ball is a kink; split
                // the radial integral there.
                let (inner, outer) = match spec.truncation {
                    Some(t) if t < delta => {
                        let inner = quad::integrate_radial_ball(f, t, &budget)?;
                        let outer = quad::integrate_radial_tail_capped(f, t, Some(delta), &budget)?;
                        (inner, outer.value)
                    }
                    _ => (quad::integrate_radial_ball(f, delta, &budget)?, 0.0),
                };
                let defect_value = inner.value + outer;
                let bound = kappa5 * delta.powf(-b.alpha);
                let ratio = defect_value / bound;
                if ratio > worst.worst_ratio {
                    worst.worst_ratio = ratio;
                    worst.witness = Some((*x, *x));
                    worst.witness_value = defect_value;
                    worst.bound_value = bound;
                }
            }
        }
        worst.pass = worst.worst_ratio <= 1.0 + BOUND_PASS_SLACK;
        checks.push(worst);
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(BoundsReport { checks, pass })
}

fn sample_points(
    dim: usize,
    center: &Point,
    halfwidth: f64,
    low_discrepancy: usize,
    rng: &mut ChaCha8Rng,
    random: usize,
) -> Vec<Point> {
    let mut pts = Vec::with_capacity(low_discrepancy + random + 1);
    pts.push(*center);
    for i in 0..low_discrepancy {
        let mut c = [0.0; crate::point::MAX_DIM];
        for (k, ck) in c.iter_mut().enumerate().take(dim) {
            let u = van_der_corput(i as u64 + 1, [2, 3][k]);
            *ck = center.coord(k) + halfwidth * (2.0 * u - 1.0);
        }
        pts.push(Point::from_slice(&c[..dim]).expect("dimension checked"));
    }
    for _ in 0..random {
        let mut c = [0.0; crate::point::MAX_DIM];
        for (k, ck) in c.iter_mut().enumerate().take(dim) {
            *ck = center.coord(k) + halfwidth * (2.0 * rng.random::<f64>() - 1.0);
        }
        pts.push(Point::from_slice(&c[..dim]).expect("dimension checked"));
    }
    pts
}

fn sample_offsets(
    dim: usize,
    r_min: f64,
    r_max: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Point> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        // Log-spaced radii cover the near-diagonal decades evenly.
        let u = van_der_corput(i as u64 + 1, 2);
        let r = r_min * (r_max / r_min).powf(u);
        let dir = match dim {
            1 => Point::new_1d(if i % 2 == 0 { 1.0 } else { -1.0 }),
            2 => {
                let th = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                Point::new_2d(th.cos(), th.sin())
            }
            d => panic!("dimension {d} not supported"),
        };
        out.push(Point::zero(dim).add_scaled(&dir, r));
    }
    out
}
