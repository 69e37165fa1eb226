//! Quadrature for power-law kernels: Gauss–Legendre panels on dyadic
//! annuli around the singularity, with refinement by doubling the rule
//! order until the relative change drops below the budget tolerance.

use crate::error::{Error, Result};
use crate::point::Point;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Nodes by Newton iteration on the Legendre recurrence; deterministic
    /// for a given order.
    pub fn legendre(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for k in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_eval(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[k] = -x;
            weights[k] = w;
            nodes[n - 1 - k] = x;
            weights[n - 1 - k] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Integrate `f` over [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Refinement budget for the adaptive integrators.
#[derive(Clone, Copy, Debug)]
pub struct QuadBudget {
    /// Stop refining once the relative change is below this.
    pub rel_tol: f64,
    /// Dyadic annuli allowed outward / inward from the base scale.
    pub max_levels: usize,
    /// Gauss orders tried per annulus (each entry one refinement pass).
    pub orders: [usize; 3],
}

impl Default for QuadBudget {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_levels: 220,
            orders: [8, 16, 32],
        }
    }
}

/// Value plus a conservative error estimate (last refinement change).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub abs_err: f64,
}

fn annulus_value<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, budget: &QuadBudget) -> (f64, f64) {
    let mut prev = GaussRule::legendre(budget.orders[0]).integrate(f, a, b);
    let mut err = prev.abs();
    for &ord in &budget.orders[1..] {
        let cur = GaussRule::legendre(ord).integrate(f, a, b);
        err = (cur - prev).abs();
        prev = cur;
        if err <= budget.rel_tol * prev.abs().max(1e-300) {
            break;
        }
    }
    (prev, err)
}

/// ∫_{r0}^{∞} f(r) dr over dyadic annuli [r0·2^k, r0·2^{k+1}].
///
/// The integrand must decay fast enough that annulus contributions
/// eventually shrink geometrically; if they do not within the budget the
/// partial value is reported as a numeric error.
pub fn integrate_radial_tail<F: Fn(f64) -> f64>(
    f: F,
    r0: f64,
    budget: &QuadBudget,
) -> Result<Estimate> {
    integrate_radial_tail_capped(f, r0, None, budget)
}

/// Tail integral with a hard upper radius; the cap becomes a panel edge so
/// kernels that vanish beyond a cutoff are integrated without putting a
/// discontinuity inside a Gauss panel.
pub fn integrate_radial_tail_capped<F: Fn(f64) -> f64>(
    f: F,
    r0: f64,
    cap: Option<f64>,
    budget: &QuadBudget,
) -> Result<Estimate> {
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::Domain(format!(
            "tail integral needs a positive start radius, got {r0}"
        )));
    }
    if let Some(c) = cap {
        if c <= r0 {
            return Ok(Estimate {
                value: 0.0,
                abs_err: 0.0,
            });
        }
    }
    let mut total = 0.0;
    let mut err = 0.0;
    let mut zero_run = 0usize;
    let mut prev_contrib = f64::INFINITY;
    let mut growth_run = 0usize;
    for k in 0..budget.max_levels {
        let a = r0 * 2f64.powi(k as i32);
        let mut b = 2.0 * a;
        let mut last = false;
        if let Some(c) = cap {
            if b >= c {
                b = c;
                last = true;
            }
        }
        let (v, e) = annulus_value(&f, a, b, budget);
        if last {
            if !v.is_finite() {
                return Err(Error::Numeric {
                    msg: format!("non-finite annulus [{a}, {b}]"),
                    partial: total,
                });
            }
            return Ok(Estimate {
                value: total + v,
                abs_err: err + e,
            });
        }
        if !v.is_finite() {
            return Err(Error::Numeric {
                msg: format!("non-finite annulus [{a}, {b}]"),
                partial: total,
            });
        }
        total += v;
        err += e;
        if v == 0.0 {
            zero_run += 1;
            if zero_run >= 2 {
                return Ok(Estimate {
                    value: total,
                    abs_err: err,
                });
            }
        } else {
            zero_run = 0;
            // Geometric remainder from the observed decay ratio — exact
            // for power-law tails; stop once it is negligible.
            if let Some(rest) = geometric_remainder(v.abs(), prev_contrib) {
                if rest <= 0.1 * budget.rel_tol * total.abs().max(1e-300) {
                    let signed = rest * v.signum();
                    return Ok(Estimate {
                        value: total + signed,
                        abs_err: err + rest,
                    });
                }
            }
        }
        if v.abs() >= prev_contrib {
            growth_run += 1;
            if growth_run >= 8 {
                return Err(Error::Numeric {
                    msg: "tail annulus contributions are not decaying".into(),
                    partial: total,
                });
            }
        } else {
            growth_run = 0;
        }
        prev_contrib = v.abs();
    }
    Err(Error::Numeric {
        msg: "tail refinement budget exhausted".into(),
        partial: total,
    })
}

/// Remaining mass of a geometrically decaying series, `None` until the
/// decay ratio is observed and trustworthy.
fn geometric_remainder(v: f64, prev: f64) -> Option<f64> {
    if !prev.is_finite() || !(prev > 0.0) || !(v > 0.0) {
        return None;
    }
    let rho = v / prev;
    if rho >= 0.9 {
        return None;
    }
    Some(v * rho / (1.0 - rho))
}

/// ∫_0^{s} f(r) dr over dyadic shells [s·2^{-k-1}, s·2^{-k}] toward the
/// singularity at 0.
pub fn integrate_radial_ball<F: Fn(f64) -> f64>(
    f: F,
    s: f64,
    budget: &QuadBudget,
) -> Result<Estimate> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "ball integral needs a positive radius, got {s}"
        )));
    }
    let mut total = 0.0;
    let mut err = 0.0;
    let mut zero_run = 0usize;
    let mut prev_contrib = f64::INFINITY;
    let mut growth_run = 0usize;
    for k in 0..budget.max_levels {
        let b = s * 2f64.powi(-(k as i32));
        let a = 0.5 * b;
        let (v, e) = annulus_value(&f, a, b, budget);
        if !v.is_finite() {
            return Err(Error::Numeric {
                msg: format!("non-finite shell [{a}, {b}]"),
                partial: total,
            });
        }
        total += v;
        err += e;
        if v == 0.0 {
            zero_run += 1;
            if zero_run >= 2 {
                return Ok(Estimate {
                    value: total,
                    abs_err: err,
                });
            }
        } else {
            zero_run = 0;
            if let Some(rest) = geometric_remainder(v.abs(), prev_contrib) {
                if rest <= 0.1 * budget.rel_tol * total.abs().max(1e-300) {
                    let signed = rest * v.signum();
                    return Ok(Estimate {
                        value: total + signed,
                        abs_err: err + rest,
                    });
                }
            }
        }
        if v.abs() >= prev_contrib {
            growth_run += 1;
            if growth_run >= 8 {
                return Err(Error::Numeric {
                    msg: "shell contributions grow toward the singularity (divergent integral)"
                        .into(),
                    partial: total,
                });
            }
        } else {
            growth_run = 0;
        }
        prev_contrib = v.abs();
    }
    Err(Error::Numeric {
        msg: "shell refinement budget exhausted".into(),
        partial: total,
    })
}

/// Unit directions and angular weights so that
/// ∫_{R^d} g(w) dw = ∫_0^∞ r^{d-1} Σ_j w_j g(r θ_j) dr for radially smooth g.
///
/// d = 1 uses the two signs; d = 2 a 64-point periodic trapezoid rule
/// (spectrally accurate for the smooth angular dependence of the kernel
/// families here).
pub fn angular_rule(dim: usize) -> Vec<(Point, f64)> {
    match dim {
        1 => vec![(Point::new_1d(1.0), 1.0), (Point::new_1d(-1.0), 1.0)],
        2 => {
            let m = 64;
            let w = 2.0 * std::f64::consts::PI / m as f64;
            (0..m)
                .map(|j| {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    (Point::new_2d(th.cos(), th.sin()), w)
                })
                .collect()
        }
        d => panic!("angular rule for dimension {d} not supported"),
    }
}

/// Double integral of `f` over a pair of axis-aligned cubes with common
/// half-width. Separated pairs use one tensor Gauss rule; touching pairs
/// are subdivided recursively toward the shared face, stopping when the
/// remaining contribution is negligible and erring out when the level
/// sums fail to decay (integrably singular only for local order < 1).
pub fn integrate_cell_pair<F: Fn(&Point, &Point) -> f64>(
    f: &F,
    center_a: &Point,
    center_b: &Point,
    half_width: f64,
    order: usize,
    rel_tol: f64,
) -> Result<f64> {
    let rule = GaussRule::legendre(order);
    let dim = center_a.dim();
    let mut total = 0.0;
    // Work queue of touching sub-pairs, processed level by level. For a
    // kernel of local order beta the level sums decay geometrically with
    // ratio 2^{-(1-beta)}, so once the ratio is observed the remaining
    // levels are summed by extrapolation — mandatory in two dimensions,
    // where the face-touching front doubles per level.
    let mut level: Vec<(Point, Point, f64)> = vec![(*center_a, *center_b, half_width)];
    let mut prev_level_sum = f64::INFINITY;
    let mut zero_run = 0usize;
    const MAX_DEPTH: usize = 40;
    const FRONT_CAP: usize = 2048;
    for depth in 0..MAX_DEPTH {
        let mut next: Vec<(Point, Point, f64)> = Vec::new();
        let mut level_sum = 0.0;
        for (ca, cb, hw) in &level {
            if ca.dist_inf(cb) > 2.0 * hw + 1e-15 * hw.max(1.0) {
                // Separated: single tensor rule.
                level_sum += tensor_pair(f, ca, cb, *hw, &rule);
            } else if ca.dist_inf(cb) == 0.0 && depth == 0 {
                return Err(Error::Domain(
                    "cell pair integral over a single cell".into(),
                ));
            } else {
                // Touching: split both cells.
                let children_a = split_cell(ca, *hw);
                let children_b = split_cell(cb, *hw);
                let child_hw = 0.5 * hw;
                for a in &children_a[..1 << dim] {
                    for b in &children_b[..1 << dim] {
                        if a.dist_inf(b) > 2.0 * child_hw + 1e-15 {
                            level_sum += tensor_pair(f, a, b, child_hw, &rule);
                        } else {
                            next.push((*a, *b, child_hw));
                        }
                    }
                }
            }
        }
        if !level_sum.is_finite() {
            return Err(Error::Numeric {
                msg: "non-finite cell-pair level".into(),
                partial: total,
            });
        }
        total += level_sum;
        if next.is_empty() {
            return Ok(total);
        }
        if level_sum == 0.0 {
            zero_run += 1;
            if zero_run >= 2 {
                return Ok(total);
            }
            prev_level_sum = 0.0;
            level = next;
            continue;
        }
        zero_run = 0;
        if depth >= 4 && prev_level_sum.is_finite() && prev_level_sum > 0.0 {
            let rho = level_sum.abs() / prev_level_sum;
            if rho < 0.95 {
                let remainder = level_sum.abs() * rho / (1.0 - rho);
                let front_exploding = next.len() > FRONT_CAP;
                if remainder <= rel_tol * total.abs().max(1e-300)
                    || depth == MAX_DEPTH - 1
                    || front_exploding
                {
                    return Ok(total + remainder * level_sum.signum());
                }
            } else if depth >= 12 || next.len() > FRONT_CAP {
                return Err(Error::Numeric {
                    msg: "cell-pair integral does not converge near the shared face".into(),
                    partial: total,
                });
            }
        }
        prev_level_sum = level_sum.abs();
        level = next;
    }
    // Depth cap hit without a stable decay ratio.
    Err(Error::Numeric {
        msg: "cell-pair subdivision depth exhausted".into(),
        partial: total,
    })
}

fn split_cell(center: &Point, half_width: f64) -> [Point; 4] {
    let q = 0.5 * half_width;
    let mut out = [*center; 4];
    match center.dim() {
        1 => {
            out[0] = Point::new_1d(center.coord(0) - q);
            out[1] = Point::new_1d(center.coord(0) + q);
        }
        2 => {
            let (x, y) = (center.coord(0), center.coord(1));
            out[0] = Point::new_2d(x - q, y - q);
            out[1] = Point::new_2d(x + q, y - q);
            out[2] = Point::new_2d(x - q, y + q);
            out[3] = Point::new_2d(x + q, y + q);
        }
        d => panic!("cell split for dimension {d} not supported"),
    }
    out
}

fn tensor_pair<F: Fn(&Point, &Point) -> f64>(
    f: &F,
    ca: &Point,
    cb: &Point,
    hw: f64,
    rule: &GaussRule,
) -> f64 {
    let dim = ca.dim();
    let q = rule.nodes.len();
    let mut acc = 0.0;
    match dim {
        1 => {
            for i in 0..q {
                let xa = ca.coord(0) + hw * rule.nodes[i];
                for j in 0..q {
                    let xb = cb.coord(0) + hw * rule.nodes[j];
                    acc += rule.weights[i]
                        * rule.weights[j]
                        * f(&Point::new_1d(xa), &Point::new_1d(xb));
                }
            }
            acc * hw * hw
        }
        2 => {
            for i0 in 0..q {
                for i1 in 0..q {
                    let a = Point::new_2d(
                        ca.coord(0) + hw * rule.nodes[i0],
                        ca.coord(1) + hw * rule.nodes[i1],
                    );
                    let wa = rule.weights[i0] * rule.weights[i1];
                    for j0 in 0..q {
                        for j1 in 0..q {
                            let b = Point::new_2d(
                                cb.coord(0) + hw * rule.nodes[j0],
                                cb.coord(1) + hw * rule.nodes[j1],
                            );
                            acc += wa * rule.weights[j0] * rule.weights[j1] * f(&a, &b);
                        }
                    }
                }
            }
            acc * hw.powi(4)
        }
        d => panic!("tensor pair rule for dimension {d} not supported"),
    }
}
