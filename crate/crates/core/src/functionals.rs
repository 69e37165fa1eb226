//! Exit functionals of a jump kernel: the tail mass L1, the truncated
//! second moment L2, and the composite exit bound L whose suprema are
//! taken over a deterministic spatial grid.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::{ball_grid, sphere_surface, KernelSpec};
use crate::point::Point;
use crate::quad::{self, QuadBudget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FunctionalKind {
    L1,
    L2,
    L,
}

/// A computed functional value with its quadrature error estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FunctionalValue {
    pub kind: FunctionalKind,
    pub center: Point,
    pub scale: f64,
    pub alpha: Option<f64>,
    pub value: f64,
    pub quadrature_error: f64,
}

/// L1(x, s) = ∫_{|w-x| >= s} J(x, w) dw — the mass of jumps of size at
/// least s. Shares its implementation with `KernelSpec::tail_mass`.
pub fn compute_l1(spec: &KernelSpec, x: &Point, s: f64) -> Result<FunctionalValue> {
    let est = spec.tail_mass(x, s)?;
    Ok(FunctionalValue {
        kind: FunctionalKind::L1,
        center: *x,
        scale: s,
        alpha: None,
        value: est.value,
        quadrature_error: est.abs_err,
    })
}

/// L2(x, s) = ∫_{|w-x| <= s} |w-x|^2 J(x, w) dw — the truncated second
/// moment; finite for every declared band since the upper order is < 2.
pub fn compute_l2(spec: &KernelSpec, x: &Point, s: f64) -> Result<FunctionalValue> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "moment radius must be positive, got {s}"
        )));
    }
    let budget = QuadBudget::default();
    let dirs = quad::angular_rule(spec.dimension);
    let dm1 = spec.dimension as f64 - 1.0;
    let f = |rad: f64| -> f64 {
        let mut acc = 0.0;
        for (dir, w) in &dirs {
            acc += w * spec.eval_unchecked(&x.add_scaled(dir, rad), x);
        }
        acc * rad.powf(dm1) * rad * rad
    };
    // A cutoff inside the ball makes the integrand vanish beyond it; shrink
    // the range so no panel straddles the jump.
    let top = match spec.truncation {
        Some(t) if t < s => t,
        _ => s,
    };
    let est = quad::integrate_radial_ball(f, top, &budget)?;
    Ok(FunctionalValue {
        kind: FunctionalKind::L2,
        center: *x,
        scale: s,
        alpha: None,
        value: est.value,
        quadrature_error: est.abs_err,
    })
}

/// Resolution of the suprema inside [`compute_l`].
#[derive(Clone, Copy, Debug)]
pub struct LOptions {
    /// Grid points per axis covering B(z0, 3r); the center is always
    /// included.
    pub grid_per_axis: usize,
    /// Dyadic scales s = r·2^{-j}, j = 0..=levels, scanned for the
    /// moment term.
    pub dyadic_levels: usize,
}

impl Default for LOptions {
    fn default() -> Self {
        Self {
            grid_per_axis: 33,
            dyadic_levels: 12,
        }
    }
}

/// The exit bound
/// L(z0, r) = sup_x L1(x, r) + sup_x s^d [s^{-2} L2(x, s)]^{(d+alpha)/alpha},
/// suprema over a deterministic grid in B(z0, 3r). The bracket term is
/// evaluated on the dyadic scale grid s = r·2^{-j} and the scan keeps the
/// scale that minimizes it — the bracket blows up as s -> 0 for every
/// kernel with a local power-law floor, so the informative scale is the
/// largest one at which the bound is tight (s = r for power-law kernels).
/// Grid suprema are lower estimates of the true suprema.
pub fn compute_l(
    spec: &KernelSpec,
    z0: &Point,
    r: f64,
    alpha: f64,
    opts: &LOptions,
) -> Result<FunctionalValue> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain(format!("radius must lie in (0, 1), got {r}")));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 2), got {alpha}"
        )));
    }
    let d = spec.dimension as f64;
    let grid = ball_grid(z0, 3.0 * r, opts.grid_per_axis);
    let exponent = (d + alpha) / alpha;

    let per_point: Vec<Result<(f64, f64, f64, f64)>> = exec::map_indexed(grid.len(), |i| {
        let x = &grid[i];
        let l1 = compute_l1(spec, x, r)?;
        let mut best_term = f64::INFINITY;
        let mut best_err = 0.0;
        for j in 0..=opts.dyadic_levels {
            let s = r / (1u64 << j) as f64;
            let l2 = compute_l2(spec, x, s)?;
            let term = s.powf(d) * (l2.value / (s * s)).powf(exponent);
            if term < best_term {
                best_term = term;
                best_err =
                    exponent * (l2.value / (s * s)).powf(exponent - 1.0) * l2.quadrature_error
                        / (s * s)
                        * s.powf(d);
            }
        }
        Ok((l1.value, l1.quadrature_error, best_term, best_err))
    });

    let mut sup_l1 = f64::NEG_INFINITY;
    let mut sup_l1_err = 0.0;
    let mut sup_term = f64::NEG_INFINITY;
    let mut sup_term_err = 0.0;
    for res in per_point {
        let (l1, l1e, term, terme) = res?;
        if l1 > sup_l1 {
            sup_l1 = l1;
            sup_l1_err = l1e;
        }
        if term > sup_term {
            sup_term = term;
            sup_term_err = terme;
        }
    }
    Ok(FunctionalValue {
        kind: FunctionalKind::L,
        center: *z0,
        scale: r,
        alpha: Some(alpha),
        value: sup_l1 + sup_term,
        quadrature_error: sup_l1_err + sup_term_err,
    })
}

/// Analytic lower bound for L implied by the local power-law floor: the
/// mass of the annulus r <= |w| <= 2r under kappa4 |w|^{-d-alpha}.
pub fn l_lower_bound(dimension: usize, kappa4: f64, alpha: f64, r: f64) -> f64 {
    kappa4 * sphere_surface(dimension) * (1.0 - 2f64.powf(-alpha)) / alpha * r.powf(-alpha)
}

/// One row of the order-comparability table.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ComparabilityRow {
    pub r: f64,
    pub l_value: f64,
    /// L(z0, r) · r^{s(z0)} — flat for a kernel of local order s(z0).
    pub compensated: f64,
    pub quadrature_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparabilityReport {
    pub rows: Vec<ComparabilityRow>,
    /// max/min of the compensated column.
    pub ratio: f64,
    pub s_at_center: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Scan L(z0, r) over a radius grid for a variable-order kernel and
/// compensate by r^{s(z0)}; the spread of the compensated column measures
/// how sharply the local order controls the exit bound.
pub fn order_comparability(
    spec: &KernelSpec,
    z0: &Point,
    r_grid: &[f64],
    threshold: f64,
    opts: &LOptions,
) -> Result<ComparabilityReport> {
    let order = spec
        .order_field()
        .ok_or_else(|| Error::Config("order comparability needs a variable-order kernel".into()))?;
    if r_grid.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(Error::Domain("all radii must lie in (0, 1)".into()));
    }
    let s0 = order.value(z0);
    let rows: Vec<Result<ComparabilityRow>> = exec::map_indexed(r_grid.len(), |i| {
        let r = r_grid[i];
        let alpha = order.min_on_ball(z0, 3.0 * r, opts.grid_per_axis);
        let l = compute_l(spec, z0, r, alpha, opts)?;
        Ok(ComparabilityRow {
            r,
            l_value: l.value,
            compensated: l.value * r.powf(s0),
            quadrature_error: l.quadrature_error,
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let max = rows
        .iter()
        .map(|r| r.compensated)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = rows
        .iter()
        .map(|r| r.compensated)
        .fold(f64::INFINITY, f64::min);
    let ratio = max / min;
    Ok(ComparabilityReport {
        rows,
        ratio,
        s_at_center: s0,
        threshold,
        pass: ratio <= threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{OrderField, OrderFieldKind};
    use approx::assert_relative_eq;

    fn stable(alpha: f64) -> KernelSpec {
        KernelSpec::isotropic_stable(1, alpha, 1.0).unwrap()
    }

    // Closed forms for the one-dimensional stable kernel, used as the
    // independent oracle throughout this module's tests:
    //   L1(x, s) = 2 s^{-a} / a,   L2(x, s) = 2 s^{2-a} / (2 - a).
    fn l1_oracle(alpha: f64, s: f64) -> f64 {
        2.0 * s.powf(-alpha) / alpha
    }
    fn l2_oracle(alpha: f64, s: f64) -> f64 {
        2.0 * s.powf(2.0 - alpha) / (2.0 - alpha)
    }

    #[test]
    fn l1_matches_oracle() {
        let spec = stable(0.5);
        let x = Point::new_1d(0.0);
        let v = compute_l1(&spec, &x, 0.25).unwrap();
        assert_relative_eq!(v.value, 8.0, max_relative = 1e-9);
        let v = compute_l1(&spec, &x, 1.0).unwrap();
        assert_relative_eq!(v.value, 4.0, max_relative = 1e-9);
    }

    #[test]
    fn l1_empty_beyond_cutoff() {
        let spec = stable(0.5).with_truncation(1.0).unwrap();
        let v = compute_l1(&spec, &Point::new_1d(0.0), 2.0).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn l2_matches_oracle() {
        let spec = stable(0.5);
        let x = Point::new_1d(0.0);
        let v = compute_l2(&spec, &x, 0.25).unwrap();
        assert_relative_eq!(v.value, 1.0 / 6.0, max_relative = 1e-9);
        let v = compute_l2(&spec, &x, 1.0).unwrap();
        assert_relative_eq!(v.value, 4.0 / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn l2_vanishes_along_dyadic_radii() {
        let spec = stable(0.8);
        let x = Point::new_1d(0.3);
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let s = 0.5f64.powi(k);
            let v = compute_l2(&spec, &x, s).unwrap().value;
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn monotone_tails() {
        let spec = stable(0.5);
        let x = Point::new_1d(0.0);
        let a = compute_l1(&spec, &x, 0.1).unwrap().value;
        let b = compute_l1(&spec, &x, 0.2).unwrap().value;
        assert!(a >= b);
    }

    #[test]
    fn l_value_for_stable_kernel() {
        // Both sup terms have closed forms: the tail term is 2 r^{-a}/a = 8
        // at r = 1/4 and the bracket term s^d [s^{-2} L2]^{(d+a)/a} equals
        // (4/3)^3 s^{-1/2}, smallest at s = r where it is (4/3)^3 · 2.
        let spec = stable(0.5);
        let l = compute_l(&spec, &Point::new_1d(0.0), 0.25, 0.5, &LOptions::default()).unwrap();
        let expected = 8.0 + (4.0f64 / 3.0).powi(3) * 2.0;
        assert_relative_eq!(l.value, expected, max_relative = 1e-8);
        assert_relative_eq!(
            expected,
            12.740_740_740_740_74 + 8.0 - 8.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn l_dominates_annulus_floor() {
        let spec = stable(0.5);
        let r = 0.25;
        let l = compute_l(&spec, &Point::new_1d(0.0), r, 0.5, &LOptions::default()).unwrap();
        let bound = l_lower_bound(1, 1.0, 0.5, r);
        assert_relative_eq!(bound, 2.3431457505076194, max_relative = 1e-12);
        assert!(l.value >= bound);
    }

    #[test]
    fn l_scales_homogeneously() {
        let spec = stable(0.5);
        let opts = LOptions::default();
        let mut compensated = Vec::new();
        for k in 1..=4 {
            let r = 0.5f64.powi(k);
            let l = compute_l(&spec, &Point::new_1d(0.0), r, 0.5, &opts).unwrap();
            compensated.push(l.value * r.powf(0.5));
        }
        let max = compensated
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = compensated.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            max / min <= 1.0 + 1e-6,
            "compensated spread {:?}",
            compensated
        );
    }

    #[test]
    fn second_moment_comparable_to_tail() {
        // For the stable kernel both s^{-2} L2(x,s) and L1(x,s) + s^{-a}
        // scale like s^{-a}; their ratio must stay in a fixed band on a
        // dyadic grid.
        let spec = stable(0.5);
        let x = Point::new_1d(0.0);
        let mut ratios = Vec::new();
        for k in 0..8 {
            let s = 0.5f64.powi(k + 1);
            let m = compute_l2(&spec, &x, s).unwrap().value / (s * s);
            let t = compute_l1(&spec, &x, s).unwrap().value + s.powf(-0.5);
            ratios.push(m / t);
        }
        let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.0 + 1e-6);
        assert!(
            max < 1.0,
            "moment never exceeds tail plus floor for this kernel"
        );
    }

    #[test]
    fn doubling_exponent_fit() {
        // L1(x, λr)/L1(x, r) = λ^{-a} exactly for the stable kernel; the
        // fitted decay exponent must land within ±0.05 of a.
        let spec = stable(0.5);
        let x = Point::new_1d(0.0);
        let r = 0.05;
        let base = compute_l1(&spec, &x, r).unwrap().value;
        let mut logs = (Vec::new(), Vec::new());
        for k in 1..=4 {
            let lam = 2f64.powi(k);
            let v = compute_l1(&spec, &x, lam * r).unwrap().value;
            logs.0.push(lam.ln());
            logs.1.push((v / base).ln());
        }
        let fit = crate::stats::linear_fit(&logs.0, &logs.1);
        assert!(
            (fit.slope + 0.5).abs() <= 0.05,
            "fitted decay {}",
            fit.slope
        );
    }

    #[test]
    fn comparability_constant_order_is_flat() {
        let order = OrderField::new(OrderFieldKind::Constant(0.5), 0.25, 0.0).unwrap();
        let spec = KernelSpec::variable_order(1, order, 1.0, 1.0).unwrap();
        let r_grid: Vec<f64> = (1..=5).map(|k| 0.5f64.powi(k)).collect();
        let rep = order_comparability(
            &spec,
            &Point::new_1d(0.0),
            &r_grid,
            10.0,
            &LOptions::default(),
        )
        .unwrap();
        assert!(rep.ratio <= 1.0 + 1e-6, "ratio {}", rep.ratio);
    }

    #[test]
    fn variable_order_peak_intensity_bound() {
        // sup_{|x-w|=v} J(x,w) <= c2 e^{logLipC} v^{-d-s(x)} at v <= 1.
        let order = OrderField::new(
            OrderFieldKind::Sinusoid {
                base: 0.5,
                amplitude: 0.2,
                frequency: 1.0,
            },
            0.25,
            0.15,
        )
        .unwrap();
        let spec = KernelSpec::variable_order(1, order, 1.0, 2.0).unwrap();
        let c = 2.0 * 0.15f64.exp();
        for i in 0..40 {
            let x = Point::new_1d(-2.0 + 0.1 * i as f64);
            for k in 1..=10 {
                let v = 0.5f64.powi(k) * 1.9;
                if v > 1.0 {
                    continue;
                }
                let m = spec
                    .eval_unchecked(&x, &Point::new_1d(x.coord(0) + v))
                    .max(spec.eval_unchecked(&x, &Point::new_1d(x.coord(0) - v)));
                assert!(m <= c * v.powf(-(1.0 + order.value(&x))) + 1e-12);
            }
        }
    }

    #[test]
    fn oracle_helpers_agree_with_quadrature() {
        let spec = stable(0.8);
        let x = Point::new_1d(0.0);
        for s in [0.1, 0.4, 1.3] {
            assert_relative_eq!(
                compute_l1(&spec, &x, s).unwrap().value,
                l1_oracle(0.8, s),
                max_relative = 1e-9
            );
            assert_relative_eq!(
                compute_l2(&spec, &x, s).unwrap().value,
                l2_oracle(0.8, s),
                max_relative = 1e-9
            );
        }
    }
}
