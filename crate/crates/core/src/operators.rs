//! Finite-dimensional operator theory on the lattice chain: spectral
//! decomposition of the rate operator, heat kernels, the semigroup by
//! uniformization, resolvents by conjugate gradients, nonlocal harmonic
//! functions, and Hölder-exponent estimation.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::chain::{
    dirichlet_form, killing_form, ConductanceMatrix, GeneratorMatrix, GeneratorMode,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::point::Point;
use crate::stats;

/// Dense eigendecomposition is limited to this many sites.
pub const DENSE_SPECTRAL_LIMIT: usize = 4096;

/// Eigenpairs of the negated rate operator, orthonormal in L^2 of the
/// uniform site measure.
pub struct SpectralDecomp {
    /// Eigenvalues of -A, ascending, nonnegative up to roundoff.
    pub eigenvalues: Vec<f64>,
    basis: DMatrix<f64>,
    site_mass: f64,
    pub mode: GeneratorMode,
}

pub fn spectral_decompose(gen: &GeneratorMatrix) -> Result<SpectralDecomp> {
    let n = gen.num_sites();
    if n > DENSE_SPECTRAL_LIMIT {
        return Err(Error::Capability(format!(
            "{n} sites exceed the dense spectral limit {DENSE_SPECTRAL_LIMIT}; \
             use the uniformization path (semigroup_apply) instead"
        )));
    }
    let mut dense = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let (cols, vals) = gen.rate_row(i);
        for (j, v) in cols.iter().zip(vals) {
            dense[(i, *j as usize)] = -v;
        }
        dense[(i, i)] = -gen.diag(i);
    }
    let eig = dense.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut eigenvalues = Vec::with_capacity(n);
    let mut basis = DMatrix::<f64>::zeros(n, n);
    // Euclidean-orthonormal columns rescale by nu^{-1/2} to become
    // orthonormal in L^2(nu).
    let scale = 1.0 / gen.lattice.site_mass().sqrt();
    for (k, &idx) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[idx]);
        basis
            .column_mut(k)
            .copy_from(&(eig.eigenvectors.column(idx) * scale));
    }
    Ok(SpectralDecomp {
        eigenvalues,
        basis,
        site_mass: gen.lattice.site_mass(),
        mode: gen.mode,
    })
}

impl SpectralDecomp {
    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn basis_column(&self, k: usize) -> Vec<f64> {
        self.basis.column(k).iter().cloned().collect()
    }

    /// Coefficients ⟨f, φ_k⟩ in L^2(nu).
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        let n = self.num_modes();
        let mut out = vec![0.0; n];
        for k in 0..n {
            let col = self.basis.column(k);
            let mut acc = 0.0;
            for i in 0..n {
                acc += f[i] * col[i];
            }
            out[k] = acc * self.site_mass;
        }
        out
    }

    /// Σ_k filter(μ_k) ⟨f, φ_k⟩ φ_k — the functional calculus of -A.
    pub fn apply_filter<G: Fn(f64) -> f64>(&self, f: &[f64], filter: G) -> Vec<f64> {
        let coeffs = self.coefficients(f);
        let n = self.num_modes();
        let mut out = vec![0.0; n];
        for k in 0..n {
            let w = filter(self.eigenvalues[k]) * coeffs[k];
            if w == 0.0 {
                continue;
            }
            let col = self.basis.column(k);
            for i in 0..n {
                out[i] += w * col[i];
            }
        }
        out
    }

    /// Spectral route to the resolvent, (λ + μ)^{-1} on each mode.
    pub fn resolvent(&self, lambda: f64, f: &[f64]) -> Vec<f64> {
        self.apply_filter(f, |mu| 1.0 / (lambda + mu))
    }

    /// Spectral route to the semigroup.
    pub fn semigroup(&self, t: f64, f: &[f64]) -> Vec<f64> {
        self.apply_filter(f, |mu| (-mu * t).exp())
    }
}

/// Transition density matrix p(t, x, y) with respect to the site measure:
/// P_t f(x) = Σ_y p(t, x, y) f(y) ν(y).
pub struct HeatKernelMatrix {
    pub t: f64,
    values: DMatrix<f64>,
    site_mass: f64,
}

pub fn heat_kernel(decomp: &SpectralDecomp, t: f64) -> Result<HeatKernelMatrix> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("heat kernel needs t > 0, got {t}")));
    }
    let n = decomp.num_modes();
    let mut weighted = decomp.basis.clone();
    for k in 0..n {
        let w = (-decomp.eigenvalues[k] * t).exp();
        weighted.column_mut(k).scale_mut(w);
    }
    let values = &weighted * decomp.basis.transpose();
    Ok(HeatKernelMatrix {
        t,
        values,
        site_mass: decomp.site_mass,
    })
}

impl HeatKernelMatrix {
    #[inline]
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[(x, y)]
    }

    pub fn column(&self, y: usize) -> Vec<f64> {
        self.values.column(y).iter().cloned().collect()
    }

    /// P_t f by direct summation against the density.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.size();
        let mut out = vec![0.0; n];
        for x in 0..n {
            let mut acc = 0.0;
            for y in 0..n {
                acc += self.values[(x, y)] * f[y];
            }
            out[x] = acc * self.site_mass;
        }
        out
    }

    /// Row mass Σ_y p(t, x, y) ν(y); 1 in conservative mode.
    pub fn row_mass(&self, x: usize) -> f64 {
        self.values.row(x).iter().sum::<f64>() * self.site_mass
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.size();
        let mut worst = 0.0f64;
        for x in 0..n {
            for y in (x + 1)..n {
                worst = worst.max((self.values[(x, y)] - self.values[(y, x)]).abs());
            }
        }
        worst
    }
}

/// P_t f by uniformization: Poisson-weighted powers of the sub-stochastic
/// jump matrix I + A/Λ, split into chunks so the Poisson weights stay in
/// range, and normalized by the accumulated weight so a conservative
/// chain preserves constants exactly.
pub fn semigroup_apply(gen: &GeneratorMatrix, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    if f.len() != gen.num_sites() {
        return Err(Error::Domain(
            "function length does not match the lattice".into(),
        ));
    }
    if t == 0.0 {
        return Ok(f.to_vec());
    }
    let rate = gen.max_rate();
    if rate == 0.0 {
        return Ok(f.to_vec());
    }
    let chunks = (rate * t / 500.0).ceil().max(1.0) as usize;
    let dt = t / chunks as f64;
    let lam = rate * dt;
    let mut current = f.to_vec();
    for _ in 0..chunks {
        let mut term = current.clone();
        let mut weight = (-lam).exp();
        let mut acc: Vec<f64> = term.iter().map(|v| v * weight).collect();
        let mut total_weight = weight;
        let mut k = 0usize;
        while 1.0 - total_weight > 1e-14 && k < 100_000 {
            k += 1;
            // term <- (I + A/rate) term
            let af = gen.apply(&term);
            for (ti, ai) in term.iter_mut().zip(&af) {
                *ti += ai / rate;
            }
            weight *= lam / k as f64;
            if weight > 0.0 {
                for (a, ti) in acc.iter_mut().zip(&term) {
                    *a += weight * ti;
                }
            }
            total_weight += weight;
        }
        for a in &mut acc {
            *a /= total_weight;
        }
        current = acc;
    }
    Ok(current)
}

/// U^λ f = (λ I - A)^{-1} f by conjugate gradients on the sparse rows.
pub fn resolvent(gen: &GeneratorMatrix, lambda: f64, f: &[f64]) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!(
            "resolvent parameter must be positive, got {lambda}"
        )));
    }
    if f.len() != gen.num_sites() {
        return Err(Error::Domain(
            "function length does not match the lattice".into(),
        ));
    }
    let op = |v: &[f64]| -> Vec<f64> {
        let av = gen.apply(v);
        v.iter().zip(&av).map(|(vi, ai)| lambda * vi - ai).collect()
    };
    // 1e-12 stays above the attainable residual floor (about kappa times
    // machine epsilon) for the condition numbers desk-scale lattices see.
    conjugate_gradient(op, f, 1e-12, 40 * gen.num_sites() + 200)
}

fn conjugate_gradient<Op: Fn(&[f64]) -> Vec<f64>>(
    op: Op,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..max_iter {
        if rr.sqrt() <= rel_tol * norm_b {
            return Ok(x);
        }
        let ap = op(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Numeric {
                msg: "conjugate gradients met a non-positive curvature direction".into(),
                partial: rr.sqrt() / norm_b,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        if rr.sqrt() <= rel_tol * norm_b {
            return Ok(x);
        }
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Numeric {
        msg: format!("conjugate gradients did not reach {rel_tol} of the data norm"),
        partial: rr.sqrt() / norm_b,
    })
}

/// Both sides of the energy identity
/// ℰ(U^λ f, g) + killing(U^λ f, g) = ⟨f, g⟩ - λ ⟨U^λ f, g⟩.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_discrepancy: f64,
    pub pass: bool,
    pub tolerance: f64,
}

pub fn verify_resolvent_identity(
    c: &ConductanceMatrix,
    gen: &GeneratorMatrix,
    lambda: f64,
    f: &[f64],
    g: &[f64],
) -> Result<IdentityReport> {
    let u = resolvent(gen, lambda, f)?;
    let lhs = dirichlet_form(c, &u, g) + killing_form(gen, &u, g);
    let rhs = gen.inner(f, g) - lambda * gen.inner(&u, g);
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    let rel = (lhs - rhs).abs() / scale;
    let tolerance = 1e-8;
    Ok(IdentityReport {
        lhs,
        rhs,
        rel_discrepancy: rel,
        pass: rel <= tolerance,
        tolerance,
    })
}

/// Solution of the nonlocal boundary problem: zero generator action on the
/// sites strictly inside the ball, prescribed values everywhere else.
#[derive(Clone, Debug, Serialize)]
pub struct HarmonicSolution {
    pub center: Point,
    pub radius: f64,
    pub values: Vec<f64>,
    pub interior: Vec<usize>,
}

impl HarmonicSolution {
    /// Radius for path stopping: leaving the interior set is exactly
    /// `distance > stop_radius` for lattice points.
    pub fn stop_radius(&self, gen: &GeneratorMatrix) -> f64 {
        self.interior
            .iter()
            .map(|&i| gen.lattice.point(i).dist(&self.center))
            .fold(0.0f64, f64::max)
    }
}

pub fn solve_harmonic(
    gen: &GeneratorMatrix,
    center: &Point,
    radius: f64,
    boundary: &[f64],
) -> Result<HarmonicSolution> {
    let n = gen.num_sites();
    if boundary.len() != n {
        return Err(Error::Domain(
            "boundary data must be defined on every site".into(),
        ));
    }
    if boundary.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("boundary data must be bounded".into()));
    }
    let interior: Vec<usize> = (0..n)
        .filter(|&i| gen.lattice.point(i).dist(center) < radius)
        .collect();
    if interior.is_empty() {
        return Err(Error::Config(format!(
            "no lattice sites strictly inside radius {radius}"
        )));
    }
    if interior.len() > DENSE_SPECTRAL_LIMIT {
        return Err(Error::Capability(format!(
            "{} interior sites exceed the dense solve limit {DENSE_SPECTRAL_LIMIT}",
            interior.len()
        )));
    }
    let mut local = vec![usize::MAX; n];
    for (k, &i) in interior.iter().enumerate() {
        local[i] = k;
    }
    let m = interior.len();
    // (-A) restricted to the interior block is symmetric positive
    // definite: strict diagonal dominance holds because every interior row
    // carries rate mass to the exterior.
    let mut block = DMatrix::<f64>::zeros(m, m);
    let mut rhs = nalgebra::DVector::<f64>::zeros(m);
    for (k, &i) in interior.iter().enumerate() {
        block[(k, k)] = -gen.diag(i);
        let (cols, vals) = gen.rate_row(i);
        for (j, v) in cols.iter().zip(vals) {
            let j = *j as usize;
            if local[j] != usize::MAX {
                block[(k, local[j])] = -v;
            } else {
                rhs[k] += v * boundary[j];
            }
        }
    }
    let chol = block.cholesky().ok_or_else(|| Error::Numeric {
        msg: "interior block is not positive definite".into(),
        partial: f64::NAN,
    })?;
    let h = chol.solve(&rhs);
    let mut values = boundary.to_vec();
    for (k, &i) in interior.iter().enumerate() {
        values[i] = h[k];
    }
    Ok(HarmonicSolution {
        center: *center,
        radius,
        values,
        interior,
    })
}

/// Fitted smoothness record: |u(x) - u(y)| <= constant · |x-y|^exponent,
/// with the envelope constant taken over every sampled pair.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HolderFit {
    pub exponent: f64,
    pub constant: f64,
    pub residual: f64,
    pub pairs_used: usize,
}

/// Which site pairs enter the regression.
#[derive(Clone, Copy, Debug)]
pub struct PairPolicy {
    /// Regions with more sites are thinned to this many by a
    /// deterministic stride.
    pub max_points: usize,
    /// Pairs with |u(x)-u(y)| below this multiple of ‖u‖_∞ are excluded
    /// from the regression (log of numerical zero is meaningless).
    pub noise_floor: f64,
    /// Keep only pairs whose first coordinates straddle the region center.
    pub straddle_only: bool,
}

impl Default for PairPolicy {
    fn default() -> Self {
        Self {
            max_points: 512,
            noise_floor: 1e-12,
            straddle_only: false,
        }
    }
}

/// Estimate the modulus of continuity on the region: pairs are binned in
/// half-octaves of |x-y| and the regression runs on each bin's worst
/// pair, so the fitted exponent tracks the envelope (a plain least
/// squares over all pairs would measure the typical increment instead
/// and collapse for functions with isolated cusps).
pub fn holder_fit(
    gen: &GeneratorMatrix,
    u: &[f64],
    center: &Point,
    radius: f64,
    policy: &PairPolicy,
) -> Result<HolderFit> {
    if u.len() != gen.num_sites() {
        return Err(Error::Domain(
            "function length does not match the lattice".into(),
        ));
    }
    let mut sites: Vec<usize> = (0..gen.num_sites())
        .filter(|&i| gen.lattice.point(i).dist(center) <= radius)
        .collect();
    if sites.len() > policy.max_points {
        let stride = sites.len().div_ceil(policy.max_points);
        sites = sites.into_iter().step_by(stride).collect();
    }
    let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = policy.noise_floor * sup;
    let mut usable_pairs = 0usize;
    let mut all_pairs: Vec<(f64, f64)> = Vec::new();
    // Half-octave bins keyed by floor(2 log2 dx) -> worst pair in bin.
    let mut bins: std::collections::BTreeMap<i64, (f64, f64)> = std::collections::BTreeMap::new();
    for (a, &i) in sites.iter().enumerate() {
        let pi = gen.lattice.point(i);
        for &j in &sites[(a + 1)..] {
            let pj = gen.lattice.point(j);
            if policy.straddle_only
                && (pi.coord(0) - center.coord(0)).signum()
                    == (pj.coord(0) - center.coord(0)).signum()
            {
                continue;
            }
            let dx = pi.dist(&pj);
            // Separations are meaningful up to the region scale.
            if dx == 0.0 || dx > radius {
                continue;
            }
            let du = (u[i] - u[j]).abs();
            all_pairs.push((dx, du));
            if du > floor {
                usable_pairs += 1;
                let key = (2.0 * dx.log2()).floor() as i64;
                let entry = bins.entry(key).or_insert((dx, du));
                if du > entry.1 {
                    *entry = (dx, du);
                }
            }
        }
    }
    if usable_pairs < 10 {
        return Err(Error::InsufficientData(format!(
            "only {usable_pairs} pairs above the noise floor (need 10)"
        )));
    }
    if bins.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "increments span only {} half-octaves of separation (need 4)",
            bins.len()
        )));
    }
    let log_dx: Vec<f64> = bins.values().map(|(dx, _)| dx.ln()).collect();
    let log_du: Vec<f64> = bins.values().map(|(_, du)| du.ln()).collect();
    let fit = stats::linear_fit(&log_dx, &log_du);
    let gamma = fit.slope;
    let mut constant = 0.0f64;
    for (dx, du) in &all_pairs {
        constant = constant.max(du / dx.powf(gamma));
    }
    Ok(HolderFit {
        exponent: gamma,
        constant,
        residual: fit.rms_residual,
        pairs_used: usable_pairs,
    })
}

/// Monte Carlo check that h(X_{t ∧ τ}) has a constant mean when h solves
/// the interior problem: the stopped chain preserves the solution value.
#[derive(Clone, Debug, Serialize)]
pub struct MartingaleReport {
    pub reference: f64,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub pass: bool,
}

pub fn martingale_check(
    gen: &GeneratorMatrix,
    solution: &HarmonicSolution,
    x0: usize,
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<MartingaleReport> {
    use crate::pathsim::{path_rng, Ball, PathEngine};
    if !solution.interior.contains(&x0) {
        return Err(Error::Config(
            "martingale check must start inside the ball".into(),
        ));
    }
    let stop = Ball {
        center: solution.center,
        radius: solution.stop_radius(gen),
    };
    let t_max = t_grid.iter().cloned().fold(0.0f64, f64::max);
    let engine = PathEngine::new(gen);
    let reference = solution.values[x0];
    let samples: Vec<Vec<f64>> = exec::map_indexed(n_paths, |p| {
        let mut rng = path_rng(seed, p as u64);
        let path = engine.simulate_in_ball(x0, &stop, t_max, &mut rng);
        t_grid
            .iter()
            .map(|&t| match &path.exit {
                Some(e) if e.time <= t => match e.site {
                    Some(s) => solution.values[s],
                    // A kill is a jump out of the cover; the boundary data
                    // there is zero in killed mode.
                    None => 0.0,
                },
                _ => solution.values[path.site_at(t)],
            })
            .collect()
    });
    let mut means = Vec::new();
    let mut stderrs = Vec::new();
    let mut pass = true;
    for (k, _) in t_grid.iter().enumerate() {
        let vals: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        let ms = stats::mean_stderr(&vals);
        pass &= (ms.mean - reference).abs() <= 3.0 * ms.stderr.max(1e-300);
        means.push(ms.mean);
        stderrs.push(ms.stderr);
    }
    Ok(MartingaleReport {
        reference,
        means,
        stderrs,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{assemble_generator, build_conductances, AdjacentPolicy, Lattice};
    use crate::kernels::KernelSpec;
    use crate::point::BoxBounds;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stable_setup(
        n: usize,
        hw: f64,
        mode: GeneratorMode,
    ) -> (KernelSpec, ConductanceMatrix, GeneratorMatrix) {
        let spec = KernelSpec::isotropic_stable(1, 0.5, 1.0).unwrap();
        let lat = Lattice::build(1, n, BoxBounds::cube(1, -hw, hw).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 4, AdjacentPolicy::MomentMatched).unwrap();
        let a = assemble_generator(&c, mode, &spec).unwrap();
        (spec, c, a)
    }

    fn two_state(q: f64) -> GeneratorMatrix {
        let lat = Lattice::build(1, 2, BoxBounds::cube(1, 0.0, 1.0).unwrap()).unwrap();
        let rows = vec![vec![(1u32, q)], vec![], vec![]];
        GeneratorMatrix::from_parts(
            lat,
            &rows,
            vec![0.0; 3],
            GeneratorMode::ConservativeTruncated,
        )
        .unwrap()
    }

    #[test]
    fn two_state_eigenvalues() {
        // Rates q both ways: -A has eigenvalues {0, 2q} on the active pair
        // (plus 0 for the isolated site).
        let q = 1.7;
        let d = spectral_decompose(&two_state(q)).unwrap();
        assert!(d.eigenvalues[0].abs() <= 1e-12);
        assert!(d.eigenvalues[1].abs() <= 1e-12);
        assert_relative_eq!(d.eigenvalues[2], 2.0 * q, max_relative = 1e-12);
    }

    #[test]
    fn conservative_ground_mode_is_constant() {
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::ConservativeTruncated);
        let d = spectral_decompose(&a).unwrap();
        assert!(d.eigenvalues[0].abs() <= 1e-10);
        let ground = d.basis_column(0);
        let first = ground[0];
        for v in &ground {
            assert_relative_eq!(*v, first, max_relative = 1e-8);
        }
    }

    #[test]
    fn basis_is_orthonormal_and_complete() {
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::Killed);
        let d = spectral_decompose(&a).unwrap();
        let n = d.num_modes();
        let nu = a.lattice.site_mass();
        for i in [0usize, 3, n - 1] {
            for j in [0usize, 3, n - 1] {
                let fi = d.basis_column(i);
                let fj = d.basis_column(j);
                let dot = fi.iter().zip(&fj).map(|(a, b)| a * b).sum::<f64>() * nu;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (dot - expect).abs() <= 1e-10,
                    "mode pair ({i}, {j}) inner product {dot}"
                );
            }
        }
        // Parseval for a random function.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let coeffs = d.coefficients(&f);
        let norm2 = a.inner(&f, &f);
        let sum2: f64 = coeffs.iter().map(|c| c * c).sum();
        assert_relative_eq!(norm2, sum2, max_relative = 1e-10);
    }

    #[test]
    fn dense_limit_enforced() {
        let spec = KernelSpec::isotropic_stable(1, 0.5, 1.0)
            .unwrap()
            .with_truncation(0.01)
            .unwrap();
        let lat = Lattice::build(1, 3000, BoxBounds::cube(1, 0.0, 2.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 1, AdjacentPolicy::MomentMatched).unwrap();
        let a = assemble_generator(&c, GeneratorMode::ConservativeTruncated, &spec).unwrap();
        assert!(matches!(spectral_decompose(&a), Err(Error::Capability(_))));
    }

    #[test]
    fn heat_kernel_invariants_and_limit() {
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::ConservativeTruncated);
        let d = spectral_decompose(&a).unwrap();
        let p = heat_kernel(&d, 0.3).unwrap();
        assert!(p.max_asymmetry() <= 1e-10);
        assert!(p.min_entry() >= -1e-10);
        for x in 0..p.size() {
            assert!((p.row_mass(x) - 1.0).abs() <= 1e-8);
        }
        // Long-time limit is uniform over the box mass.
        let late = heat_kernel(&d, 1e4).unwrap();
        let box_mass = a.lattice.site_mass() * a.num_sites() as f64;
        for x in [0usize, 5, 20] {
            for y in [1usize, 9, 33] {
                assert_relative_eq!(late.value(x, y), 1.0 / box_mass, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn heat_kernel_sup_decreases_in_time() {
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::ConservativeTruncated);
        let d = spectral_decompose(&a).unwrap();
        let mut prev = f64::INFINITY;
        for t in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let sup = heat_kernel(&d, t).unwrap().max_entry();
            assert!(sup.is_finite());
            assert!(
                sup <= prev + 1e-12,
                "sup grew from {prev} to {sup} at t = {t}"
            );
            prev = sup;
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let (_, _, a) = stable_setup(16, 1.0, GeneratorMode::ConservativeTruncated);
        let d = spectral_decompose(&a).unwrap();
        let (t, s) = (0.2, 0.35);
        let pt = heat_kernel(&d, t).unwrap();
        let ps = heat_kernel(&d, s).unwrap();
        let pts = heat_kernel(&d, t + s).unwrap();
        let nu = a.lattice.site_mass();
        for x in 0..pt.size() {
            for y in 0..pt.size() {
                let mut acc = 0.0;
                for z in 0..pt.size() {
                    acc += pt.value(x, z) * ps.value(z, y);
                }
                acc *= nu;
                assert!(
                    (acc - pts.value(x, y)).abs() <= 1e-8,
                    "CK violated at ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn uniformization_matches_spectral() {
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::Killed);
        let d = spectral_decompose(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f: Vec<f64> = (0..a.num_sites())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        for t in [0.05, 0.4, 1.5] {
            let via_uniform = semigroup_apply(&a, t, &f).unwrap();
            let via_spectrum = d.semigroup(t, &f);
            for (u, s) in via_uniform.iter().zip(&via_spectrum) {
                assert!((u - s).abs() <= 1e-8, "t={t}: {u} vs {s}");
            }
        }
    }

    #[test]
    fn heat_kernel_columns_match_uniformization() {
        let (_, _, a) = stable_setup(16, 1.0, GeneratorMode::ConservativeTruncated);
        let d = spectral_decompose(&a).unwrap();
        let t = 0.25;
        let p = heat_kernel(&d, t).unwrap();
        let nu = a.lattice.site_mass();
        for y in [0usize, 7, 20] {
            // p(t, ·, y) = P_t (δ_y / ν).
            let mut delta = vec![0.0; a.num_sites()];
            delta[y] = 1.0 / nu;
            let col = semigroup_apply(&a, t, &delta).unwrap();
            for x in 0..a.num_sites() {
                assert!((col[x] - p.value(x, y)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn semigroup_identity_and_contraction() {
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::ConservativeTruncated);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let f: Vec<f64> = (0..a.num_sites())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let f0 = semigroup_apply(&a, 0.0, &f).unwrap();
        assert_eq!(f, f0);
        // Constants are preserved exactly by the normalized scheme.
        let ones = vec![1.0; a.num_sites()];
        for t in [0.1, 0.7, 3.0] {
            let pt1 = semigroup_apply(&a, t, &ones).unwrap();
            for v in &pt1 {
                assert_eq!(*v, 1.0);
            }
        }
        // L^2(nu) contraction.
        let ptf = semigroup_apply(&a, 0.5, &f).unwrap();
        assert!(a.inner(&ptf, &ptf) <= a.inner(&f, &f) * (1.0 + 1e-12));
    }

    #[test]
    fn resolvent_constant_and_contraction() {
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::ConservativeTruncated);
        // lambda = 2 is dyadic: conjugate gradients terminates on the
        // constant in one exact step.
        let ones = vec![1.0; a.num_sites()];
        let u = resolvent(&a, 2.0, &ones).unwrap();
        for v in &u {
            assert_eq!(*v, 0.5);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f: Vec<f64> = (0..a.num_sites())
            .map(|_| 2.0 * rng.random::<f64>() - 1.0)
            .collect();
        let lambda = 1.3;
        let u = resolvent(&a, lambda, &f).unwrap();
        let sup_f = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup_u = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup_u <= sup_f / lambda * (1.0 + 1e-10));
    }

    #[test]
    fn resolvent_matches_spectral_route() {
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::Killed);
        let d = spectral_decompose(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let f: Vec<f64> = (0..a.num_sites())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let lambda = 0.8;
        let via_cg = resolvent(&a, lambda, &f).unwrap();
        let via_spectrum = d.resolvent(lambda, &f);
        for (u, s) in via_cg.iter().zip(&via_spectrum) {
            assert!((u - s).abs() <= 1e-9);
        }
    }

    #[test]
    fn energy_identity_random_functions() {
        let (_, c, a) = stable_setup(128, 1.0, GeneratorMode::ConservativeTruncated);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let n = a.num_sites();
        let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let rep = verify_resolvent_identity(&c, &a, 1.0, &f, &g).unwrap();
        assert!(rep.pass, "discrepancy {}", rep.rel_discrepancy);
        // Constant test function in conservative mode: both sides vanish.
        let ones = vec![1.0; n];
        let rep = verify_resolvent_identity(&c, &a, 1.0, &f, &ones).unwrap();
        assert!(rep.lhs.abs() <= 1e-10 && rep.rhs.abs() <= 1e-10);
    }

    #[test]
    fn energy_identity_eigenmode() {
        // With f = φ_k and g = U^λ φ_k both sides reduce to μ/(λ+μ)^2.
        let (_, c, a) = stable_setup(24, 1.0, GeneratorMode::ConservativeTruncated);
        let d = spectral_decompose(&a).unwrap();
        let k = 3;
        let phi = d.basis_column(k);
        let mu = d.eigenvalues[k];
        let lambda = 1.0;
        let g = resolvent(&a, lambda, &phi).unwrap();
        let rep = verify_resolvent_identity(&c, &a, lambda, &phi, &g).unwrap();
        let expect = mu / (lambda + mu).powi(2);
        assert_relative_eq!(rep.lhs, expect, max_relative = 1e-8);
        assert_relative_eq!(rep.rhs, expect, max_relative = 1e-8);
    }

    #[test]
    fn spectral_device_connects_resolvent_and_semigroup() {
        // h with modal weights (λ+μ) e^{-μ t} satisfies U^λ h = P_t f.
        let (_, _, a) = stable_setup(24, 1.0, GeneratorMode::ConservativeTruncated);
        let d = spectral_decompose(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let f: Vec<f64> = (0..a.num_sites())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let (lambda, t) = (1.0, 0.4);
        let h = d.apply_filter(&f, |mu| (lambda + mu) * (-mu * t).exp());
        let lhs = resolvent(&a, lambda, &h).unwrap();
        let rhs = semigroup_apply(&a, t, &f).unwrap();
        for (u, s) in lhs.iter().zip(&rhs) {
            assert!((u - s).abs() <= 1e-9);
        }
    }

    #[test]
    fn harmonic_constants_and_maximum_principle() {
        let (_, _, a) = stable_setup(48, 1.0, GeneratorMode::ConservativeTruncated);
        let n = a.num_sites();
        let constant = vec![2.5; n];
        let h = solve_harmonic(&a, &Point::new_1d(0.0), 0.5, &constant).unwrap();
        for &i in &h.interior {
            assert_relative_eq!(h.values[i], 2.5, max_relative = 1e-12);
        }
        // Sign boundary data: interior values stay inside the data range
        // and the generator vanishes there.
        let sign: Vec<f64> = (0..n)
            .map(|i| a.lattice.point(i).coord(0).signum())
            .collect();
        let h = solve_harmonic(&a, &Point::new_1d(0.0), 0.5, &sign).unwrap();
        let ah = a.apply(&h.values);
        for &i in &h.interior {
            assert!(h.values[i] <= 1.0 && h.values[i] >= -1.0);
            assert!(
                ah[i].abs() <= 1e-9 * a.total_rate(i),
                "residual {} at {i}",
                ah[i]
            );
        }
    }

    #[test]
    fn harmonic_martingale_mc() {
        let (_, _, a) = stable_setup(32, 1.0, GeneratorMode::Killed);
        let n = a.num_sites();
        let sign: Vec<f64> = (0..n)
            .map(|i| a.lattice.point(i).coord(0).signum())
            .collect();
        let h = solve_harmonic(&a, &Point::new_1d(0.0), 0.5, &sign).unwrap();
        let x0 = a.lattice.nearest_site(&Point::new_1d(0.125));
        let rep = martingale_check(&a, &h, x0, &[0.05, 0.2, 0.8, 3.0], 4000, 13).unwrap();
        assert!(rep.pass, "means {:?} vs {}", rep.means, rep.reference);
    }

    #[test]
    fn holder_fit_linear_function() {
        let (_, _, a) = stable_setup(64, 1.0, GeneratorMode::ConservativeTruncated);
        let u: Vec<f64> = (0..a.num_sites())
            .map(|i| a.lattice.point(i).coord(0))
            .collect();
        let fit = holder_fit(&a, &u, &Point::new_1d(0.0), 0.5, &PairPolicy::default()).unwrap();
        assert!(
            (fit.exponent - 1.0).abs() <= 0.01,
            "exponent {}",
            fit.exponent
        );
        assert!(fit.residual <= 1e-9);
    }

    #[test]
    fn holder_fit_square_root_cusp() {
        let (_, _, a) = stable_setup(256, 1.0, GeneratorMode::ConservativeTruncated);
        let u: Vec<f64> = (0..a.num_sites())
            .map(|i| a.lattice.point(i).coord(0).abs().sqrt())
            .collect();
        let policy = PairPolicy {
            straddle_only: true,
            ..PairPolicy::default()
        };
        let fit = holder_fit(&a, &u, &Point::new_1d(0.0), 0.9, &policy).unwrap();
        assert!(
            (fit.exponent - 0.5).abs() <= 0.02,
            "exponent {}",
            fit.exponent
        );
        // The envelope bound holds on every sampled pair by construction;
        // for the square root it is exactly 1 at the cusp.
        assert!(fit.constant >= 0.99);
    }

    #[test]
    fn holder_fit_rejects_constant_input() {
        let (_, _, a) = stable_setup(32, 1.0, GeneratorMode::ConservativeTruncated);
        let u = vec![7.0; a.num_sites()];
        assert!(matches!(
            holder_fit(&a, &u, &Point::new_1d(0.0), 0.5, &PairPolicy::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}
