//! Lattice Markov-chain approximation of the jump process: cell-averaged
//! conductances between lattice sites, the discrete Dirichlet form, and
//! the sparse symmetric rate operator in killed or conservative form.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::KernelSpec;
use crate::point::{BoxBounds, Point, MAX_DIM};
use crate::quad::{self, GaussRule, QuadBudget};

/// Sites of (1/n)Z^d inside an axis-aligned box, with uniform site mass
/// n^{-d} and stable row-major indexing.
#[derive(Clone, Debug, Serialize)]
pub struct Lattice {
    pub dimension: usize,
    pub n: usize,
    pub bbox: BoxBounds,
    k_min: [i64; MAX_DIM],
    dims: [usize; MAX_DIM],
    num_sites: usize,
}

impl Lattice {
    pub fn build(dimension: usize, n: usize, bbox: BoxBounds) -> Result<Self> {
        if dimension == 0 || dimension > MAX_DIM {
            return Err(Error::Capability(format!(
                "dimension {dimension} not supported (max {MAX_DIM})"
            )));
        }
        if bbox.dim() != dimension {
            return Err(Error::Config(
                "box dimension does not match lattice dimension".into(),
            ));
        }
        if n < 2 {
            return Err(Error::Config(format!(
                "lattice resolution must be at least 2, got {n}"
            )));
        }
        let h = 1.0 / n as f64;
        let mut k_min = [0i64; MAX_DIM];
        let mut dims = [1usize; MAX_DIM];
        let mut num_sites = 1usize;
        for axis in 0..dimension {
            // At least three sites per axis so every site has interior
            // neighbors to jump to.
            if bbox.side(axis) < 2.0 * h - 1e-12 {
                return Err(Error::Config(format!(
                    "box side {axis} = {} is shorter than 2/n = {}",
                    bbox.side(axis),
                    2.0 * h
                )));
            }
            let lo = (bbox.lo().coord(axis) * n as f64 - 1e-9).ceil() as i64;
            let hi = (bbox.hi().coord(axis) * n as f64 + 1e-9).floor() as i64;
            k_min[axis] = lo;
            dims[axis] = (hi - lo + 1) as usize;
            num_sites *= dims[axis];
        }
        Ok(Self {
            dimension,
            n,
            bbox,
            k_min,
            dims,
            num_sites,
        })
    }

    #[inline]
    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    /// Lattice spacing h = 1/n.
    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Uniform mass n^{-d} carried by each site.
    #[inline]
    pub fn site_mass(&self) -> f64 {
        self.spacing().powi(self.dimension as i32)
    }

    pub fn point(&self, index: usize) -> Point {
        debug_assert!(index < self.num_sites);
        let h = self.spacing();
        match self.dimension {
            1 => Point::new_1d((self.k_min[0] + index as i64) as f64 * h),
            2 => {
                let cols = self.dims[1];
                let i = index / cols;
                let j = index % cols;
                Point::new_2d(
                    (self.k_min[0] + i as i64) as f64 * h,
                    (self.k_min[1] + j as i64) as f64 * h,
                )
            }
            _ => unreachable!(),
        }
    }

    /// Index of the lattice site nearest to `p` (clamped into the box).
    pub fn nearest_site(&self, p: &Point) -> usize {
        let n = self.n as f64;
        let mut idx = 0usize;
        for axis in 0..self.dimension {
            let k = (p.coord(axis) * n).round() as i64;
            let k = k.clamp(
                self.k_min[axis],
                self.k_min[axis] + self.dims[axis] as i64 - 1,
            );
            idx = idx * self.dims[axis] + (k - self.k_min[axis]) as usize;
        }
        idx
    }

    /// Exact site lookup; `None` when `p` is not a lattice point in the box.
    pub fn index_of(&self, p: &Point) -> Option<usize> {
        let near = self.nearest_site(p);
        (self.point(near).dist_inf(p) <= 1e-9 * self.spacing()).then_some(near)
    }

    pub fn sites(&self) -> impl Iterator<Item = (usize, Point)> + '_ {
        (0..self.num_sites).map(|i| (i, self.point(i)))
    }

    /// The region tiled by the site cells: the box extended by half a cell.
    pub fn cell_cover(&self) -> BoxBounds {
        let h2 = 0.5 * self.spacing();
        let mut lo = Point::zero(self.dimension);
        let mut hi = Point::zero(self.dimension);
        for axis in 0..self.dimension {
            lo.set_coord(axis, self.k_min[axis] as f64 * self.spacing() - h2);
            hi.set_coord(
                axis,
                (self.k_min[axis] + self.dims[axis] as i64 - 1) as f64 * self.spacing() + h2,
            );
        }
        BoxBounds::new(lo, hi).expect("cover is nonempty")
    }
}

/// Compressed sparse rows with both triangles stored; the diagonal is
/// held separately by the consumers that need one.
#[derive(Clone, Debug, Serialize)]
pub struct SparseSym {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    n: usize,
}

impl SparseSym {
    /// Assemble from upper-triangle entries (i < j), mirroring each entry.
    pub fn from_upper(n: usize, upper: &[Vec<(u32, f64)>]) -> Self {
        assert_eq!(upper.len(), n);
        let mut counts = vec![0usize; n];
        for (i, row) in upper.iter().enumerate() {
            counts[i] += row.len();
            for &(j, _) in row {
                counts[j as usize] += 1;
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[n];
        let mut col_idx = vec![0u32; nnz];
        let mut values = vec![0.0f64; nnz];
        let mut cursor = row_ptr.clone();
        // Two passes keep each row sorted by column: first the mirrored
        // lower-triangle entries (their row index j sees columns i < j in
        // increasing i), then the native upper entries.
        for (i, row) in upper.iter().enumerate() {
            for &(j, v) in row {
                let j = j as usize;
                col_idx[cursor[j]] = i as u32;
                values[cursor[j]] = v;
                cursor[j] += 1;
            }
        }
        for (i, row) in upper.iter().enumerate() {
            for &(j, v) in row {
                col_idx[cursor[i]] = j;
                values[cursor[i]] = v;
                cursor[i] += 1;
            }
        }
        Self {
            row_ptr,
            col_idx,
            values,
            n,
        }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Scale every stored value.
    pub fn scaled(mut self, factor: f64) -> Self {
        for v in &mut self.values {
            *v *= factor;
        }
        self
    }
}

/// How touching-cell conductances are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AdjacentPolicy {
    /// Integrate the literal double cell integral; errors out when the
    /// shared-face singularity is non-integrable (local order >= 1).
    Literal,
    /// Replace touching-pair entries by the nearest-neighbor value whose
    /// jump variance matches the truncated second moment per axis.
    MomentMatched,
}

impl AdjacentPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            AdjacentPolicy::Literal => "literal",
            AdjacentPolicy::MomentMatched => "moment-matched",
        }
    }
}

/// Cell-averaged conductances C(x, y) between lattice sites: symmetric,
/// nonnegative, zero diagonal.
#[derive(Clone, Debug)]
pub struct ConductanceMatrix {
    pub lattice: Lattice,
    pub adjacent_policy: AdjacentPolicy,
    mat: SparseSym,
}

impl ConductanceMatrix {
    #[inline]
    pub fn matrix(&self) -> &SparseSym {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.mat.get(i, j)
    }

    /// Coordinate-triple CSV (row, col, value), upper triangle, with a
    /// leading metadata line.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "# n={} box={:?} adjacent={}",
            self.lattice.n,
            (
                self.lattice.bbox.lo().coords(),
                self.lattice.bbox.hi().coords()
            ),
            self.adjacent_policy.label()
        )?;
        writeln!(out, "row,col,value")?;
        for i in 0..self.mat.size() {
            let (cols, vals) = self.mat.row(i);
            for (j, v) in cols.iter().zip(vals) {
                if (*j as usize) > i {
                    writeln!(out, "{i},{j},{v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Build the conductance matrix for a kernel: non-touching cell pairs get
/// the tensor-product Gauss value of the double cell integral scaled by
/// n^{2d}; touching pairs follow the adjacent policy.
pub fn build_conductances(
    spec: &KernelSpec,
    lattice: &Lattice,
    quad_order: usize,
    policy: AdjacentPolicy,
) -> Result<ConductanceMatrix> {
    let eval = |x: &Point, y: &Point| spec.eval_unchecked(x, y);
    build_conductances_with(&eval, spec.truncation, lattice, quad_order, policy).map(|mat| {
        ConductanceMatrix {
            lattice: lattice.clone(),
            adjacent_policy: policy,
            mat,
        }
    })
}

/// Assembly against an arbitrary symmetric intensity (used for the
/// small-jump / large-jump parts of the splicing construction).
pub(crate) fn build_conductances_with<F>(
    eval: &F,
    truncation: Option<f64>,
    lattice: &Lattice,
    quad_order: usize,
    policy: AdjacentPolicy,
) -> Result<SparseSym>
where
    F: Fn(&Point, &Point) -> f64 + Sync,
{
    if quad_order < 1 {
        return Err(Error::Config("quadrature order must be at least 1".into()));
    }
    let n_sites = lattice.num_sites();
    let h = lattice.spacing();
    let half = 0.5 * h;
    let scale = (lattice.n as f64).powi(2 * lattice.dimension as i32);
    let rule = GaussRule::legendre(quad_order);
    let reach = truncation.map(|t| t + h * (lattice.dimension as f64).sqrt());

    let rows: Vec<Result<Vec<(u32, f64)>>> = exec::map_indexed(n_sites, |i| {
        let pi = lattice.point(i);
        let mut row = Vec::new();
        for j in (i + 1)..n_sites {
            let pj = lattice.point(j);
            if let Some(reach) = reach {
                if pi.dist(&pj) > reach {
                    continue;
                }
            }
            let gap = pi.dist_inf(&pj);
            let touching = gap <= h * (1.0 + 1e-9);
            let value = if !touching {
                scale * tensor_cells(eval, &pi, &pj, half, &rule)
            } else {
                match policy {
                    AdjacentPolicy::Literal => {
                        let raw = quad::integrate_cell_pair(
                            eval,
                            &pi,
                            &pj,
                            half,
                            quad_order.max(6),
                            1e-9,
                        )
                        .map_err(|e| match e {
                            Error::Numeric { partial, .. } => Error::Numeric {
                                msg: format!(
                                    "divergent conductance entry between sites {i} and {j} \
                                         (touching cells, non-integrable local order)"
                                ),
                                partial,
                            },
                            other => other,
                        })?;
                        scale * raw
                    }
                    AdjacentPolicy::MomentMatched => {
                        if axis_neighbor(&pi, &pj, h) {
                            0.5 * (axis_moment(eval, &pi, &pj, half)?
                                + axis_moment(eval, &pj, &pi, half)?)
                                / (2.0 * h * h)
                        } else {
                            0.0
                        }
                    }
                }
            };
            if !value.is_finite() {
                return Err(Error::Numeric {
                    msg: format!("non-finite conductance between sites {i} and {j}"),
                    partial: value,
                });
            }
            if value != 0.0 {
                row.push((j as u32, value));
            }
        }
        Ok(row)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SparseSym::from_upper(n_sites, &rows))
}

fn tensor_cells<F: Fn(&Point, &Point) -> f64>(
    f: &F,
    ca: &Point,
    cb: &Point,
    half: f64,
    rule: &GaussRule,
) -> f64 {
    let q = rule.nodes.len();
    match ca.dim() {
        1 => {
            let mut acc = 0.0;
            for i in 0..q {
                let a = Point::new_1d(ca.coord(0) + half * rule.nodes[i]);
                for j in 0..q {
                    let b = Point::new_1d(cb.coord(0) + half * rule.nodes[j]);
                    acc += rule.weights[i] * rule.weights[j] * f(&a, &b);
                }
            }
            acc * half * half
        }
        2 => {
            let mut acc = 0.0;
            for i0 in 0..q {
                for i1 in 0..q {
                    let a = Point::new_2d(
                        ca.coord(0) + half * rule.nodes[i0],
                        ca.coord(1) + half * rule.nodes[i1],
                    );
                    let wa = rule.weights[i0] * rule.weights[i1];
                    for j0 in 0..q {
                        for j1 in 0..q {
                            let b = Point::new_2d(
                                cb.coord(0) + half * rule.nodes[j0],
                                cb.coord(1) + half * rule.nodes[j1],
                            );
                            acc += wa * rule.weights[j0] * rule.weights[j1] * f(&a, &b);
                        }
                    }
                }
            }
            acc * half.powi(4)
        }
        _ => unreachable!(),
    }
}

fn axis_neighbor(a: &Point, b: &Point, h: f64) -> bool {
    let mut offsets = 0;
    for k in 0..a.dim() {
        let d = (a.coord(k) - b.coord(k)).abs();
        if d > 1e-9 * h {
            if (d - h).abs() > 1e-9 * h {
                return false;
            }
            offsets += 1;
        }
    }
    offsets == 1
}

/// ∫_{|w| <= h/2} w_k^2 J(x, x+w) dw along the axis separating the pair.
fn axis_moment<F: Fn(&Point, &Point) -> f64>(
    f: &F,
    x: &Point,
    y: &Point,
    half: f64,
) -> Result<f64> {
    let axis = (0..x.dim())
        .max_by(|&a, &b| {
            let da = (x.coord(a) - y.coord(a)).abs();
            let db = (x.coord(b) - y.coord(b)).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let dirs = quad::angular_rule(x.dim());
    let dm1 = x.dim() as f64 - 1.0;
    let g = |rad: f64| -> f64 {
        let mut acc = 0.0;
        for (dir, w) in &dirs {
            let comp = rad * dir.coord(axis);
            acc += w * comp * comp * f(&x.add_scaled(dir, rad), x);
        }
        acc * rad.powf(dm1)
    };
    Ok(quad::integrate_radial_ball(g, half, &QuadBudget::default())?.value)
}

/// Boundary behavior of the finite-box generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GeneratorMode {
    /// Jumps out of the cell cover kill the chain.
    Killed,
    /// Out-of-box jumps are discarded; every row sums to zero.
    ConservativeTruncated,
}

impl GeneratorMode {
    pub fn label(&self) -> &'static str {
        match self {
            GeneratorMode::Killed => "killed",
            GeneratorMode::ConservativeTruncated => "conservative-truncated",
        }
    }
}

/// The sparse symmetric rate operator: off-diagonal rates
/// q(x, y) = 2 C(x, y) n^{-d}, diagonal q(x, x) = -(Σ_y q(x, y) + kill(x)).
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    pub lattice: Lattice,
    pub mode: GeneratorMode,
    rates: SparseSym,
    diag: Vec<f64>,
    kill: Vec<f64>,
}

/// Build the generator from conductances; killed mode integrates the
/// kernel mass escaping the cell cover by tail quadrature.
pub fn assemble_generator(
    c: &ConductanceMatrix,
    mode: GeneratorMode,
    spec: &KernelSpec,
) -> Result<GeneratorMatrix> {
    let lattice = c.lattice.clone();
    let n_sites = lattice.num_sites();
    let nu = lattice.site_mass();
    let rates = c.matrix().clone().scaled(2.0 * nu);
    let kill = match mode {
        GeneratorMode::ConservativeTruncated => vec![0.0; n_sites],
        GeneratorMode::Killed => {
            let cover = lattice.cell_cover();
            let per_site: Vec<Result<f64>> =
                exec::map_indexed(n_sites, |i| escape_rate(spec, &lattice.point(i), &cover));
            per_site.into_iter().collect::<Result<Vec<_>>>()?
        }
    };
    // The diagonal is the negated row sum accumulated in storage order, so
    // later row-order traversals cancel it exactly in floating point.
    let mut diag = vec![0.0; n_sites];
    for i in 0..n_sites {
        let (_, vals) = rates.row(i);
        let mut s = 0.0;
        for v in vals {
            s += v;
        }
        diag[i] = -(s + kill[i]);
    }
    Ok(GeneratorMatrix {
        lattice,
        mode,
        rates,
        diag,
        kill,
    })
}

/// 2 ∫_{y outside cover} J(x, y) dy.
fn escape_rate(spec: &KernelSpec, x: &Point, cover: &BoxBounds) -> Result<f64> {
    let eval = |a: &Point, b: &Point| spec.eval_unchecked(a, b);
    escape_rate_with(&eval, spec.dimension, spec.truncation, 0.0, x, cover)
}

/// Escape-mass quadrature for an arbitrary intensity, restricted to jump
/// sizes in (inner, truncation]; both cut radii become panel edges.
pub(crate) fn escape_rate_with<F: Fn(&Point, &Point) -> f64>(
    eval: &F,
    dimension: usize,
    truncation: Option<f64>,
    inner: f64,
    x: &Point,
    cover: &BoxBounds,
) -> Result<f64> {
    let budget = QuadBudget::default();
    match dimension {
        1 => {
            let mut total = 0.0;
            for (sign, wall) in [(-1.0, cover.lo().coord(0)), (1.0, cover.hi().coord(0))] {
                let r0 = (wall - x.coord(0)).abs().max(inner);
                let f = |r: f64| eval(&Point::new_1d(x.coord(0) + sign * r), x);
                if truncation.map(|t| t <= r0) != Some(true) {
                    total += quad::integrate_radial_tail_capped(f, r0, truncation, &budget)?.value;
                }
            }
            Ok(2.0 * total)
        }
        2 => {
            // Lattice sites sit at least half a cell inside the cover.
            let r0 = cover.margin(x).max(inner).max(1e-12);
            let dirs = quad::angular_rule(2);
            let f = |r: f64| -> f64 {
                let mut acc = 0.0;
                for (dir, w) in &dirs {
                    let y = x.add_scaled(dir, r);
                    if !cover.contains(&y) {
                        acc += w * eval(&y, x);
                    }
                }
                acc * r
            };
            if let Some(t) = truncation {
                if t <= r0 {
                    return Ok(0.0);
                }
            }
            Ok(2.0 * quad::integrate_radial_tail_capped(f, r0, truncation, &budget)?.value)
        }
        _ => unreachable!(),
    }
}

impl GeneratorMatrix {
    /// Assemble directly from upper-triangle rates and kill rates; handy
    /// for hand-built chains in experiments and tests.
    pub fn from_parts(
        lattice: Lattice,
        upper_rates: &[Vec<(u32, f64)>],
        kill: Vec<f64>,
        mode: GeneratorMode,
    ) -> Result<Self> {
        let n = lattice.num_sites();
        if upper_rates.len() != n || kill.len() != n {
            return Err(Error::Config(
                "rate rows do not match the lattice size".into(),
            ));
        }
        let rates = SparseSym::from_upper(n, upper_rates);
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let (_, vals) = rates.row(i);
            let mut s = 0.0;
            for v in vals {
                s += v;
            }
            diag[i] = -(s + kill[i]);
        }
        Ok(Self {
            lattice,
            mode,
            rates,
            diag,
            kill,
        })
    }

    #[inline]
    pub fn num_sites(&self) -> usize {
        self.rates.size()
    }

    #[inline]
    pub fn rate_row(&self, i: usize) -> (&[u32], &[f64]) {
        self.rates.row(i)
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    #[inline]
    pub fn kill_rate(&self, i: usize) -> f64 {
        self.kill[i]
    }

    /// Total exit rate at a site (jumps plus killing).
    #[inline]
    pub fn total_rate(&self, i: usize) -> f64 {
        -self.diag[i]
    }

    /// Largest total rate; the uniformization constant.
    pub fn max_rate(&self) -> f64 {
        self.diag.iter().fold(0.0f64, |m, d| m.max(-d))
    }

    /// Af(x) = Σ_y q(x, y) f(y) + q(x, x) f(x); the traversal order matches
    /// the diagonal assembly so constants are annihilated exactly in
    /// conservative mode.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.num_sites());
        exec::map_indexed(self.num_sites(), |i| {
            let (cols, vals) = self.rates.row(i);
            let mut acc = 0.0;
            for (j, v) in cols.iter().zip(vals) {
                acc += v * f[*j as usize];
            }
            acc + self.diag[i] * f[i]
        })
    }

    /// ⟨f, g⟩ in L^2 of the uniform site measure.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let nu = self.lattice.site_mass();
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * nu
    }

    /// Exact row-sum audit in storage order: 0 for conservative rows,
    /// -kill(x) otherwise.
    pub fn row_sum(&self, i: usize) -> f64 {
        let (_, vals) = self.rates.row(i);
        let mut s = 0.0;
        for v in vals {
            s += v;
        }
        s + self.diag[i]
    }

    /// Coordinate-triple CSV including the diagonal, with metadata line.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "# n={} box={:?} mode={}",
            self.lattice.n,
            (
                self.lattice.bbox.lo().coords(),
                self.lattice.bbox.hi().coords()
            ),
            self.mode.label()
        )?;
        writeln!(out, "row,col,value")?;
        for i in 0..self.num_sites() {
            let (cols, vals) = self.rates.row(i);
            for (j, v) in cols.iter().zip(vals) {
                if (*j as usize) > i {
                    writeln!(out, "{i},{j},{v}")?;
                }
            }
            writeln!(out, "{i},{i},{}", self.diag[i])?;
        }
        Ok(())
    }
}

/// The discrete Dirichlet form
/// ℰ_n(f, g) = Σ_{ordered pairs} (f(x)-f(y))(g(x)-g(y)) C(x, y) n^{-2d}.
pub fn dirichlet_form(c: &ConductanceMatrix, f: &[f64], g: &[f64]) -> f64 {
    let n_sites = c.lattice.num_sites();
    assert_eq!(f.len(), n_sites);
    assert_eq!(g.len(), n_sites);
    let w = c.lattice.site_mass().powi(2);
    let mut acc = 0.0;
    for i in 0..n_sites {
        let (cols, vals) = c.matrix().row(i);
        for (j, v) in cols.iter().zip(vals) {
            let j = *j as usize;
            acc += (f[i] - f[j]) * (g[i] - g[j]) * v;
        }
    }
    acc * w
}

/// Killing part of the energy form, Σ kill(x) f(x) g(x) ν; zero in
/// conservative mode so the full form is ℰ_n + this.
pub fn killing_form(a: &GeneratorMatrix, f: &[f64], g: &[f64]) -> f64 {
    let nu = a.lattice.site_mass();
    let mut acc = 0.0;
    for i in 0..a.num_sites() {
        acc += a.kill_rate(i) * f[i] * g[i];
    }
    acc * nu
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stable(alpha: f64) -> KernelSpec {
        KernelSpec::isotropic_stable(1, alpha, 1.0).unwrap()
    }

    #[test]
    fn lattice_enumeration_1d() {
        let lat = Lattice::build(1, 4, BoxBounds::cube(1, -1.0, 1.0).unwrap()).unwrap();
        assert_eq!(lat.num_sites(), 9);
        assert_eq!(lat.site_mass(), 0.25);
        assert_eq!(lat.point(0), Point::new_1d(-1.0));
        assert_eq!(lat.point(8), Point::new_1d(1.0));
        assert_eq!(lat.index_of(&Point::new_1d(-0.75)), Some(1));
        assert_eq!(lat.index_of(&Point::new_1d(-0.7)), None);
    }

    #[test]
    fn lattice_enumeration_2d() {
        let lat = Lattice::build(2, 2, BoxBounds::cube(2, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(lat.num_sites(), 9);
        assert_eq!(lat.site_mass(), 0.25);
        let total_mass = lat.site_mass() * lat.num_sites() as f64;
        // nu N matches the box volume up to boundary-cell rounding.
        assert!((total_mass - 1.0).abs() / 1.0 <= 2.0 * 2.0 * lat.spacing());
    }

    #[test]
    fn undersized_box_rejected() {
        let e = Lattice::build(1, 4, BoxBounds::cube(1, 0.0, 0.1).unwrap());
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn constant_kernel_average_is_exact() {
        let lat = Lattice::build(1, 10, BoxBounds::cube(1, 0.0, 1.0).unwrap()).unwrap();
        let eval = |_: &Point, _: &Point| 3.5f64;
        let mat = build_conductances_with(&eval, None, &lat, 4, AdjacentPolicy::Literal).unwrap();
        // Any non-touching pair averages the constant exactly.
        assert_relative_eq!(mat.get(0, 5), 3.5, max_relative = 1e-12);
    }

    #[test]
    fn far_pair_matches_quadrature_oracle() {
        // Oracle: the double cell integral has the closed form
        // n^2 [F(1.1) - 2 F(1.0) + F(0.9)] with F(w) = -4 sqrt(w) for the
        // half-order kernel, n = 10, sites at 0 and 1.
        let spec = stable(0.5);
        let lat = Lattice::build(1, 10, BoxBounds::cube(1, -0.5, 1.5).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 12, AdjacentPolicy::Literal).unwrap();
        let i = lat.index_of(&Point::new_1d(0.0)).unwrap();
        let j = lat.index_of(&Point::new_1d(1.0)).unwrap();
        let f2 = |w: f64| -4.0 * w.sqrt();
        let oracle = 100.0 * (f2(1.1) - 2.0 * f2(1.0) + f2(0.9));
        assert_relative_eq!(c.get(i, j), oracle, max_relative = 1e-10);
        // The cell average sits within half a percent of the midpoint value
        // J(0,1) = 1 (second-order averaging bias, exactly 0.3127%).
        assert!((c.get(i, j) - 1.0).abs() < 5e-3);
        assert!((c.get(i, j) - 1.0).abs() > 2e-3);
    }

    #[test]
    fn conductance_second_order_in_resolution() {
        let spec = stable(0.5);
        let mut errors = Vec::new();
        for n in [10usize, 20, 40] {
            let lat = Lattice::build(1, n, BoxBounds::cube(1, -0.5, 1.5).unwrap()).unwrap();
            let c = build_conductances(&spec, &lat, 12, AdjacentPolicy::Literal).unwrap();
            let i = lat.index_of(&Point::new_1d(0.0)).unwrap();
            let j = lat.index_of(&Point::new_1d(1.0)).unwrap();
            errors.push((c.get(i, j) - 1.0).abs());
        }
        // Halving h divides the averaging bias by about four.
        assert!(errors[1] / errors[0] < 0.3);
        assert!(errors[2] / errors[1] < 0.3);
    }

    #[test]
    fn moment_matched_neighbor_value() {
        // 2 C h^2 = ∫_{|w| <= h/2} w^2 J dw = 2 (h/2)^{1.5} / 1.5 at a = 0.5.
        let spec = stable(0.5);
        let n = 10;
        let lat = Lattice::build(1, n, BoxBounds::cube(1, 0.0, 1.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 8, AdjacentPolicy::MomentMatched).unwrap();
        let h = lat.spacing();
        let moment = 2.0 * (0.5 * h).powf(1.5) / 1.5;
        assert_relative_eq!(c.get(0, 1), moment / (2.0 * h * h), max_relative = 1e-9);
    }

    #[test]
    fn literal_touching_finite_for_low_order() {
        let spec = stable(0.5);
        let lat = Lattice::build(1, 8, BoxBounds::cube(1, 0.0, 1.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 8, AdjacentPolicy::Literal).unwrap();
        assert!(c.get(0, 1).is_finite());
        assert!(c.get(0, 1) > 0.0);
    }

    #[test]
    fn literal_touching_divergent_for_high_order() {
        let spec = stable(1.2);
        let lat = Lattice::build(1, 8, BoxBounds::cube(1, 0.0, 1.0).unwrap()).unwrap();
        let r = build_conductances(&spec, &lat, 6, AdjacentPolicy::Literal);
        match r {
            Err(Error::Numeric { msg, .. }) => assert!(msg.contains("divergent conductance")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn conservative_rows_sum_to_zero_exactly() {
        let spec = stable(0.5);
        let lat = Lattice::build(1, 16, BoxBounds::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 4, AdjacentPolicy::MomentMatched).unwrap();
        let a = assemble_generator(&c, GeneratorMode::ConservativeTruncated, &spec).unwrap();
        for i in 0..a.num_sites() {
            assert_eq!(a.row_sum(i), 0.0);
        }
        // A constant function is annihilated exactly.
        let ones = vec![1.0; a.num_sites()];
        for v in a.apply(&ones) {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn killed_rows_sum_to_minus_kill() {
        let spec = stable(0.5);
        let lat = Lattice::build(1, 16, BoxBounds::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 4, AdjacentPolicy::MomentMatched).unwrap();
        let a = assemble_generator(&c, GeneratorMode::Killed, &spec).unwrap();
        for i in 0..a.num_sites() {
            assert!(a.kill_rate(i) > 0.0);
            assert_relative_eq!(a.row_sum(i), -a.kill_rate(i), max_relative = 1e-12);
        }
    }

    #[test]
    fn kill_rate_matches_tail_at_center() {
        // At the box center the complement of the cover is the pair of
        // rays beyond the half-width, so the kill rate is twice the tail
        // mass at that distance.
        let spec = stable(0.5);
        let lat = Lattice::build(1, 64, BoxBounds::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 4, AdjacentPolicy::MomentMatched).unwrap();
        let a = assemble_generator(&c, GeneratorMode::Killed, &spec).unwrap();
        let mid = lat.index_of(&Point::new_1d(0.0)).unwrap();
        let margin = 1.0 + 0.5 * lat.spacing();
        let l1 = crate::functionals::compute_l1(&spec, &Point::new_1d(0.0), margin).unwrap();
        assert_relative_eq!(a.kill_rate(mid), 2.0 * l1.value, max_relative = 0.05);
    }

    #[test]
    fn generator_is_self_adjoint() {
        let spec = stable(0.5);
        let lat = Lattice::build(1, 24, BoxBounds::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 4, AdjacentPolicy::MomentMatched).unwrap();
        let a = assemble_generator(&c, GeneratorMode::Killed, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let f: Vec<f64> = (0..a.num_sites())
                .map(|_| rng.random::<f64>() - 0.5)
                .collect();
            let g: Vec<f64> = (0..a.num_sites())
                .map(|_| rng.random::<f64>() - 0.5)
                .collect();
            let lhs = a.inner(&a.apply(&f), &g);
            let rhs = a.inner(&f, &a.apply(&g));
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn dirichlet_form_basics() {
        let spec = stable(0.5);
        let lat = Lattice::build(1, 16, BoxBounds::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 4, AdjacentPolicy::MomentMatched).unwrap();
        let n = lat.num_sites();
        let constant = vec![2.5; n];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            assert_eq!(dirichlet_form(&c, &constant, &g), 0.0);
            assert!(dirichlet_form(&c, &g, &g) >= 0.0);
        }
    }

    #[test]
    fn form_matches_generator_pairing() {
        let spec = stable(0.5);
        let lat = Lattice::build(1, 32, BoxBounds::cube(1, -1.0, 1.0).unwrap()).unwrap();
        let c = build_conductances(&spec, &lat, 4, AdjacentPolicy::MomentMatched).unwrap();
        let a = assemble_generator(&c, GeneratorMode::ConservativeTruncated, &spec).unwrap();
        let n = lat.num_sites();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let minus_af = a.apply(&f).iter().map(|v| -v).collect::<Vec<_>>();
        let lhs = dirichlet_form(&c, &f, &g);
        let rhs = a.inner(&minus_af, &g);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn discrete_form_approaches_continuum() {
        // Continuum oracle: box-restricted double integral computed by an
        // independent panel rule over (x, u = y - x).
        let spec = stable(0.5);
        let bump = |x: f64| {
            let t: f64 = x / 0.8;
            if t.abs() < 1.0 {
                (1.0 - t * t).powi(3)
            } else {
                0.0
            }
        };
        let continuum = continuum_form_oracle(&bump, 0.5, 1.0);
        let mut errors = Vec::new();
        for n in [64usize, 128, 256] {
            let lat = Lattice::build(1, n, BoxBounds::cube(1, -1.0, 1.0).unwrap()).unwrap();
            let c = build_conductances(&spec, &lat, 6, AdjacentPolicy::Literal).unwrap();
            let f: Vec<f64> = (0..lat.num_sites())
                .map(|i| bump(lat.point(i).coord(0)))
                .collect();
            let en = dirichlet_form(&c, &f, &f);
            errors.push((en - continuum).abs() / continuum);
        }
        assert!(errors[2] <= 0.02, "relative errors {errors:?}");
        assert!(
            errors[2] <= errors[1] && errors[1] <= errors[0],
            "not decreasing: {errors:?}"
        );
    }

    // Test-only continuum Dirichlet energy on the box [-hw, hw]:
    // ∫∫ (f(y)-f(x))^2 |y-x|^{-1-a} restricted to the box, via midpoint
    // panels in x and dyadic panels in u (independent of the lattice path).
    fn continuum_form_oracle(f: &dyn Fn(f64) -> f64, alpha: f64, hw: f64) -> f64 {
        let nx = 4000;
        let dx = 2.0 * hw / nx as f64;
        let mut total = 0.0;
        for i in 0..nx {
            let x = -hw + (i as f64 + 0.5) * dx;
            // u-panels: dyadic from 1e-7 up to the distance to the walls.
            let mut inner = 0.0;
            for side in [-1.0, 1.0] {
                let reach = if side > 0.0 { hw - x } else { x + hw };
                let mut lo = 1e-7;
                while lo < reach {
                    let hi = (2.0 * lo).min(reach);
                    // 4-point midpoint composite inside the panel.
                    let m = 4;
                    let du = (hi - lo) / m as f64;
                    for k in 0..m {
                        let u = lo + (k as f64 + 0.5) * du;
                        let dfu = f(x + side * u) - f(x);
                        inner += dfu * dfu * u.powf(-1.0 - alpha) * du;
                    }
                    lo = hi;
                }
            }
            total += inner * dx;
        }
        total
    }
}
