//! Continuous-time trajectories of the lattice chain: direct event-driven
//! simulation, small/large-jump splicing, exit-probability and mean-exit
//! Monte Carlo, and the jump-identity check that ties path statistics to
//! the rate kernel.
//!
//! Every path owns a counter-based RNG substream keyed by (seed, path
//! index), and batch reductions run in path order, so estimates are
//! bit-identical for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chain::{self, AdjacentPolicy, GeneratorMatrix, GeneratorMode, SparseSym};
use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::KernelSpec;
use crate::point::Point;
use crate::stats::{self, MeanStderr};

/// Per-path RNG substream: one seed, one stream per path index.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

#[inline]
fn exp_variate(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the log never sees zero.
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// One jump record.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PathEvent {
    pub time: f64,
    pub site: usize,
}

/// First passage out of a ball.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExitEvent {
    pub time: f64,
    /// Landing site; `None` when the exit was a kill (a jump out of the
    /// lattice cover, necessarily outside every ball inside it).
    pub site: Option<usize>,
}

/// A simulated trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct PathSample {
    pub start: usize,
    pub events: Vec<PathEvent>,
    pub end_time: f64,
    pub killed: Option<f64>,
    pub exit: Option<ExitEvent>,
    /// Large jumps added by the splicing construction.
    pub spliced: usize,
}

impl PathSample {
    /// State at time t (left-continuous between jumps).
    pub fn site_at(&self, t: f64) -> usize {
        let mut site = self.start;
        for e in &self.events {
            if e.time > t {
                break;
            }
            site = e.site;
        }
        site
    }
}

/// The ball whose first exit is being measured.
#[derive(Clone, Copy, Debug)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    fn exited(&self, p: &Point) -> bool {
        p.dist(&self.center) > self.radius
    }
}

/// Prefix-sum jump sampler over the generator rows: O(log row) per jump,
/// kill mass in the last slot.
pub struct PathEngine<'a> {
    gen: &'a GeneratorMatrix,
    prefix: Vec<f64>,
    offsets: Vec<usize>,
    totals: Vec<f64>,
}

impl<'a> PathEngine<'a> {
    pub fn new(gen: &'a GeneratorMatrix) -> Self {
        let n = gen.num_sites();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0usize);
        let mut len = 0usize;
        for i in 0..n {
            len += gen.rate_row(i).0.len() + 1;
            offsets.push(len);
        }
        let mut prefix = vec![0.0; len];
        let mut totals = vec![0.0; n];
        for i in 0..n {
            let (_, vals) = gen.rate_row(i);
            let base = offsets[i];
            let mut acc = 0.0;
            for (k, v) in vals.iter().enumerate() {
                acc += v;
                prefix[base + k] = acc;
            }
            acc += gen.kill_rate(i);
            prefix[base + vals.len()] = acc;
            totals[i] = acc;
        }
        Self {
            gen,
            prefix,
            offsets,
            totals,
        }
    }

    /// Draw the transition out of `site`; `None` is the kill branch.
    fn draw_destination(&self, site: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let span = &self.prefix[self.offsets[site]..self.offsets[site + 1]];
        let z = rng.random::<f64>() * self.totals[site];
        let k = span.partition_point(|&p| p <= z).min(span.len() - 1);
        let (cols, _) = self.gen.rate_row(site);
        if k < cols.len() {
            Some(cols[k] as usize)
        } else {
            None
        }
    }

    /// Simulate until `t_max`.
    pub fn simulate(&self, x0: usize, t_max: f64, rng: &mut ChaCha8Rng) -> PathSample {
        self.run(x0, t_max, None, rng)
    }

    /// Simulate until `t_max`, stopping early at the first exit from the
    /// ball (a kill counts: the cover contains the ball).
    pub fn simulate_in_ball(
        &self,
        x0: usize,
        ball: &Ball,
        t_max: f64,
        rng: &mut ChaCha8Rng,
    ) -> PathSample {
        self.run(x0, t_max, Some(ball), rng)
    }

    fn run(&self, x0: usize, t_max: f64, ball: Option<&Ball>, rng: &mut ChaCha8Rng) -> PathSample {
        let mut sample = PathSample {
            start: x0,
            events: Vec::new(),
            end_time: t_max,
            killed: None,
            exit: None,
            spliced: 0,
        };
        let mut t = 0.0;
        let mut site = x0;
        loop {
            let rate = self.totals[site];
            if !(rate > 0.0) {
                // Absorbing site: the path stays here.
                break;
            }
            let hold = exp_variate(rng, rate);
            if t + hold > t_max {
                break;
            }
            t += hold;
            match self.draw_destination(site, rng) {
                Some(next) => {
                    site = next;
                    sample.events.push(PathEvent { time: t, site });
                    if let Some(b) = ball {
                        if b.exited(&self.gen.lattice.point(site)) {
                            sample.exit = Some(ExitEvent {
                                time: t,
                                site: Some(site),
                            });
                            sample.end_time = t;
                            return sample;
                        }
                    }
                }
                None => {
                    sample.killed = Some(t);
                    sample.end_time = t;
                    if ball.is_some() {
                        sample.exit = Some(ExitEvent {
                            time: t,
                            site: None,
                        });
                    }
                    return sample;
                }
            }
        }
        sample
    }
}

/// One-off simulation; batch callers should hold a [`PathEngine`].
pub fn simulate_path(
    gen: &GeneratorMatrix,
    x0: usize,
    t_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PathSample> {
    if x0 >= gen.num_sites() {
        return Err(Error::Domain(format!("start site {x0} out of range")));
    }
    if !(t_max >= 0.0) {
        return Err(Error::Domain(format!(
            "horizon must be nonnegative, got {t_max}"
        )));
    }
    Ok(PathEngine::new(gen).simulate(x0, t_max, rng))
}

/// Small/large-jump splicing simulator: the small-jump chain evolves
/// between candidate epochs of a Poisson clock with the dominating rate
/// 2·kappa3; accepted epochs add a large jump drawn from the
/// lattice-restricted large-jump conductance row (or a kill when the
/// large jump leaves the cover).
pub struct MeyerSplicer<'a> {
    small: PathEngine<'a>,
    large_rows: SparseSym,
    large_prefix: Vec<f64>,
    large_offsets: Vec<usize>,
    /// Total large-jump intensity per site (in-cover rows plus escape).
    large_total: Vec<f64>,
    dominating_rate: f64,
}

impl<'a> MeyerSplicer<'a> {
    /// `small` must be the generator of the kernel truncated at radius
    /// one; `spec` supplies the full kernel whose part beyond radius one
    /// is spliced in.
    pub fn new(small: &'a GeneratorMatrix, spec: &KernelSpec, quad_order: usize) -> Result<Self> {
        let lattice = &small.lattice;
        let cut = 1.0f64;
        let band = |a: &Point, b: &Point| {
            if a.dist(b) > cut {
                spec.eval_unchecked(a, b)
            } else {
                0.0
            }
        };
        let rows = chain::build_conductances_with(
            &band,
            spec.truncation,
            lattice,
            quad_order,
            AdjacentPolicy::Literal,
        )?;
        let nu = lattice.site_mass();
        let large_rows = rows.scaled(2.0 * nu);
        let n = lattice.num_sites();
        let cover = lattice.cell_cover();
        let escape: Vec<f64> = match small.mode {
            GeneratorMode::Killed => {
                let per_site: Vec<Result<f64>> = exec::map_indexed(n, |i| {
                    chain::escape_rate_with(
                        &band,
                        spec.dimension,
                        spec.truncation,
                        cut,
                        &lattice.point(i),
                        &cover,
                    )
                });
                per_site.into_iter().collect::<Result<Vec<_>>>()?
            }
            GeneratorMode::ConservativeTruncated => vec![0.0; n],
        };
        let mut large_offsets = Vec::with_capacity(n + 1);
        large_offsets.push(0usize);
        let mut len = 0usize;
        for i in 0..n {
            len += large_rows.row(i).0.len() + 1;
            large_offsets.push(len);
        }
        let mut large_prefix = vec![0.0; len];
        let mut large_total = vec![0.0; n];
        let dominating_rate = 2.0 * spec.bounds.kappa3;
        for i in 0..n {
            let (_, vals) = large_rows.row(i);
            let base = large_offsets[i];
            let mut acc = 0.0;
            for (k, v) in vals.iter().enumerate() {
                acc += v;
                large_prefix[base + k] = acc;
            }
            acc += escape[i];
            large_prefix[base + vals.len()] = acc;
            large_total[i] = acc;
            if acc > dominating_rate * (1.0 + 1e-6) {
                return Err(Error::Config(format!(
                    "dominating rate too small: site {i} carries large-jump intensity {acc} \
                     above 2*kappa3 = {dominating_rate}"
                )));
            }
        }
        Ok(Self {
            small: PathEngine::new(small),
            large_rows,
            large_prefix,
            large_offsets,
            large_total,
            dominating_rate,
        })
    }

    pub fn simulate(&self, x0: usize, t_max: f64, rng: &mut ChaCha8Rng) -> PathSample {
        self.run(x0, t_max, None, rng)
    }

    pub fn simulate_in_ball(
        &self,
        x0: usize,
        ball: &Ball,
        t_max: f64,
        rng: &mut ChaCha8Rng,
    ) -> PathSample {
        self.run(x0, t_max, Some(ball), rng)
    }

    fn run(&self, x0: usize, t_max: f64, ball: Option<&Ball>, rng: &mut ChaCha8Rng) -> PathSample {
        let mut sample = PathSample {
            start: x0,
            events: Vec::new(),
            end_time: t_max,
            killed: None,
            exit: None,
            spliced: 0,
        };
        let mut t = 0.0;
        let mut site = x0;
        let lattice = &self.small.gen.lattice;
        loop {
            // Next candidate epoch of the dominating Poisson clock; the
            // small chain is free to run until then (memorylessness lets
            // the unused holding remainder be redrawn).
            let epoch = t + exp_variate(rng, self.dominating_rate);
            let horizon = epoch.min(t_max);
            let mut leg = self.small.run(site, horizon - t, ball, rng);
            for e in &mut leg.events {
                e.time += t;
            }
            sample.events.extend_from_slice(&leg.events);
            site = leg.events.last().map(|e| e.site).unwrap_or(site);
            if let Some(kt) = leg.killed {
                sample.killed = Some(t + kt);
                sample.end_time = t + kt;
                if ball.is_some() {
                    sample.exit = Some(ExitEvent {
                        time: t + kt,
                        site: None,
                    });
                }
                return sample;
            }
            if let Some(mut ex) = leg.exit {
                ex.time += t;
                sample.exit = Some(ex);
                sample.end_time = ex.time;
                return sample;
            }
            if epoch >= t_max {
                return sample;
            }
            t = epoch;
            // Thinning: accept with the ratio of the local large-jump
            // intensity to the dominating rate.
            if rng.random::<f64>() * self.dominating_rate <= self.large_total[site] {
                sample.spliced += 1;
                let span =
                    &self.large_prefix[self.large_offsets[site]..self.large_offsets[site + 1]];
                let z = rng.random::<f64>() * self.large_total[site];
                let k = span.partition_point(|&p| p <= z).min(span.len() - 1);
                let (cols, _) = self.large_rows.row(site);
                if k < cols.len() {
                    site = cols[k] as usize;
                    sample.events.push(PathEvent { time: t, site });
                    if let Some(b) = ball {
                        if b.exited(&lattice.point(site)) {
                            sample.exit = Some(ExitEvent {
                                time: t,
                                site: Some(site),
                            });
                            sample.end_time = t;
                            return sample;
                        }
                    }
                } else {
                    sample.killed = Some(t);
                    sample.end_time = t;
                    if ball.is_some() {
                        sample.exit = Some(ExitEvent {
                            time: t,
                            site: None,
                        });
                    }
                    return sample;
                }
            }
        }
    }
}

/// Convenience one-off splicing simulation.
pub fn simulate_meyer(
    small: &GeneratorMatrix,
    spec: &KernelSpec,
    x0: usize,
    t_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PathSample> {
    MeyerSplicer::new(small, spec, 6).map(|s| s.simulate(x0, t_max, rng))
}

/// A Monte Carlo exit estimate with its binomial error bar.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExitEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
    pub x0: Point,
    pub r: f64,
    pub t: f64,
}

fn check_ball(gen: &GeneratorMatrix, x0: usize, r: f64) -> Result<Ball> {
    if x0 >= gen.num_sites() {
        return Err(Error::Domain(format!("start site {x0} out of range")));
    }
    if !(r > 0.0) {
        return Err(Error::Domain(format!(
            "ball radius must be positive, got {r}"
        )));
    }
    let center = gen.lattice.point(x0);
    let margin = gen.lattice.bbox.margin(&center);
    if margin < r * 1.05 {
        return Err(Error::Config(format!(
            "ball of radius {r} around {:?} is not inside the lattice box (margin {margin})",
            center.coords()
        )));
    }
    Ok(Ball { center, radius: r })
}

/// Exit probabilities over a grid of horizons from one coupled batch of
/// paths — the estimates are nondecreasing in t by construction.
pub fn exit_prob_grid(
    gen: &GeneratorMatrix,
    x0: usize,
    r: f64,
    ts: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ExitEstimate>> {
    if n_paths < 100 {
        return Err(Error::Config(format!(
            "need at least 100 paths, got {n_paths}"
        )));
    }
    if ts.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Domain("horizons must be nonnegative".into()));
    }
    let ball = check_ball(gen, x0, r)?;
    let t_max = ts.iter().cloned().fold(0.0f64, f64::max);
    let engine = PathEngine::new(gen);
    let exit_times: Vec<f64> = exec::map_indexed(n_paths, |p| {
        let mut rng = path_rng(seed, p as u64);
        let path = engine.simulate_in_ball(x0, &ball, t_max, &mut rng);
        path.exit.map(|e| e.time).unwrap_or(f64::INFINITY)
    });
    Ok(ts
        .iter()
        .map(|&t| {
            let hits = exit_times.iter().filter(|&&tau| tau < t).count();
            let p = hits as f64 / n_paths as f64;
            ExitEstimate {
                probability: p,
                stderr: stats::binomial_stderr(p, n_paths),
                samples: n_paths,
                seed,
                x0: ball.center,
                r,
                t,
            }
        })
        .collect())
}

/// Binomial estimate of the probability of leaving B(x0, r) before t.
pub fn estimate_exit_prob(
    gen: &GeneratorMatrix,
    x0: usize,
    r: f64,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ExitEstimate> {
    Ok(exit_prob_grid(gen, x0, r, &[t], n_paths, seed)?.remove(0))
}

/// Mean exit time with censoring bookkeeping.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanExitEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub censored: usize,
    /// Set when more than 1% of the paths hit the time cap; the mean is
    /// then only a lower bound.
    pub flagged: bool,
    pub seed: u64,
    pub x0: Point,
    pub r: f64,
    pub t_cap: f64,
}

pub fn estimate_mean_exit(
    gen: &GeneratorMatrix,
    x0: usize,
    r: f64,
    n_paths: usize,
    seed: u64,
    t_cap: f64,
) -> Result<MeanExitEstimate> {
    if n_paths < 100 {
        return Err(Error::Config(format!(
            "need at least 100 paths, got {n_paths}"
        )));
    }
    if !(t_cap > 0.0) {
        return Err(Error::Domain(format!(
            "time cap must be positive, got {t_cap}"
        )));
    }
    let ball = check_ball(gen, x0, r)?;
    let engine = PathEngine::new(gen);
    let taus: Vec<(f64, bool)> = exec::map_indexed(n_paths, |p| {
        let mut rng = path_rng(seed, p as u64);
        let path = engine.simulate_in_ball(x0, &ball, t_cap, &mut rng);
        match path.exit {
            Some(e) => (e.time, false),
            None => (t_cap, true),
        }
    });
    let censored = taus.iter().filter(|(_, c)| *c).count();
    let values: Vec<f64> = taus.iter().map(|(t, _)| *t).collect();
    let MeanStderr { mean, stderr, .. } = stats::mean_stderr(&values);
    Ok(MeanExitEstimate {
        mean,
        stderr,
        samples: n_paths,
        censored,
        flagged: censored as f64 > 0.01 * n_paths as f64,
        seed,
        x0: ball.center,
        r,
        t_cap,
    })
}

/// Two Monte Carlo estimators of the same jump functional: the sum of
/// f(X_{s-}, X_s) over jumps up to T versus the time integral of
/// Σ_y f(X_s, y) q(X_s, y); their means agree for the chain by the exact
/// compensation identity.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct JumpIdentityReport {
    pub jump_sum_mean: f64,
    pub jump_sum_stderr: f64,
    pub integral_mean: f64,
    pub integral_stderr: f64,
    /// Mean and stderr of the per-path difference (common random numbers).
    pub diff_mean: f64,
    pub diff_stderr: f64,
    pub samples: usize,
    pub pass: bool,
}

pub fn levy_system_check<F>(
    gen: &GeneratorMatrix,
    f: F,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<JumpIdentityReport>
where
    F: Fn(&Point, &Point) -> f64 + Sync,
{
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let n = gen.num_sites();
    // Compensator rate per site: Σ_y q(x, y) f(x, y), fixed row order.
    let rate_f: Vec<f64> = exec::map_indexed(n, |i| {
        let pi = gen.lattice.point(i);
        let (cols, vals) = gen.rate_row(i);
        let mut acc = 0.0;
        for (j, v) in cols.iter().zip(vals) {
            acc += v * f(&pi, &gen.lattice.point(*j as usize));
        }
        acc
    });
    let engine = PathEngine::new(gen);
    // All paths start from the central site.
    let x0 = n / 2;
    let per_path: Vec<(f64, f64)> = exec::map_indexed(n_paths, |p| {
        let mut rng = path_rng(seed, p as u64);
        let path = engine.simulate(x0, horizon, &mut rng);
        let mut jump_sum = 0.0;
        let mut integral = 0.0;
        let mut site = path.start;
        let mut t_prev = 0.0;
        for e in &path.events {
            jump_sum += f(&gen.lattice.point(site), &gen.lattice.point(e.site));
            integral += (e.time - t_prev) * rate_f[site];
            site = e.site;
            t_prev = e.time;
        }
        integral += (path.end_time - t_prev) * rate_f[site];
        (jump_sum, integral)
    });
    let jumps: Vec<f64> = per_path.iter().map(|(a, _)| *a).collect();
    let ints: Vec<f64> = per_path.iter().map(|(_, b)| *b).collect();
    let diffs: Vec<f64> = per_path.iter().map(|(a, b)| a - b).collect();
    let js = stats::mean_stderr(&jumps);
    let is = stats::mean_stderr(&ints);
    let ds = stats::mean_stderr(&diffs);
    let pass = ds.mean.abs() <= 3.0 * ds.stderr || ds.mean.abs() == 0.0;
    Ok(JumpIdentityReport {
        jump_sum_mean: js.mean,
        jump_sum_stderr: js.stderr,
        integral_mean: is.mean,
        integral_stderr: is.stderr,
        diff_mean: ds.mean,
        diff_stderr: ds.stderr,
        samples: n_paths,
        pass,
    })
}
