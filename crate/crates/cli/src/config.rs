//! Scenario configuration: one TOML file declares the kernel (or kernel
//! sequence), the lattice, and per-experiment parameter tables.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use jumplab_core::chain::{AdjacentPolicy, GeneratorMode};
use jumplab_core::convergence::KernelSequenceSpec;
use jumplab_core::kernels::{KernelSpec, OrderField, OrderFieldKind, TabulatedKernel};
use jumplab_core::point::Point;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub kernel: KernelConfig,
    pub sequence: Option<SequenceConfig>,
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub experiments: ExperimentTables,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: String,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub alpha: Option<f64>,
    pub kappa: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub order: Option<OrderConfig>,
    pub amplitude: Option<f64>,
    pub frequency: Option<f64>,
    pub base: Option<Box<KernelConfig>>,
    pub path: Option<PathBuf>,
    pub truncation: Option<f64>,
    pub bounds: Option<BoundsOverride>,
}

fn default_dimension() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderConfig {
    pub kind: String,
    pub value: Option<f64>,
    pub base: Option<f64>,
    pub amplitude: Option<f64>,
    pub frequency: Option<f64>,
    pub epsilon: f64,
    pub log_lip_c: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsOverride {
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub kappa3: Option<f64>,
    pub kappa4: Option<f64>,
    pub alpha: Option<f64>,
    pub kappa5: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub amplitude: f64,
    pub omegas: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub n: usize,
    /// Per-axis bounds [lo, hi], applied to every axis.
    #[serde(rename = "box")]
    pub bounds: [f64; 2],
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentTables {
    #[serde(rename = "kernel-verify")]
    pub kernel_verify: Option<KernelVerifyConfig>,
    pub functionals: Option<FunctionalsConfig>,
    #[serde(rename = "chain-build")]
    pub chain_build: Option<ChainBuildConfig>,
    #[serde(rename = "exit-mc")]
    pub exit_mc: Option<ExitMcConfig>,
    #[serde(rename = "mean-exit-mc")]
    pub mean_exit_mc: Option<MeanExitMcConfig>,
    #[serde(rename = "levy-check")]
    pub levy_check: Option<LevyCheckConfig>,
    #[serde(rename = "heat-kernel")]
    pub heat_kernel: Option<HeatKernelConfig>,
    #[serde(rename = "resolvent-check")]
    pub resolvent_check: Option<ResolventCheckConfig>,
    pub harmonic: Option<HarmonicConfig>,
    pub holder: Option<HolderConfig>,
    #[serde(rename = "uic-check")]
    pub uic_check: Option<UicCheckConfig>,
    #[serde(rename = "weak-probe")]
    pub weak_probe: Option<WeakProbeConfig>,
    pub converge: Option<ConvergeConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelVerifyConfig {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_random_pairs")]
    pub random_pairs: usize,
    #[serde(default = "default_delta_levels")]
    pub delta_levels: usize,
}

fn default_grid_points() -> usize {
    64
}
fn default_random_pairs() -> usize {
    128
}
fn default_delta_levels() -> usize {
    6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalsConfig {
    pub z0: Vec<f64>,
    pub r_grid: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    10.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainBuildConfig {
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    pub mode: String,
    pub adjacent_policy: String,
}

pub fn default_quad_order() -> usize {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitMcConfig {
    pub x0: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub paths: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    /// Dump the first k full trajectories as (path, time, site) rows.
    pub dump_paths: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanExitMcConfig {
    pub x0: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub paths: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
}

fn default_slope_tolerance() -> f64 {
    0.15
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyCheckConfig {
    pub horizon: f64,
    pub paths: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatKernelConfig {
    pub t: f64,
    pub slice_y: Vec<f64>,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventCheckConfig {
    pub lambda: f64,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicConfig {
    pub center: Vec<f64>,
    pub radius: f64,
    /// "sign" (sign of the first coordinate) or "constant".
    pub boundary: String,
    #[serde(default = "default_martingale_paths")]
    pub martingale_paths: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_martingale_paths() -> usize {
    10_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderConfig {
    /// "harmonic", "heat-kernel", or "resolvent".
    pub target: String,
    pub center: Vec<f64>,
    pub radius: f64,
    pub t: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UicCheckConfig {
    /// eta = 2^{-k} for k = 0..=levels.
    pub eta_levels: u32,
    pub x_samples: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakProbeConfig {
    pub eta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub t: f64,
    pub lambda: f64,
    pub compact: [f64; 2],
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    /// Also run at half resolution and require < 25% movement per entry.
    #[serde(default)]
    pub refine_check: bool,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: ScenarioConfig = toml::from_str(&text)?;
        Ok(cfg)
    }

    /// Build the kernel spec, resolving relative tabulated paths against
    /// the config file directory.
    pub fn build_kernel(&self, config_dir: &Path) -> anyhow::Result<KernelSpec> {
        build_kernel(&self.kernel, config_dir)
    }

    pub fn build_sequence(&self, config_dir: &Path) -> anyhow::Result<KernelSequenceSpec> {
        let seq = self
            .sequence
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("this experiment needs a [sequence] table"))?;
        let limit = self.build_kernel(config_dir)?;
        Ok(KernelSequenceSpec::oscillatory(
            limit,
            seq.amplitude,
            seq.omegas.clone(),
        )?)
    }
}

fn build_kernel(cfg: &KernelConfig, config_dir: &Path) -> anyhow::Result<KernelSpec> {
    let mut spec = match cfg.family.as_str() {
        "isotropic-stable" => {
            let alpha = cfg
                .alpha
                .ok_or_else(|| anyhow::anyhow!("isotropic-stable needs `alpha`"))?;
            let kappa = cfg.kappa.unwrap_or(1.0);
            KernelSpec::isotropic_stable(cfg.dimension, alpha, kappa)?
        }
        "variable-order" => {
            let order = cfg
                .order
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("variable-order needs [kernel.order]"))?;
            let kind = match order.kind.as_str() {
                "constant" => OrderFieldKind::Constant(
                    order
                        .value
                        .ok_or_else(|| anyhow::anyhow!("constant order needs `value`"))?,
                ),
                "sinusoid" => OrderFieldKind::Sinusoid {
                    base: order
                        .base
                        .ok_or_else(|| anyhow::anyhow!("sinusoid order needs `base`"))?,
                    amplitude: order.amplitude.unwrap_or(0.0),
                    frequency: order.frequency.unwrap_or(1.0),
                },
                other => anyhow::bail!("unknown order kind `{other}`"),
            };
            let field = OrderField::new(kind, order.epsilon, order.log_lip_c)?;
            let c1 = cfg
                .c1
                .ok_or_else(|| anyhow::anyhow!("variable-order needs `c1`"))?;
            let c2 = cfg
                .c2
                .ok_or_else(|| anyhow::anyhow!("variable-order needs `c2`"))?;
            KernelSpec::variable_order(cfg.dimension, field, c1, c2)?
        }
        "modulated" => {
            let base = cfg
                .base
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("modulated needs [kernel.base]"))?;
            let base = build_kernel(base, config_dir)?;
            KernelSpec::modulated(
                base,
                cfg.amplitude
                    .ok_or_else(|| anyhow::anyhow!("modulated needs `amplitude`"))?,
                cfg.frequency
                    .ok_or_else(|| anyhow::anyhow!("modulated needs `frequency`"))?,
            )?
        }
        "tabulated" => {
            let path = cfg
                .path
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("tabulated needs `path`"))?;
            let full = if path.is_absolute() {
                path.clone()
            } else {
                config_dir.join(path)
            };
            let text = std::fs::read_to_string(&full)
                .map_err(|e| anyhow::anyhow!("cannot read kernel table {}: {e}", full.display()))?;
            let table = TabulatedKernel::from_csv_str(&text)?;
            let b = cfg.bounds.as_ref().ok_or_else(|| {
                anyhow::anyhow!("tabulated kernels need explicit [kernel.bounds]")
            })?;
            let bounds = jumplab_core::kernels::KernelBounds {
                kappa1: b
                    .kappa1
                    .ok_or_else(|| anyhow::anyhow!("tabulated bounds need kappa1"))?,
                kappa2: b
                    .kappa2
                    .ok_or_else(|| anyhow::anyhow!("tabulated bounds need kappa2"))?,
                beta1: b
                    .beta1
                    .ok_or_else(|| anyhow::anyhow!("tabulated bounds need beta1"))?,
                beta2: b
                    .beta2
                    .ok_or_else(|| anyhow::anyhow!("tabulated bounds need beta2"))?,
                kappa3: b
                    .kappa3
                    .ok_or_else(|| anyhow::anyhow!("tabulated bounds need kappa3"))?,
                kappa4: b
                    .kappa4
                    .ok_or_else(|| anyhow::anyhow!("tabulated bounds need kappa4"))?,
                alpha: b
                    .alpha
                    .ok_or_else(|| anyhow::anyhow!("tabulated bounds need alpha"))?,
                kappa5: b.kappa5,
            };
            KernelSpec::tabulated(table, bounds)?
        }
        other => anyhow::bail!("unknown kernel family `{other}`"),
    };
    if let Some(t) = cfg.truncation {
        spec = spec.with_truncation(t)?;
    }
    if cfg.family != "tabulated" {
        if let Some(b) = &cfg.bounds {
            if let Some(v) = b.kappa1 {
                spec.bounds.kappa1 = v;
            }
            if let Some(v) = b.kappa2 {
                spec.bounds.kappa2 = v;
            }
            if let Some(v) = b.beta1 {
                spec.bounds.beta1 = v;
            }
            if let Some(v) = b.beta2 {
                spec.bounds.beta2 = v;
            }
            if let Some(v) = b.kappa3 {
                spec.bounds.kappa3 = v;
            }
            if let Some(v) = b.kappa4 {
                spec.bounds.kappa4 = v;
            }
            if let Some(v) = b.alpha {
                spec.bounds.alpha = v;
            }
            if let Some(v) = b.kappa5 {
                spec.bounds.kappa5 = Some(v);
            }
            spec.bounds.validate()?;
        }
    }
    Ok(spec)
}

pub fn parse_point(coords: &[f64]) -> anyhow::Result<Point> {
    Ok(Point::from_slice(coords)?)
}

pub fn parse_mode(s: &str) -> anyhow::Result<GeneratorMode> {
    match s {
        "killed" => Ok(GeneratorMode::Killed),
        "conservative-truncated" => Ok(GeneratorMode::ConservativeTruncated),
        other => {
            anyhow::bail!("unknown generator mode `{other}` (killed | conservative-truncated)")
        }
    }
}

pub fn parse_policy(s: &str) -> anyhow::Result<AdjacentPolicy> {
    match s {
        "literal" => Ok(AdjacentPolicy::Literal),
        "moment-matched" => Ok(AdjacentPolicy::MomentMatched),
        other => anyhow::bail!("unknown adjacent policy `{other}` (literal | moment-matched)"),
    }
}
