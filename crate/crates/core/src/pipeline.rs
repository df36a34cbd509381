//! End-to-end construction: from a Gaussian source to one coupling network
//! approximating the reversed Langevin flow map `T_{φ,0}`.
//!
//! The source `N(μ, Σ_x)` is padded with standard velocities, its Gaussian
//! Langevin path is available in closed form, and the interval `[0, φ]` is cut
//! into chunks processed from `φ` downward. Each chunk freezes the Hamiltonian
//! `ln p_t − ln p*` at one time in the chunk (the midpoint by default), solves
//! the Hénon coefficient systems and discretizes the time-2π map into
//! alternating Euler coupling blocks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{
    discretize, network_conditioning, network_pushforward, CouplingBlock, CouplingNetwork,
    Direction, NetworkConditioning, SINGULAR_SCALE,
};
use crate::error::{Error, Result};
use crate::henon::{solve_coefficients, HenonConfig};
use crate::langevin::{
    check_precision_sandwich, conditioning_bounds, gaussian_evolve, lyapunov_gaussian,
    particle_rng, spd_inverse, sym_eigenvalues, validate_gamma, GaussianDensity,
    GaussianPathField,
};
use crate::metrics::{marginal_w1, sample_gaussian, sliced_w1, SampleCloud};
use crate::multipoly::{MultiIndex, Polynomial};
use crate::odeflow::{ball_grid, flow_distance, integrate, FlowDistance, FlowProbe};

fn default_probe_grid() -> usize {
    21
}
fn default_probe_radius() -> f64 {
    2.0
}
fn default_reference_steps() -> usize {
    2000
}
fn default_w1_samples() -> usize {
    10_000
}
fn default_w1_directions() -> usize {
    64
}

/// Time inside a chunk at which the Hamiltonian is frozen.
///
/// Freezing at an endpoint costs `O(τ²)` per chunk, i.e. first order overall;
/// the midpoint is a one-point quadrature of second order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreezePoint {
    Upper,
    #[default]
    Midpoint,
    Lower,
}

impl FreezePoint {
    fn offset(self) -> f64 {
        match self {
            FreezePoint::Upper => 0.0,
            FreezePoint::Midpoint => 0.5,
            FreezePoint::Lower => 1.0,
        }
    }
}

/// Inputs of [`build_network`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    /// Position dimension; the network acts on `R^{2d}`.
    pub d: usize,
    /// Source covariance `Σ_x` (rows), with `I ⪯ Σ_x⁻¹ ⪯ κ I`.
    pub sigma_x: Vec<Vec<f64>>,
    /// Source mean; zero when omitted.
    #[serde(default)]
    pub mu_x: Option<Vec<f64>>,
    /// Friction, `0 < γ < 2`.
    pub gamma: f64,
    /// Target Wasserstein accuracy.
    pub epsilon: f64,
    /// Chunk length (shortened so that it divides `φ`).
    pub tau: f64,
    /// Euler step; `τ²` when omitted (shortened so that it divides `2π`).
    #[serde(default)]
    pub eta: Option<f64>,
    /// Truncation radius; chosen from the Gaussian tail when omitted.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Horizon; chosen from the accuracy target when omitted.
    #[serde(default)]
    pub phi: Option<f64>,
    #[serde(default)]
    pub freeze: FreezePoint,
    #[serde(default)]
    pub seed: u64,
    /// Points per axis of the probe lattice.
    #[serde(default = "default_probe_grid")]
    pub probe_grid: usize,
    /// Probes are the lattice points inside `B(0, probe_radius)`.
    #[serde(default = "default_probe_radius")]
    pub probe_radius: f64,
    /// RK4 steps of the reference flow over `[0, φ]`.
    #[serde(default = "default_reference_steps")]
    pub reference_steps: usize,
    /// Samples for the Wasserstein estimate in the report (0 skips it).
    #[serde(default = "default_w1_samples")]
    pub w1_samples: usize,
    #[serde(default = "default_w1_directions")]
    pub w1_directions: usize,
}

impl BuildConfig {
    /// A configuration with defaults for everything but the essentials.
    pub fn new(sigma_x: DMatrix<f64>, gamma: f64, epsilon: f64, tau: f64) -> Self {
        let d = sigma_x.nrows();
        BuildConfig {
            d,
            sigma_x: (0..d).map(|i| sigma_x.row(i).iter().copied().collect()).collect(),
            mu_x: None,
            gamma,
            epsilon,
            tau,
            eta: None,
            radius: None,
            phi: None,
            freeze: FreezePoint::default(),
            seed: 0,
            probe_grid: default_probe_grid(),
            probe_radius: default_probe_radius(),
            reference_steps: default_reference_steps(),
            w1_samples: default_w1_samples(),
            w1_directions: default_w1_directions(),
        }
    }

    fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        if self.d == 0 {
            return Err(Error::Parameter("d must be at least 1".into()));
        }
        if self.sigma_x.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: self.sigma_x.len(),
            });
        }
        for row in &self.sigma_x {
            if row.len() != self.d {
                return Err(Error::Dimension {
                    expected: self.d,
                    got: row.len(),
                });
            }
        }
        Ok(DMatrix::from_fn(self.d, self.d, |i, j| self.sigma_x[i][j]))
    }

    /// Validate and derive every schedule quantity.
    pub fn plan(&self) -> Result<BuildPlan> {
        validate_gamma(self.gamma)?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("tau", self.tau)?;
        positive("probe_radius", self.probe_radius)?;
        for (name, v) in [("eta", self.eta), ("radius", self.radius), ("phi", self.phi)] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        if self.probe_grid < 2 {
            return Err(Error::Parameter("probe_grid must be at least 2".into()));
        }
        if self.reference_steps == 0 {
            return Err(Error::Parameter("reference_steps must be at least 1".into()));
        }
        let sigma_x = self.sigma_matrix()?;
        let mu_x = match &self.mu_x {
            Some(m) if m.len() != self.d => {
                return Err(Error::Dimension {
                    expected: self.d,
                    got: m.len(),
                })
            }
            Some(m) => DVector::from_column_slice(m),
            None => DVector::zeros(self.d),
        };
        GaussianDensity::new(mu_x.clone(), sigma_x.clone())?;
        let kappa = sym_eigenvalues(&spd_inverse(&sigma_x)?).max();
        check_precision_sandwich(&sigma_x, kappa)?;

        let source = pad_source(&mu_x, &sigma_x)?;
        let lipschitz_bound = conditioning_bounds(kappa, self.gamma).1;
        let epsilon1 = self.epsilon / (2.0 * lipschitz_bound + 1.0);
        let lyapunov0 = lyapunov_gaussian(&source)?;
        let (phi, phi_floored) = match self.phi {
            Some(phi) => (phi, false),
            None => {
                let phi = choose_time(epsilon1, lyapunov0)?;
                (phi, phi <= 1.0)
            }
        };
        let radius = match self.radius {
            Some(r) => r,
            None => choose_radius(epsilon1, 2 * self.d)?,
        };
        let chunks = ceil_ratio(phi, self.tau);
        let eta = self.eta.unwrap_or(self.tau * self.tau);
        let steps_per_chunk = ceil_ratio(2.0 * PI, eta);
        Ok(BuildPlan {
            freeze: self.freeze,
            source,
            kappa,
            lipschitz_bound,
            epsilon1,
            lyapunov0,
            phi,
            phi_floored,
            radius,
            chunks,
            tau_eff: phi / chunks as f64,
            steps_per_chunk,
            eta_eff: 2.0 * PI / steps_per_chunk as f64,
        })
    }
}

/// `⌈a / b⌉`, ignoring round-off just above an integer.
fn ceil_ratio(a: f64, b: f64) -> usize {
    ((a / b) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

fn pad_source(mu_x: &DVector<f64>, sigma_x: &DMatrix<f64>) -> Result<GaussianDensity> {
    let d = mu_x.len();
    let mut mean = DVector::zeros(2 * d);
    mean.rows_mut(0, d).copy_from(mu_x);
    let mut cov = DMatrix::identity(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(sigma_x);
    GaussianDensity::new(mean, cov)
}

/// Quantities derived from a [`BuildConfig`].
#[derive(Clone, Debug, Serialize)]
pub struct BuildPlan {
    /// Padded source `N((μ_x, 0), diag(Σ_x, I))`.
    #[serde(skip)]
    pub source: GaussianDensity,
    pub freeze: FreezePoint,
    pub kappa: f64,
    /// Upper bound on the Lipschitz constant of the flow map.
    pub lipschitz_bound: f64,
    pub epsilon1: f64,
    /// Lyapunov functional of the padded source.
    pub lyapunov0: f64,
    pub phi: f64,
    /// Set when the horizon fell back to its floor of 1.
    pub phi_floored: bool,
    pub radius: f64,
    pub chunks: usize,
    pub tau_eff: f64,
    pub steps_per_chunk: usize,
    pub eta_eff: f64,
}

impl BuildPlan {
    pub fn block_count(&self) -> usize {
        2 * self.chunks * self.steps_per_chunk
    }
}

/// Horizon `φ = −10 ln ε₁ + ln 2 + ln L₀`, floored at 1.
///
/// `L₀ = 0` means the source is already stationary, and the floor is returned.
pub fn choose_time(epsilon1: f64, l0: f64) -> Result<f64> {
    if !(epsilon1 > 0.0 && epsilon1 < 1.0) {
        return Err(Error::Parameter(format!("epsilon1 must lie in (0, 1), got {epsilon1}")));
    }
    if !(l0 >= 0.0 && l0.is_finite()) {
        return Err(Error::Parameter(format!("Lyapunov value must be nonnegative, got {l0}")));
    }
    if l0 == 0.0 {
        return Ok(1.0);
    }
    Ok((-10.0 * epsilon1.ln() + 2f64.ln() + l0.ln()).max(1.0))
}

/// `ln Γ(k/2)` for a positive integer `k`, via `Γ(½) = √π`, `Γ(1) = 1`.
fn ln_gamma_half(k: usize) -> f64 {
    let mut x = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    let mut acc = if k.is_multiple_of(2) { 0.0 } else { 0.5 * PI.ln() };
    while x < k as f64 / 2.0 - 1e-9 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// `E[‖z‖ 1{‖z‖ > R}]` for `z ~ N(0, I_dim)`, by Simpson quadrature of the chi density.
pub fn gaussian_tail_moment(r: f64, dim: usize) -> f64 {
    assert!(dim >= 1, "dimension must be positive");
    let k = dim as f64;
    let ln_norm = (k / 2.0 - 1.0) * 2f64.ln() + ln_gamma_half(dim);
    let integrand = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (k * s.ln() - 0.5 * s * s - ln_norm).exp()
        }
    };
    let lo = r.max(0.0);
    let hi = lo.max(k.sqrt()) + 15.0;
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let mut sum = integrand(lo) + integrand(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(lo + h * i as f64);
    }
    sum * h / 3.0
}

/// Grid `R_k = R_MIN · RADIUS_GROWTH^k` searched by [`choose_radius`].
pub const RADIUS_MIN: f64 = 0.5;
pub const RADIUS_GROWTH: f64 = 1.05;
const RADIUS_GRID: usize = 400;

/// Smallest grid radius with `2 E[‖z‖ 1{‖z‖ > R}] < δ` for the standard Gaussian on `R^dim`.
pub fn choose_radius(delta: f64, dim: usize) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    if dim == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    let mut r = RADIUS_MIN;
    for _ in 0..RADIUS_GRID {
        if 2.0 * gaussian_tail_moment(r, dim) < delta {
            return Ok(r);
        }
        r *= RADIUS_GROWTH;
    }
    Ok(r)
}

/// `H(z) = −½(z − μ)ᵀ Σ⁻¹ (z − μ) + ½‖z‖²`, without the constant term.
pub fn chunk_hamiltonian(p: &GaussianDensity) -> Result<Polynomial> {
    let n = p.dim();
    let prec = spd_inverse(&p.cov)?;
    let lin = &prec * &p.mean;
    let mut terms = Vec::new();
    for i in 0..n {
        let mut e = vec![0; n];
        e[i] = 2;
        terms.push((MultiIndex::new(e), 0.5 * (1.0 - prec[(i, i)])));
        for j in i + 1..n {
            let mut e = vec![0; n];
            e[i] = 1;
            e[j] = 1;
            terms.push((MultiIndex::new(e), -prec[(i, j)]));
        }
        terms.push((MultiIndex::unit(n, i), lin[i]));
    }
    Ok(Polynomial::from_terms(n, terms))
}

/// `z ↦ A z + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(z) + &self.offset)
            .iter()
            .copied()
            .collect()
    }
}

/// Flow map of the Gaussian Langevin path started at `p0`, from `t0` to `t1`.
///
/// The field is affine in the state, so the map is recovered exactly from the
/// RK4 images of the origin and the unit vectors.
pub fn reference_flow(
    p0: &GaussianDensity,
    gamma: f64,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<AffineMap> {
    let n = p0.dim();
    let field = GaussianPathField {
        p0: p0.clone(),
        gamma,
    };
    let images: Vec<Vec<f64>> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let mut z = vec![0.0; n];
            if i < n {
                z[i] = 1.0;
            }
            integrate(&field, &z, t0, t1, steps)
        })
        .collect::<Result<_>>()?;
    let offset = DVector::from_column_slice(&images[n]);
    let matrix = DMatrix::from_fn(n, n, |r, c| images[c][r] - offset[r]);
    Ok(AffineMap { matrix, offset })
}

/// Blocks for one chunk whose upper endpoint is `t_upper`.
fn chunk_blocks(plan: &BuildPlan, gamma: f64, t_upper: f64) -> Result<(Vec<CouplingBlock>, f64)> {
    let t_freeze = t_upper - plan.freeze.offset() * plan.tau_eff;
    let p = gaussian_evolve(&plan.source, gamma, t_freeze)?;
    let h = chunk_hamiltonian(&p)?;
    let degree = h.degree().max(2) - 1;
    let cfg = HenonConfig {
        degree,
        gamma,
        tau: plan.tau_eff,
        forward: false,
    };
    let sys = solve_coefficients(&h, &cfg)?;
    let blocks = discretize(&sys, plan.eta_eff, plan.steps_per_chunk)?;
    Ok((blocks, sys.max_residual()))
}

/// Sampled Wasserstein comparison between the pushed truncated Gaussian and the source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W1Report {
    pub n_samples: usize,
    pub radius: f64,
    /// Fraction of standard-Gaussian draws that landed in `B(0, R)`.
    pub acceptance_rate: f64,
    /// Exact 1D distance per coordinate `(x_1..x_d, v_1..v_d)`.
    pub marginal: Vec<f64>,
    pub sliced: f64,
    pub n_directions: usize,
}

/// Stream offset separating source draws from Gaussian draws under one seed.
const SOURCE_STREAM_OFFSET: u64 = 1 << 40;

/// `n` draws of `N(0, I_dim)` conditioned on `B(0, radius)`; draw `i` uses stream `i`.
pub fn truncated_gaussian(dim: usize, radius: f64, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, f64)> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
    }
    let draws: Vec<(Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(seed, i as u64);
            for attempt in 1..=1_000_000usize {
                let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                if z.iter().map(|x| x * x).sum::<f64>() <= radius * radius {
                    return Ok((z, attempt));
                }
            }
            Err(Error::Parameter(format!("radius {radius} rejects almost every draw")))
        })
        .collect::<Result<_>>()?;
    let attempts: usize = draws.iter().map(|d| d.1).sum();
    let points = draws.into_iter().map(|d| d.0).collect();
    Ok((points, n as f64 / attempts.max(1) as f64))
}

/// Push `n_samples` truncated standard-Gaussian draws through `net` and compare
/// with direct draws of the padded source.
pub fn evaluate_w1(net: &CouplingNetwork, cfg: &BuildConfig, n_samples: usize, seed: u64) -> Result<W1Report> {
    let plan = cfg.plan()?;
    evaluate_w1_with(net, &plan.source, plan.radius, n_samples, cfg.w1_directions, seed)
}

pub fn evaluate_w1_with(
    net: &CouplingNetwork,
    source: &GaussianDensity,
    radius: f64,
    n_samples: usize,
    n_directions: usize,
    seed: u64,
) -> Result<W1Report> {
    sample_and_compare(net, source, radius, n_samples, n_directions, seed).map(|(_, r)| r)
}

/// Like [`evaluate_w1_with`], also returning the pushed samples.
pub fn sample_and_compare(
    net: &CouplingNetwork,
    source: &GaussianDensity,
    radius: f64,
    n_samples: usize,
    n_directions: usize,
    seed: u64,
) -> Result<(SampleCloud, W1Report)> {
    if n_samples < 2 {
        return Err(Error::Parameter(format!("need at least 2 samples, got {n_samples}")));
    }
    if net.dim != source.dim() {
        return Err(Error::Dimension {
            expected: source.dim(),
            got: net.dim,
        });
    }
    let (latent, acceptance_rate) = truncated_gaussian(net.dim, radius, n_samples, seed)?;
    let pushed = SampleCloud::new(network_pushforward(net, &latent, Direction::Forward)?, Some(seed))?;
    let target = sample_gaussian(source, n_samples, seed, SOURCE_STREAM_OFFSET)?;
    let report = W1Report {
        n_samples,
        radius,
        acceptance_rate,
        marginal: marginal_w1(&pushed, &target)?,
        sliced: sliced_w1(&pushed, &target, n_directions, seed)?,
        n_directions,
    };
    Ok((pushed, report))
}

/// Network Jacobian spread on the probes next to the theoretical condition bound.
#[derive(Clone, Debug, Serialize)]
pub struct ConditioningSummary {
    #[serde(flatten)]
    pub observed: NetworkConditioning,
    /// `(1 + ((2+γ)/(2−γ))(κ−1))^{4/γ}`
    pub bound: f64,
    pub min_abs_scale: f64,
}

/// Everything measured while building.
#[derive(Clone, Debug, Serialize)]
pub struct BuildReport {
    #[serde(flatten)]
    pub plan: BuildPlan,
    pub blocks: usize,
    pub max_henon_residual: f64,
    pub probes: usize,
    /// Network vs reference flow `T_{φ,0}` on the probes.
    pub flow_error: FlowDistance,
    /// `max ‖f⁻¹(f(z)) − z‖` on the probes.
    pub round_trip: f64,
    pub conditioning: ConditioningSummary,
    pub w1: Option<W1Report>,
}

/// Network, report and the probe data behind the flow error.
#[derive(Clone, Debug)]
pub struct BuildArtifacts {
    pub network: CouplingNetwork,
    pub report: BuildReport,
    pub network_probe: FlowProbe,
    pub reference_probe: FlowProbe,
    pub reference: AffineMap,
}

/// Build the network approximating `T_{φ,0}` and measure it.
pub fn build_network(cfg: &BuildConfig) -> Result<(CouplingNetwork, BuildReport)> {
    let a = build(cfg)?;
    Ok((a.network, a.report))
}

pub fn build(cfg: &BuildConfig) -> Result<BuildArtifacts> {
    let plan = cfg.plan()?;
    let n = 2 * cfg.d;

    let per_chunk: Vec<(Vec<CouplingBlock>, f64)> = (0..plan.chunks)
        .into_par_iter()
        .map(|c| {
            let t_upper = plan.phi - c as f64 * plan.tau_eff;
            chunk_blocks(&plan, cfg.gamma, t_upper).map_err(|e| Error::Chunk {
                chunk: c,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let max_henon_residual = per_chunk.iter().fold(0.0, |m: f64, c| m.max(c.1));
    let blocks: Vec<CouplingBlock> = per_chunk.into_iter().flat_map(|c| c.0).collect();
    let mut network = CouplingNetwork::new(n, blocks)?;
    network.domain = Some(plan.radius);

    let probes = ball_grid(cfg.probe_radius, cfg.probe_grid, n);
    let min_abs_scale = network.min_abs_scale(&probes)?;
    if min_abs_scale < SINGULAR_SCALE {
        return Err(Error::Precondition(format!(
            "network has a scale of magnitude {min_abs_scale:e} on the probes"
        )));
    }
    let network_probe = FlowProbe::sample(&probes, |z| {
        let (y, j, _) = network.forward_with_jacobian(z)?;
        Ok((y, j))
    })?;
    let reference = reference_flow(&plan.source, cfg.gamma, plan.phi, 0.0, cfg.reference_steps)?;
    let reference_probe = FlowProbe::sample(&probes, |z| Ok((reference.apply(z), reference.matrix.clone())))?;
    let flow_error = flow_distance(&network_probe, &reference_probe)?;

    let round_trip = network_probe
        .values
        .par_iter()
        .zip(&probes)
        .map(|(y, z)| {
            let back = network.inverse(y)?;
            Ok(back.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let (lo, hi) = conditioning_bounds(plan.kappa, cfg.gamma);
    let conditioning = ConditioningSummary {
        observed: network_conditioning(&network, &probes)?,
        bound: hi / lo,
        min_abs_scale,
    };
    let w1 = if cfg.w1_samples >= 2 {
        Some(evaluate_w1_with(
            &network,
            &plan.source,
            plan.radius,
            cfg.w1_samples,
            cfg.w1_directions,
            cfg.seed,
        )?)
    } else {
        None
    };
    let report = BuildReport {
        blocks: network.len(),
        max_henon_residual,
        probes: probes.len(),
        flow_error,
        round_trip,
        conditioning,
        w1,
        plan,
    };
    Ok(BuildArtifacts {
        network,
        report,
        network_probe,
        reference_probe,
        reference,
    })
}
