//! Verification suites. Each one sweeps a parameter grid and records the measured
//! quantity next to the bound or expected slope it is checked against.

use flowforge_core::henon::{
    approximating_field, solve_coefficients, verify_chunk_order, HenonConfig, HenonSystem,
};
use flowforge_core::langevin::{
    convolution_hessian_check, gaussian_evolve, jacobian_flow, kron_identity, lyapunov_gaussian,
    particle_rng, variance_proxy,
};
use flowforge_core::metrics::{sliced_w1, w1_1d};
use flowforge_core::odeflow::{
    alternating_euler, alternating_euler_with_jacobian, ball_grid, flow_distance,
    integrate_with_jacobian, loglog_slope, perturbation_order_check, FlowProbe, FnField, Joined,
};
use flowforge_core::pipeline::{chunk_hamiltonian, choose_radius, gaussian_tail_moment};
use flowforge_core::{Error, GaussianDensity, Polynomial, Result, SampleCloud};
use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::table::{col, Table};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "suite", rename_all = "kebab-case")]
pub enum Suite {
    Conditioning(ConditioningParams),
    Variance(VarianceParams),
    HenonOrder(HenonOrderParams),
    EulerOrder(EulerOrderParams),
    PerturbationOrder(PerturbationParams),
    Lyapunov(LyapunovParams),
    Convolution(ConvolutionParams),
    Wasserstein(WassersteinParams),
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Conditioning(_) => "conditioning",
            Suite::Variance(_) => "variance",
            Suite::HenonOrder(_) => "henon-order",
            Suite::EulerOrder(_) => "euler-order",
            Suite::PerturbationOrder(_) => "perturbation-order",
            Suite::Lyapunov(_) => "lyapunov",
            Suite::Convolution(_) => "convolution",
            Suite::Wasserstein(_) => "wasserstein",
        }
    }

    pub fn run(&self, seed: u64) -> Result<Table> {
        match self {
            Suite::Conditioning(p) => conditioning(p, seed),
            Suite::Variance(p) => variance(p, seed),
            Suite::HenonOrder(p) => henon_order(p),
            Suite::EulerOrder(p) => euler_order(p),
            Suite::PerturbationOrder(p) => perturbation_order(p),
            Suite::Lyapunov(p) => lyapunov(p),
            Suite::Convolution(p) => convolution(p, seed),
            Suite::Wasserstein(p) => wasserstein(p, seed),
        }
    }
}

// ---------------------------------------------------------------------------
// helpers

fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q()
}

fn random_spd(n: usize, rng: &mut impl Rng, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(n, rng);
    let eig = DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Phase-space covariance `diag(Σ_x, I)`.
fn padded(sigma_x: &DMatrix<f64>) -> DMatrix<f64> {
    let d = sigma_x.nrows();
    let mut c = DMatrix::identity(2 * d, 2 * d);
    c.view_mut((0, 0), (d, d)).copy_from(sigma_x);
    c
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::Dimension { expected: n, got: bad.len() });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn check_range(name: &str, lo: f64, hi: f64) -> Result<()> {
    if lo < hi {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name}: empty range [{lo}, {hi}]")))
    }
}

/// Phase-space Gaussian whose chunk Hamiltonian drives the order studies.
fn gaussian_hamiltonian(mean: &[f64], covariance: &[Vec<f64>]) -> Result<(Polynomial, usize)> {
    if mean.is_empty() || !mean.len().is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "phase-space mean must have even positive length, got {}",
            mean.len()
        )));
    }
    let p = GaussianDensity::new(DVector::from_column_slice(mean), matrix(covariance)?)?;
    Ok((chunk_hamiltonian(&p)?, mean.len() / 2))
}

fn henon_config(h: &Polynomial, gamma: f64, tau: f64) -> HenonConfig {
    HenonConfig { degree: h.degree().max(2) - 1, gamma, tau, forward: false }
}

// ---------------------------------------------------------------------------
// conditioning

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditioningParams {
    pub kappas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Position dimension; source precision eigenvalues are spread evenly over `[1, κ]`.
    pub d: usize,
    pub t_max: f64,
    pub steps: usize,
    pub sample_every: usize,
    pub identity_tolerance: f64,
}

impl Default for ConditioningParams {
    fn default() -> Self {
        ConditioningParams {
            kappas: vec![1.0, 2.0, 4.0],
            gammas: vec![0.5, 1.0, 1.5],
            d: 2,
            t_max: 20.0,
            steps: 4000,
            sample_every: 10,
            identity_tolerance: 1e-10,
        }
    }
}

fn conditioning(p: &ConditioningParams, seed: u64) -> Result<Table> {
    if p.d == 0 {
        return Err(Error::Parameter("d must be at least 1".into()));
    }
    let mut t = Table::new(
        "conditioning",
        vec![
            col("kappa", "source precision bound: I ⪯ Σx⁻¹ ⪯ κI"),
            col("gamma", "friction"),
            col("lower_bound", "theoretical lower bound A on the Jacobian singular values"),
            col("upper_bound", "theoretical upper bound B on the Jacobian singular values"),
            col("observed_min", "smallest singular value over sampled times"),
            col("observed_max", "largest singular value over sampled times"),
            col("condition_bound", "B / A"),
            col("identity_deviation", "max |D_t − I| (asserted only for κ = 1)"),
            col("violations", "sampled times with a singular value outside [A, B]"),
        ],
    );
    let q = random_orthogonal(p.d, &mut particle_rng(seed, 0));
    for &kappa in &p.kappas {
        let eig = DVector::from_fn(p.d, |i, _| {
            if p.d == 1 {
                kappa
            } else {
                1.0 + (kappa - 1.0) * i as f64 / (p.d - 1) as f64
            }
        });
        let sigma_x = &q * DMatrix::from_diagonal(&eig.map(|l| 1.0 / l)) * q.transpose();
        let sigma0 = padded(&((&sigma_x + sigma_x.transpose()) * 0.5));
        for &gamma in &p.gammas {
            let r = jacobian_flow(&sigma0, gamma, kappa, p.t_max, p.steps, p.sample_every)?;
            let identity_ok = kappa != 1.0 || r.max_identity_deviation <= p.identity_tolerance;
            t.push(
                vec![
                    kappa.into(),
                    gamma.into(),
                    r.lower_bound.into(),
                    r.upper_bound.into(),
                    r.observed_min.into(),
                    r.observed_max.into(),
                    r.condition_bound.into(),
                    r.max_identity_deviation.into(),
                    r.violations.into(),
                ],
                r.passed() && identity_ok,
            );
        }
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// variance

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceParams {
    pub gammas: Vec<f64>,
    pub dims: Vec<usize>,
    /// Increasing evaluation times.
    pub times: Vec<f64>,
    /// RK4 step for the covariance ODE.
    pub step: f64,
    pub tolerance: f64,
}

impl Default for VarianceParams {
    fn default() -> Self {
        VarianceParams {
            gammas: vec![0.5, 1.0, 1.5],
            dims: vec![1, 2],
            times: vec![0.5, 1.0, 2.0, 5.0, 10.0],
            step: 1e-3,
            tolerance: 1e-8,
        }
    }
}

/// Advance `Σ̇ = BΣ + ΣBᵀ + diag(0, 2γI)` by `steps` RK4 steps of size `h`.
fn covariance_rk4(s: &mut DMatrix<f64>, gamma: f64, h: f64, steps: usize) {
    let d = s.nrows() / 2;
    let b = kron_identity(&Matrix2::new(0.0, 1.0, -1.0, -gamma), d);
    let mut diffusion = DMatrix::zeros(2 * d, 2 * d);
    for i in d..2 * d {
        diffusion[(i, i)] = 2.0 * gamma;
    }
    let rhs = |s: &DMatrix<f64>| &b * s + s * b.transpose() + &diffusion;
    for _ in 0..steps {
        let k1 = rhs(s);
        let k2 = rhs(&(&*s + &k1 * (0.5 * h)));
        let k3 = rhs(&(&*s + &k2 * (0.5 * h)));
        let k4 = rhs(&(&*s + &k3 * h));
        *s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
}

fn variance(p: &VarianceParams, seed: u64) -> Result<Table> {
    if !(p.step > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {}", p.step)));
    }
    if p.times.windows(2).any(|w| w[1] <= w[0]) || p.times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Parameter("times must be non-negative and increasing".into()));
    }
    let mut table = Table::new(
        "variance",
        vec![
            col("gamma", "friction"),
            col("d", "position dimension"),
            col("t", "time"),
            col("gap", "‖Σ_t closed form − Σ_t integrated‖₂"),
            col("tolerance", "allowed gap"),
        ],
    );
    let mut rng = particle_rng(seed, 1);
    for &gamma in &p.gammas {
        for &d in &p.dims {
            let sigma0 = random_spd(2 * d, &mut rng, 0.2, 3.0);
            let mut s = sigma0.clone();
            let mut now = 0.0;
            for &t in &p.times {
                covariance_rk4(&mut s, gamma, p.step, ((t - now) / p.step).round() as usize);
                now = t;
                let closed = variance_proxy(&sigma0, gamma, t)?;
                let gap = (&closed - &s).svd(false, false).singular_values.max();
                table.push(
                    vec![gamma.into(), d.into(), t.into(), gap.into(), p.tolerance.into()],
                    gap <= p.tolerance,
                );
            }
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// order studies

fn default_mean() -> Vec<f64> {
    vec![0.3, -0.1]
}

fn default_covariance() -> Vec<Vec<f64>> {
    vec![vec![0.5, 0.1], vec![0.1, 0.9]]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HenonOrderParams {
    pub gamma: f64,
    /// Phase-space Gaussian defining the quadratic chunk Hamiltonian.
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub taus: Vec<f64>,
    pub radius: f64,
    pub grid: usize,
    pub steps: usize,
    pub slope_min: f64,
    pub slope_max: f64,
}

impl Default for HenonOrderParams {
    fn default() -> Self {
        HenonOrderParams {
            gamma: 1.0,
            mean: default_mean(),
            covariance: default_covariance(),
            taus: vec![0.2, 0.1, 0.05, 0.025],
            radius: 2.0,
            grid: 11,
            steps: 800,
            slope_min: 1.8,
            slope_max: 2.2,
        }
    }
}

fn henon_order(p: &HenonOrderParams) -> Result<Table> {
    check_range("slope", p.slope_min, p.slope_max)?;
    let (h, d) = gaussian_hamiltonian(&p.mean, &p.covariance)?;
    let points = ball_grid(p.radius, p.grid, 2 * d);
    let first = *p.taus.first().ok_or_else(|| Error::Parameter("taus is empty".into()))?;
    let r = verify_chunk_order(&h, &henon_config(&h, p.gamma, first), &points, &p.taus, p.steps)?;
    let slope = r.slope.unwrap_or(f64::NAN);
    let ok = (p.slope_min..=p.slope_max).contains(&slope);
    let mut t = Table::new(
        "henon-order",
        vec![
            col("tau", "chunk length"),
            col("c0", "C⁰ distance: time-2π map vs exact chunk map"),
            col("c1", "C¹ distance: time-2π map vs exact chunk map"),
            col("slope", "least-squares log-log slope of c1 against tau"),
            col("slope_min", "expected slope, lower end"),
            col("slope_max", "expected slope, upper end"),
            col("max_residual", "largest coefficient-system residual"),
        ],
    );
    for (&tau, dist) in r.taus.iter().zip(&r.distances) {
        t.push(
            vec![
                tau.into(),
                dist.c0.into(),
                dist.c1.into(),
                slope.into(),
                p.slope_min.into(),
                p.slope_max.into(),
                r.max_residual.into(),
            ],
            ok,
        );
    }
    Ok(t)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EulerOrderParams {
    pub gamma: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub chunk_tau: f64,
    pub etas: Vec<f64>,
    pub horizon: f64,
    pub radius: f64,
    pub grid: usize,
    pub reference_steps: usize,
    pub slope_min: f64,
    pub slope_max: f64,
    /// Start points for the finite-difference check of the Jacobian recurrence.
    pub fd_points: Vec<Vec<f64>>,
    pub fd_eta: f64,
    pub fd_steps: usize,
    pub fd_step: f64,
    pub fd_tolerance: f64,
}

impl Default for EulerOrderParams {
    fn default() -> Self {
        EulerOrderParams {
            gamma: 1.0,
            mean: default_mean(),
            covariance: default_covariance(),
            chunk_tau: 0.25,
            etas: vec![0.04, 0.02, 0.01, 0.005],
            horizon: 1.0,
            radius: 2.0,
            grid: 11,
            reference_steps: 2000,
            slope_min: 0.8,
            slope_max: 1.2,
            fd_points: vec![vec![0.7, -0.4], vec![-1.2, 0.9], vec![0.1, 1.5]],
            fd_eta: 0.02,
            fd_steps: 50,
            fd_step: 1e-6,
            fd_tolerance: 1e-8,
        }
    }
}

/// Largest entrywise gap between the exact Jacobian recurrence and central differences.
fn jacobian_fd_gap(sys: &HenonSystem, p: &EulerOrderParams, d: usize) -> Result<f64> {
    let field = approximating_field(sys);
    let mut gap: f64 = 0.0;
    for z in &p.fd_points {
        if z.len() != 2 * d {
            return Err(Error::Dimension { expected: 2 * d, got: z.len() });
        }
        let (_, _, jac) = alternating_euler_with_jacobian(&field, &z[..d], &z[d..], 0.0, p.fd_eta, p.fd_steps)?;
        let run = |c: usize, delta: f64| -> Result<Vec<f64>> {
            let mut zz = z.clone();
            zz[c] += delta;
            let traj = alternating_euler(&field, &zz[..d], &zz[d..], 0.0, p.fd_eta, p.fd_steps)?;
            let (x, v) = traj.last().cloned().unwrap_or_default();
            Ok(x.into_iter().chain(v).collect())
        };
        for c in 0..2 * d {
            let (plus, minus) = (run(c, p.fd_step)?, run(c, -p.fd_step)?);
            for r in 0..2 * d {
                gap = gap.max(((plus[r] - minus[r]) / (2.0 * p.fd_step) - jac[(r, c)]).abs());
            }
        }
    }
    Ok(gap)
}

fn euler_order(p: &EulerOrderParams) -> Result<Table> {
    check_range("slope", p.slope_min, p.slope_max)?;
    let (h, d) = gaussian_hamiltonian(&p.mean, &p.covariance)?;
    let sys = solve_coefficients(&h, &henon_config(&h, p.gamma, p.chunk_tau))?;
    let field = approximating_field(&sys);
    let points = ball_grid(p.radius, p.grid, 2 * d);
    let exact = FlowProbe::sample(&points, |z| {
        integrate_with_jacobian(&Joined(&field), z, 0.0, p.horizon, p.reference_steps)
    })?;
    let mut distances = Vec::with_capacity(p.etas.len());
    let mut effective = Vec::with_capacity(p.etas.len());
    for &eta in &p.etas {
        if !(eta > 0.0) {
            return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
        }
        // land exactly on the horizon so the fit sees only the discretization error
        let n = (p.horizon / eta).ceil().max(1.0) as usize;
        let eta = p.horizon / n as f64;
        effective.push(eta);
        let approx = FlowProbe::sample(&points, |z| {
            let (x, v, j) = alternating_euler_with_jacobian(&field, &z[..d], &z[d..], 0.0, eta, n)?;
            Ok((x.into_iter().chain(v).collect(), j))
        })?;
        distances.push(flow_distance(&approx, &exact)?);
    }
    let c1: Vec<f64> = distances.iter().map(|d| d.c1).collect();
    let slope = loglog_slope(&effective, &c1)?;
    let fd_gap = jacobian_fd_gap(&sys, p, d)?;
    let ok = (p.slope_min..=p.slope_max).contains(&slope) && fd_gap <= p.fd_tolerance;
    let mut t = Table::new(
        "euler-order",
        vec![
            col("eta", "requested Euler step"),
            col("eta_eff", "step actually used: horizon / ⌈horizon / eta⌉"),
            col("c0", "C⁰ distance: alternating Euler vs exact flow at the horizon"),
            col("c1", "C¹ distance: alternating Euler vs exact flow at the horizon"),
            col("slope", "least-squares log-log slope of c1 against eta_eff"),
            col("slope_min", "expected slope, lower end"),
            col("slope_max", "expected slope, upper end"),
            col("fd_gap", "max |Jacobian recurrence − central difference|"),
            col("fd_tolerance", "allowed fd_gap"),
        ],
    );
    for ((&eta, &eta_eff), dist) in p.etas.iter().zip(&effective).zip(&distances) {
        t.push(
            vec![
                eta.into(),
                eta_eff.into(),
                dist.c0.into(),
                dist.c1.into(),
                slope.into(),
                p.slope_min.into(),
                p.slope_max.into(),
                fd_gap.into(),
                p.fd_tolerance.into(),
            ],
            ok,
        );
    }
    Ok(t)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationParams {
    pub epsilons: Vec<f64>,
    pub horizon: f64,
    pub radius: f64,
    pub grid: usize,
    pub steps: usize,
    pub slope_min: f64,
    pub slope_max: f64,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        PerturbationParams {
            epsilons: vec![0.1, 0.05, 0.025, 0.0125],
            horizon: 2.0,
            radius: 1.0,
            grid: 9,
            steps: 800,
            slope_min: 1.8,
            slope_max: 2.2,
        }
    }
}

/// Harmonic oscillator `ẏ = Ay` perturbed by `ε(0, −x³)`.
fn perturbation_order(p: &PerturbationParams) -> Result<Table> {
    check_range("slope", p.slope_min, p.slope_max)?;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let cubic = FnField::new(
        2,
        |z: &[f64], _: f64, o: &mut [f64]| {
            o[0] = 0.0;
            o[1] = -z[0].powi(3);
        },
        |z: &[f64], _: f64| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -3.0 * z[0] * z[0], 0.0]),
    );
    let points = ball_grid(p.radius, p.grid, 2);
    let study = perturbation_order_check(&a, &cubic, &points, &p.epsilons, p.horizon, p.steps)?;
    let ok = (p.slope_min..=p.slope_max).contains(&study.slope);
    let mut t = Table::new(
        "perturbation-order",
        vec![
            col("epsilon", "perturbation size"),
            col("c0", "C⁰ distance: perturbed flow vs first-order expansion"),
            col("c1", "C¹ distance: perturbed flow vs first-order expansion"),
            col("slope", "least-squares log-log slope of c1 against epsilon"),
            col("slope_min", "expected slope, lower end"),
            col("slope_max", "expected slope, upper end"),
        ],
    );
    for (&eps, dist) in study.parameters.iter().zip(&study.distances) {
        t.push(
            vec![
                eps.into(),
                dist.c0.into(),
                dist.c1.into(),
                study.slope.into(),
                p.slope_min.into(),
                p.slope_max.into(),
            ],
            ok,
        );
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// lyapunov

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovParams {
    pub sigma_x: Vec<Vec<f64>>,
    pub gamma: f64,
    pub t_max: f64,
    pub samples: usize,
    /// Asserted decay rate: 𝓛[p_t] ≤ 𝓛[p₀] e^(−rate·t).
    pub rate: f64,
    pub tolerance: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        LyapunovParams {
            sigma_x: vec![vec![0.5]],
            gamma: 1.0,
            t_max: 30.0,
            samples: 100,
            rate: 0.1,
            tolerance: 1e-6,
        }
    }
}

fn lyapunov(p: &LyapunovParams) -> Result<Table> {
    if p.samples < 2 {
        return Err(Error::Parameter("samples must be at least 2".into()));
    }
    let sigma = padded(&matrix(&p.sigma_x)?);
    let p0 = GaussianDensity::new(DVector::zeros(sigma.nrows()), sigma)?;
    let l0 = lyapunov_gaussian(&p0)?;
    let mut t = Table::new(
        "lyapunov",
        vec![
            col("t", "time"),
            col("lyapunov", "𝓛[p_t] along the analytic Gaussian path"),
            col("bound", "𝓛[p₀] e^(−rate·t)"),
            col("ratio", "lyapunov / bound"),
            col("tolerance", "allowed relative excess over the bound"),
        ],
    );
    for i in 0..p.samples {
        let time = p.t_max * i as f64 / (p.samples - 1) as f64;
        let l = lyapunov_gaussian(&gaussian_evolve(&p0, p.gamma, time)?)?;
        let bound = l0 * (-p.rate * time).exp();
        t.push(
            vec![time.into(), l.into(), bound.into(), (l / bound).into(), p.tolerance.into()],
            l <= bound * (1.0 + p.tolerance),
        );
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// convolution

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvolutionParams {
    pub instances: usize,
    pub max_dim: usize,
    pub eigen_min: f64,
    pub eigen_max: f64,
    pub tolerance: f64,
}

impl Default for ConvolutionParams {
    fn default() -> Self {
        ConvolutionParams { instances: 50, max_dim: 3, eigen_min: 0.1, eigen_max: 5.0, tolerance: 1e-10 }
    }
}

fn convolution(p: &ConvolutionParams, seed: u64) -> Result<Table> {
    check_range("eigen", p.eigen_min, p.eigen_max)?;
    if p.max_dim == 0 || !(p.eigen_min > 0.0) {
        return Err(Error::Parameter("max_dim and eigen_min must be positive".into()));
    }
    let mut t = Table::new(
        "convolution",
        vec![
            col("instance", "random (Σ_p, Σ) pair"),
            col("dim", "dimension"),
            col("lower_margin", "λ_min(H − (Σ2 + Σ)⁻¹), H the convolved Hessian"),
            col("upper_margin", "λ_min((Σ1 + Σ)⁻¹ − H)"),
            col("tolerance", "margins must be ≥ −tolerance"),
        ],
    );
    let mut rng = particle_rng(seed, 5);
    for i in 0..p.instances {
        let n = 1 + i % p.max_dim;
        let sigma_p = random_spd(n, &mut rng, p.eigen_min, p.eigen_max);
        let sigma = random_spd(n, &mut rng, p.eigen_min, p.eigen_max);
        let eig = sigma_p.clone().symmetric_eigenvalues();
        let s1 = DMatrix::identity(n, n) * eig.min();
        let s2 = DMatrix::identity(n, n) * eig.max();
        let r = convolution_hessian_check(&s1, &s2, &sigma, &sigma_p, p.tolerance)?;
        t.push(
            vec![i.into(), n.into(), r.lower_margin.into(), r.upper_margin.into(), p.tolerance.into()],
            r.lower_margin >= -p.tolerance && r.upper_margin >= -p.tolerance,
        );
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// wasserstein

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WassersteinParams {
    pub instances: usize,
    pub tolerance: f64,
    pub directions: usize,
    /// Target tail mass for the truncation radius.
    pub tail_delta: f64,
    pub tail_dim: usize,
    pub mc_samples: usize,
    /// Allowed Monte Carlo deviation in standard errors.
    pub mc_sigmas: f64,
}

impl Default for WassersteinParams {
    fn default() -> Self {
        WassersteinParams {
            instances: 100,
            tolerance: 1e-12,
            directions: 32,
            tail_delta: 1e-3,
            tail_dim: 2,
            mc_samples: 1_000_000,
            mc_sigmas: 3.0,
        }
    }
}

fn wasserstein(p: &WassersteinParams, seed: u64) -> Result<Table> {
    if p.mc_samples < 2 || p.tail_dim == 0 {
        return Err(Error::Parameter("mc_samples ≥ 2 and tail_dim ≥ 1 required".into()));
    }
    let mut t = Table::new(
        "wasserstein",
        vec![
            col("check", "lipschitz | closeness | tail-mc | tail-mass"),
            col("instance", "random instance index"),
            col("measured", "W1(g#μ, g#ν) | sliced W1(f#μ, g#μ) | |MC − quadrature| | tail moment"),
            col("bound", "L·W1(μ, ν) | sup|f − g| | mc_sigmas · standard error | tail_delta"),
            col("tolerance", "measured may exceed bound by this much"),
        ],
    );
    let mut rng = particle_rng(seed, 9);
    let push = |t: &mut Table, check: &str, i: usize, measured: f64, bound: f64, tol: f64| {
        t.push(
            vec![check.into(), i.into(), measured.into(), bound.into(), tol.into()],
            measured <= bound + tol,
        );
    };

    // pushforward by an L-Lipschitz map contracts W1 by at most L
    for i in 0..p.instances {
        let n = rng.random_range(5..60usize);
        let m = rng.random_range(5..60usize);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let l: f64 = rng.random_range(0.1..3.0);
        let w: f64 = rng.random_range(0.5..4.0);
        let g = |x: &f64| l * (w * x).sin() / w;
        let lhs = w1_1d(&a.iter().map(g).collect::<Vec<_>>(), &b.iter().map(g).collect::<Vec<_>>())?;
        push(&mut t, "lipschitz", i, lhs, l * w1_1d(&a, &b)?, p.tolerance);
    }

    // uniformly close maps push a measure to W1-close measures
    for i in 0..p.instances {
        let n = rng.random_range(10..200usize);
        let amp = rng.random_range(0.0..0.5);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let f: Vec<Vec<f64>> = pts.iter().map(|q| vec![q[0] * q[1], q[2].sin(), q[0] + q[2]]).collect();
        let g: Vec<Vec<f64>> = f
            .iter()
            .zip(&pts)
            .map(|(y, q)| vec![y[0] + amp * q[1].cos(), y[1] - amp * (q[0] * q[2]).sin(), y[2] + amp * 0.5])
            .collect();
        let sup = f
            .iter()
            .zip(&g)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let s = sliced_w1(&SampleCloud::new(f, None)?, &SampleCloud::new(g, None)?, p.directions, seed ^ i as u64)?;
        push(&mut t, "closeness", i, s, sup, p.tolerance);
    }

    // truncation tail: quadrature against Monte Carlo
    let radius = choose_radius(p.tail_delta, p.tail_dim)?;
    let quad = 2.0 * gaussian_tail_moment(radius, p.tail_dim);
    let mut mc = particle_rng(seed, 2024);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..p.mc_samples {
        let r = (0..p.tail_dim).map(|_| mc.sample::<f64, _>(StandardNormal).powi(2)).sum::<f64>().sqrt();
        let x = if r > radius { 2.0 * r } else { 0.0 };
        sum += x;
        sum_sq += x * x;
    }
    let n = p.mc_samples as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean) / n).max(0.0).sqrt();
    push(&mut t, "tail-mc", 0, (mean - quad).abs(), p.mc_sigmas * se, 0.0);
    push(&mut t, "tail-mass", 0, quad, p.tail_delta, 0.0);
    Ok(t)
}
