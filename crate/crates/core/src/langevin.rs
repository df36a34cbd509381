//! Underdamped Langevin dynamics with a standard Gaussian target.
//!
//! Conventions: phase space `z = (x, v)` with block ordering
//! `(x_1..x_d, v_1..v_d)`, dynamics `ẋ = v`, `v̇ = −x − γ v` (+ noise), and
//! `B = [[0, 1], [−1, −γ]]` acting blockwise as `B ⊗ I_d`.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odeflow::{self, VectorField};

/// Friction and dimension of the dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub d: usize,
    pub gamma: f64,
}

impl LangevinParams {
    pub fn new(d: usize, gamma: f64) -> Result<Self> {
        validate_gamma(gamma)?;
        if d == 0 {
            return Err(Error::Parameter("dimension must be at least 1".into()));
        }
        Ok(LangevinParams { d, gamma })
    }
}

pub fn validate_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(Error::Parameter(format!(
            "friction gamma must satisfy 0 < gamma < 2, got {gamma}"
        )));
    }
    Ok(())
}

/// Gaussian density on phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDensity {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianDensity {
    /// Validates symmetry (to 1e−12, relative) and positive definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: cov.nrows(),
            });
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Input("covariance is not symmetric".into()));
        }
        let min_eig = sym_eigenvalues(&cov).min();
        if !(min_eig > 0.0) {
            return Err(Error::SingularMatrix(format!(
                "covariance is not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(GaussianDensity { mean, cov })
    }

    pub fn standard(n: usize) -> Self {
        GaussianDensity {
            mean: DVector::zeros(n),
            cov: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.cov)
    }

    /// Draw one sample using the lower Cholesky factor `L` (pass `L` to avoid refactoring).
    pub fn sample_with<R: rand::Rng>(&self, chol: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let xi: DVector<f64> = DVector::from_iterator(n, (0..n).map(|_| rng.sample(StandardNormal)));
        (&self.mean + chol * xi).iter().copied().collect()
    }

    pub fn cholesky_factor(&self) -> Result<DMatrix<f64>> {
        self.cov
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::SingularMatrix("covariance has no Cholesky factor".into()))
    }
}

pub(crate) fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = m
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::SingularMatrix("matrix is not positive definite".into()))?;
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `exp(B t)` for `B = [[0, 1], [−1, −γ]]`.
///
/// With `ω² = 1 − γ²/4`, `exp(Bt) = e^{−γt/2} [c(t) I + s(t) (B + γ/2 I)]` where
/// `c = cos ωt, s = sin(ωt)/ω` (hyperbolic analogues when `ω² < 0`).
pub fn block_exp(gamma: f64, t: f64) -> Matrix2<f64> {
    let w2 = 1.0 - gamma * gamma / 4.0;
    let (c, s) = if w2 > 1e-14 {
        let w = w2.sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    } else if w2 < -1e-14 {
        let w = (-w2).sqrt();
        ((w * t).cosh(), (w * t).sinh() / w)
    } else {
        (1.0, t)
    };
    let h = gamma / 2.0;
    let shifted = Matrix2::new(h, 1.0, -1.0, -h);
    (Matrix2::identity() * c + shifted * s) * (-h * t).exp()
}

/// `[[m00 I, m01 I], [m10 I, m11 I]]`.
pub fn kron_identity(m: &Matrix2<f64>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        out[(i, i)] = m[(0, 0)];
        out[(i, d + i)] = m[(0, 1)];
        out[(d + i, i)] = m[(1, 0)];
        out[(d + i, d + i)] = m[(1, 1)];
    }
    out
}

/// `C = [[0, I], [−I, −γ I]]`, the drift coupling of the deterministic flow.
pub fn coupling_matrix(gamma: f64, d: usize) -> DMatrix<f64> {
    kron_identity(&Matrix2::new(0.0, 1.0, -1.0, -gamma), d)
}

fn half_dim(n: usize) -> Result<usize> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Input(format!("phase-space dimension must be even and positive, got {n}")));
    }
    Ok(n / 2)
}

/// `Σ_t = e^{(B⊗I)t} (Σ0 − I) e^{(Bᵀ⊗I)t} + I`.
pub fn variance_proxy(sigma0: &DMatrix<f64>, gamma: f64, t: f64) -> Result<DMatrix<f64>> {
    let d = half_dim(sigma0.nrows())?;
    let e = kron_identity(&block_exp(gamma, t), d);
    let n = 2 * d;
    let id = DMatrix::<f64>::identity(n, n);
    let s = &e * (sigma0 - &id) * e.transpose() + id;
    Ok((&s + s.transpose()) * 0.5)
}

pub fn gaussian_evolve(p0: &GaussianDensity, gamma: f64, t: f64) -> Result<GaussianDensity> {
    let d = half_dim(p0.dim())?;
    let e = kron_identity(&block_exp(gamma, t), d);
    Ok(GaussianDensity {
        mean: e * &p0.mean,
        cov: variance_proxy(&p0.cov, gamma, t)?,
    })
}

/// Deterministic field `ż = C(∇ln p_t − ∇ln p*) = C(z − Σ_t⁻¹(z − μ_t))` at a frozen density.
#[derive(Clone, Debug)]
pub struct LangevinField {
    c: DMatrix<f64>,
    prec: DMatrix<f64>,
    mean: DVector<f64>,
    jac: DMatrix<f64>,
}

pub fn langevin_field(p: &GaussianDensity, gamma: f64) -> Result<LangevinField> {
    let d = half_dim(p.dim())?;
    let c = coupling_matrix(gamma, d);
    let prec = p.precision()?;
    let jac = &c * (DMatrix::identity(2 * d, 2 * d) - &prec);
    Ok(LangevinField {
        c,
        prec,
        mean: p.mean.clone(),
        jac,
    })
}

impl VectorField for LangevinField {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn rhs(&self, z: &[f64], _t: f64, out: &mut [f64]) {
        let zv = DVector::from_column_slice(z);
        let grad = &zv - &self.prec * (&zv - &self.mean);
        out.copy_from_slice((&self.c * grad).as_slice());
    }
    fn jacobian(&self, _z: &[f64], _t: f64) -> DMatrix<f64> {
        self.jac.clone()
    }
}

/// Time-dependent deterministic field along the analytic Gaussian path started at `p0`.
#[derive(Clone, Debug)]
pub struct GaussianPathField {
    pub p0: GaussianDensity,
    pub gamma: f64,
}

impl GaussianPathField {
    fn at(&self, t: f64) -> LangevinField {
        let p = gaussian_evolve(&self.p0, self.gamma, t).expect("valid phase-space density");
        langevin_field(&p, self.gamma).expect("Gaussian path stays positive definite")
    }
}

impl VectorField for GaussianPathField {
    fn dim(&self) -> usize {
        self.p0.dim()
    }
    fn rhs(&self, z: &[f64], t: f64, out: &mut [f64]) {
        self.at(t).rhs(z, t, out)
    }
    fn jacobian(&self, z: &[f64], t: f64) -> DMatrix<f64> {
        self.at(t).jacobian(z, t)
    }
}

/// Lower and upper singular-value bounds `A(κ, γ)`, `B = 1/A` for the flow Jacobian.
pub fn conditioning_bounds(kappa: f64, gamma: f64) -> (f64, f64) {
    let base = 1.0 + (2.0 + gamma) / (2.0 - gamma) * (kappa - 1.0);
    let a = base.powf(-2.0 / gamma);
    (a, 1.0 / a)
}

/// Upper bound on `∫₀^∞ ‖C H_s‖ ds`: `(2/γ) ln(1 + ((2+γ)/(2−γ))(κ−1))`.
pub fn integral_bound(kappa: f64, gamma: f64) -> f64 {
    2.0 / gamma * (1.0 + (2.0 + gamma) / (2.0 - gamma) * (kappa - 1.0)).ln()
}

/// Observed singular values of the flow Jacobian next to the theoretical bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub kappa: f64,
    pub gamma: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// `upper_bound / lower_bound`
    pub condition_bound: f64,
    pub observed_min: f64,
    pub observed_max: f64,
    /// Number of sampled times at which a singular value left `[lower, upper]`.
    pub violations: usize,
    pub sampled_times: Vec<f64>,
    /// Largest deviation of `D_t` from the identity over the samples.
    pub max_identity_deviation: f64,
}

impl ConditioningReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Check `I ⪯ Σ0⁻¹ ⪯ κ I`, returning the offending eigenvalue otherwise.
pub fn check_precision_sandwich(sigma0: &DMatrix<f64>, kappa: f64) -> Result<()> {
    let prec = spd_inverse(sigma0)?;
    let tol = 1e-10;
    for &l in sym_eigenvalues(&prec).iter() {
        if l < 1.0 - tol || l > kappa * (1.0 + tol) {
            return Err(Error::Precondition(format!(
                "eigenvalue {l} of the source precision lies outside [1, {kappa}]"
            )));
        }
    }
    Ok(())
}

/// Integrate `Ḋ = C(I − Σ_t⁻¹)D`, `D_0 = I`, recording singular values every `sample_every` steps.
pub fn jacobian_flow(
    sigma0: &DMatrix<f64>,
    gamma: f64,
    kappa: f64,
    t1: f64,
    steps: usize,
    sample_every: usize,
) -> Result<ConditioningReport> {
    validate_gamma(gamma)?;
    check_precision_sandwich(sigma0, kappa)?;
    let d = half_dim(sigma0.nrows())?;
    let n = 2 * d;
    let c = coupling_matrix(gamma, d);
    let id = DMatrix::<f64>::identity(n, n);
    let generator = |t: f64| -> DMatrix<f64> {
        let s = variance_proxy(sigma0, gamma, t).expect("even dimension");
        &c * (&id - spd_inverse(&s).expect("variance proxy stays positive definite"))
    };
    let (lower, upper) = conditioning_bounds(kappa, gamma);
    let h = t1 / steps as f64;
    let mut dmat = id.clone();
    let mut report = ConditioningReport {
        kappa,
        gamma,
        lower_bound: lower,
        upper_bound: upper,
        condition_bound: upper / lower,
        observed_min: 1.0,
        observed_max: 1.0,
        violations: 0,
        sampled_times: vec![0.0],
        max_identity_deviation: 0.0,
    };
    let tol = 1e-12;
    let every = sample_every.max(1);
    for s in 0..steps {
        let t = s as f64 * h;
        let g1 = generator(t);
        let gm = generator(t + 0.5 * h);
        let g2 = generator(t + h);
        let k1 = &g1 * &dmat;
        let k2 = &gm * (&dmat + &k1 * (0.5 * h));
        let k3 = &gm * (&dmat + &k2 * (0.5 * h));
        let k4 = &g2 * (&dmat + &k3 * h);
        dmat += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !dmat.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence { step: s + 1 });
        }
        if (s + 1) % every == 0 || s + 1 == steps {
            let sv = dmat.clone().svd(false, false).singular_values;
            let (lo, hi) = (sv.min(), sv.max());
            report.observed_min = report.observed_min.min(lo);
            report.observed_max = report.observed_max.max(hi);
            if lo < lower * (1.0 - tol) || hi > upper * (1.0 + tol) {
                report.violations += 1;
            }
            report.max_identity_deviation = report.max_identity_deviation.max((&dmat - &id).amax());
            report.sampled_times.push(t + h);
        }
    }
    Ok(report)
}

/// Outcome of the Gaussian convolution Hessian sandwich.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvolutionReport {
    /// `−∇² ln(p ∗ q) = (Σ_p + Σ)⁻¹`, constant in space for Gaussians.
    pub hessian: Vec<Vec<f64>>,
    /// Smallest eigenvalue of `H − (Σ2 + Σ)⁻¹`.
    pub lower_margin: f64,
    /// Smallest eigenvalue of `(Σ1 + Σ)⁻¹ − H`.
    pub upper_margin: f64,
    pub pass: bool,
}

/// For `p = N(·, Σ_p)` with `Σ1 ⪯ Σ_p ⪯ Σ2` and `q = N(0, Σ)`, verify
/// `(Σ2 + Σ)⁻¹ ⪯ −∇² ln(p ∗ q) ⪯ (Σ1 + Σ)⁻¹`.
pub fn convolution_hessian_check(
    sigma1: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    sigma_p: &DMatrix<f64>,
    tol: f64,
) -> Result<ConvolutionReport> {
    let h = spd_inverse(&(sigma_p + sigma))?;
    let lo = spd_inverse(&(sigma2 + sigma))?;
    let hi = spd_inverse(&(sigma1 + sigma))?;
    let lower_margin = sym_eigenvalues(&(&h - lo)).min();
    let upper_margin = sym_eigenvalues(&(hi - &h)).min();
    Ok(ConvolutionReport {
        hessian: h.row_iter().map(|r| r.iter().copied().collect()).collect(),
        lower_margin,
        upper_margin,
        pass: lower_margin >= -tol && upper_margin >= -tol,
    })
}

/// `KL(N(μ, Σ) ‖ N(0, I)) = ½(tr Σ + μᵀμ − n − ln det Σ)`.
pub fn kl_to_standard(p: &GaussianDensity) -> Result<f64> {
    let n = p.dim() as f64;
    let chol = p
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularMatrix("covariance is not positive definite".into()))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok(0.5 * (p.cov.trace() + p.mean.norm_squared() - n - logdet))
}

/// `S = [[¼I, ½I], [½I, 2I]]`.
pub fn lyapunov_weight(d: usize) -> DMatrix<f64> {
    kron_identity(&Matrix2::new(0.25, 0.5, 0.5, 2.0), d)
}

/// `𝓛[p] = KL(p ‖ N(0, I)) + E_p⟨w, S w⟩` with `w = ∇ln p − ∇ln p* = (I − Σ⁻¹)z + Σ⁻¹μ`.
///
/// `w` is Gaussian with mean `μ` and covariance `AΣAᵀ`, `A = I − Σ⁻¹`, so the
/// expectation is `tr(S A Σ Aᵀ) + μᵀ S μ`.
pub fn lyapunov_gaussian(p: &GaussianDensity) -> Result<f64> {
    let d = half_dim(p.dim())?;
    let n = 2 * d;
    let s = lyapunov_weight(d);
    let a = DMatrix::identity(n, n) - p.precision()?;
    let quad = (&s * &a * &p.cov * a.transpose()).trace() + (p.mean.transpose() * &s * &p.mean)[0];
    Ok(kl_to_standard(p)? + quad)
}

/// Settings for [`sde_simulate`].
#[derive(Clone, Copy, Debug)]
pub struct SdeConfig {
    pub gamma: f64,
    pub eta: f64,
    pub steps: usize,
    pub n_particles: usize,
    pub seed: u64,
    /// Disable the stochastic increment (deterministic limit, used for testing).
    pub noise: bool,
}

/// Phase-space particle positions, one row per particle.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    pub d: usize,
    /// Each entry is `(x_0..x_{d−1}, v_0..v_{d−1})`.
    pub particles: Vec<Vec<f64>>,
}

impl ParticleCloud {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let mut header: Vec<String> = (0..self.d).map(|i| format!("x_{i}")).collect();
        header.extend((0..self.d).map(|i| format!("v_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for p in &self.particles {
            let row: Vec<String> = p.iter().map(|x| format!("{x:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Sample covariance (normalized by `n − 1`).
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = 2 * self.d;
        let m = self.particles.len() as f64;
        let mut mean = DVector::zeros(n);
        for p in &self.particles {
            mean += DVector::from_column_slice(p);
        }
        mean /= m;
        let mut cov = DMatrix::zeros(n, n);
        for p in &self.particles {
            let c = DVector::from_column_slice(p) - &mean;
            cov += &c * c.transpose();
        }
        cov / (m - 1.0)
    }
}

/// Random stream for one particle: ChaCha8 keyed by `seed`, stream selected by the index.
pub fn particle_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Euler–Maruyama for `dx = v dt`, `dv = (−γv − ∇U(x)) dt + √(2γ) dW`, initialized from `init`.
///
/// Per step: `v ← (1 − ηγ)v − η∇U(x) + ξ` with `ξ ~ N(0, 2γη I)`, then `x ← x + ηv`
/// using the updated velocity. Each particle draws from its own stream, so the
/// result does not depend on the worker count.
pub fn sde_simulate<G>(
    grad_u: G,
    init: &GaussianDensity,
    cfg: &SdeConfig,
) -> Result<ParticleCloud>
where
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    validate_gamma(cfg.gamma)?;
    if !(cfg.eta > 0.0 && cfg.eta * cfg.gamma < 1.0) {
        return Err(Error::Parameter(format!(
            "step must satisfy 0 < eta*gamma < 1, got eta={} gamma={}",
            cfg.eta, cfg.gamma
        )));
    }
    let d = half_dim(init.dim())?;
    let chol = init.cholesky_factor()?;
    let noise_sd = (2.0 * cfg.gamma * cfg.eta).sqrt();
    let particles = (0..cfg.n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(cfg.seed, i as u64);
            let z = init.sample_with(&chol, &mut rng);
            let (mut x, mut v) = (z[..d].to_vec(), z[d..].to_vec());
            let mut grad = vec![0.0; d];
            for step in 0..cfg.steps {
                grad_u(&x, &mut grad);
                for k in 0..d {
                    let xi: f64 = if cfg.noise {
                        {
                            let n: f64 = StandardNormal.sample(&mut rng);
                            noise_sd * n
                        }
                    } else {
                        0.0
                    };
                    v[k] = (1.0 - cfg.eta * cfg.gamma) * v[k] - cfg.eta * grad[k] + xi;
                }
                for k in 0..d {
                    x[k] += cfg.eta * v[k];
                }
                let norm2: f64 = x.iter().chain(&v).map(|a| a * a).sum();
                if !norm2.is_finite() || norm2.sqrt() > odeflow::DIVERGENCE_CUTOFF {
                    return Err(Error::Divergence { step: step + 1 });
                }
            }
            x.extend(v);
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticleCloud { d, particles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odeflow::{alternating_euler, integrate, integrate_with_jacobian, PairField};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    /// Matrix exponential by scaling and squaring of a Taylor series — independent oracle.
    fn expm_taylor(m: &Matrix2<f64>) -> Matrix2<f64> {
        let s = 10;
        let a = m / 2f64.powi(s);
        let mut term = Matrix2::identity();
        let mut sum = Matrix2::identity();
        for k in 1..30 {
            term = term * a / k as f64;
            sum += term;
        }
        for _ in 0..s {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn block_exp_examples() {
        let r = block_exp(1e-12, PI / 2.0);
        assert!((r - Matrix2::new(0.0, 1.0, -1.0, 0.0)).amax() < 1e-10);
        assert_eq!(block_exp(1.0, 0.0), Matrix2::identity());
        let norm = block_exp(1.0, 10.0).norm(); // Frobenius ≥ spectral
        assert!(norm <= 3f64.sqrt() * (-5f64).exp());
        for &(g, t) in &[(0.5, 1.3), (1.0, 2.0), (1.5, 7.0), (1.9, 0.4)] {
            let b = Matrix2::new(0.0, 1.0, -1.0, -g);
            assert!((block_exp(g, t) - expm_taylor(&(b * t))).amax() < 1e-12);
        }
        // beyond the admissible range the hyperbolic branch still agrees
        let b = Matrix2::new(0.0, 1.0, -1.0, -3.0);
        assert!((block_exp(3.0, 0.7) - expm_taylor(&(b * 0.7))).amax() < 1e-12);
    }

    #[test]
    fn variance_proxy_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((variance_proxy(&id, 1.0, 3.0).unwrap() - &id).amax() < 1e-15);
        let s0 = diag(&[0.5, 0.7, 1.0, 1.0]);
        assert_eq!(variance_proxy(&s0, 0.8, 0.0).unwrap(), s0);
        let k = 2.0;
        let s = variance_proxy(&(&id * k), 1.0, 5.0).unwrap();
        let dev = odeflow::spectral_norm(&(s - &id));
        assert!(dev <= (k - 1.0) * 3.0 * (-5f64).exp(), "{dev}");
    }

    #[test]
    fn gaussian_evolve_examples() {
        let p = GaussianDensity::standard(2);
        let q = gaussian_evolve(&p, 1.0, 4.0).unwrap();
        assert!((q.cov - &p.cov).amax() < 1e-15 && q.mean.amax() < 1e-15);
        let p = GaussianDensity::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let q = gaussian_evolve(&p, 1e-12, PI / 2.0).unwrap();
        assert_abs_diff_eq!(q.mean[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(q.mean[1], -1.0, epsilon = 1e-10);
        let s0 = diag(&[0.3, 2.5]);
        let p = GaussianDensity::new(DVector::zeros(2), s0.clone()).unwrap();
        let q = gaussian_evolve(&p, 1.0, 20.0).unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(odeflow::spectral_norm(&(q.cov - &id)) < 1e-7 * odeflow::spectral_norm(&(s0 - id)));
    }

    #[test]
    fn langevin_field_examples() {
        let f = langevin_field(&GaussianDensity::standard(2), 1.3).unwrap();
        let mut out = [1.0; 2];
        f.rhs(&[0.4, -2.0], 0.0, &mut out);
        assert!(out.iter().all(|x| x.abs() < 1e-15));
        let p = GaussianDensity::new(DVector::zeros(2), DMatrix::identity(2, 2) * 2.0).unwrap();
        let f = langevin_field(&p, 1.0).unwrap();
        f.rhs(&[1.0, 0.0], 0.0, &mut out);
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -0.5, epsilon = 1e-15);
        // affine field: finite differences are exact up to rounding
        let p = GaussianDensity::new(DVector::from_vec(vec![0.2, -0.3, 0.1, 0.4]), diag(&[0.5, 0.8, 1.0, 1.0])).unwrap();
        let f = langevin_field(&p, 0.7).unwrap();
        let z = [0.3, -0.1, 0.5, 0.9];
        let jac = f.jacobian(&z, 0.0);
        let h = 1e-4;
        for c in 0..4 {
            let (mut zp, mut zm) = (z, z);
            zp[c] += h;
            zm[c] -= h;
            let (mut fp, mut fm) = ([0.0; 4], [0.0; 4]);
            f.rhs(&zp, 0.0, &mut fp);
            f.rhs(&zm, 0.0, &mut fm);
            for r in 0..4 {
                assert_abs_diff_eq!((fp[r] - fm[r]) / (2.0 * h), jac[(r, c)], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn jacobian_flow_examples() {
        let r = jacobian_flow(&DMatrix::identity(2, 2), 1.0, 1.0, 20.0, 2000, 10).unwrap();
        assert!(r.max_identity_deviation < 1e-10);
        assert_eq!(r.condition_bound, 1.0);
        let r = jacobian_flow(&diag(&[0.5, 1.0]), 1.0, 2.0, 20.0, 2000, 10).unwrap();
        assert_abs_diff_eq!(r.condition_bound, 256.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.lower_bound, 1.0 / 16.0, epsilon = 1e-12);
        assert!(r.passed(), "{r:?}");
        let err = jacobian_flow(&diag(&[0.2, 1.0]), 1.0, 2.0, 1.0, 10, 1).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn integral_bound_dominates_observed_integral() {
        // ∫‖C H_s‖ ds by trapezoid on a fine grid over a long horizon
        for &(kappa, gamma) in &[(2.0, 1.0), (4.0, 0.5), (4.0, 1.5)] {
            let sigma0 = diag(&[1.0 / kappa, 1.0]);
            let c = coupling_matrix(gamma, 1);
            let id = DMatrix::<f64>::identity(2, 2);
            let h = 0.01;
            let vals: Vec<f64> = (0..=8000)
                .map(|i| {
                    let s = variance_proxy(&sigma0, gamma, i as f64 * h).unwrap();
                    odeflow::spectral_norm(&(&c * (spd_inverse(&s).unwrap() - &id)))
                })
                .collect();
            let integral = h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[vals.len() - 1]));
            assert!(integral <= integral_bound(kappa, gamma), "{integral} vs {}", integral_bound(kappa, gamma));
        }
    }

    #[test]
    fn convolution_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        let r = convolution_hessian_check(&id, &id, &id, &id, 1e-12).unwrap();
        assert_abs_diff_eq!(r.hessian[0][0], 0.5, epsilon = 1e-15);
        assert!(r.pass && r.lower_margin.abs() < 1e-15 && r.upper_margin.abs() < 1e-15);
        let zero = DMatrix::zeros(2, 2);
        let sp = diag(&[1.0, 2.0]);
        let r = convolution_hessian_check(&id, &(&id * 2.0), &zero, &sp, 1e-12).unwrap();
        assert!(r.pass);
        let r = convolution_hessian_check(&id, &(&id * 2.0), &id, &sp, 1e-12).unwrap();
        assert!(r.pass);
        assert_abs_diff_eq!(r.hessian[0][0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.hessian[1][1], 1.0 / 3.0, epsilon = 1e-15);
        // a covariance outside the hypothesis fails
        let r = convolution_hessian_check(&id, &(&id * 2.0), &id, &diag(&[3.0, 1.0]), 1e-12).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn lyapunov_examples() {
        assert_abs_diff_eq!(lyapunov_gaussian(&GaussianDensity::standard(4)).unwrap(), 0.0, epsilon = 1e-15);
        let p = GaussianDensity::new(DVector::zeros(2), DMatrix::identity(2, 2) * 0.5).unwrap();
        let kl = kl_to_standard(&p).unwrap();
        assert_abs_diff_eq!(kl, 0.5 - 1.0 - 0.5f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(kl, 0.19315, epsilon = 1e-5);
    }

    #[test]
    fn lyapunov_decays_along_path() {
        let p0 = GaussianDensity::new(DVector::zeros(2), diag(&[0.5, 1.0])).unwrap();
        let l0 = lyapunov_gaussian(&p0).unwrap();
        for i in 0..100 {
            let t = 30.0 * i as f64 / 99.0;
            let l = lyapunov_gaussian(&gaussian_evolve(&p0, 1.0, t).unwrap()).unwrap();
            assert!(l <= l0 * (-t / 10.0).exp() * (1.0 + 1e-6), "t={t}: {l} vs {l0}");
        }
    }

    #[test]
    fn sde_stationary_covariance() {
        let n = 4000;
        let cfg = SdeConfig { gamma: 1.0, eta: 0.02, steps: 500, n_particles: n, seed: 11, noise: true };
        let init = GaussianDensity::new(DVector::zeros(2), diag(&[0.5, 1.0])).unwrap();
        let cloud = sde_simulate(|x, g| g.copy_from_slice(x), &init, &cfg).unwrap();
        let cov = cloud.covariance();
        // Euler–Maruyama bias on the stationary covariance is O(η)
        let tol = 3.0 / (n as f64).sqrt() + 0.05;
        assert!((cov - DMatrix::<f64>::identity(2, 2)).amax() < tol);
        let again = sde_simulate(|x, g| g.copy_from_slice(x), &init, &cfg).unwrap();
        assert_eq!(cloud, again);
    }

    #[test]
    fn sde_matches_variance_proxy() {
        let n = 20000;
        let eta = 0.002;
        let cfg = SdeConfig { gamma: 1.0, eta, steps: 500, n_particles: n, seed: 5, noise: true };
        let s0 = diag(&[0.5, 1.0]);
        let init = GaussianDensity::new(DVector::zeros(2), s0.clone()).unwrap();
        let cloud = sde_simulate(|x, g| g.copy_from_slice(x), &init, &cfg).unwrap();
        let expect = variance_proxy(&s0, 1.0, 1.0).unwrap();
        let tol = 4.0 * 2f64.sqrt() / (n as f64).sqrt() + 5.0 * eta;
        assert!((cloud.covariance() - expect).amax() < tol);
    }

    struct Linear(f64);
    impl PairField for Linear {
        fn half_dim(&self) -> usize {
            1
        }
        fn f(&self, _x: &[f64], v: &[f64], _t: f64, o: &mut [f64]) {
            o[0] = v[0];
        }
        fn g(&self, x: &[f64], v: &[f64], _t: f64, o: &mut [f64]) {
            o[0] = -x[0] - self.0 * v[0];
        }
        fn f_jac(&self, _: &[f64], _: &[f64], _: f64) -> (DMatrix<f64>, DMatrix<f64>) {
            (DMatrix::zeros(1, 1), DMatrix::identity(1, 1))
        }
        fn g_jac(&self, _: &[f64], _: &[f64], _: f64) -> (DMatrix<f64>, DMatrix<f64>) {
            (-DMatrix::identity(1, 1), DMatrix::from_element(1, 1, -self.0))
        }
    }

    #[test]
    fn sde_without_noise_is_alternating_euler() {
        let cfg = SdeConfig { gamma: 0.8, eta: 0.05, steps: 60, n_particles: 3, seed: 2, noise: false };
        let init = GaussianDensity::new(DVector::from_vec(vec![0.3, -0.2]), diag(&[0.5, 1.0])).unwrap();
        let cloud = sde_simulate(|x, g| g.copy_from_slice(x), &init, &cfg).unwrap();
        let chol = init.cholesky_factor().unwrap();
        for (i, p) in cloud.particles.iter().enumerate() {
            let z0 = init.sample_with(&chol, &mut particle_rng(2, i as u64));
            let traj = alternating_euler(&Linear(0.8), &z0[..1], &z0[1..], 0.0, 0.05, 60).unwrap();
            let (x, v) = traj.last().unwrap();
            assert_abs_diff_eq!(p[0], x[0], epsilon = 1e-14);
            assert_abs_diff_eq!(p[1], v[0], epsilon = 1e-14);
        }
    }

    #[test]
    fn path_flow_transports_gaussian_statistics() {
        // The flow of the path field is affine: T(z) = M z + b. Pushing N(μ0, Σ0)
        // through it must reproduce μ_t and Σ_t.
        let s0 = diag(&[0.4, 0.7, 1.0, 1.0]);
        let mu0 = DVector::from_vec(vec![0.5, -0.2, 0.1, 0.3]);
        let p0 = GaussianDensity::new(mu0.clone(), s0.clone()).unwrap();
        let field = GaussianPathField { p0: p0.clone(), gamma: 0.9 };
        let t = 1.5;
        let (b, m) = integrate_with_jacobian(&field, &[0.0; 4], 0.0, t, 600).unwrap();
        let mean = &m * &mu0 + DVector::from_vec(b);
        let cov = &m * &s0 * m.transpose();
        let pt = gaussian_evolve(&p0, 0.9, t).unwrap();
        assert!((mean - pt.mean).amax() < 1e-6);
        assert!((cov - pt.cov).amax() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn variance_proxy_solves_lyapunov_ode(gi in 0usize..3, d in 1usize..3, seed in 0u64..1000) {
            let gamma = [0.5, 1.0, 1.5][gi];
            let n = 2 * d;
            let mut rng = particle_rng(seed, 0);
            let a = DMatrix::<f64>::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -0.5f64..0.5));
            let s0 = &a * a.transpose() + DMatrix::identity(n, n) * 0.3;
            let b = coupling_matrix(gamma, d);
            let mut src = DMatrix::zeros(n, n);
            for i in d..n { src[(i, i)] = 2.0 * gamma; }
            let field = odeflow::FnField::new(
                n * n,
                |y: &[f64], _t: f64, out: &mut [f64]| {
                    let s = DMatrix::from_column_slice(n, n, y);
                    out.copy_from_slice((&b * &s + &s * b.transpose() + &src).as_slice());
                },
                |_: &[f64], _: f64| unreachable!(),
            );
            let y = integrate(&field, s0.as_slice(), 0.0, 10.0, 4000).unwrap();
            let closed = variance_proxy(&s0, gamma, 10.0).unwrap();
            prop_assert!((DMatrix::from_column_slice(n, n, &y) - closed).amax() < 1e-8);
        }

        #[test]
        fn precision_sandwich_along_path(ki in 0usize..3, gi in 0usize..3, t in 0.0f64..15.0) {
            let kappa = [1.0, 2.0, 4.0][ki];
            let gamma = [0.5, 1.0, 1.5][gi];
            let s0 = diag(&[1.0 / kappa, 0.5 * (1.0 + 1.0 / kappa), 1.0, 1.0]);
            let s = variance_proxy(&s0, gamma, t).unwrap();
            let eig = sym_eigenvalues(&spd_inverse(&s).unwrap());
            let e = odeflow::spectral_norm(&DMatrix::from_column_slice(2, 2, block_exp(gamma, t).as_slice()));
            prop_assert!(eig.min() >= 1.0 - 1e-10);
            prop_assert!(eig.max() <= (1.0 + (kappa - 1.0) * e * e) * (1.0 + 1e-10));
        }
    }
}
