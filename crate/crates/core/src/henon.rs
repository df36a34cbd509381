//! Hénon-like polynomial systems whose time-2π map reproduces a short
//! Hamiltonian-type flow to first order in the chunk length `τ`.
//!
//! The approximating system on `s ∈ [0, 2π]` is
//!
//! ```text
//! ẋ_j = v_j − τ F_j(v, s) x_j
//! v̇_j = −Ω_j² x_j − τ J_j(x, s) − τ v_j G_j(x, s)
//! ```
//!
//! With integer frequencies the unperturbed flow is 2π-periodic, so variation
//! of constants gives the time-2π map `x ↦ x − τ I₁`, `v ↦ v − τ I₂` up to
//! `O(τ²)`, where `I₁`, `I₂` are integrals of `J, F, G` along the harmonic
//! solution. Requiring `I₁ = r₁`, `I₂ = r₂` for target polynomials `r` and
//! matching monomial coefficients of `x(0)^p v(0)^q` splits into independent
//! linear systems, one per coordinate `j` and multi-index `k`.
//!
//! Unknown coefficient functions are expanded in the basis
//! `g_{K,r}(s) = Π cos(Ω_i s)^{r_i} sin(Ω_i s)^{K_i−r_i}` with `K = k + e_j`;
//! every matrix entry is an exact inner product of trigonometric polynomials.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multipoly::{basis_g, MultiIndex, Polynomial, TimeVaryingPolynomial, TrigFunction};
use crate::odeflow::{self, FlowDistance, FlowProbe, PairField, VectorField};

/// Relative singular-value cutoff used for the numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Largest accepted back-substitution residual of a coefficient system.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// `Ω_1 = 1`, `Ω_j = 1 + M + … + M^{j−1}` (that is `(M^j − 1)/(M − 1)` for `M > 1`).
pub fn frequencies(d: usize, m: u32) -> Result<Vec<u32>> {
    if d == 0 || m == 0 {
        return Err(Error::Parameter(format!(
            "frequencies need d >= 1 and M >= 1, got d={d}, M={m}"
        )));
    }
    let mut out = Vec::with_capacity(d);
    let mut sum: u32 = 0;
    let mut pow: u32 = 1;
    for j in 0..d {
        sum = sum.checked_add(pow).ok_or_else(|| overflow(d, m))?;
        out.push(sum);
        if j + 1 < d {
            pow = pow.checked_mul(m).ok_or_else(|| overflow(d, m))?;
        }
    }
    Ok(out)
}

fn overflow(d: usize, m: u32) -> Error {
    Error::Parameter(format!("frequencies overflow for d={d}, M={m}"))
}

/// Harmonic solution `x_j(t) = x_j cos Ω_j t + (v_j/Ω_j) sin Ω_j t`, `v_j(t) = −Ω_j x_j sin Ω_j t + v_j cos Ω_j t`.
pub fn unperturbed_solution(x0: &[f64], v0: &[f64], omega: &[u32], t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(x0.len());
    let mut v = Vec::with_capacity(v0.len());
    for ((&xj, &vj), &w) in x0.iter().zip(v0).zip(omega) {
        let w = w as f64;
        let (s, c) = (w * t).sin_cos();
        x.push(xj * c + vj / w * s);
        v.push(-w * xj * s + vj * c);
    }
    (x, v)
}

/// Targets for the time-2π map: `r1_j = ∂H/∂v_j`, `r2_j = −∂H/∂x_j − γ ∂H/∂v_j`.
///
/// `H` is a polynomial in `(x, v)` (2d variables). The chunk map is
/// `z ↦ z − τ (r1, r2)`, the first-order inverse of the flow of
/// `ẋ = ∂H/∂v`, `v̇ = −∂H/∂x − γ∂H/∂v`; with `forward` set, the signs flip so the
/// target is the forward flow instead.
pub fn target_polynomials(
    h: &Polynomial,
    gamma: f64,
    forward: bool,
) -> Result<(Vec<Polynomial>, Vec<Polynomial>)> {
    let d = phase_half_dim(h.dim())?;
    let sign = if forward { -1.0 } else { 1.0 };
    let mut r1 = Vec::with_capacity(d);
    let mut r2 = Vec::with_capacity(d);
    for j in 0..d {
        let hx = h.partial(j)?;
        let hv = h.partial(d + j)?;
        r1.push(hv.scale(sign));
        r2.push(hx.add(&hv.scale(gamma)).scale(-sign));
    }
    Ok((r1, r2))
}

fn phase_half_dim(n: usize) -> Result<usize> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Input(format!(
            "Hamiltonian must live on an even-dimensional phase space, got {n} variables"
        )));
    }
    Ok(n / 2)
}

/// Settings for [`solve_coefficients`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HenonConfig {
    /// Maximum degree `M` of the targets `r1, r2` (so `H` has degree at most `M + 1`).
    pub degree: u32,
    pub gamma: f64,
    /// Chunk length; only scales the field, the coefficients do not depend on it.
    pub tau: f64,
    /// Approximate the forward chunk flow instead of its inverse.
    pub forward: bool,
}

/// Diagnostics of one `(j, k)` coefficient system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemReport {
    pub j: usize,
    pub k: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub residual: f64,
    /// Smallest retained singular value divided by the largest.
    pub sv_ratio: f64,
}

/// Solved approximating system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HenonSystem {
    pub omega: Vec<u32>,
    pub gamma: f64,
    pub tau: f64,
    pub degree: u32,
    pub forward: bool,
    /// `J_j(x, s)`, polynomials in `x`.
    pub j: Vec<TimeVaryingPolynomial>,
    /// `F_j(v, s)`, polynomials in `v`.
    pub f: Vec<TimeVaryingPolynomial>,
    /// `G_j(x, s)`, polynomials in `x`.
    pub g: Vec<TimeVaryingPolynomial>,
    pub reports: Vec<SystemReport>,
}

impl HenonSystem {
    pub fn d(&self) -> usize {
        self.omega.len()
    }

    pub fn max_residual(&self) -> f64 {
        self.reports.iter().fold(0.0, |m, r| m.max(r.residual))
    }

    /// Same coefficients with a different chunk length.
    pub fn with_tau(&self, tau: f64) -> HenonSystem {
        HenonSystem {
            tau,
            ..self.clone()
        }
    }
}

/// Symbolic building blocks: harmonic solutions as time-varying polynomials in `(x0, v0)`.
struct Harmonics {
    d: usize,
    omega: Vec<u32>,
    /// `X⁰_l^e` for each l, e ≤ max power.
    xpow: Vec<Vec<TimeVaryingPolynomial>>,
    vpow: Vec<Vec<TimeVaryingPolynomial>>,
}

impl Harmonics {
    fn new(omega: &[u32], max_pow: u32) -> Self {
        let d = omega.len();
        let n = 2 * d;
        let mut xpow = Vec::with_capacity(d);
        let mut vpow = Vec::with_capacity(d);
        for (l, &w) in omega.iter().enumerate() {
            let wf = w as f64;
            let mut x = TimeVaryingPolynomial::zero(n);
            x.add_term(MultiIndex::unit(n, l), &TrigFunction::cos(w));
            x.add_term(MultiIndex::unit(n, d + l), &TrigFunction::sin(w).scale(1.0 / wf));
            let mut v = TimeVaryingPolynomial::zero(n);
            v.add_term(MultiIndex::unit(n, l), &TrigFunction::sin(w).scale(-wf));
            v.add_term(MultiIndex::unit(n, d + l), &TrigFunction::cos(w));
            let mut xp = vec![TimeVaryingPolynomial::constant(n, TrigFunction::constant(1.0))];
            let mut vp = xp.clone();
            for e in 1..=max_pow as usize {
                xp.push(xp[e - 1].mul(&x));
                vp.push(vp[e - 1].mul(&v));
            }
            xpow.push(xp);
            vpow.push(vp);
        }
        Harmonics {
            d,
            omega: omega.to_vec(),
            xpow,
            vpow,
        }
    }

    /// `Π_l X⁰_l^{k_l}` (or the velocity analogue).
    fn monomial(&self, k: &MultiIndex, velocity: bool) -> TimeVaryingPolynomial {
        let table = if velocity { &self.vpow } else { &self.xpow };
        let mut out = TimeVaryingPolynomial::constant(2 * self.d, TrigFunction::constant(1.0));
        for (l, &e) in k.entries().iter().enumerate() {
            if e > 0 {
                out = out.mul(&table[l][e as usize]);
            }
        }
        out
    }

    fn sin(&self, j: usize) -> TrigFunction {
        TrigFunction::sin(self.omega[j])
    }

    fn cos(&self, j: usize) -> TrigFunction {
        TrigFunction::cos(self.omega[j])
    }
}

/// The six kernels multiplying the unknown functions in `(I₁, I₂)` for one `(j, k)`.
struct Kernels {
    j: [TimeVaryingPolynomial; 2],
    fg: Option<([TimeVaryingPolynomial; 2], [TimeVaryingPolynomial; 2])>,
}

fn kernels(h: &Harmonics, j: usize, k: &MultiIndex) -> Kernels {
    let w = h.omega[j] as f64;
    let minus_sin = h.sin(j).scale(-1.0 / w);
    let xk = h.monomial(k, false);
    let jk = [xk.mul_trig(&minus_sin), xk.mul_trig(&h.cos(j))];
    let fg = k.shifted(j, -1).map(|i| {
        let pf = h.monomial(&i, true).mul(&h.xpow[j][1]);
        let pg = h.monomial(&i, false).mul(&h.vpow[j][1]);
        (
            [pf.mul_trig(&h.cos(j)), pf.mul_trig(&h.sin(j).scale(w))],
            [pg.mul_trig(&minus_sin), pg.mul_trig(&h.cos(j))],
        )
    });
    Kernels { j: jk, fg }
}

struct Solved {
    report: SystemReport,
    vj: TrigFunction,
    vf: Option<TrigFunction>,
    vg: Option<TrigFunction>,
}

/// Assemble the `(j, k)` system: rows are the coefficients of `x0^p v0^q`, `p + q = k`,
/// in `I₁` then `I₂`; columns are basis coefficients of `v^J`, `v^F`, `v^G`.
fn assemble(
    h: &Harmonics,
    j: usize,
    k: &MultiIndex,
    r1: &Polynomial,
    r2: &Polynomial,
) -> (DMatrix<f64>, DVector<f64>, Vec<TrigFunction>, bool) {
    let d = h.d;
    let big_k = k.add(&MultiIndex::unit(d, j));
    let basis: Vec<TrigFunction> = big_k
        .box_indices()
        .iter()
        .map(|r| basis_g(&big_k, r, &h.omega))
        .collect();
    let nb = basis.len();
    let ker = kernels(h, j, k);
    let blocks: Vec<&[TimeVaryingPolynomial; 2]> = match &ker.fg {
        Some((f, g)) => vec![&ker.j, f, g],
        None => vec![&ker.j],
    };
    let monomials: Vec<MultiIndex> = k
        .box_indices()
        .into_iter()
        .map(|p| {
            let q = k.checked_sub(&p).expect("p lies in the box");
            p.concat(&q)
        })
        .collect();
    let rows = 2 * monomials.len();
    let cols = blocks.len() * nb;
    let mut a = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    for (mi, mono) in monomials.iter().enumerate() {
        b[2 * mi] = r1.coeff(mono);
        b[2 * mi + 1] = r2.coeff(mono);
        for (bi, kern) in blocks.iter().enumerate() {
            for half in 0..2 {
                let phi = kern[half].coeff(mono);
                if phi.is_zero() {
                    continue;
                }
                for (ri, g) in basis.iter().enumerate() {
                    a[(2 * mi + half, bi * nb + ri)] = g.inner_product(&phi);
                }
            }
        }
    }
    (a, b, basis, ker.fg.is_some())
}

/// Minimum-norm least-squares solve with numerical rank.
fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize, f64, Vec<f64>) {
    let svd = a.clone().svd(true, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s >= RANK_TOLERANCE * smax && s > 0.0).count();
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut x = DVector::zeros(a.ncols());
    let mut smin = smax;
    for (i, &s) in sv.iter().enumerate() {
        if s >= RANK_TOLERANCE * smax && s > 0.0 {
            let coef = u.column(i).dot(b) / s;
            x += vt.row(i).transpose() * coef;
            smin = smin.min(s);
        }
    }
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    (x, rank, ratio, sv)
}

fn solve_one(
    h: &Harmonics,
    j: usize,
    k: &MultiIndex,
    r1: &Polynomial,
    r2: &Polynomial,
) -> Result<Solved> {
    let (a, b, basis, has_fg) = assemble(h, j, k, r1, r2);
    let (x, rank, sv_ratio, sv) = min_norm_solve(&a, &b);
    let residual = (&a * &x - &b).amax();
    let rows = a.nrows();
    if rank < rows || !(residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::Solvability {
            j,
            k: k.entries().to_vec(),
            residual,
            rank,
            rows,
            singular_values: sv,
        });
    }
    let nb = basis.len();
    let combine = |block: usize| {
        let mut f = TrigFunction::zero();
        for (ri, g) in basis.iter().enumerate() {
            let c = x[block * nb + ri];
            if c != 0.0 {
                f.add_assign(&g.scale(c));
            }
        }
        f
    };
    Ok(Solved {
        report: SystemReport {
            j,
            k: k.entries().to_vec(),
            rows,
            cols: a.ncols(),
            rank,
            residual,
            sv_ratio,
        },
        vj: combine(0),
        vf: has_fg.then(|| combine(1)),
        vg: has_fg.then(|| combine(2)),
    })
}

/// Solve every `(j, k)` system for the Hamiltonian `h` (a polynomial in `(x, v)`).
pub fn solve_coefficients(h: &Polynomial, cfg: &HenonConfig) -> Result<HenonSystem> {
    let d = phase_half_dim(h.dim())?;
    let m = cfg.degree;
    if h.degree() > m + 1 {
        return Err(Error::Parameter(format!(
            "Hamiltonian degree {} exceeds M + 1 = {}",
            h.degree(),
            m + 1
        )));
    }
    let omega = frequencies(d, m)?;
    let (r1, r2) = target_polynomials(h, cfg.gamma, cfg.forward)?;
    let harm = Harmonics::new(&omega, m);
    let indices = MultiIndex::all_up_to_degree(d, m);
    let jobs: Vec<(usize, &MultiIndex)> = (0..d)
        .flat_map(|j| indices.iter().map(move |k| (j, k)))
        .collect();
    let solved: Vec<Solved> = jobs
        .par_iter()
        .map(|&(j, k)| solve_one(&harm, j, k, &r1[j], &r2[j]))
        .collect::<Result<_>>()?;

    let mut jp = vec![TimeVaryingPolynomial::zero(d); d];
    let mut fp = vec![TimeVaryingPolynomial::zero(d); d];
    let mut gp = vec![TimeVaryingPolynomial::zero(d); d];
    let mut reports = Vec::with_capacity(solved.len());
    for (s, &(j, k)) in solved.into_iter().zip(&jobs) {
        jp[j].add_term(k.clone(), &s.vj);
        if let (Some(vf), Some(vg)) = (s.vf, s.vg) {
            let i = k.shifted(j, -1).expect("k_j >= 1 when F and G are present");
            fp[j].add_term(i.clone(), &vf);
            gp[j].add_term(i, &vg);
        }
        reports.push(s.report);
    }
    Ok(HenonSystem {
        omega,
        gamma: cfg.gamma,
        tau: cfg.tau,
        degree: m,
        forward: cfg.forward,
        j: jp,
        f: fp,
        g: gp,
        reports,
    })
}

/// Substitute the solved `J, F, G` along the harmonic solution and integrate
/// over one period symbolically, giving `(I₁_j, I₂_j)` as polynomials in `(x0, v0)`.
pub fn constraint_polynomials(sys: &HenonSystem) -> (Vec<Polynomial>, Vec<Polynomial>) {
    let d = sys.d();
    let max_pow = sys.degree + 1;
    let harm = Harmonics::new(&sys.omega, max_pow);
    let compose = |p: &TimeVaryingPolynomial, velocity: bool| {
        let mut out = TimeVaryingPolynomial::zero(2 * d);
        for (idx, f) in p.terms() {
            out = out.add(&harm.monomial(idx, velocity).mul_trig(f));
        }
        out
    };
    let mut i1 = Vec::with_capacity(d);
    let mut i2 = Vec::with_capacity(d);
    for j in 0..d {
        let w = sys.omega[j] as f64;
        let jx = compose(&sys.j[j], false);
        let fx = compose(&sys.f[j], true).mul(&harm.xpow[j][1]);
        let gv = compose(&sys.g[j], false).mul(&harm.vpow[j][1]);
        let (s, c) = (harm.sin(j), harm.cos(j));
        let a1 = jx
            .add(&gv)
            .mul_trig(&s.scale(-1.0 / w))
            .add(&fx.mul_trig(&c));
        let a2 = jx.add(&gv).mul_trig(&c).add(&fx.mul_trig(&s.scale(w)));
        i1.push(a1.integrate_period());
        i2.push(a2.integrate_period());
    }
    (i1, i2)
}

// ---------------------------------------------------------------------------
// Fields

/// Polynomial with trigonometric coefficients, flattened for evaluation.
#[derive(Clone, Debug)]
struct FastTvp {
    exps: Vec<Vec<u32>>,
    coeffs: Vec<TrigFunction>,
}

impl FastTvp {
    fn new(p: &TimeVaryingPolynomial) -> Self {
        let (exps, coeffs) = p
            .terms()
            .map(|(i, f)| (i.entries().to_vec(), f.clone()))
            .unzip();
        FastTvp { exps, coeffs }
    }

    fn eval(&self, z: &[f64], t: f64) -> f64 {
        self.exps
            .iter()
            .zip(&self.coeffs)
            .map(|(e, f)| f.eval(t) * MultiIndex::new(e.clone()).pow(z))
            .sum()
    }
}

/// The approximating field of a solved system, with analytic Jacobians.
#[derive(Clone, Debug)]
pub struct HenonField {
    omega: Vec<f64>,
    tau: f64,
    j: Vec<FastTvp>,
    f: Vec<FastTvp>,
    g: Vec<FastTvp>,
    dj: Vec<Vec<FastTvp>>,
    df: Vec<Vec<FastTvp>>,
    dg: Vec<Vec<FastTvp>>,
}

pub fn approximating_field(sys: &HenonSystem) -> HenonField {
    let d = sys.d();
    let fast = |v: &[TimeVaryingPolynomial]| v.iter().map(FastTvp::new).collect::<Vec<_>>();
    let grad = |v: &[TimeVaryingPolynomial]| {
        v.iter()
            .map(|p| (0..d).map(|l| FastTvp::new(&p.partial(l).expect("l < d"))).collect())
            .collect::<Vec<_>>()
    };
    HenonField {
        omega: sys.omega.iter().map(|&w| w as f64).collect(),
        tau: sys.tau,
        j: fast(&sys.j),
        f: fast(&sys.f),
        g: fast(&sys.g),
        dj: grad(&sys.j),
        df: grad(&sys.f),
        dg: grad(&sys.g),
    }
}

impl PairField for HenonField {
    fn half_dim(&self) -> usize {
        self.omega.len()
    }
    fn f(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) {
        for j in 0..out.len() {
            out[j] = v[j] - self.tau * self.f[j].eval(v, t) * x[j];
        }
    }
    fn g(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) {
        for j in 0..out.len() {
            let w = self.omega[j];
            out[j] = -w * w * x[j] - self.tau * self.j[j].eval(x, t) - self.tau * v[j] * self.g[j].eval(x, t);
        }
    }
    fn f_jac(&self, x: &[f64], v: &[f64], t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.half_dim();
        let mut fx = DMatrix::zeros(d, d);
        let mut fv = DMatrix::identity(d, d);
        for j in 0..d {
            fx[(j, j)] = -self.tau * self.f[j].eval(v, t);
            for l in 0..d {
                fv[(j, l)] -= self.tau * x[j] * self.df[j][l].eval(v, t);
            }
        }
        (fx, fv)
    }
    fn g_jac(&self, x: &[f64], v: &[f64], t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.half_dim();
        let mut gx = DMatrix::zeros(d, d);
        let mut gv = DMatrix::zeros(d, d);
        for j in 0..d {
            gx[(j, j)] = -self.omega[j] * self.omega[j];
            for l in 0..d {
                gx[(j, l)] -= self.tau * (self.dj[j][l].eval(x, t) + v[j] * self.dg[j][l].eval(x, t));
            }
            gv[(j, j)] = -self.tau * self.g[j].eval(x, t);
        }
        (gx, gv)
    }
}

/// The `O(τ)` part of the approximating field divided by `τ`, as a field on `z = (x, v)`:
/// `(−F(v, s) ⊙ x, −J(x, s) − v ⊙ G(x, s))`.
pub struct HenonPerturbation(HenonField);

pub fn perturbation_part(sys: &HenonSystem) -> HenonPerturbation {
    HenonPerturbation(approximating_field(&sys.with_tau(1.0)))
}

/// Harmonic generator `[[0, I], [−diag(Ω²), 0]]`.
pub fn harmonic_matrix(omega: &[u32]) -> DMatrix<f64> {
    let d = omega.len();
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for (j, &w) in omega.iter().enumerate() {
        a[(j, d + j)] = 1.0;
        a[(d + j, j)] = -((w * w) as f64);
    }
    a
}

impl VectorField for HenonPerturbation {
    fn dim(&self) -> usize {
        2 * self.0.half_dim()
    }
    fn rhs(&self, z: &[f64], t: f64, out: &mut [f64]) {
        let d = self.0.half_dim();
        let (x, v) = z.split_at(d);
        for j in 0..d {
            out[j] = -self.0.f[j].eval(v, t) * x[j];
            out[d + j] = -self.0.j[j].eval(x, t) - v[j] * self.0.g[j].eval(x, t);
        }
    }
    fn jacobian(&self, z: &[f64], t: f64) -> DMatrix<f64> {
        let d = self.0.half_dim();
        let mut jac = odeflow::Joined(&self.0).jacobian(z, t);
        // remove the harmonic part, keeping only the τ-scaled terms (τ = 1 here)
        for j in 0..d {
            jac[(j, d + j)] -= 1.0;
            jac[(d + j, j)] += self.0.omega[j] * self.0.omega[j];
        }
        jac
    }
}

/// `ẋ = ∂H/∂v`, `v̇ = −∂H/∂x − γ ∂H/∂v` for a time-independent polynomial `H`.
#[derive(Clone, Debug)]
pub struct HamiltonianField {
    d: usize,
    rhs: Vec<Polynomial>,
    jac: Vec<Vec<Polynomial>>,
}

impl HamiltonianField {
    pub fn new(h: &Polynomial, gamma: f64) -> Result<Self> {
        // forward targets are exactly minus the field components
        let (r1, r2) = target_polynomials(h, gamma, false)?;
        let d = r1.len();
        let rhs: Vec<Polynomial> = r1.into_iter().chain(r2).collect();
        let jac = rhs.iter().map(|p| p.gradient()).collect();
        Ok(HamiltonianField { d, rhs, jac })
    }
}

impl VectorField for HamiltonianField {
    fn dim(&self) -> usize {
        2 * self.d
    }
    fn rhs(&self, z: &[f64], _t: f64, out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.rhs) {
            *o = p.eval_unchecked(z);
        }
    }
    fn jacobian(&self, z: &[f64], _t: f64) -> DMatrix<f64> {
        let n = 2 * self.d;
        DMatrix::from_fn(n, n, |r, c| self.jac[r][c].eval_unchecked(z))
    }
}

/// Time-2π map of the approximating system with its Jacobian (RK4 with `steps` steps).
pub fn period_map(
    field: &HenonField,
    z0: &[f64],
    steps: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    odeflow::integrate_with_jacobian(&odeflow::Joined(field), z0, 0.0, 2.0 * PI, steps)
}

/// Chunk-order studies whose distances all fall below this are flagged degenerate.
pub const CHUNK_DEGENERATE_DISTANCE: f64 = 1e-8;

/// Result of [`verify_chunk_order`].
#[derive(Clone, Debug, Serialize)]
pub struct ChunkOrderReport {
    pub taus: Vec<f64>,
    pub distances: Vec<FlowDistance>,
    pub slope: Option<f64>,
    /// Set when all distances are at round-off level (e.g. `H = 0`).
    pub degenerate: bool,
    pub max_residual: f64,
}

/// C¹ distance between the time-2π map and the exact chunk map over `points`, for each `τ`.
pub fn verify_chunk_order(
    h: &Polynomial,
    cfg: &HenonConfig,
    points: &[Vec<f64>],
    taus: &[f64],
    steps: usize,
) -> Result<ChunkOrderReport> {
    if taus.len() < 2 {
        return Err(Error::Input("need at least two chunk lengths".into()));
    }
    let base = solve_coefficients(h, cfg)?;
    let truth = HamiltonianField::new(h, cfg.gamma)?;
    let mut distances = Vec::with_capacity(taus.len());
    for &tau in taus {
        let field = approximating_field(&base.with_tau(tau));
        let approx = FlowProbe::sample(points, |z| period_map(&field, z, steps))?;
        let (t0, t1) = if cfg.forward { (0.0, tau) } else { (tau, 0.0) };
        let exact = FlowProbe::sample(points, |z| {
            odeflow::integrate_with_jacobian(&truth, z, t0, t1, steps)
        })?;
        distances.push(odeflow::flow_distance(&approx, &exact)?);
    }
    let c1: Vec<f64> = distances.iter().map(|d| d.c1).collect();
    // RK4 over a full period leaves ~1e−10 of integration error even when both maps agree
    let (slope, degenerate) = if c1.iter().all(|&c| c < CHUNK_DEGENERATE_DISTANCE) {
        (None, true)
    } else {
        match odeflow::loglog_slope(taus, &c1) {
            Ok(s) => (Some(s), false),
            Err(Error::DegenerateFit(_)) => (None, true),
            Err(e) => return Err(e),
        }
    };
    Ok(ChunkOrderReport {
        taus: taus.to_vec(),
        distances,
        slope,
        degenerate,
        max_residual: base.max_residual(),
    })
}

/// First-order integrals `(I₁, I₂)` at a phase-space point by composite Simpson quadrature.
pub fn first_order_integrals_quadrature(
    sys: &HenonSystem,
    z0: &[f64],
    nodes: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = sys.d();
    let field = approximating_field(&sys.with_tau(1.0));
    let n = nodes + nodes % 2;
    let h = 2.0 * PI / n as f64;
    let mut i1 = vec![0.0; d];
    let mut i2 = vec![0.0; d];
    let mut cache: HashMap<usize, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for node in 0..=n {
        let s = node as f64 * h;
        let w = if node == 0 || node == n {
            1.0
        } else if node % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let (x, v) = cache
            .entry(node)
            .or_insert_with(|| unperturbed_solution(&z0[..d], &z0[d..], &sys.omega, s))
            .clone();
        for j in 0..d {
            let om = sys.omega[j] as f64;
            let (sn, cs) = (om * s).sin_cos();
            let jv = field.j[j].eval(&x, s);
            let fv = field.f[j].eval(&v, s);
            let gv = field.g[j].eval(&x, s);
            i1[j] += w * (-(jv + gv * v[j]) * sn / om + fv * x[j] * cs);
            i2[j] += w * ((jv + gv * v[j]) * cs + om * fv * x[j] * sn);
        }
    }
    for j in 0..d {
        i1[j] *= h / 3.0;
        i2[j] *= h / 3.0;
    }
    (i1, i2)
}
