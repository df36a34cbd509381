//! Multivariate polynomials with real or trigonometric coefficients.
//!
//! Three representations live here:
//!
//! * [`Polynomial`]: sparse map from [`MultiIndex`] to a real coefficient.
//! * [`TrigFunction`]: a finite Fourier series `Σ a_m cos(m s) + b_m sin(m s)` with
//!   integer frequencies. Products are closed (product-to-sum) and the integral over
//!   `[0, 2π]` is exact, so inner products never go through quadrature.
//! * [`TimeVaryingPolynomial`]: polynomial whose coefficients are [`TrigFunction`]s.
//!
//! Terms are kept in graded lexicographic order, and coefficients with magnitude
//! below [`PRUNE_THRESHOLD`] are dropped after every arithmetic operation.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients smaller than this in magnitude are removed after arithmetic.
pub const PRUNE_THRESHOLD: f64 = 1e-14;

/// Exponent vector of a monomial.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// The index with a single 1 at position `i`.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// Total degree `|i|`.
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self - other`, or `None` when any entry would become negative.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Shift entry `i` by `delta`; `None` if it would go negative.
    pub fn shifted(&self, i: usize, delta: i32) -> Option<MultiIndex> {
        let mut e = self.0.clone();
        let v = e[i] as i64 + delta as i64;
        if v < 0 {
            return None;
        }
        e[i] = v as u32;
        Some(MultiIndex(e))
    }

    /// Concatenation `(self, other)`, used for phase-space indices `(p, q)`.
    pub fn concat(&self, other: &MultiIndex) -> MultiIndex {
        let mut e = self.0.clone();
        e.extend_from_slice(&other.0);
        MultiIndex(e)
    }

    /// Split into the first `at` entries and the rest.
    pub fn split(&self, at: usize) -> (MultiIndex, MultiIndex) {
        (
            MultiIndex(self.0[..at].to_vec()),
            MultiIndex(self.0[at..].to_vec()),
        )
    }

    /// Multinomial-style product of binomials `Π C(k_i, p_i)`; zero outside the box.
    pub fn binom(&self, p: &MultiIndex) -> f64 {
        self.0
            .iter()
            .zip(&p.0)
            .map(|(&k, &pi)| binomial(k, pi))
            .product()
    }

    /// `z^i`.
    pub fn pow(&self, z: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(z)
            .map(|(&e, &x)| if e == 0 { 1.0 } else { x.powi(e as i32) })
            .product()
    }

    /// All indices `r` with `0 <= r <= self` componentwise, in graded lex order.
    pub fn box_indices(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex(Vec::with_capacity(self.dim()))];
        for &k in &self.0 {
            let mut next = Vec::with_capacity(out.len() * (k as usize + 1));
            for prefix in &out {
                for r in 0..=k {
                    let mut e = prefix.0.clone();
                    e.push(r);
                    next.push(MultiIndex(e));
                }
            }
            out = next;
        }
        out.sort();
        out
    }

    /// Number of indices in `[0, self]`.
    pub fn box_size(&self) -> usize {
        self.0.iter().map(|&k| k as usize + 1).product()
    }

    /// Every multi-index of length `dim` with total degree at most `degree`,
    /// in graded lexicographic order.
    pub fn all_up_to_degree(dim: usize, degree: u32) -> Vec<MultiIndex> {
        fn rec(dim: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if prefix.len() == dim {
                out.push(MultiIndex(prefix.clone()));
                return;
            }
            for e in 0..=left {
                prefix.push(e);
                rec(dim, left - e, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(dim, degree, &mut Vec::with_capacity(dim), &mut out);
        out.sort();
        out
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

// ---------------------------------------------------------------------------
// Polynomial

/// Sparse real polynomial in `dim` variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolynomialRepr", into = "PolynomialRepr")]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    idx: Vec<u32>,
    c: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolynomialRepr {
    dim: usize,
    terms: Vec<TermRepr>,
}

impl From<Polynomial> for PolynomialRepr {
    fn from(p: Polynomial) -> Self {
        PolynomialRepr {
            dim: p.dim,
            terms: p
                .terms
                .into_iter()
                .map(|(i, c)| TermRepr { idx: i.0, c })
                .collect(),
        }
    }
}

impl TryFrom<PolynomialRepr> for Polynomial {
    type Error = Error;

    fn try_from(r: PolynomialRepr) -> Result<Self> {
        let mut p = Polynomial::zero(r.dim);
        for t in r.terms {
            if t.idx.len() != r.dim {
                return Err(Error::Dimension {
                    expected: r.dim,
                    got: t.idx.len(),
                });
            }
            p.add_term(MultiIndex(t.idx), t.c);
        }
        Ok(p)
    }
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(MultiIndex::zeros(dim), c);
        p
    }

    pub fn monomial(idx: MultiIndex, c: f64) -> Self {
        let mut p = Self::zero(idx.dim());
        p.add_term(idx, c);
        p
    }

    /// The linear polynomial `z_i`.
    pub fn variable(dim: usize, i: usize) -> Self {
        Self::monomial(MultiIndex::unit(dim, i), 1.0)
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut p = Self::zero(dim);
        for (i, c) in terms {
            assert_eq!(i.dim(), dim, "multi-index length must equal dimension");
            p.add_term(i, c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(i, &c)| (i, c))
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, idx: &MultiIndex) -> f64 {
        self.terms.get(idx).copied().unwrap_or(0.0)
    }

    /// Total degree; zero for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|i| i.degree()).max().unwrap_or(0)
    }

    /// Largest coefficient magnitude.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn add_term(&mut self, idx: MultiIndex, c: f64) {
        debug_assert_eq!(idx.dim(), self.dim);
        let entry = self.terms.entry(idx.clone()).or_insert(0.0);
        *entry += c;
        if entry.abs() < PRUNE_THRESHOLD {
            self.terms.remove(&idx);
        }
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_THRESHOLD);
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: z.len(),
            });
        }
        Ok(self.eval_unchecked(z))
    }

    /// Evaluation without the length check; `z` must have `dim` entries.
    pub fn eval_unchecked(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|(i, c)| c * i.pow(z)).sum()
    }

    pub fn partial(&self, var: usize) -> Result<Polynomial> {
        if var >= self.dim {
            return Err(Error::Input(format!(
                "variable index {var} out of range for dimension {}",
                self.dim
            )));
        }
        let mut out = Polynomial::zero(self.dim);
        for (i, &c) in &self.terms {
            let e = i.0[var];
            if e == 0 {
                continue;
            }
            let mut j = i.clone();
            j.0[var] -= 1;
            out.add_term(j, c * e as f64);
        }
        Ok(out)
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.dim).map(|v| self.partial(v).unwrap()).collect()
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out.prune();
        out
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "polynomial dimensions differ");
        let mut out = self.clone();
        for (i, &c) in &other.terms {
            *out.terms.entry(i.clone()).or_insert(0.0) += c;
        }
        out.prune();
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "polynomial dimensions differ");
        let mut out = Polynomial::zero(self.dim);
        for (i, &a) in &self.terms {
            for (j, &b) in &other.terms {
                *out.terms.entry(i.add(j)).or_insert(0.0) += a * b;
            }
        }
        out.prune();
        out
    }

    /// Maximum absolute coefficient difference, a structural distance.
    pub fn coeff_distance(&self, other: &Polynomial) -> f64 {
        let mut d: f64 = 0.0;
        for (i, &c) in &self.terms {
            d = d.max((c - other.coeff(i)).abs());
        }
        for (i, &c) in &other.terms {
            if !self.terms.contains_key(i) {
                d = d.max(c.abs());
            }
        }
        d
    }

    /// Flattened `(exponents, coefficient)` form for tight evaluation loops.
    pub fn compile(&self) -> CompiledPolynomial {
        CompiledPolynomial {
            dim: self.dim,
            exps: self
                .terms
                .keys()
                .flat_map(|i| i.0.iter().copied())
                .collect(),
            coeffs: self.terms.values().copied().collect(),
        }
    }
}

/// Dense term list of a [`Polynomial`] for repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledPolynomial {
    dim: usize,
    exps: Vec<u32>,
    coeffs: Vec<f64>,
}

impl CompiledPolynomial {
    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (t, &c) in self.coeffs.iter().enumerate() {
            let e = &self.exps[t * self.dim..(t + 1) * self.dim];
            let mut m = c;
            for (&ei, &zi) in e.iter().zip(z) {
                match ei {
                    0 => {}
                    1 => m *= zi,
                    2 => m *= zi * zi,
                    _ => m *= zi.powi(ei as i32),
                }
            }
            acc += m;
        }
        acc
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }
}

pub fn poly_eval(p: &Polynomial, z: &[f64]) -> Result<f64> {
    p.eval(z)
}

pub fn poly_partial(p: &Polynomial, variable: usize) -> Result<Polynomial> {
    p.partial(variable)
}

// ---------------------------------------------------------------------------
// TrigFunction

/// Finite Fourier series with non-negative integer frequencies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "TrigRepr", into = "TrigRepr")]
pub struct TrigFunction {
    /// frequency -> (cosine coefficient, sine coefficient)
    modes: BTreeMap<u32, (f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct ModeRepr {
    m: i64,
    cos: f64,
    sin: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrigRepr {
    modes: Vec<ModeRepr>,
}

impl From<TrigFunction> for TrigRepr {
    fn from(f: TrigFunction) -> Self {
        TrigRepr {
            modes: f
                .modes
                .into_iter()
                .map(|(m, (a, b))| ModeRepr {
                    m: m as i64,
                    cos: a,
                    sin: b,
                })
                .collect(),
        }
    }
}

impl From<TrigRepr> for TrigFunction {
    fn from(r: TrigRepr) -> Self {
        let mut f = TrigFunction::zero();
        for m in r.modes {
            f.add_signed_mode(m.m, m.cos, m.sin);
        }
        f.prune();
        f
    }
}

impl TrigFunction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::mode(0, c, 0.0)
    }

    pub fn cos(m: u32) -> Self {
        Self::mode(m, 1.0, 0.0)
    }

    pub fn sin(m: u32) -> Self {
        Self::mode(m, 0.0, 1.0)
    }

    /// `a cos(m s) + b sin(m s)`.
    pub fn mode(m: u32, a: f64, b: f64) -> Self {
        let mut f = Self::zero();
        f.add_signed_mode(m as i64, a, b);
        f.prune();
        f
    }

    pub fn modes(&self) -> impl Iterator<Item = (u32, f64, f64)> + '_ {
        self.modes.iter().map(|(&m, &(a, b))| (m, a, b))
    }

    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn max_frequency(&self) -> u32 {
        self.modes.keys().next_back().copied().unwrap_or(0)
    }

    /// Coefficient of the constant mode.
    pub fn mean_coefficient(&self) -> f64 {
        self.modes.get(&0).map(|m| m.0).unwrap_or(0.0)
    }

    fn add_signed_mode(&mut self, m: i64, a: f64, b: f64) {
        // cos(-m s) = cos(m s), sin(-m s) = -sin(m s); sin(0) vanishes.
        let (freq, b) = if m < 0 { ((-m) as u32, -b) } else { (m as u32, b) };
        let b = if freq == 0 { 0.0 } else { b };
        let e = self.modes.entry(freq).or_insert((0.0, 0.0));
        e.0 += a;
        e.1 += b;
    }

    fn prune(&mut self) {
        self.modes.retain(|_, (a, b)| {
            if a.abs() < PRUNE_THRESHOLD {
                *a = 0.0;
            }
            if b.abs() < PRUNE_THRESHOLD {
                *b = 0.0;
            }
            *a != 0.0 || *b != 0.0
        });
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.modes
            .iter()
            .map(|(&m, &(a, b))| {
                if m == 0 {
                    a
                } else {
                    let (sn, cs) = (m as f64 * s).sin_cos();
                    a * cs + b * sn
                }
            })
            .sum()
    }

    pub fn scale(&self, c: f64) -> TrigFunction {
        let mut out = self.clone();
        for (a, b) in out.modes.values_mut() {
            *a *= c;
            *b *= c;
        }
        out.prune();
        out
    }

    pub fn add(&self, other: &TrigFunction) -> TrigFunction {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn add_assign(&mut self, other: &TrigFunction) {
        for (&m, &(a, b)) in &other.modes {
            let e = self.modes.entry(m).or_insert((0.0, 0.0));
            e.0 += a;
            e.1 += b;
        }
        self.prune();
    }

    /// Accumulate `c * other` without pruning; call [`Self::finish`] afterwards.
    fn add_scaled_raw(&mut self, other: &TrigFunction, c: f64) {
        for (&m, &(a, b)) in &other.modes {
            let e = self.modes.entry(m).or_insert((0.0, 0.0));
            e.0 += c * a;
            e.1 += c * b;
        }
    }

    fn finish(mut self) -> Self {
        self.prune();
        self
    }

    /// Exact product through product-to-sum identities.
    pub fn mul(&self, other: &TrigFunction) -> TrigFunction {
        let mut out = TrigFunction::zero();
        for (&m, &(a1, b1)) in &self.modes {
            for (&n, &(a2, b2)) in &other.modes {
                let (m, n) = (m as i64, n as i64);
                // cos m cos n = ½[cos(m-n) + cos(m+n)]
                // sin m sin n = ½[cos(m-n) - cos(m+n)]
                // sin m cos n = ½[sin(m+n) + sin(m-n)]
                // cos m sin n = ½[sin(m+n) - sin(m-n)]
                let cc = 0.5 * (a1 * a2 + b1 * b2);
                let cp = 0.5 * (a1 * a2 - b1 * b2);
                let sp = 0.5 * (b1 * a2 + a1 * b2);
                let sm = 0.5 * (b1 * a2 - a1 * b2);
                out.add_signed_mode(m - n, cc, sm);
                out.add_signed_mode(m + n, cp, sp);
            }
        }
        out.finish()
    }

    /// `∫₀^{2π} f(s) ds`.
    pub fn integral(&self) -> f64 {
        2.0 * PI * self.mean_coefficient()
    }

    /// `⟨f, g⟩ = ∫₀^{2π} f g ds`, evaluated from the matching modes directly.
    pub fn inner_product(&self, other: &TrigFunction) -> f64 {
        let mut acc = 0.0;
        for (&m, &(a1, b1)) in &self.modes {
            if let Some(&(a2, b2)) = other.modes.get(&m) {
                if m == 0 {
                    acc += 2.0 * PI * a1 * a2;
                } else {
                    acc += PI * (a1 * a2 + b1 * b2);
                }
            }
        }
        acc
    }

    pub fn pow(&self, e: u32) -> TrigFunction {
        let mut out = TrigFunction::constant(1.0);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }
}

pub fn trig_product(f: &TrigFunction, g: &TrigFunction) -> TrigFunction {
    f.mul(g)
}

pub fn trig_inner_product(f: &TrigFunction, g: &TrigFunction) -> f64 {
    f.inner_product(g)
}

/// `g_{k,p}(s) = Π_i cos(Ω_i s)^{p_i} sin(Ω_i s)^{k_i - p_i}`; zero when `p` lies outside `[0, k]`.
pub fn basis_g(k: &MultiIndex, p: &MultiIndex, omega: &[u32]) -> TrigFunction {
    assert_eq!(k.dim(), p.dim());
    assert_eq!(k.dim(), omega.len());
    if !p.le(k) {
        return TrigFunction::zero();
    }
    let mut out = TrigFunction::constant(1.0);
    for i in 0..k.dim() {
        let (ki, pi) = (k.0[i], p.0[i]);
        if ki == 0 {
            continue;
        }
        let c = TrigFunction::cos(omega[i]).pow(pi);
        let s = TrigFunction::sin(omega[i]).pow(ki - pi);
        out = out.mul(&c.mul(&s));
    }
    out
}

// ---------------------------------------------------------------------------
// TimeVaryingPolynomial

/// Polynomial whose coefficients are functions of time in closed trigonometric form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TvpRepr", into = "TvpRepr")]
pub struct TimeVaryingPolynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, TrigFunction>,
}

#[derive(Serialize, Deserialize)]
struct TvpTermRepr {
    idx: Vec<u32>,
    f: TrigFunction,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TvpRepr {
    dim: usize,
    terms: Vec<TvpTermRepr>,
}

impl From<TimeVaryingPolynomial> for TvpRepr {
    fn from(p: TimeVaryingPolynomial) -> Self {
        TvpRepr {
            dim: p.dim,
            terms: p
                .terms
                .into_iter()
                .map(|(i, f)| TvpTermRepr { idx: i.0, f })
                .collect(),
        }
    }
}

impl TryFrom<TvpRepr> for TimeVaryingPolynomial {
    type Error = Error;

    fn try_from(r: TvpRepr) -> Result<Self> {
        let mut p = TimeVaryingPolynomial::zero(r.dim);
        for t in r.terms {
            if t.idx.len() != r.dim {
                return Err(Error::Dimension {
                    expected: r.dim,
                    got: t.idx.len(),
                });
            }
            p.add_term(MultiIndex(t.idx), &t.f);
        }
        Ok(p)
    }
}

impl TimeVaryingPolynomial {
    pub fn zero(dim: usize) -> Self {
        TimeVaryingPolynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, f: TrigFunction) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(MultiIndex::zeros(dim), &f);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &TrigFunction)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|i| i.degree()).max().unwrap_or(0)
    }

    pub fn coeff(&self, idx: &MultiIndex) -> TrigFunction {
        self.terms.get(idx).cloned().unwrap_or_default()
    }

    pub fn add_term(&mut self, idx: MultiIndex, f: &TrigFunction) {
        debug_assert_eq!(idx.dim(), self.dim);
        let e = self.terms.entry(idx.clone()).or_default();
        e.add_assign(f);
        if e.is_zero() {
            self.terms.remove(&idx);
        }
    }

    pub fn add(&self, other: &TimeVaryingPolynomial) -> TimeVaryingPolynomial {
        let mut out = self.clone();
        for (i, f) in &other.terms {
            out.add_term(i.clone(), f);
        }
        out
    }

    /// Multiply every coefficient by a time function.
    pub fn mul_trig(&self, f: &TrigFunction) -> TimeVaryingPolynomial {
        let mut out = Self::zero(self.dim);
        for (i, g) in &self.terms {
            let h = g.mul(f);
            if !h.is_zero() {
                out.terms.insert(i.clone(), h);
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> TimeVaryingPolynomial {
        let mut out = Self::zero(self.dim);
        for (i, g) in &self.terms {
            let h = g.scale(c);
            if !h.is_zero() {
                out.terms.insert(i.clone(), h);
            }
        }
        out
    }

    pub fn mul(&self, other: &TimeVaryingPolynomial) -> TimeVaryingPolynomial {
        assert_eq!(self.dim, other.dim);
        let mut acc: BTreeMap<MultiIndex, TrigFunction> = BTreeMap::new();
        for (i, f) in &self.terms {
            for (j, g) in &other.terms {
                let prod = f.mul(g);
                acc.entry(i.add(j))
                    .or_default()
                    .add_scaled_raw(&prod, 1.0);
            }
        }
        let terms = acc
            .into_iter()
            .map(|(k, f)| (k, f.finish()))
            .filter(|(_, f)| !f.is_zero())
            .collect();
        TimeVaryingPolynomial {
            dim: self.dim,
            terms,
        }
    }

    pub fn pow(&self, e: u32) -> TimeVaryingPolynomial {
        let mut out = Self::constant(self.dim, TrigFunction::constant(1.0));
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Coefficients evaluated at time `t`.
    pub fn freeze(&self, t: f64) -> Polynomial {
        let mut p = Polynomial::zero(self.dim);
        for (i, f) in &self.terms {
            p.add_term(i.clone(), f.eval(t));
        }
        p
    }

    /// Coefficientwise `∫₀^{2π}` over time.
    pub fn integrate_period(&self) -> Polynomial {
        let mut p = Polynomial::zero(self.dim);
        for (i, f) in &self.terms {
            p.add_term(i.clone(), f.integral());
        }
        p
    }

    pub fn partial(&self, var: usize) -> Result<TimeVaryingPolynomial> {
        if var >= self.dim {
            return Err(Error::Input(format!(
                "variable index {var} out of range for dimension {}",
                self.dim
            )));
        }
        let mut out = Self::zero(self.dim);
        for (i, f) in &self.terms {
            let e = i.0[var];
            if e == 0 {
                continue;
            }
            let mut j = i.clone();
            j.0[var] -= 1;
            out.add_term(j, &f.scale(e as f64));
        }
        Ok(out)
    }

    pub fn eval(&self, z: &[f64], t: f64) -> f64 {
        self.terms.iter().map(|(i, f)| f.eval(t) * i.pow(z)).sum()
    }
}

// ---------------------------------------------------------------------------
// Least-squares fitting

/// Result of [`poly_fit_on_grid`].
#[derive(Clone, Debug)]
pub struct PolyFit {
    pub polynomial: Polynomial,
    /// Maximum absolute residual over the samples.
    pub max_residual: f64,
    /// Ratio of largest to smallest singular value of the design matrix.
    pub condition: f64,
}

/// Least-squares fit of a polynomial of total degree `degree` to `(point, value)` samples.
pub fn poly_fit_on_grid(samples: &[(Vec<f64>, f64)], degree: u32) -> Result<PolyFit> {
    let dim = samples
        .first()
        .map(|s| s.0.len())
        .ok_or_else(|| Error::Input("no samples".into()))?;
    let basis = MultiIndex::all_up_to_degree(dim, degree);
    if samples.len() < basis.len() {
        return Err(Error::Input(format!(
            "{} samples cannot determine {} monomials",
            samples.len(),
            basis.len()
        )));
    }
    let mut a = DMatrix::zeros(samples.len(), basis.len());
    let mut b = DVector::zeros(samples.len());
    for (r, (pt, val)) in samples.iter().enumerate() {
        if pt.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: pt.len(),
            });
        }
        for (c, idx) in basis.iter().enumerate() {
            a[(r, c)] = idx.pow(pt);
        }
        b[r] = *val;
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(smin > 1e-12 * smax) {
        return Err(Error::Fit(format!(
            "rank-deficient design matrix (condition {condition:.3e})"
        )));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let resid = &a * &x - &b;
    let max_residual = resid.amax();
    let polynomial = Polynomial::from_terms(dim, basis.into_iter().zip(x.iter().copied()));
    Ok(PolyFit {
        polynomial,
        max_residual,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn eval_examples() {
        assert_eq!(Polynomial::constant(2, 1.0).eval(&[3.0, -2.0]).unwrap(), 1.0);
        let p = Polynomial::monomial(mi(&[2, 1]), 1.0);
        assert_eq!(p.eval(&[2.0, 3.0]).unwrap(), 12.0);
        assert_eq!(Polynomial::zero(2).eval(&[5.0, 7.0]).unwrap(), 0.0);
        assert!(matches!(p.eval(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn partial_examples() {
        let x2 = Polynomial::monomial(mi(&[2, 0]), 1.0);
        assert_eq!(x2.partial(0).unwrap(), Polynomial::monomial(mi(&[1, 0]), 2.0));
        assert!(x2.partial(1).unwrap().is_zero());
        let p = Polynomial::from_terms(2, [(mi(&[1, 1]), 1.0), (mi(&[3, 0]), 1.0)]);
        let expect = Polynomial::from_terms(2, [(mi(&[0, 1]), 1.0), (mi(&[2, 0]), 3.0)]);
        assert_eq!(p.partial(0).unwrap(), expect);
        assert!(p.partial(2).is_err());
    }

    #[test]
    fn trig_product_examples() {
        let c = TrigFunction::cos(1);
        let s = TrigFunction::sin(1);
        assert_eq!(c.mul(&c), TrigFunction::constant(0.5).add(&TrigFunction::cos(2).scale(0.5)));
        assert_eq!(s.mul(&c), TrigFunction::sin(2).scale(0.5));
        assert!(c.mul(&TrigFunction::zero()).is_zero());
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(TrigFunction::sin(3).inner_product(&TrigFunction::cos(3)), 0.0);
        assert_abs_diff_eq!(
            TrigFunction::sin(1).inner_product(&TrigFunction::sin(1)),
            PI,
            epsilon = 1e-15
        );
        let one = TrigFunction::constant(1.0);
        assert_abs_diff_eq!(one.inner_product(&one), 2.0 * PI, epsilon = 1e-15);
        // agrees with integrating the product
        let f = TrigFunction::mode(2, 0.3, -1.2).add(&TrigFunction::constant(0.7));
        let g = TrigFunction::mode(2, 1.1, 0.4).add(&TrigFunction::sin(5));
        assert_abs_diff_eq!(f.inner_product(&g), f.mul(&g).integral(), epsilon = 1e-13);
    }

    #[test]
    fn basis_g_examples() {
        let g = basis_g(&mi(&[2]), &mi(&[2]), &[1]);
        assert_eq!(g, TrigFunction::constant(0.5).add(&TrigFunction::cos(2).scale(0.5)));
        assert_eq!(basis_g(&mi(&[1]), &mi(&[0]), &[3]), TrigFunction::sin(3));
        let g = basis_g(&mi(&[1, 1]), &mi(&[1, 0]), &[1, 3]);
        let expect = TrigFunction::sin(4).scale(0.5).add(&TrigFunction::sin(2).scale(0.5));
        assert_eq!(g, expect);
        assert!(basis_g(&mi(&[1, 1]), &mi(&[2, 0]), &[1, 3]).is_zero());
    }

    #[test]
    fn fit_examples() {
        let samples: Vec<_> = (0..10)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 9.0;
                (vec![x], x * x)
            })
            .collect();
        let fit = poly_fit_on_grid(&samples, 2).unwrap();
        assert_abs_diff_eq!(fit.polynomial.coeff(&mi(&[0])), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.polynomial.coeff(&mi(&[1])), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.polynomial.coeff(&mi(&[2])), 1.0, epsilon = 1e-10);
        assert!(fit.max_residual <= 1e-10);

        // 2-D degree-2 polynomial is reproduced exactly
        let f = |x: f64, y: f64| 1.0 - 2.0 * x + 0.5 * x * y + 3.0 * y * y;
        let samples: Vec<_> = (0..5)
            .flat_map(|i| (0..5).map(move |j| (i as f64 * 0.5 - 1.0, j as f64 * 0.5 - 1.0)))
            .map(|(x, y)| (vec![x, y], f(x, y)))
            .collect();
        assert!(poly_fit_on_grid(&samples, 2).unwrap().max_residual <= 1e-10);

        // cos on [-1, 1] at degree 4: remainder bounded by 1/720 < 1e-3
        let samples: Vec<_> = (0..41)
            .map(|i| {
                let x = -1.0 + i as f64 / 20.0;
                (vec![x], x.cos())
            })
            .collect();
        assert!(poly_fit_on_grid(&samples, 4).unwrap().max_residual <= 1e-3);
    }

    #[test]
    fn fit_rank_deficient() {
        let samples = vec![(vec![1.0], 1.0), (vec![1.0], 2.0), (vec![1.0], 3.0)];
        assert!(matches!(poly_fit_on_grid(&samples, 2), Err(Error::Fit(_))));
    }

    #[test]
    fn graded_lex_order() {
        let all = MultiIndex::all_up_to_degree(2, 2);
        let degs: Vec<u32> = all.iter().map(|i| i.degree()).collect();
        assert_eq!(degs, vec![0, 1, 1, 2, 2, 2]);
        assert_eq!(all[1], mi(&[1, 0]));
        assert_eq!(mi(&[2, 1]).box_size(), 6);
        assert_eq!(mi(&[2, 1]).box_indices().len(), 6);
    }

    #[test]
    fn polynomial_json_format() {
        let p = Polynomial::from_terms(2, [(mi(&[1, 0]), 2.5)]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"dim":2,"terms":[{"idx":[1,0],"c":2.5}]}"#);
        let q: Polynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let f = TrigFunction::mode(3, 1.0, -2.0);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"modes":[{"m":3,"cos":1.0,"sin":-2.0}]}"#);
        let g: TrigFunction = serde_json::from_str(r#"{"modes":[{"m":-3,"cos":1.0,"sin":2.0}]}"#).unwrap();
        assert_eq!(f, g);
        let mut tvp = TimeVaryingPolynomial::zero(2);
        tvp.add_term(mi(&[0, 1]), &TrigFunction::mode(2, 0.5, 0.25));
        let s = serde_json::to_string(&tvp).unwrap();
        assert_eq!(s, r#"{"dim":2,"terms":[{"idx":[0,1],"f":{"modes":[{"m":2,"cos":0.5,"sin":0.25}]}}]}"#);
        assert_eq!(serde_json::from_str::<TimeVaryingPolynomial>(&s).unwrap(), tvp);
    }

    fn arb_poly(dim: usize) -> impl Strategy<Value = Polynomial> {
        prop::collection::vec((prop::collection::vec(0u32..4, dim), -2.0f64..2.0), 0..8)
            .prop_map(move |ts| Polynomial::from_terms(dim, ts.into_iter().map(|(i, c)| (MultiIndex::new(i), c))))
    }

    fn arb_trig() -> impl Strategy<Value = TrigFunction> {
        prop::collection::vec((0u32..=64, -1.0f64..1.0, -1.0f64..1.0), 0..6).prop_map(|ms| {
            ms.into_iter()
                .fold(TrigFunction::zero(), |f, (m, a, b)| f.add(&TrigFunction::mode(m, a, b)))
        })
    }

    fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let h = 2.0 * PI / n as f64;
        let mut acc = f(0.0) + f(2.0 * PI);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    proptest! {
        #[test]
        fn eval_is_additive(p in arb_poly(3), q in arb_poly(3), z in prop::collection::vec(-1.5f64..1.5, 3)) {
            let lhs = p.add(&q).eval(&z).unwrap();
            let rhs = p.eval(&z).unwrap() + q.eval(&z).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn partials_commute(p in arb_poly(3), i in 0usize..3, j in 0usize..3) {
            let a = p.partial(i).unwrap().partial(j).unwrap();
            let b = p.partial(j).unwrap().partial(i).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn inner_product_matches_simpson(f in arb_trig(), g in arb_trig()) {
            let exact = f.inner_product(&g);
            let quad = simpson(|s| f.eval(s) * g.eval(s), 1 << 14);
            prop_assert!((exact - quad).abs() <= 1e-9, "{} vs {}", exact, quad);
        }

        #[test]
        fn basis_g_pointwise(k in prop::collection::vec(0u32..4, 2), seed in 0u64..1000) {
            let k = MultiIndex::new(k);
            let omega = [1u32, 5];
            let mut rng = seed;
            for p in k.box_indices() {
                let g = basis_g(&k, &p, &omega);
                for _ in 0..100 {
                    rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let s = (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 * PI;
                    let direct: f64 = (0..2).map(|i| {
                        let w = omega[i] as f64 * s;
                        w.cos().powi(p.entries()[i] as i32) * w.sin().powi((k.entries()[i] - p.entries()[i]) as i32)
                    }).product();
                    prop_assert!((g.eval(s) - direct).abs() <= 1e-12);
                }
            }
        }
    }
}
