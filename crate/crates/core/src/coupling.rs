//! Affine coupling blocks and networks.
//!
//! A block fixes its passive coordinates and maps each active coordinate `a_i`
//! to `a_i · s_i(passive) + t_i(passive)`, with `s_i`, `t_i` polynomials in the
//! passive coordinates. The Jacobian is triangular in the (passive, active)
//! ordering, so inverses and log-determinants are exact and cheap.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::henon::HenonSystem;
use crate::multipoly::{CompiledPolynomial, MultiIndex, Polynomial};
use crate::odeflow::spectral_norm;

/// Scales with magnitude below this make a block non-invertible.
pub const SINGULAR_SCALE: f64 = 1e-12;

/// One affine coupling block on a `dim`-dimensional space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "BlockRepr", into = "BlockRepr")]
pub struct CouplingBlock {
    dim: usize,
    active: Vec<usize>,
    passive: Vec<usize>,
    scale: Vec<Polynomial>,
    shift: Vec<Polynomial>,
    step_time: f64,
    // derived
    scale_c: Vec<CompiledPolynomial>,
    shift_c: Vec<CompiledPolynomial>,
    dscale: Vec<Vec<CompiledPolynomial>>,
    dshift: Vec<Vec<CompiledPolynomial>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockRepr {
    /// `true` marks an active (updated) coordinate.
    mask: Vec<bool>,
    scale: Vec<Polynomial>,
    shift: Vec<Polynomial>,
    step_time: f64,
}

impl From<CouplingBlock> for BlockRepr {
    fn from(b: CouplingBlock) -> Self {
        let mut mask = vec![false; b.dim];
        for &a in &b.active {
            mask[a] = true;
        }
        BlockRepr {
            mask,
            scale: b.scale,
            shift: b.shift,
            step_time: b.step_time,
        }
    }
}

impl TryFrom<BlockRepr> for CouplingBlock {
    type Error = Error;
    fn try_from(r: BlockRepr) -> Result<Self> {
        let active = r
            .mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        CouplingBlock::new(r.mask.len(), active, r.scale, r.shift, r.step_time)
    }
}

impl CouplingBlock {
    /// `scale[i]`, `shift[i]` act on `active[i]` and are polynomials in the passive
    /// coordinates (listed in increasing index order).
    pub fn new(
        dim: usize,
        active: Vec<usize>,
        scale: Vec<Polynomial>,
        shift: Vec<Polynomial>,
        step_time: f64,
    ) -> Result<Self> {
        let mut seen = vec![false; dim];
        for &a in &active {
            if a >= dim || seen[a] {
                return Err(Error::Input(format!("invalid active coordinate {a}")));
            }
            seen[a] = true;
        }
        let passive: Vec<usize> = (0..dim).filter(|&i| !seen[i]).collect();
        if scale.len() != active.len() || shift.len() != active.len() {
            return Err(Error::Dimension {
                expected: active.len(),
                got: scale.len().min(shift.len()),
            });
        }
        for p in scale.iter().chain(&shift) {
            if p.dim() != passive.len() {
                return Err(Error::Dimension {
                    expected: passive.len(),
                    got: p.dim(),
                });
            }
        }
        let compile = |ps: &[Polynomial]| ps.iter().map(Polynomial::compile).collect::<Vec<_>>();
        let grad = |ps: &[Polynomial]| {
            ps.iter()
                .map(|p| p.gradient().iter().map(Polynomial::compile).collect())
                .collect::<Vec<_>>()
        };
        let mut active = active;
        // keep scale/shift aligned with active when sorting
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by_key(|&i| active[i]);
        let scale: Vec<Polynomial> = order.iter().map(|&i| scale[i].clone()).collect();
        let shift: Vec<Polynomial> = order.iter().map(|&i| shift[i].clone()).collect();
        active.sort_unstable();
        Ok(CouplingBlock {
            dim,
            scale_c: compile(&scale),
            shift_c: compile(&shift),
            dscale: grad(&scale),
            dshift: grad(&shift),
            active,
            passive,
            scale,
            shift,
            step_time,
        })
    }

    /// The identity block updating `active` with `scale ≡ 1`, `shift ≡ 0`.
    pub fn identity(dim: usize, active: Vec<usize>) -> Result<Self> {
        let np = dim - active.len();
        let n = active.len();
        CouplingBlock::new(
            dim,
            active,
            vec![Polynomial::constant(np, 1.0); n],
            vec![Polynomial::zero(np); n],
            0.0,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn passive(&self) -> &[usize] {
        &self.passive
    }

    pub fn scale(&self) -> &[Polynomial] {
        &self.scale
    }

    pub fn shift(&self) -> &[Polynomial] {
        &self.shift
    }

    pub fn step_time(&self) -> f64 {
        self.step_time
    }

    fn passive_values(&self, z: &[f64]) -> Vec<f64> {
        self.passive.iter().map(|&i| z[i]).collect()
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Scale values at `z` (which only depend on its passive part).
    pub fn scale_values(&self, z: &[f64]) -> Vec<f64> {
        let p = self.passive_values(z);
        self.scale_c.iter().map(|s| s.eval(&p)).collect()
    }

    pub fn forward_in_place(&self, z: &mut [f64]) {
        let p = self.passive_values(z);
        for (i, &a) in self.active.iter().enumerate() {
            z[a] = z[a] * self.scale_c[i].eval(&p) + self.shift_c[i].eval(&p);
        }
    }

    /// Inverse in place; `block` is reported in errors.
    pub fn inverse_in_place(&self, z: &mut [f64], block: usize) -> Result<()> {
        let p = self.passive_values(z);
        for (i, &a) in self.active.iter().enumerate() {
            let s = self.scale_c[i].eval(&p);
            if !(s.abs() >= SINGULAR_SCALE) {
                return Err(Error::SingularBlock { block, coordinate: a });
            }
            z[a] = (z[a] - self.shift_c[i].eval(&p)) / s;
        }
        Ok(())
    }

    /// Jacobian at `z` and `ln|det|` (−∞ when a scale vanishes).
    pub fn jacobian(&self, z: &[f64]) -> (DMatrix<f64>, f64) {
        let p = self.passive_values(z);
        let mut j = DMatrix::identity(self.dim, self.dim);
        let mut logdet = 0.0;
        for (i, &a) in self.active.iter().enumerate() {
            let s = self.scale_c[i].eval(&p);
            j[(a, a)] = s;
            logdet += s.abs().ln();
            for (k, &pi) in self.passive.iter().enumerate() {
                j[(a, pi)] = z[a] * self.dscale[i][k].eval(&p) + self.dshift[i][k].eval(&p);
            }
        }
        (j, logdet)
    }
}

pub fn block_forward(b: &CouplingBlock, z: &[f64]) -> Result<Vec<f64>> {
    b.check_dim(z)?;
    let mut out = z.to_vec();
    b.forward_in_place(&mut out);
    Ok(out)
}

pub fn block_inverse(b: &CouplingBlock, z: &[f64]) -> Result<Vec<f64>> {
    b.check_dim(z)?;
    let mut out = z.to_vec();
    b.inverse_in_place(&mut out, 0)?;
    Ok(out)
}

pub fn block_jacobian(b: &CouplingBlock, z: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    b.check_dim(z)?;
    Ok(b.jacobian(z))
}

/// Ordered composition `f_N ∘ … ∘ f_1` of coupling blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingNetwork {
    pub dim: usize,
    /// Radius of the ball on which the network was certified, if any.
    pub domain: Option<f64>,
    pub blocks: Vec<CouplingBlock>,
}

/// Direction of a pushforward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

impl CouplingNetwork {
    pub fn new(dim: usize, blocks: Vec<CouplingBlock>) -> Result<Self> {
        if let Some(b) = blocks.iter().find(|b| b.dim != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: b.dim,
            });
        }
        Ok(CouplingNetwork {
            dim,
            domain: None,
            blocks,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let mut out = z.to_vec();
        for b in &self.blocks {
            b.forward_in_place(&mut out);
        }
        if !out.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence { step: self.blocks.len() });
        }
        Ok(out)
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let mut out = z.to_vec();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            b.inverse_in_place(&mut out, i)?;
        }
        Ok(out)
    }

    /// Forward value, accumulated Jacobian and the sum of block log-determinants.
    pub fn forward_with_jacobian(&self, z: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
        self.check_dim(z)?;
        let mut out = z.to_vec();
        let mut jac = DMatrix::identity(self.dim, self.dim);
        let mut logdet = 0.0;
        for b in &self.blocks {
            let (bj, ld) = b.jacobian(&out);
            jac = bj * jac;
            logdet += ld;
            b.forward_in_place(&mut out);
        }
        Ok((out, jac, logdet))
    }

    /// Inverse value and the Jacobian of the inverse map.
    pub fn inverse_with_jacobian(&self, z: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_dim(z)?;
        let mut out = z.to_vec();
        let mut jac = DMatrix::identity(self.dim, self.dim);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            b.inverse_in_place(&mut out, i)?;
            // D(f⁻¹)(y) = (Df(f⁻¹(y)))⁻¹
            let (bj, _) = b.jacobian(&out);
            let inv = bj
                .try_inverse()
                .ok_or(Error::SingularBlock { block: i, coordinate: 0 })?;
            jac = inv * jac;
        }
        Ok((out, jac))
    }

    /// Smallest `|scale|` over all blocks along the forward trajectories of `points`.
    pub fn min_abs_scale(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mins: Vec<f64> = points
            .par_iter()
            .map(|p| {
                self.check_dim(p)?;
                let mut z = p.clone();
                let mut m = f64::INFINITY;
                for b in &self.blocks {
                    for s in b.scale_values(&z) {
                        m = m.min(s.abs());
                    }
                    b.forward_in_place(&mut z);
                }
                Ok(m)
            })
            .collect::<Result<_>>()?;
        Ok(mins.into_iter().fold(f64::INFINITY, f64::min))
    }
}

pub fn network_pushforward(
    net: &CouplingNetwork,
    samples: &[Vec<f64>],
    direction: Direction,
) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|z| match direction {
            Direction::Forward => net.forward(z),
            Direction::Inverse => net.inverse(z),
        })
        .collect()
}

/// Extreme singular values of the network Jacobian over probe points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConditioning {
    pub min_singular: f64,
    pub max_singular: f64,
    /// Largest pointwise ratio of extreme singular values.
    pub worst_condition: f64,
    /// Largest spectral norm of the Jacobian (Lipschitz estimate on the probes).
    pub max_norm: f64,
}

pub fn network_conditioning(
    net: &CouplingNetwork,
    points: &[Vec<f64>],
) -> Result<NetworkConditioning> {
    let per_point: Vec<(f64, f64)> = points
        .par_iter()
        .map(|p| {
            let (_, j, _) = net.forward_with_jacobian(p)?;
            let sv = j.svd(false, false).singular_values;
            Ok((sv.min(), sv.max()))
        })
        .collect::<Result<_>>()?;
    let mut out = NetworkConditioning {
        min_singular: f64::INFINITY,
        max_singular: 0.0,
        worst_condition: 1.0,
        max_norm: 0.0,
    };
    for (lo, hi) in per_point {
        out.min_singular = out.min_singular.min(lo);
        out.max_singular = out.max_singular.max(hi);
        out.worst_condition = out.worst_condition.max(hi / lo);
        out.max_norm = out.max_norm.max(hi);
    }
    Ok(out)
}

/// The two blocks of one alternating Euler step of the approximating field at `t_n = η n`.
///
/// `block_v` updates `v` holding `x`: `scale = 1 − ητ G(x, t_n)`,
/// `shift = −η Ω² ⊙ x − ητ J(x, t_n)`. `block_x` then updates `x` holding the
/// new `v`: `scale = 1 − ητ F(v, t_n)`, `shift = η v`.
pub fn euler_step_to_blocks(
    sys: &HenonSystem,
    eta: f64,
    n: usize,
) -> Result<(CouplingBlock, CouplingBlock)> {
    if !(eta > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {eta}")));
    }
    let d = sys.d();
    let t = eta * n as f64;
    let et = eta * sys.tau;
    let mut scale_v = Vec::with_capacity(d);
    let mut shift_v = Vec::with_capacity(d);
    let mut scale_x = Vec::with_capacity(d);
    let mut shift_x = Vec::with_capacity(d);
    for j in 0..d {
        let w = sys.omega[j] as f64;
        scale_v.push(Polynomial::constant(d, 1.0).sub(&sys.g[j].freeze(t).scale(et)));
        let harmonic = Polynomial::monomial(MultiIndex::unit(d, j), -eta * w * w);
        shift_v.push(harmonic.sub(&sys.j[j].freeze(t).scale(et)));
        scale_x.push(Polynomial::constant(d, 1.0).sub(&sys.f[j].freeze(t).scale(et)));
        shift_x.push(Polynomial::monomial(MultiIndex::unit(d, j), eta));
    }
    let block_v = CouplingBlock::new(2 * d, (d..2 * d).collect(), scale_v, shift_v, t)?;
    let block_x = CouplingBlock::new(2 * d, (0..d).collect(), scale_x, shift_x, t)?;
    Ok((block_v, block_x))
}

/// Blocks for `steps` alternating Euler steps of size `eta` starting at `t = 0`.
pub fn discretize(sys: &HenonSystem, eta: f64, steps: usize) -> Result<Vec<CouplingBlock>> {
    let mut out = Vec::with_capacity(2 * steps);
    for n in 0..steps {
        let (bv, bx) = euler_step_to_blocks(sys, eta, n)?;
        out.push(bv);
        out.push(bx);
    }
    Ok(out)
}

/// Spectral-norm distance helper used by network checks.
pub fn jacobian_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    spectral_norm(&(a - b))
}
