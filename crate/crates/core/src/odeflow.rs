//! Flow maps of ODEs: fixed-step RK4 reference integration, variational
//! (Jacobian) co-integration, the alternating Euler scheme, C⁰/C¹ distances
//! between flow maps on probe grids, and first-order perturbation utilities.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// States whose Euclidean norm exceeds this abort integration.
pub const DIVERGENCE_CUTOFF: f64 = 1e12;

/// Smooth, possibly time-dependent vector field `ż = F(z, t)`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, z: &[f64], t: f64, out: &mut [f64]);
    fn jacobian(&self, z: &[f64], t: f64) -> DMatrix<f64>;
}

/// Vector field assembled from closures.
pub struct FnField<R, J> {
    dim: usize,
    rhs: R,
    jac: J,
}

impl<R, J> FnField<R, J>
where
    R: Fn(&[f64], f64, &mut [f64]) + Sync,
    J: Fn(&[f64], f64) -> DMatrix<f64> + Sync,
{
    pub fn new(dim: usize, rhs: R, jac: J) -> Self {
        FnField { dim, rhs, jac }
    }
}

impl<R, J> VectorField for FnField<R, J>
where
    R: Fn(&[f64], f64, &mut [f64]) + Sync,
    J: Fn(&[f64], f64) -> DMatrix<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, z: &[f64], t: f64, out: &mut [f64]) {
        (self.rhs)(z, t, out)
    }
    fn jacobian(&self, z: &[f64], t: f64) -> DMatrix<f64> {
        (self.jac)(z, t)
    }
}

/// Linear field `ż = A z`.
pub struct LinearField(pub DMatrix<f64>);

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn rhs(&self, z: &[f64], _t: f64, out: &mut [f64]) {
        matvec(&self.0, z, out);
    }
    fn jacobian(&self, _z: &[f64], _t: f64) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// Field split into position and velocity halves, `ẋ = f(x, v, t)`, `v̇ = g(x, v, t)`.
pub trait PairField: Sync {
    /// Dimension `d` of each half.
    fn half_dim(&self) -> usize;
    fn f(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]);
    fn g(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]);
    /// `(∂f/∂x, ∂f/∂v)`.
    fn f_jac(&self, x: &[f64], v: &[f64], t: f64) -> (DMatrix<f64>, DMatrix<f64>);
    /// `(∂g/∂x, ∂g/∂v)`.
    fn g_jac(&self, x: &[f64], v: &[f64], t: f64) -> (DMatrix<f64>, DMatrix<f64>);
}

/// A [`PairField`] viewed as a [`VectorField`] on `z = (x, v)`.
pub struct Joined<'a, P: ?Sized>(pub &'a P);

impl<P: PairField + ?Sized> VectorField for Joined<'_, P> {
    fn dim(&self) -> usize {
        2 * self.0.half_dim()
    }
    fn rhs(&self, z: &[f64], t: f64, out: &mut [f64]) {
        let d = self.0.half_dim();
        let (x, v) = z.split_at(d);
        let (ox, ov) = out.split_at_mut(d);
        self.0.f(x, v, t, ox);
        self.0.g(x, v, t, ov);
    }
    fn jacobian(&self, z: &[f64], t: f64) -> DMatrix<f64> {
        let d = self.0.half_dim();
        let (x, v) = z.split_at(d);
        let (fx, fv) = self.0.f_jac(x, v, t);
        let (gx, gv) = self.0.g_jac(x, v, t);
        let mut j = DMatrix::zeros(2 * d, 2 * d);
        j.view_mut((0, 0), (d, d)).copy_from(&fx);
        j.view_mut((0, d), (d, d)).copy_from(&fv);
        j.view_mut((d, 0), (d, d)).copy_from(&gx);
        j.view_mut((d, d), (d, d)).copy_from(&gv);
        j
    }
}

pub(crate) fn matvec(a: &DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..a.ncols()).map(|j| a[(i, j)] * z[j]).sum();
    }
}

fn check_state(z: &[f64], step: usize) -> Result<()> {
    let n2: f64 = z.iter().map(|x| x * x).sum();
    if !n2.is_finite() || n2.sqrt() > DIVERGENCE_CUTOFF {
        return Err(Error::Divergence { step });
    }
    Ok(())
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::Input("steps must be at least 1".into()));
    }
    Ok(())
}

/// Classical RK4 with `steps` equal steps from `t0` to `t1` (either direction).
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    z0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    check_steps(steps)?;
    let n = field.dim();
    if z0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: z0.len(),
        });
    }
    let h = (t1 - t0) / steps as f64;
    let mut z = z0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        field.rhs(&z, t, &mut k1);
        for i in 0..n {
            tmp[i] = z[i] + 0.5 * h * k1[i];
        }
        field.rhs(&tmp, t + 0.5 * h, &mut k2);
        for i in 0..n {
            tmp[i] = z[i] + 0.5 * h * k2[i];
        }
        field.rhs(&tmp, t + 0.5 * h, &mut k3);
        for i in 0..n {
            tmp[i] = z[i] + h * k3[i];
        }
        field.rhs(&tmp, t + h, &mut k4);
        for i in 0..n {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_state(&z, s + 1)?;
    }
    Ok(z)
}

/// RK4 on the state together with the variational equation `α̇ = DF(z, t) α`, `α(t0) = I`.
pub fn integrate_with_jacobian<F: VectorField + ?Sized>(
    field: &F,
    z0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = field.dim();
    let aug = FnField::new(
        n + n * n,
        |y: &[f64], t: f64, out: &mut [f64]| {
            let (z, a) = y.split_at(n);
            let (oz, oa) = out.split_at_mut(n);
            field.rhs(z, t, oz);
            let jac = field.jacobian(z, t);
            let a = DMatrix::from_column_slice(n, n, a);
            oa.copy_from_slice((jac * a).as_slice());
        },
        |_: &[f64], _: f64| unreachable!("augmented Jacobian is never requested"),
    );
    let mut y = z0.to_vec();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: z0.len(),
        });
    }
    y.extend_from_slice(DMatrix::<f64>::identity(n, n).as_slice());
    let y = integrate(&aug, &y, t0, t1, steps)?;
    Ok((y[..n].to_vec(), DMatrix::from_column_slice(n, n, &y[n..])))
}

/// Alternating Euler iterates `(X_i, V_i)`, `i = 0..=n`, with `t_i = t0 + iη`:
/// `V_{i+1} = V_i + η g(X_i, V_i, t_i)`, then `X_{i+1} = X_i + η f(X_i, V_{i+1}, t_i)`.
pub fn alternating_euler<P: PairField + ?Sized>(
    field: &P,
    x0: &[f64],
    v0: &[f64],
    t0: f64,
    eta: f64,
    n: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let d = check_pair(field, x0, v0, eta)?;
    let mut traj = Vec::with_capacity(n + 1);
    let (mut x, mut v) = (x0.to_vec(), v0.to_vec());
    traj.push((x.clone(), v.clone()));
    let mut buf = vec![0.0; d];
    for i in 0..n {
        euler_step(field, &mut x, &mut v, t0 + i as f64 * eta, eta, &mut buf);
        check_state(&x, i + 1)?;
        check_state(&v, i + 1)?;
        traj.push((x.clone(), v.clone()));
    }
    Ok(traj)
}

fn check_pair<P: PairField + ?Sized>(field: &P, x0: &[f64], v0: &[f64], eta: f64) -> Result<usize> {
    let d = field.half_dim();
    for z in [x0, v0] {
        if z.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: z.len(),
            });
        }
    }
    if !(eta > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {eta}")));
    }
    Ok(d)
}

#[inline]
fn euler_step<P: PairField + ?Sized>(
    field: &P,
    x: &mut [f64],
    v: &mut [f64],
    t: f64,
    eta: f64,
    buf: &mut [f64],
) {
    field.g(x, v, t, buf);
    for (vi, gi) in v.iter_mut().zip(buf.iter()) {
        *vi += eta * gi;
    }
    field.f(x, v, t, buf);
    for (xi, fi) in x.iter_mut().zip(buf.iter()) {
        *xi += eta * fi;
    }
}

/// Final alternating-Euler state together with its exact Jacobian with respect to `(x0, v0)`.
///
/// The Jacobian is propagated by applying the same alternating update to the
/// tangent pair `(α, β)`, which differentiates the discrete map exactly.
pub fn alternating_euler_with_jacobian<P: PairField + ?Sized>(
    field: &P,
    x0: &[f64],
    v0: &[f64],
    t0: f64,
    eta: f64,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let d = check_pair(field, x0, v0, eta)?;
    let (mut x, mut v) = (x0.to_vec(), v0.to_vec());
    // alpha = ∂X/∂(x0, v0), beta = ∂V/∂(x0, v0), each d × 2d
    let mut alpha = DMatrix::zeros(d, 2 * d);
    let mut beta = DMatrix::zeros(d, 2 * d);
    for i in 0..d {
        alpha[(i, i)] = 1.0;
        beta[(i, d + i)] = 1.0;
    }
    let mut buf = vec![0.0; d];
    for i in 0..n {
        let t = t0 + i as f64 * eta;
        let (gx, gv) = field.g_jac(&x, &v, t);
        field.g(&x, &v, t, &mut buf);
        for (vi, gi) in v.iter_mut().zip(&buf) {
            *vi += eta * gi;
        }
        beta += (gx * &alpha + gv * &beta) * eta;
        let (fx, fv) = field.f_jac(&x, &v, t);
        field.f(&x, &v, t, &mut buf);
        for (xi, fi) in x.iter_mut().zip(&buf) {
            *xi += eta * fi;
        }
        alpha += (fx * &alpha + fv * &beta) * eta;
        check_state(&x, i + 1)?;
        check_state(&v, i + 1)?;
    }
    let mut jac = DMatrix::zeros(2 * d, 2 * d);
    jac.view_mut((0, 0), (d, 2 * d)).copy_from(&alpha);
    jac.view_mut((d, 0), (d, 2 * d)).copy_from(&beta);
    Ok((x, v, jac))
}

// ---------------------------------------------------------------------------
// Probe grids and distances

/// Values and Jacobians of a map sampled on a fixed point set.
#[derive(Clone, Debug)]
pub struct FlowProbe {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub jacobians: Vec<DMatrix<f64>>,
}

impl FlowProbe {
    /// Evaluate `map(point) -> (value, jacobian)` at every point, in parallel.
    pub fn sample<M>(points: &[Vec<f64>], map: M) -> Result<FlowProbe>
    where
        M: Fn(&[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> + Sync,
    {
        let results: Vec<_> = points.par_iter().map(|p| map(p)).collect::<Result<_>>()?;
        let (values, jacobians) = results.into_iter().unzip();
        Ok(FlowProbe {
            points: points.to_vec(),
            values,
            jacobians,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Write as CSV with columns `point_i`, `value_i`, `jac_{row}{col}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.points.first().map_or(0, |p| p.len());
        let m = self.values.first().map_or(0, |p| p.len());
        let mut header: Vec<String> = (0..n).map(|i| format!("point_{i}")).collect();
        header.extend((0..m).map(|i| format!("value_{i}")));
        for r in 0..m {
            for c in 0..n {
                header.push(format!("jac_{r}{c}"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for ((p, v), j) in self.points.iter().zip(&self.values).zip(&self.jacobians) {
            let mut row: Vec<String> = p.iter().chain(v).map(|x| format!("{x:e}")).collect();
            for r in 0..j.nrows() {
                for c in 0..j.ncols() {
                    row.push(format!("{:e}", j[(r, c)]));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Lattice with `grid` points per axis on `[lo, hi]^dim`, corners included, row-major.
pub fn box_grid(lo: f64, hi: f64, grid: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(grid >= 2, "grid needs at least two points per axis");
    let axis: Vec<f64> = (0..grid)
        .map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64)
        .collect();
    let total = grid.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; dim];
            for k in (0..dim).rev() {
                p[k] = axis[idx % grid];
                idx /= grid;
            }
            p
        })
        .collect()
}

/// Lattice points of `[-r, r]^dim` that lie in the closed ball `B(0, r)`.
pub fn ball_grid(r: f64, grid: usize, dim: usize) -> Vec<Vec<f64>> {
    box_grid(-r, r, grid, dim)
        .into_iter()
        .filter(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt() <= r * (1.0 + 1e-12))
        .collect()
}

/// C⁰ and C¹ distances between two maps sampled on the same points.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowDistance {
    /// `max ‖T_a − T_b‖₂`
    pub c0: f64,
    /// `c0 + max ‖DT_a − DT_b‖₂`
    pub c1: f64,
}

pub fn flow_distance(a: &FlowProbe, b: &FlowProbe) -> Result<FlowDistance> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut c0: f64 = 0.0;
    let mut jd: f64 = 0.0;
    for i in 0..a.len() {
        if a.points[i] != b.points[i] {
            return Err(Error::Input(format!("probe point {i} differs between maps")));
        }
        let diff: f64 = a.values[i]
            .iter()
            .zip(&b.values[i])
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        c0 = c0.max(diff.sqrt());
        jd = jd.max(spectral_norm(&(&a.jacobians[i] - &b.jacobians[i])));
    }
    Ok(FlowDistance { c0, c1: c0 + jd })
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `(b t + x0) e^{a t}`.
pub fn gronwall_bound(a: f64, b: f64, x0: f64, t: f64) -> f64 {
    (b * t + x0) * (a * t).exp()
}

// ---------------------------------------------------------------------------
// Perturbation theory

/// `ẏ = A y + ε g(y, t)` as a vector field.
pub struct PerturbedLinear<'a, G: ?Sized> {
    pub a: &'a DMatrix<f64>,
    pub g: &'a G,
    pub eps: f64,
}

impl<G: VectorField + ?Sized> VectorField for PerturbedLinear<'_, G> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn rhs(&self, z: &[f64], t: f64, out: &mut [f64]) {
        self.g.rhs(z, t, out);
        let n = out.len();
        for i in 0..n {
            let az: f64 = (0..n).map(|j| self.a[(i, j)] * z[j]).sum();
            out[i] = az + self.eps * out[i];
        }
    }
    fn jacobian(&self, z: &[f64], t: f64) -> DMatrix<f64> {
        self.a + self.g.jacobian(z, t) * self.eps
    }
}

/// First-order expansion `y₀(t) + ε y₁(t)` with `ẏ₀ = A y₀`, `ẏ₁ = A y₁ + g(y₀, t)`, `y₁(0) = 0`,
/// together with its Jacobian in `z0`.
pub fn perturbation_first_order_with_jacobian<G: VectorField + ?Sized>(
    a: &DMatrix<f64>,
    g: &G,
    z0: &[f64],
    eps: f64,
    t: f64,
    steps: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if z0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: z0.len(),
        });
    }
    let aug = FnField::new(
        2 * n,
        |y: &[f64], s: f64, out: &mut [f64]| {
            let (y0, y1) = y.split_at(n);
            let (o0, o1) = out.split_at_mut(n);
            g.rhs(y0, s, o1);
            for i in 0..n {
                let mut a0 = 0.0;
                let mut a1 = 0.0;
                for j in 0..n {
                    a0 += a[(i, j)] * y0[j];
                    a1 += a[(i, j)] * y1[j];
                }
                o0[i] = a0;
                o1[i] += a1;
            }
        },
        |y: &[f64], s: f64| {
            let mut j = DMatrix::zeros(2 * n, 2 * n);
            j.view_mut((0, 0), (n, n)).copy_from(a);
            j.view_mut((n, n), (n, n)).copy_from(a);
            j.view_mut((n, 0), (n, n)).copy_from(&g.jacobian(&y[..n], s));
            j
        },
    );
    let mut y = z0.to_vec();
    y.extend(std::iter::repeat_n(0.0, n));
    let (y, jac) = integrate_with_jacobian(&aug, &y, 0.0, t, steps)?;
    let value = (0..n).map(|i| y[i] + eps * y[n + i]).collect();
    // d(y0 + ε y1)/dz0: the initial augmented state depends on z0 only through y0.
    let j0 = jac.view((0, 0), (n, n)).into_owned();
    let j1 = jac.view((n, 0), (n, n)).into_owned();
    Ok((value, j0 + j1 * eps))
}

pub fn perturbation_first_order<G: VectorField + ?Sized>(
    a: &DMatrix<f64>,
    g: &G,
    z0: &[f64],
    eps: f64,
    t: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    perturbation_first_order_with_jacobian(a, g, z0, eps, t, steps).map(|r| r.0)
}

/// Distances between the full perturbed flow and its first-order expansion, with fitted order.
#[derive(Clone, Debug, serde::Serialize)]
pub struct OrderStudy {
    pub parameters: Vec<f64>,
    pub distances: Vec<FlowDistance>,
    /// Least-squares slope of `ln c1` against `ln parameter`.
    pub slope: f64,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Input("order fit needs at least two matching points".into()));
    }
    if ys.iter().any(|&y| !(y > DEGENERATE_DISTANCE)) {
        return Err(Error::DegenerateFit(format!(
            "distances {ys:?} are at round-off level"
        )));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    if !slope.is_finite() {
        return Err(Error::DegenerateFit("non-finite slope".into()));
    }
    Ok(slope)
}

/// Distances below this are treated as round-off in order fits.
pub const DEGENERATE_DISTANCE: f64 = 1e-12;

/// C¹ distance between the flow of `ẏ = Ay + εg(y,t)` and its first-order expansion,
/// over `points`, for each `ε`; returns the fitted order in `ε`.
pub fn perturbation_order_check<G: VectorField + ?Sized>(
    a: &DMatrix<f64>,
    g: &G,
    points: &[Vec<f64>],
    eps_list: &[f64],
    t: f64,
    steps: usize,
) -> Result<OrderStudy> {
    if eps_list.len() < 3 {
        return Err(Error::Input("need at least three perturbation sizes".into()));
    }
    let mut distances = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let field = PerturbedLinear { a, g, eps };
        let full = FlowProbe::sample(points, |z| integrate_with_jacobian(&field, z, 0.0, t, steps))?;
        let first = FlowProbe::sample(points, |z| {
            perturbation_first_order_with_jacobian(a, g, z, eps, t, steps)
        })?;
        distances.push(flow_distance(&full, &first)?);
    }
    let c1: Vec<f64> = distances.iter().map(|d| d.c1).collect();
    let slope = loglog_slope(eps_list, &c1)?;
    Ok(OrderStudy {
        parameters: eps_list.to_vec(),
        distances,
        slope,
    })
}
