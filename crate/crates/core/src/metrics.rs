//! Distances between distributions: empirical Wasserstein-1 (exact in 1D,
//! sliced in higher dimension) and closed forms for Gaussians.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::{particle_rng, spd_inverse, sym_eigenvalues, GaussianDensity};

/// A finite sample of points in `R^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleCloud {
    dim: usize,
    points: Vec<Vec<f64>>,
    /// Seed that generated the cloud, when known.
    pub seed: Option<u64>,
}

impl SampleCloud {
    /// Requires at least two points, all finite and of equal dimension.
    pub fn new(points: Vec<Vec<f64>>, seed: Option<u64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Input(format!(
                "a sample cloud needs at least 2 points, got {}",
                points.len()
            )));
        }
        let dim = points[0].len();
        for p in &points {
            if p.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: p.len(),
                });
            }
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::Input("sample cloud contains a non-finite entry".into()));
            }
        }
        Ok(SampleCloud { dim, points, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }

    /// Coordinate `i` of every point.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[i]).collect()
    }

    /// `⟨p, θ⟩` for every point.
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// CSV with header `z_0,…,z_{dim−1}`; values in round-trip `{:e}` format.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("z_{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for p in &self.points {
            let row: Vec<String> = p.iter().map(|x| format!("{x:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`SampleCloud::write_csv`] (header line required).
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        lines
            .next()
            .ok_or_else(|| Error::Input("empty CSV".into()))??;
        let mut points = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Input(format!("CSV row {}: {e}", n + 2)))?;
            points.push(row);
        }
        SampleCloud::new(points, None)
    }
}

/// Exact Wasserstein-1 distance between two empirical measures on the line.
///
/// Equal sizes reduce to the mean absolute difference of order statistics; for
/// unequal sizes the quantile functions are integrated exactly over the merged
/// breakpoints `i/n ∪ j/m`, so no resampling is involved.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("w1_1d needs non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / n;
        let next_b = (j + 1) as f64 / m;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        // advance whichever quantile step ended (both on ties)
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// `n` directions uniform on the unit sphere, one counter stream per direction.
pub fn random_directions(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let mut rng = particle_rng(seed, k as u64);
            loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            }
        })
        .collect()
}

/// Sliced Wasserstein-1: mean of exact 1D distances between projections onto
/// `n_directions` random unit vectors. Deterministic for a given seed.
pub fn sliced_w1(a: &SampleCloud, b: &SampleCloud, n_directions: usize, seed: u64) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Dimension {
            expected: a.dim,
            got: b.dim,
        });
    }
    if n_directions == 0 {
        return Err(Error::Parameter("sliced_w1 needs at least one direction".into()));
    }
    let dirs = random_directions(a.dim, n_directions, seed);
    let per: Vec<f64> = dirs
        .par_iter()
        .map(|t| w1_1d(&a.project(t), &b.project(t)))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / n_directions as f64)
}

/// Exact 1D distance between matching coordinates.
pub fn marginal_w1(a: &SampleCloud, b: &SampleCloud) -> Result<Vec<f64>> {
    if a.dim != b.dim {
        return Err(Error::Dimension {
            expected: a.dim,
            got: b.dim,
        });
    }
    (0..a.dim)
        .into_par_iter()
        .map(|i| w1_1d(&a.coordinate(i), &b.coordinate(i)))
        .collect()
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularMatrix("covariance is not positive definite".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

fn check_same_dim(p: &GaussianDensity, q: &GaussianDensity) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

/// `KL(p ‖ q)` for Gaussians.
pub fn gaussian_kl(p: &GaussianDensity, q: &GaussianDensity) -> Result<f64> {
    check_same_dim(p, q)?;
    let qi = spd_inverse(&q.cov)?;
    let dm: DVector<f64> = &q.mean - &p.mean;
    let n = p.dim() as f64;
    let kl = 0.5
        * ((&qi * &p.cov).trace() + (dm.transpose() * &qi * &dm)[0] - n + log_det_spd(&q.cov)?
            - log_det_spd(&p.cov)?);
    Ok(kl.max(0.0))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Exact `W2(p, q)` for Gaussians:
/// `‖μp − μq‖² + tr(Σp + Σq − 2 (Σq^{½} Σp Σq^{½})^{½})`.
pub fn gaussian_w2(p: &GaussianDensity, q: &GaussianDensity) -> Result<f64> {
    check_same_dim(p, q)?;
    let rq = sym_sqrt(&q.cov);
    let cross = sym_sqrt(&(&rq * &p.cov * &rq));
    let bures = p.cov.trace() + q.cov.trace() - 2.0 * cross.trace();
    Ok(((&p.mean - &q.mean).norm_squared() + bures.max(0.0)).sqrt())
}

/// Transportation inequality against the standard Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TalagrandReport {
    /// Exact `W2(q, N(0, I))`, an upper bound on `W1`.
    pub w2: f64,
    /// Sampled W1 (sliced when `dim > 1`), a lower-side estimate.
    pub w1_sampled: f64,
    pub kl: f64,
    /// `2 KL − W2²`; nonnegative when the inequality holds.
    pub margin: f64,
    pub pass: bool,
}

/// Relative slack allowed in `W2² ≤ 2 KL`, which is tight for pure mean shifts.
pub const TALAGRAND_TOLERANCE: f64 = 1e-10;

/// `W1(q, p*)² ≤ W2(q, p*)² ≤ 2 KL(q ‖ p*)` with `p* = N(0, I)`.
///
/// The verdict uses the exact `W2`, which dominates `W1`; the sampled `W1`
/// (from `n_samples` draws of each law) is reported alongside.
pub fn talagrand_check(q: &GaussianDensity, n_samples: usize, seed: u64) -> Result<TalagrandReport> {
    let std = GaussianDensity::standard(q.dim());
    let kl = gaussian_kl(q, &std)?;
    let w2 = gaussian_w2(q, &std)?;
    let w1_sampled = if n_samples >= 2 {
        let a = sample_gaussian(q, n_samples, seed, 0)?;
        let b = sample_gaussian(&std, n_samples, seed, n_samples as u64)?;
        if q.dim() == 1 {
            w1_1d(&a.coordinate(0), &b.coordinate(0))?
        } else {
            sliced_w1(&a, &b, 64, seed)?
        }
    } else {
        f64::NAN
    };
    let margin = 2.0 * kl - w2 * w2;
    let pass = margin >= -TALAGRAND_TOLERANCE * (1.0 + 2.0 * kl);
    Ok(TalagrandReport {
        w2,
        w1_sampled,
        kl,
        margin,
        pass,
    })
}

/// `n` draws from `p`; point `i` uses stream `offset + i` of `seed`.
pub fn sample_gaussian(p: &GaussianDensity, n: usize, seed: u64, offset: u64) -> Result<SampleCloud> {
    let chol = p.cholesky_factor()?;
    let points = (0..n)
        .into_par_iter()
        .map(|i| p.sample_with(&chol, &mut particle_rng(seed, offset + i as u64)))
        .collect();
    SampleCloud::new(points, Some(seed))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = sym_eigenvalues(m);
    (e.min(), e.max())
}
