//! Acceptance criteria. Each criterion prints one PASS/FAIL line with its
//! measured values; the process exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use flowforge_core::henon::{
    approximating_field, constraint_polynomials, solve_coefficients, target_polynomials,
    verify_chunk_order, HenonConfig,
};
use flowforge_core::langevin::{
    convolution_hessian_check, gaussian_evolve, jacobian_flow, kron_identity,
    lyapunov_gaussian, particle_rng, variance_proxy, GaussianDensity,
};
use flowforge_core::metrics::{sliced_w1, w1_1d, SampleCloud};
use flowforge_core::odeflow::{
    alternating_euler, alternating_euler_with_jacobian, ball_grid, flow_distance,
    integrate_with_jacobian, loglog_slope, perturbation_order_check, FlowProbe, FnField, Joined,
};
use flowforge_core::pipeline::{
    build, chunk_hamiltonian, choose_radius, evaluate_w1, gaussian_tail_moment, BuildConfig,
};
use flowforge_core::{MultiIndex, Polynomial};
use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_spd(n: usize, rng: &mut impl Rng, lo: f64, hi: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
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

/// Closed-form covariance against RK4 of `Σ̇ = BΣ + ΣBᵀ + diag(0, 2γI)`.
fn variance_proxy_closed_form() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = particle_rng(1, 0);
    for gamma in [0.5, 1.0, 1.5] {
        for d in [1usize, 2] {
            let b = kron_identity(&Matrix2::new(0.0, 1.0, -1.0, -gamma), d);
            let mut diffusion = DMatrix::zeros(2 * d, 2 * d);
            for i in d..2 * d {
                diffusion[(i, i)] = 2.0 * gamma;
            }
            let rhs = |s: &DMatrix<f64>| &b * s + s * b.transpose() + &diffusion;
            let sigma0 = random_spd(2 * d, &mut rng, 0.2, 3.0);
            let mut s = sigma0.clone();
            let h: f64 = 1e-3;
            let mut t = 0.0;
            for target in [0.5, 1.0, 2.0, 5.0, 10.0] {
                let steps = ((target - t) / h).round() as usize;
                for _ in 0..steps {
                    let k1 = rhs(&s);
                    let k2 = rhs(&(&s + &k1 * (0.5 * h)));
                    let k3 = rhs(&(&s + &k2 * (0.5 * h)));
                    let k4 = rhs(&(&s + &k3 * h));
                    s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                }
                t = target;
                let closed = variance_proxy(&sigma0, gamma, t).map_err(|e| e.to_string())?;
                let gap = (&closed - &s).svd(false, false).singular_values.max();
                worst = worst.max(gap);
            }
        }
    }
    check(worst <= 1e-8, format!("max ‖Σ_closed − Σ_integrated‖₂ = {worst:.2e} (tol 1e-8)"))
}

fn conditioning_bound() -> Outcome {
    let mut violations = 0;
    let mut identity_dev: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for kappa in [1.0, 2.0, 4.0] {
        // d = 2 with source precision eigenvalues {κ, (1+κ)/2}, rotated
        let (c, s) = (0.8f64, 0.6f64);
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let prec = &rot * DMatrix::from_diagonal(&DVector::from_vec(vec![kappa, 0.5 * (1.0 + kappa)])) * rot.transpose();
        let sigma_x = prec.try_inverse().unwrap();
        let sigma0 = padded(&((&sigma_x + sigma_x.transpose()) * 0.5));
        for gamma in [0.5, 1.0, 1.5] {
            let r = jacobian_flow(&sigma0, gamma, kappa, 20.0, 4000, 10).map_err(|e| e.to_string())?;
            violations += r.violations;
            worst_ratio = worst_ratio.max((r.observed_max / r.observed_min) / r.condition_bound);
            if kappa == 1.0 {
                identity_dev = identity_dev.max(r.max_identity_deviation);
            }
        }
    }
    check(
        violations == 0 && identity_dev <= 1e-10,
        format!("violations = {violations}, κ=1 max |D_t − I| = {identity_dev:.1e}, worst observed/bound condition = {worst_ratio:.3}"),
    )
}

fn quadratic_h() -> Polynomial {
    let p = GaussianDensity::new(
        DVector::from_vec(vec![0.3, -0.1]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.9]),
    )
    .unwrap();
    chunk_hamiltonian(&p).unwrap()
}

fn henon_chunk_order() -> Outcome {
    let cfg = HenonConfig { degree: 1, gamma: 1.0, tau: 0.1, forward: false };
    let points = ball_grid(2.0, 11, 2);
    let r = verify_chunk_order(&quadratic_h(), &cfg, &points, &[0.2, 0.1, 0.05, 0.025], 800)
        .map_err(|e| e.to_string())?;
    let slope = r.slope.unwrap_or(f64::NAN);
    let c1: Vec<String> = r.distances.iter().map(|d| format!("{:.2e}", d.c1)).collect();
    check((1.8..=2.2).contains(&slope), format!("C¹ slope = {slope:.3} (C¹ = [{}])", c1.join(", ")))
}

fn euler_order() -> Outcome {
    let sys = solve_coefficients(&quadratic_h(), &HenonConfig { degree: 1, gamma: 1.0, tau: 0.25, forward: false })
        .map_err(|e| e.to_string())?;
    let field = approximating_field(&sys);
    let points = ball_grid(2.0, 11, 2);
    let horizon = 1.0;
    let exact = FlowProbe::sample(&points, |z| integrate_with_jacobian(&Joined(&field), z, 0.0, horizon, 2000))
        .map_err(|e| e.to_string())?;
    let etas = [0.04, 0.02, 0.01, 0.005];
    let mut c1 = Vec::new();
    for &eta in &etas {
        let n = (horizon / eta).round() as usize;
        let approx = FlowProbe::sample(&points, |z| {
            let (x, v, j) = alternating_euler_with_jacobian(&field, &z[..1], &z[1..], 0.0, eta, n)?;
            Ok((x.into_iter().chain(v).collect(), j))
        })
        .map_err(|e| e.to_string())?;
        c1.push(flow_distance(&approx, &exact).map_err(|e| e.to_string())?.c1);
    }
    let slope = loglog_slope(&etas, &c1).map_err(|e| e.to_string())?;

    // exact Jacobian recurrence against central differences of the discrete map
    let mut fd_gap: f64 = 0.0;
    let (eta, n) = (0.02, 50);
    for z in [[0.7, -0.4], [-1.2, 0.9], [0.1, 1.5]] {
        let (_, _, jac) = alternating_euler_with_jacobian(&field, &z[..1], &z[1..], 0.0, eta, n).map_err(|e| e.to_string())?;
        let h = 1e-6;
        for c in 0..2 {
            let run = |delta: f64| {
                let mut zz = z;
                zz[c] += delta;
                let traj = alternating_euler(&field, &zz[..1], &zz[1..], 0.0, eta, n).unwrap();
                let (x, v) = traj.last().unwrap().clone();
                [x[0], v[0]]
            };
            let (p, m) = (run(h), run(-h));
            for r in 0..2 {
                fd_gap = fd_gap.max(((p[r] - m[r]) / (2.0 * h) - jac[(r, c)]).abs());
            }
        }
    }
    check(
        (0.8..=1.2).contains(&slope) && fd_gap <= 1e-8,
        format!("C¹ slope = {slope:.3} over η ∈ {etas:?} on [0, {horizon}], Jacobian recurrence vs FD = {fd_gap:.1e}"),
    )
}

fn perturbation_order() -> Outcome {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let cubic = FnField::new(
        2,
        |z: &[f64], _: f64, o: &mut [f64]| {
            o[0] = 0.0;
            o[1] = -z[0].powi(3);
        },
        |z: &[f64], _: f64| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -3.0 * z[0] * z[0], 0.0]),
    );
    let points = ball_grid(1.0, 9, 2);
    let study = perturbation_order_check(&a, &cubic, &points, &[0.1, 0.05, 0.025, 0.0125], 2.0, 800)
        .map_err(|e| e.to_string())?;
    check((1.8..=2.2).contains(&study.slope), format!("C¹ slope in ε = {:.3}", study.slope))
}

fn lyapunov_decay() -> Outcome {
    let p0 = GaussianDensity::new(DVector::zeros(2), padded(&DMatrix::from_element(1, 1, 0.5))).unwrap();
    let l0 = lyapunov_gaussian(&p0).map_err(|e| e.to_string())?;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..100 {
        let t = 30.0 * i as f64 / 99.0;
        let p = gaussian_evolve(&p0, 1.0, t).map_err(|e| e.to_string())?;
        let l = lyapunov_gaussian(&p).map_err(|e| e.to_string())?;
        worst = worst.max(l / (l0 * (-t / 10.0).exp()));
    }
    check(worst <= 1.0 + 1e-6, format!("max 𝓛[p_t] / (𝓛[p₀] e^(−t/10)) = {worst:.6} over 100 times in [0, 30]"))
}

fn coefficient_solvability() -> Outcome {
    let mut systems = 0;
    let mut rank_failures = 0;
    let mut worst_residual: f64 = 0.0;
    let mut worst_back: f64 = 0.0;
    for d in 1..=2usize {
        for m in 1..=4u32 {
            let mut rng = particle_rng(70 + m as u64, d as u64);
            let terms = MultiIndex::all_up_to_degree(2 * d, m + 1)
                .into_iter()
                .filter(|i| i.degree() >= 1)
                .map(|i| (i, rng.random_range(-1.0f64..1.0)))
                .collect::<Vec<_>>();
            let h = Polynomial::from_terms(2 * d, terms);
            let cfg = HenonConfig { degree: m, gamma: 0.7, tau: 0.1, forward: false };
            let sys = solve_coefficients(&h, &cfg).map_err(|e| format!("d={d} M={m}: {e}"))?;
            for r in &sys.reports {
                systems += 1;
                if r.rank != r.rows {
                    rank_failures += 1;
                }
                worst_residual = worst_residual.max(r.residual);
            }
            let (r1, r2) = target_polynomials(&h, cfg.gamma, cfg.forward).map_err(|e| e.to_string())?;
            let (i1, i2) = constraint_polynomials(&sys);
            for j in 0..d {
                worst_back = worst_back.max(i1[j].coeff_distance(&r1[j])).max(i2[j].coeff_distance(&r2[j]));
            }
        }
    }
    check(
        rank_failures == 0 && worst_residual <= 1e-8 && worst_back <= 1e-8,
        format!("{systems} systems, rank deficits = {rank_failures}, max residual = {worst_residual:.1e}, back-substitution = {worst_back:.1e}"),
    )
}

fn end_to_end_build() -> Outcome {
    let config = |tau: f64| {
        let mut c = BuildConfig::new(DMatrix::from_element(1, 1, 0.5), 1.0, 0.1, tau);
        c.phi = Some(5.0);
        c.w1_samples = 0;
        c.seed = 11;
        c
    };
    let coarse = build(&config(0.25)).map_err(|e| e.to_string())?;
    let fine = build(&config(0.125)).map_err(|e| e.to_string())?;
    let rc = &coarse.report;
    let expected_blocks = 2 * 20 * (2.0 * PI / 0.0625f64).ceil() as usize;
    let ratio = rc.flow_error.c0 / fine.report.flow_error.c0;
    let cond = rc.conditioning.observed.worst_condition;
    let w1 = evaluate_w1(&coarse.network, &config(0.25), 100_000, 11).map_err(|e| e.to_string())?;
    let ok_a = ratio >= 1.6;
    let ok_b = rc.round_trip <= 1e-9;
    let ok_c = cond <= 256.0 * 1.2;
    let ok_d = w1.sliced <= 0.1;
    let ok_blocks = rc.blocks == expected_blocks;
    check(
        ok_a && ok_b && ok_c && ok_d && ok_blocks,
        format!(
            "(a) C⁰ {:.3e} → {:.3e}, ratio {ratio:.2} [{}]; (b) round trip {:.1e} [{}]; (c) condition {cond:.2} ≤ 307.2 [{}]; (d) sliced W1 {:.4} [{}]; blocks {} = {expected_blocks} [{}]",
            rc.flow_error.c0,
            fine.report.flow_error.c0,
            ok_a,
            rc.round_trip,
            ok_b,
            ok_c,
            w1.sliced,
            ok_d,
            rc.blocks,
            ok_blocks
        ),
    )
}

fn wasserstein_lemmas() -> Outcome {
    let mut rng = particle_rng(9, 9);
    let mut lipschitz_worst = f64::NEG_INFINITY;
    let mut closeness_worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(5..60usize);
        let m = rng.random_range(5..60usize);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let l = rng.random_range(0.1..3.0);
        let w = rng.random_range(0.5..4.0);
        // Lipschitz constant exactly l
        let g = |x: f64| l * (w * x).sin() / w;
        let lhs = w1_1d(&a.iter().map(|&x| g(x)).collect::<Vec<_>>(), &b.iter().map(|&x| g(x)).collect::<Vec<_>>()).unwrap();
        lipschitz_worst = lipschitz_worst.max(lhs - l * w1_1d(&a, &b).unwrap());
    }
    for k in 0..100u64 {
        let n = rng.random_range(10..200usize);
        let amp = rng.random_range(0.0..0.5);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let f: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] * p[1], p[2].sin(), p[0] + p[2]]).collect();
        let gmap: Vec<Vec<f64>> = f
            .iter()
            .zip(&pts)
            .map(|(q, p)| vec![q[0] + amp * p[1].cos(), q[1] - amp * (p[0] * p[2]).sin(), q[2] + amp * 0.5])
            .collect();
        let eps1 = f
            .iter()
            .zip(&gmap)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let s = sliced_w1(&SampleCloud::new(f, None).unwrap(), &SampleCloud::new(gmap, None).unwrap(), 32, k).unwrap();
        closeness_worst = closeness_worst.max(s - eps1);
    }

    // truncation tail: quadrature against Monte Carlo at n = 10⁶
    let dim = 2;
    let radius = choose_radius(1e-3, dim).map_err(|e| e.to_string())?;
    let quad = 2.0 * gaussian_tail_moment(radius, dim);
    let n = 1_000_000;
    let mut mc_rng = particle_rng(2024, 0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let r2: f64 = (0..dim).map(|_| mc_rng.sample::<f64, _>(StandardNormal).powi(2)).sum();
        let r = r2.sqrt();
        let x = if r > radius { 2.0 * r } else { 0.0 };
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / n as f64;
    let sd = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    let ok_tail = (mean - quad).abs() <= 3.0 * sd && quad < 1e-3;
    check(
        lipschitz_worst <= 1e-12 && closeness_worst <= 1e-12 && ok_tail,
        format!(
            "Lipschitz excess {lipschitz_worst:.1e}, uniform-closeness excess {closeness_worst:.1e}; R = {radius:.3}: tail quadrature {quad:.3e} vs MC {mean:.3e} ± {sd:.1e}"
        ),
    )
}

fn convolution_sandwich() -> Outcome {
    let mut rng = particle_rng(5, 5);
    let mut worst = f64::INFINITY;
    for i in 0..50 {
        let n = 1 + i % 3;
        let sigma_p = random_spd(n, &mut rng, 0.1, 5.0);
        let sigma = random_spd(n, &mut rng, 0.1, 5.0);
        let eig = sigma_p.clone().symmetric_eigenvalues();
        let s1 = DMatrix::identity(n, n) * eig.min();
        let s2 = DMatrix::identity(n, n) * eig.max();
        let r = convolution_hessian_check(&s1, &s2, &sigma, &sigma_p, 1e-10).map_err(|e| e.to_string())?;
        worst = worst.min(r.lower_margin).min(r.upper_margin);
    }
    check(worst >= -1e-10, format!("smallest sandwich margin = {worst:.2e} over 50 instances"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("variance-proxy closed form", Duration::from_secs(1), variance_proxy_closed_form),
        ("conditioning bound", Duration::from_secs(10), conditioning_bound),
        ("Hénon chunk order", Duration::from_secs(30), henon_chunk_order),
        ("alternating-Euler order", Duration::from_secs(30), euler_order),
        ("perturbation order", Duration::from_secs(10), perturbation_order),
        ("Lyapunov decay", Duration::from_secs(1), lyapunov_decay),
        ("coefficient-system solvability", Duration::from_secs(30), coefficient_solvability),
        ("end-to-end build", Duration::from_secs(300), end_to_end_build),
        ("Wasserstein lemmas", Duration::from_secs(30), wasserstein_lemmas),
        ("convolution Hessian sandwich", Duration::from_secs(1), convolution_sandwich),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let (ok, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} {:>2} {name}: {detail}; runtime {:.2}s (budget {}s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
