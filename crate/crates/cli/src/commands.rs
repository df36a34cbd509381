//! Subcommand drivers.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use flowforge_core::pipeline::{build as build_network, sample_and_compare, BuildArtifacts};
use flowforge_core::{CouplingNetwork, GaussianDensity};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::config::{self, BuildExperiment, SampleExperiment, SourceLaw, VerifyExperiment};
use crate::table::pretty;
use crate::{AssertionFailed, Common, ConfigError};

fn write(path: &Path, body: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Network and reference values on the probe lattice, one row per point.
fn probes_csv(a: &BuildArtifacts) -> String {
    let n = a.network.dim;
    let mut header: Vec<String> = (0..n).map(|i| format!("z_{i}")).collect();
    header.extend((0..n).map(|i| format!("network_{i}")));
    header.extend((0..n).map(|i| format!("reference_{i}")));
    header.push("error".into());
    let mut out = header.join(",") + "\n";
    let probes = &a.network_probe;
    for ((z, net), reference) in probes.points.iter().zip(&probes.values).zip(&a.reference_probe.values) {
        let err = net.iter().zip(reference).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let row: Vec<String> = z
            .iter()
            .chain(net)
            .chain(reference)
            .chain([&err])
            .map(|x| format!("{x:e}"))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn build(flags: &Common) -> anyhow::Result<()> {
    let exp: BuildExperiment = config::load(&flags.config)?;
    let run = config::resolve(flags, exp.out_dir, exp.threads)?;
    let mut cfg = exp.build;
    if let Some(seed) = flags.seed.or(exp.seed) {
        cfg.seed = seed;
    }
    let artifacts = build_network(&cfg)?;
    let dir = &run.out_dir;
    write(&dir.join("network.json"), pretty(&artifacts.network))?;
    write(&dir.join("report.json"), pretty(&artifacts.report))?;
    write(&dir.join("probes.csv"), probes_csv(&artifacts))?;
    let r = &artifacts.report;
    println!(
        "built {} blocks over {} chunks: C0 {:.3e}, C1 {:.3e}, round trip {:.1e}, condition {:.3} (bound {:.3}) -> {}",
        r.blocks,
        r.plan.chunks,
        r.flow_error.c0,
        r.flow_error.c1,
        r.round_trip,
        r.conditioning.observed.worst_condition,
        r.conditioning.bound,
        dir.display()
    );
    Ok(())
}

pub fn verify(flags: &Common) -> anyhow::Result<()> {
    let exp: VerifyExperiment = config::load(&flags.config)?;
    let run = config::resolve(flags, exp.out_dir, exp.threads)?;
    let seed = flags.seed.unwrap_or(exp.seed);
    let suite = &exp.verify;
    let table = suite.run(seed).with_context(|| format!("suite {}", suite.name()))?;
    let parameters = json!({ "seed": seed, "config": suite });
    table
        .write(&run.out_dir, parameters)
        .with_context(|| format!("writing {} results", suite.name()))?;
    let failures = table.failures();
    println!(
        "{}: {} of {} rows pass -> {}",
        suite.name(),
        table.len() - failures.len(),
        table.len(),
        run.out_dir.display()
    );
    if let Some(&first) = failures.first() {
        let mut err = std::io::stderr().lock();
        for &i in &failures {
            let _ = writeln!(err, "FAIL {} row {i}: {}", suite.name(), table.describe_row(i));
        }
        return Err(AssertionFailed(format!(
            "{}: {} failing rows, first is row {first} ({})",
            suite.name(),
            failures.len(),
            table.describe_row(first)
        ))
        .into());
    }
    Ok(())
}

fn source_density(law: &SourceLaw) -> anyhow::Result<GaussianDensity> {
    let d = law.sigma_x.len();
    if d == 0 || law.sigma_x.iter().any(|r| r.len() != d) {
        return Err(ConfigError("source.sigma_x must be a non-empty square matrix".into()).into());
    }
    let mut cov = DMatrix::identity(2 * d, 2 * d);
    for (i, row) in law.sigma_x.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            cov[(i, j)] = x;
        }
    }
    let mut mean = DVector::zeros(2 * d);
    if let Some(mu) = &law.mu_x {
        if mu.len() != d {
            return Err(ConfigError(format!("source.mu_x has length {}, expected {d}", mu.len())).into());
        }
        mean.rows_mut(0, d).copy_from_slice(mu);
    }
    Ok(GaussianDensity::new(mean, cov)?)
}

pub fn sample(flags: &Common) -> anyhow::Result<()> {
    let exp: SampleExperiment = config::load(&flags.config)?;
    let run = config::resolve(flags, exp.out_dir, exp.threads)?;
    let seed = flags.seed.unwrap_or(exp.seed);
    let opts = exp.sample;
    let path = opts.network.clone().unwrap_or_else(|| run.out_dir.join("network.json"));
    let text = fs::read_to_string(&path)
        .map_err(|e| ConfigError(format!("cannot read network {}: {e}", path.display())))?;
    let net: CouplingNetwork = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("invalid network {}: {e}", path.display())))?;
    let radius = net
        .domain
        .ok_or_else(|| ConfigError(format!("network {} records no sampling radius", path.display())))?;
    let source = source_density(&opts.source)?;
    let (pushed, report) = sample_and_compare(&net, &source, radius, opts.n_samples, opts.n_directions, seed)?;
    let mut csv = Vec::new();
    pushed.write_csv(&mut csv)?;
    write(&run.out_dir.join("samples.csv"), csv)?;
    write(&run.out_dir.join("w1.json"), pretty(&report))?;
    println!(
        "{} samples (acceptance {:.4}): sliced W1 {:.4e} over {} directions -> {}",
        report.n_samples,
        report.acceptance_rate,
        report.sliced,
        report.n_directions,
        run.out_dir.display()
    );
    Ok(())
}
