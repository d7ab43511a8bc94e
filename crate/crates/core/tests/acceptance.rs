//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so every line is
//! printed even when everything passes.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpgmm::compare::{compare_params, relative_diff};
use vpgmm::gmm::{conditional_params, fit_centralized, gmm_pdf, log_sum_exp, FitConfig, GmmParams};
use vpgmm::partition::{assemble, synth_generate, FullDataset};
use vpgmm::private_em::{fit_distributed_from, private_e_step, DistributedConfig, Federation};
use vpgmm::private_forecast::{forecast, ForecastConfig, ForecastContext};
use vpgmm::simnet::Network;
use vpgmm::smc::{
    encode_fixed, secure_sum, ssp, ssp_fixed, Delivery, PartyId, Protocol,
    SecureSumConfig, Tag, TranscriptMode, FIXED_FRAC_BITS,
};
use vpgmm::traffic::{centralized_traffic, TrafficReport};
use vpgmm::{Dims, Error};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dataset(m: usize, t: usize, rows: usize, seed: u64) -> FullDataset {
    let dims = Dims::new(m, t, rows, 1).unwrap();
    let caps: Vec<f64> = (0..m).map(|k| 50.0 + 25.0 * (k % 4) as f64).collect();
    synth_generate(&dims, &caps, 0.8, 0.6, seed).unwrap()
}

fn max_param_diff(a: &GmmParams, b: &GmmParams) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| relative_diff(*x, y))
        .fold(0.0, f64::max)
}

fn equivalence() -> Check {
    let mut worst_iter: f64 = 0.0;
    let mut worst_final: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for seed in 1..=5u64 {
        let start = Instant::now();
        let ds = dataset(3, 4, 200, seed);
        let x = assemble(&ds).unwrap();
        let init = GmmParams::initial(ds.layout(), &ds.capacities(), 2, seed).unwrap();
        let fit = FitConfig {
            record_history: true,
            ..FitConfig::default()
        };
        let central = fit_centralized(&x, init.clone(), &fit).map_err(|e| e.to_string())?;
        let cfg = DistributedConfig {
            fit,
            seed,
            transcript: TranscriptMode::MeterOnly,
            ..DistributedConfig::default()
        };
        let private = fit_distributed_from(ds.clone(), init, &cfg).map_err(|e| e.to_string())?;
        ensure(central.converged && private.fit.converged, || format!("seed {seed}: no convergence"))?;
        for (a, b) in private.fit.history.iter().zip(&central.history).take(11) {
            worst_iter = worst_iter.max(max_param_diff(a, b));
        }
        let cmp = compare_params(ds.layout(), &private.fit.params, &central.params).map_err(|e| e.to_string())?;
        worst_final = worst_final.max(cmp.max_diff);
        slowest = slowest.max(start.elapsed());
    }
    ensure(worst_iter <= 1e-10, || format!("per-iteration diff {worst_iter:.2e} > 1e-10"))?;
    ensure(worst_final <= 1e-8, || format!("final diff {worst_final:.2e} > 1e-8"))?;
    ensure(slowest < Duration::from_secs(60), || format!("slowest seed took {slowest:?}"))?;
    Ok(format!(
        "5 seeds, first-10-iteration diff {worst_iter:.2e}, final diff {worst_final:.2e}, slowest seed {:.2}s",
        slowest.as_secs_f64()
    ))
}

fn ssp_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..1000usize {
        let len = rng.random_range(2..=64);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut net = Network::new(2, TranscriptMode::MeterOnly);
        let tag = Tag::new(Protocol::Ssp, 0, &[k]);
        let (a, b) = (PartyId::farm(1), PartyId::farm(2));
        let out = ssp(&mut net, tag, (a, &x, rng.random()), (b, &y), rng.random()).map_err(|e| e.to_string())?;
        ensure(out.initiator == out.responder, || format!("pair {k}: parties disagree"))?;
        worst = worst.max((out.initiator - dot).abs() / (1.0 + dot.abs()));

        let fixed = ssp_fixed(&mut net, tag.with_round(10), (a, &x, rng.random()), (b, &y), rng.random())
            .map_err(|e| e.to_string())?;
        let exact = x.iter().zip(&y).fold(0u128, |acc, (p, q)| {
            let (p, q) = (encode_fixed(*p, FIXED_FRAC_BITS).unwrap(), encode_fixed(*q, FIXED_FRAC_BITS).unwrap());
            acc.wrapping_add(p.wrapping_mul(q))
        });
        ensure(fixed.ring == exact, || format!("pair {k}: fixed-point product not exact"))?;
    }
    ensure(worst <= 1e-9, || format!("worst scaled error {worst:.2e} > 1e-9"))?;
    Ok(format!("1000 pairs, worst |err|/(1+|dot|) = {worst:.2e}, fixed point exact"))
}

fn ss_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for k in 0..500usize {
        let m = rng.random_range(3..=8);
        let addends: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.random_range(-100.0..100.0)]).collect();
        let plain: f64 = addends.iter().map(|a| a[0]).sum();
        let members: Vec<PartyId> = (1..=m).map(PartyId::farm).collect();
        let mut cfg = if k % 2 == 0 {
            SecureSumConfig::real(2000.0)
        } else {
            SecureSumConfig::fixed(2000.0, FIXED_FRAC_BITS)
        };
        cfg.check_overflow = true;
        let mut net = Network::new(m, TranscriptMode::MeterOnly);
        let tag = Tag::new(Protocol::SecureSum, 0, &[k]);
        let got = secure_sum(&mut net, tag, &members, &addends, rng.random(), &cfg, Delivery::Ring)
            .map_err(|e| e.to_string())?;
        worst = worst.max((got[0] - plain).abs());

        let mut tight = cfg;
        tight.modulus = plain.abs().max(1e-3);
        let mut net = Network::new(m, TranscriptMode::MeterOnly);
        let res = secure_sum(&mut net, tag, &members, &addends, 1, &tight, Delivery::Ring);
        ensure(matches!(res, Err(Error::SumOverflow { .. })), || format!("ring {k}: overflow missed"))?;
    }
    ensure(worst <= 1e-9, || format!("worst error {worst:.2e} > 1e-9"))?;
    Ok(format!("500 rings, worst |err| = {worst:.2e}, every overflow detected"))
}

/// Conditional density by quadrature: joint over `(target, v0 block)`
/// divided by its integral over the target.
fn quadrature_density(params: &GmmParams, idx: &[usize], y_v0: &[f64], points: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let sub = GmmParams::new(
        params.weights(),
        params
            .components()
            .iter()
            .map(|c| DVector::from_iterator(idx.len(), idx.iter().map(|&k| c.mean[k])))
            .collect(),
        params
            .components()
            .iter()
            .map(|c| DMatrix::from_fn(idx.len(), idx.len(), |r, s| c.covariance[(idx[r], idx[s])]))
            .collect(),
    )
    .unwrap();
    let joint = |u: f64| {
        let mut v = vec![u];
        v.extend_from_slice(y_v0);
        gmm_pdf(&DVector::from_vec(v), &sub).unwrap()
    };
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let marginal: f64 = (0..=n)
        .map(|k| if k == 0 || k == n { 0.5 } else { 1.0 } * joint(lo + k as f64 * h))
        .sum::<f64>()
        * h;
    points.iter().map(|&u| joint(u) / marginal).collect()
}

fn conditional_oracle() -> Check {
    let mut worst_param: f64 = 0.0;
    let mut worst_density: f64 = 0.0;
    for seed in 0..3u64 {
        let ds = dataset(2, 2, 200, 40 + seed);
        let cfg = DistributedConfig {
            fit: FitConfig {
                max_iter: 30,
                ..FitConfig::default()
            },
            seed,
            ..DistributedConfig::default()
        };
        let init = GmmParams::initial(ds.layout(), &ds.capacities(), 2, seed).unwrap();
        let report = fit_distributed_from(ds, init, &cfg).map_err(|e| e.to_string())?;
        let mut fed = report.federation;
        let params = fed.shared_params().unwrap().clone();
        let layout = fed.layout();
        let ctx = ForecastContext::from_row(&fed, 17 + seed as usize, 1).map_err(|e| e.to_string())?;
        let y: Vec<f64> = (1..=2).map(|m| ctx.own(m)).collect();
        for farm in 1..=2 {
            let got = forecast(&mut fed, &ctx, farm, 2, &ForecastConfig::default()).map_err(|e| e.to_string())?;
            let want = conditional_params(&params, layout, &y, 1, farm, 2).map_err(|e| e.to_string())?;
            for (a, b) in [(&got.weights, &want.weights), (&got.means, &want.means), (&got.variances, &want.variances)] {
                for (p, q) in a.iter().zip(b.iter()) {
                    worst_param = worst_param.max(relative_diff(*p, *q));
                }
            }
            let sd = got.variances.iter().map(|v| v.sqrt()).fold(0.0, f64::max);
            let lo = got.means.iter().copied().fold(f64::INFINITY, f64::min) - 12.0 * sd;
            let hi = got.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 12.0 * sd;
            let points: Vec<f64> = (0..50).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / 50.0).collect();
            let mut idx = vec![layout.flat(farm, 2).unwrap()];
            idx.extend(layout.period_slice(1).unwrap());
            let oracle = quadrature_density(&params, &idx, &y, &points, lo, hi);
            for (u, o) in points.iter().zip(oracle) {
                worst_density = worst_density.max((got.pdf(*u) - o).abs());
            }
        }
    }
    ensure(worst_param <= 1e-9, || format!("parameter diff {worst_param:.2e} > 1e-9"))?;
    ensure(worst_density <= 1e-6, || format!("density diff {worst_density:.2e} > 1e-6"))?;
    Ok(format!(
        "3 instances x 2 farms, parameter diff {worst_param:.2e}, density diff at 50 points {worst_density:.2e}"
    ))
}

fn privacy_surface() -> Check {
    // (a) transcript scan on a desk-scale fit.
    let ds = dataset(3, 4, 200, 5);
    let raw: HashSet<u64> = ds
        .slices()
        .iter()
        .flat_map(|s| s.values().iter().map(|v| v.to_bits()))
        .collect();
    let cfg = DistributedConfig {
        fit: FitConfig {
            max_iter: 5,
            ..FitConfig::default()
        },
        seed: 5,
        ..DistributedConfig::default()
    };
    let report = vpgmm::private_em::fit_distributed(ds, 2, &cfg).map_err(|e| e.to_string())?;
    let mut scanned = 0usize;
    for msg in report.federation.transcript().messages() {
        if let Some(values) = msg.payload.as_real() {
            scanned += values.len();
            if let Some(v) = values.iter().find(|v| raw.contains(&v.to_bits())) {
                return Err(format!("(a) raw value {v} appears in {}", msg.tag));
            }
        }
    }

    // (b) one SSP session under two session seeds.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0) * rng.random_range(0.0..50.0)).collect();
    let y: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..50.0)).collect();
    let run = |mask_seed: u64| {
        let mut net = Network::new(2, TranscriptMode::Full);
        let tag = Tag::new(Protocol::Ssp, 0, &[1]);
        let out = ssp(&mut net, tag, (PartyId::farm(1), &x, 77), (PartyId::farm(2), &y), mask_seed).unwrap();
        let masked: Vec<f64> = net
            .transcript()
            .messages()
            .iter()
            .filter(|m| m.tag.round < 3)
            .flat_map(|m| m.payload.as_real().unwrap().to_vec())
            .collect();
        (out.initiator, masked)
    };
    let (p1, m1) = run(1001);
    let (p2, m2) = run(2002);
    ensure(m1.len() == m2.len() && m1.iter().zip(&m2).all(|(a, b)| a != b), || {
        "(b) some masked element unchanged under a new session seed".into()
    })?;
    ensure((p1 - p2).abs() <= 1e-9, || format!("(b) product moved by {:.2e}", (p1 - p2).abs()))?;

    // (c) forecast exclusivity.
    let mut fed = report.federation;
    let ctx = ForecastContext::from_row(&fed, 3, 2).map_err(|e| e.to_string())?;
    let f = forecast(&mut fed, &ctx, 1, 3, &ForecastConfig::default()).map_err(|e| e.to_string())?;
    for m in 2..=3 {
        let values = fed.party(m).shared_values();
        if let Some(mu) = f.means.iter().find(|mu| values.contains(mu)) {
            return Err(format!("(c) farm {m} holds farm 1's conditional mean {mu}"));
        }
    }
    Ok(format!(
        "(a) {scanned} payload values scanned, (b) {} masked elements all changed, product diff {:.1e}, (c) means held by farm 1 only",
        m1.len(),
        (p1 - p2).abs()
    ))
}

fn traffic_direction() -> Check {
    let start = Instant::now();
    let ds = dataset(10, 24, 1000, 6);
    let cfg = DistributedConfig {
        fit: FitConfig {
            max_iter: 5,
            ..FitConfig::default()
        },
        seed: 6,
        transcript: TranscriptMode::MeterOnly,
        ..DistributedConfig::default()
    };
    let report = vpgmm::private_em::fit_distributed(ds.clone(), 3, &cfg).map_err(|e| e.to_string())?;
    let centralized = centralized_traffic(&ds, &report.fit.params).map_err(|e| e.to_string())?;
    let table = TrafficReport::new(10, centralized, report.federation.network().traffic().clone());
    println!("{}", table.render());
    let p = table.proposed_farm();
    let ratio = table.ratio();
    let elapsed = start.elapsed();
    ensure(ratio >= 10.0, || format!("ratio {ratio:.1} < 10"))?;
    ensure(p.down_bytes > p.up_bytes, || format!("downstream {} <= upstream {}", p.down_bytes, p.up_bytes))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} iterations, ratio {ratio:.0}x, proposed down {} > up {} bytes, {:.0}s",
        report.fit.iterations,
        p.down_bytes,
        p.up_bytes,
        elapsed.as_secs_f64()
    ))
}

fn random_params(dim: usize, k: usize, rng: &mut ChaCha8Rng) -> GmmParams {
    let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let means = (0..k).map(|_| DVector::from_fn(dim, |_, _| rng.random_range(0.0..80.0))).collect();
    let covs = (0..k)
        .map(|_| {
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-10.0..10.0));
            &a * a.transpose() + DMatrix::identity(dim, dim) * 50.0
        })
        .collect();
    GmmParams::new(w, means, covs).unwrap()
}

fn invariants() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for case in 0..20u64 {
        let (m, t) = (rng.random_range(1..=4), rng.random_range(1..=3));
        let rows = rng.random_range(20..=200);
        let k = rng.random_range(1..=3);
        let ds = dataset(m, t, rows, 100 + case);
        let x = assemble(&ds).unwrap();
        let cfg = DistributedConfig {
            fit: FitConfig {
                max_iter: 8,
                record_history: true,
                ..FitConfig::default()
            },
            seed: case,
            ..DistributedConfig::default()
        };
        let report = vpgmm::private_em::fit_distributed(ds.clone(), k, &cfg).map_err(|e| e.to_string())?;
        let again = vpgmm::private_em::fit_distributed(ds.clone(), k, &cfg).map_err(|e| e.to_string())?;
        ensure(
            report.federation.transcript().digest_hex() == again.federation.transcript().digest_hex(),
            || format!("case {case}: transcripts differ across reruns"),
        )?;
        let trace = &report.fit.loglik_trace;
        for w in trace.windows(2) {
            ensure(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), || {
                format!("case {case}: log-likelihood fell from {} to {}", w[0], w[1])
            })?;
        }
        for theta in &report.fit.history {
            let wsum: f64 = theta.weights().iter().sum();
            ensure((wsum - 1.0).abs() <= 1e-12, || format!("case {case}: weights sum to {wsum}"))?;
            for c in theta.components() {
                ensure(c.covariance.clone().cholesky().is_some(), || format!("case {case}: covariance not SPD"))?;
            }
        }

        // Quadratic-form identity through the protocol on random parameters.
        let theta = random_params(m * t, k, &mut rng);
        let mut fed = Federation::new(ds, case, TranscriptMode::MeterOnly);
        fed.install(&theta);
        let q = private_e_step(&mut fed, 0).map_err(|e| e.to_string())?;
        for row in q.matrix().row_iter() {
            let s: f64 = row.iter().sum();
            ensure((s - 1.0).abs() <= 1e-12, || format!("case {case}: responsibility row sums to {s}"))?;
        }
        let density = &fed.party(1).shared.row_log_density;
        for (i, row) in x.row_iter().enumerate() {
            let terms: Vec<f64> = theta
                .components()
                .iter()
                .map(|c| {
                    let d = row.transpose() - &c.mean;
                    let g = (d.transpose() * &c.precision * &d)[(0, 0)];
                    c.weight.ln() - 0.5 * g + c.log_normalizer()
                })
                .collect();
            let direct = log_sum_exp(&terms);
            ensure((density[i] - direct).abs() <= 1e-9 * direct.abs().max(1.0), || {
                format!("case {case}: row {i} density {} vs direct {direct}", density[i])
            })?;
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} random instances, {:.1}s", elapsed.as_secs_f64()))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 7] = [
        ("equivalence with centralized EM", equivalence),
        ("secure scalar product correctness", ssp_correctness),
        ("secure sum correctness", ss_correctness),
        ("conditional PDF oracle", conditional_oracle),
        ("privacy surface", privacy_surface),
        ("traffic direction", traffic_direction),
        ("invariant suites", invariants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.ends_with(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{label} PASS ({name}): {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("{label} FAIL ({name}): {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
