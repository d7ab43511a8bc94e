use super::*;
use crate::dims::Dims;
use crate::gmm::em::expectation;
use crate::gmm::{fit_centralized, m_step};
use crate::partition::{assemble, synth_generate};
use crate::smc::PartyId;

fn data(m: usize, t: usize, rows: usize, seed: u64) -> FullDataset {
    let dims = Dims::new(m, t, rows, 2).unwrap();
    let caps: Vec<f64> = (0..m).map(|k| 10.0 + 5.0 * k as f64).collect();
    synth_generate(&dims, &caps, 0.7, 0.5, seed).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn max_rel(a: &GmmParams, b: &GmmParams) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| rel(*x, y))
        .fold(0.0, f64::max)
}

#[test]
fn e_step_matches_centralized() {
    let ds = data(3, 2, 40, 1);
    let x = assemble(&ds).unwrap();
    let init = GmmParams::initial(ds.layout(), &ds.capacities(), 3, 9).unwrap();
    let central = expectation(&x, &init).unwrap();
    let mut fed = Federation::new(ds, 4, TranscriptMode::Full).with_chunk(7);
    fed.install(&init);
    let q = private_e_step(&mut fed, 0).unwrap();
    for (a, b) in q.matrix().iter().zip(central.responsibilities.matrix().iter()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let ll = fed.party(2).shared.log_likelihood.unwrap();
    assert!(rel(ll, central.log_likelihood) < 1e-10);
    fed.check_consensus().unwrap();
}

#[test]
fn m_step_matches_centralized() {
    let ds = data(3, 2, 50, 2);
    let x = assemble(&ds).unwrap();
    let init = GmmParams::initial(ds.layout(), &ds.capacities(), 2, 3).unwrap();
    for use_updated_mean in [false, true] {
        let cfg = EmConfig {
            use_updated_mean,
            ..EmConfig::default()
        };
        let q = expectation(&x, &init).unwrap().responsibilities;
        let central = m_step(&x, &q, &init, &cfg).unwrap();
        let mut fed = Federation::new(ds.clone(), 5, TranscriptMode::Full);
        fed.install(&init);
        private_e_step(&mut fed, 0).unwrap();
        let private = private_m_step(&mut fed, 0, &cfg).unwrap();
        assert!(max_rel(&central, &private) < 1e-10, "updated mean {use_updated_mean}");
    }
}

#[test]
fn fit_tracks_centralized_every_iteration() {
    let ds = data(3, 3, 60, 7);
    let x = assemble(&ds).unwrap();
    let init = GmmParams::initial(ds.layout(), &ds.capacities(), 2, 11).unwrap();
    let fit = FitConfig {
        max_iter: 6,
        record_history: true,
        ..FitConfig::default()
    };
    let central = fit_centralized(&x, init.clone(), &fit).unwrap();
    let cfg = DistributedConfig {
        fit,
        seed: 11,
        ..DistributedConfig::default()
    };
    let report = fit_distributed_from(ds, init, &cfg).unwrap();
    assert_eq!(report.fit.iterations, central.iterations);
    for (a, b) in report.fit.history.iter().zip(&central.history) {
        assert!(max_rel(a, b) < 1e-10);
    }
    for (a, b) in report.fit.loglik_trace.iter().zip(&central.loglik_trace) {
        assert!(rel(*a, *b) < 1e-10);
    }
    assert_eq!(report.summaries.len(), report.fit.loglik_trace.len());
}

#[test]
fn ssp_count_per_iteration() {
    let ds = data(3, 2, 20, 3);
    let init = GmmParams::initial(ds.layout(), &ds.capacities(), 2, 1).unwrap();
    let mut fed = Federation::new(ds, 1, TranscriptMode::Full);
    fed.install(&init);
    private_e_step(&mut fed, 0).unwrap();
    private_m_step(&mut fed, 0, &EmConfig::default()).unwrap();
    let first_rounds = fed
        .transcript()
        .messages()
        .iter()
        .filter(|m| m.tag.protocol == Protocol::Ssp && m.tag.round == 1)
        .count();
    // J T^2 M(M-1)/2
    assert_eq!(first_rounds, 2 * 4 * 3);
}

#[test]
fn single_farm_sends_nothing() {
    let ds = data(1, 3, 30, 4);
    let x = assemble(&ds).unwrap();
    let init = GmmParams::initial(ds.layout(), &ds.capacities(), 2, 2).unwrap();
    let fit = FitConfig {
        max_iter: 4,
        ..FitConfig::default()
    };
    let central = fit_centralized(&x, init.clone(), &fit).unwrap();
    let cfg = DistributedConfig {
        fit,
        ..DistributedConfig::default()
    };
    let report = fit_distributed_from(ds, init, &cfg).unwrap();
    assert_eq!(report.federation.network().traffic().total_messages(), 0);
    assert!(max_rel(&report.fit.params, &central.params) < 1e-12);
}

#[test]
fn partial_sums_reassemble_the_quadratic_form() {
    let ds = data(2, 2, 5, 8);
    let x = assemble(&ds).unwrap();
    let init = GmmParams::initial(ds.layout(), &ds.capacities(), 1, 5).unwrap();
    let mut fed = Federation::new(ds, 2, TranscriptMode::Full);
    fed.install(&init);
    private_e_step(&mut fed, 0).unwrap();
    let comp = init.component(0);
    let density = &fed.party(1).shared.row_log_density;
    for (i, row) in x.row_iter().enumerate() {
        let d = row.transpose() - &comp.mean;
        let g = (d.transpose() * &comp.precision * &d)[(0, 0)];
        let direct = -0.5 * g + comp.log_normalizer();
        assert!((density[i] - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }
}

#[test]
fn runs_are_reproducible() {
    let ds = data(2, 2, 30, 6);
    let cfg = DistributedConfig {
        fit: FitConfig {
            max_iter: 3,
            ..FitConfig::default()
        },
        seed: 21,
        ..DistributedConfig::default()
    };
    let a = fit_distributed(ds.clone(), 2, &cfg).unwrap();
    let b = fit_distributed(ds, 2, &cfg).unwrap();
    assert_eq!(a.federation.transcript().digest_hex(), b.federation.transcript().digest_hex());
    assert_eq!(a.fit.params.flatten(), b.fit.params.flatten());
}

#[test]
fn dropout_aborts_with_round() {
    let ds = data(3, 2, 20, 9);
    let init = GmmParams::initial(ds.layout(), &ds.capacities(), 2, 1).unwrap();
    let mut fed = Federation::new(ds, 1, TranscriptMode::Full);
    fed.install(&init);
    private_e_step(&mut fed, 0).unwrap();
    fed.network_mut().schedule_dropout(PartyId::farm(2), 3);
    let err = private_m_step(&mut fed, 0, &EmConfig::default()).unwrap_err();
    assert!(matches!(err, Error::PartyDropout { party: 2, .. }), "{err}");
}

#[test]
fn iteration_csv_reports_reporting_farm() {
    let ds = data(2, 2, 20, 10);
    let cfg = DistributedConfig {
        fit: FitConfig {
            max_iter: 2,
            ..FitConfig::default()
        },
        ..DistributedConfig::default()
    };
    let r = fit_distributed(ds, 2, &cfg).unwrap();
    let line = r.summaries[0].csv_line(2);
    let fields: Vec<&str> = line.split(',').collect();
    assert_eq!(fields.len(), 4);
    assert!(fields[3].parse::<u64>().unwrap() > 0);
}
