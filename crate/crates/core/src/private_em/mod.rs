//! Privacy-preserving distributed EM over vertically partitioned data.
//!
//! Every farm is a [`PartyRuntime`] on a simulated [`Network`]. Farms only
//! ever send aggregates of their columns:
//!
//! * **E-step.** For observation `i` and component `j`, farm `m` broadcasts
//!   the linear term `C_m(n,v) = sum_t (y_{m,t} - mu_{m,t}) phi_{(m,t),(n,v)}`
//!   for every coordinate `(n,v)`. Everyone forms `D = sum_m C_m`, which
//!   makes `S_n = sum_v (y_{n,v} - mu_{n,v}) D(n,v)` computable by farm `n`
//!   alone. After the `S_n` are broadcast, every farm assembles the
//!   quadratic form `g = sum_n S_n` and from it the responsibilities.
//!
//!   Each farm subtracts the public mean from its own coordinates before
//!   aggregating. The uncentered terms `sum_t y_{m,t} phi` and
//!   `sum_v y_{n,v} D(n,v)` carry the same information, since the
//!   difference is a function of public parameters, but differencing them
//!   afterwards cancels badly for tight components.
//! * **M-step.** Weights follow from the shared responsibilities. Farm `m`
//!   computes the mean and covariance entries of its own columns and
//!   broadcasts them. A covariance entry between two farms needs
//!   `sum_i Q_j^i y_{m,t}^i y_{n,v}^i`, which the pair obtains through one
//!   secure scalar product. The lower-numbered farm of the pair initiates and
//!   then shares the finished entry with everyone else.
//!
//! Every party runs the same arithmetic on the same broadcast values in the
//! same order, so all parties end each iteration with bit-identical
//! parameters.

mod federation;

pub use federation::Federation;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::em::{
    empty_components, finish_m_step, has_converged, normalize_log_densities, reseed_rows,
    EmptyComponentPolicy, Moments,
};
use crate::gmm::{EmConfig, FitConfig, FitReport, GmmParams, Responsibilities};
use crate::partition::FullDataset;
use crate::simnet::{run_round, Party, PartyRuntime};
use crate::smc::mask::derive_seed;
use crate::smc::ssp::{real, SspSession};
use crate::smc::{Payload, PartyId, Protocol, Tag, TrafficMeter, TranscriptMode};

/// Observations per broadcast round of the E-step.
pub const DEFAULT_CHUNK: usize = 64;

fn params_of(p: &PartyRuntime) -> Result<&GmmParams> {
    p.shared
        .params
        .as_ref()
        .ok_or_else(|| Error::InvalidParams(format!("farm {} holds no parameters", p.farm())))
}

struct EStepWork<'a> {
    rt: &'a mut PartyRuntime,
    /// Own linear terms of the current chunk, `[i][j]`.
    own_c: Vec<Vec<Payload>>,
    own_s: Vec<Vec<f64>>,
    log_gauss: DMatrix<f64>,
}

impl Party for EStepWork<'_> {
    fn id(&self) -> PartyId {
        self.rt.id()
    }
}

fn c_tag(iter: usize, j: usize, i: usize, m: usize) -> Tag {
    Tag::new(Protocol::EStepLinear, 0, &[iter, j, i, m])
}

fn s_tag(iter: usize, j: usize, i: usize, m: usize) -> Tag {
    Tag::new(Protocol::EStepPartial, 0, &[iter, j, i, m])
}

/// Private E-step: afterwards every party holds the responsibilities, the
/// per-observation log-densities and the log-likelihood of its current
/// parameters. Returns the responsibilities as held by farm 1.
pub fn private_e_step(fed: &mut Federation, iteration: usize) -> Result<Responsibilities> {
    let layout = fed.layout();
    let (rows, periods, num_farms) = (fed.num_obs(), layout.num_periods(), layout.num_farms());
    let chunk = fed.chunk();
    let (net, parties) = fed.parts_mut();

    let mut work = parties
        .iter_mut()
        .map(|rt| {
            let params = params_of(rt)?;
            let k = params.num_components();
            Ok(EStepWork {
                own_c: Vec::new(),
                own_s: Vec::new(),
                log_gauss: DMatrix::zeros(rows, k),
                rt,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for start in (0..rows).step_by(chunk) {
        let obs = start..(start + chunk).min(rows);

        run_round(
            net,
            &mut work,
            |w, out| {
                let m = w.rt.farm();
                let params = params_of(w.rt)?;
                let cols = layout.farm_range(m);
                let slice = w.rt.slice();
                w.own_c.clear();
                for i in obs.clone() {
                    let mut per_j = Vec::with_capacity(params.num_components());
                    for (j, comp) in params.components().iter().enumerate() {
                        let mut c = vec![0.0; layout.dim()];
                        for (t, flat) in cols.clone().enumerate() {
                            let y = slice.get(i, t) - comp.mean[flat];
                            // Phi is symmetric: row (m,t) is column (m,t).
                            let phi = comp.precision.column(flat);
                            for (acc, p) in c.iter_mut().zip(phi.iter()) {
                                *acc += y * p;
                            }
                        }
                        let payload = Payload::real(c);
                        out.broadcast(c_tag(iteration, j, i, m), payload.clone())?;
                        per_j.push(payload);
                    }
                    w.own_c.push(per_j);
                }
                Ok(())
            },
            |w, inbox| {
                let n = w.rt.farm();
                let params = params_of(w.rt)?;
                let own = layout.farm_range(n);
                let slice = w.rt.slice();
                w.own_s.clear();
                for (k, i) in obs.clone().enumerate() {
                    let mut s_i = Vec::with_capacity(params.num_components());
                    for (j, comp) in params.components().iter().enumerate() {
                        // Only this farm's block of D enters S_n.
                        let mut d = vec![0.0; periods];
                        for m in 1..=num_farms {
                            let c = if m == n {
                                w.own_c[k][j].clone()
                            } else {
                                inbox.take(PartyId::farm(m), c_tag(iteration, j, i, m))?
                            };
                            for (acc, v) in d.iter_mut().zip(&real(&c)?[own.clone()]) {
                                *acc += v;
                            }
                        }
                        let s: f64 = own
                            .clone()
                            .enumerate()
                            .map(|(t, flat)| (slice.get(i, t) - comp.mean[flat]) * d[t])
                            .sum();
                        s_i.push(s);
                    }
                    w.own_s.push(s_i);
                }
                Ok(())
            },
        )?;

        run_round(
            net,
            &mut work,
            |w, out| {
                let m = w.rt.farm();
                for (k, i) in obs.clone().enumerate() {
                    for (j, s) in w.own_s[k].iter().enumerate() {
                        out.broadcast(s_tag(iteration, j, i, m), Payload::scalar(*s))?;
                    }
                }
                Ok(())
            },
            |w, inbox| {
                let n = w.rt.farm();
                let params = params_of(w.rt)?;
                for (k, i) in obs.clone().enumerate() {
                    for (j, comp) in params.components().iter().enumerate() {
                        let mut g = 0.0;
                        for m in 1..=num_farms {
                            g += if m == n {
                                w.own_s[k][j]
                            } else {
                                real(&inbox.take(PartyId::farm(m), s_tag(iteration, j, i, m))?)?[0]
                            };
                        }
                        w.log_gauss[(i, j)] = -0.5 * g + comp.log_normalizer();
                    }
                }
                Ok(())
            },
        )?;
    }

    for w in work {
        let outcome = normalize_log_densities(&w.log_gauss, params_of(w.rt)?)?;
        let shared = &mut w.rt.shared;
        shared.log_likelihood = Some(outcome.log_likelihood);
        shared.row_log_density = outcome.row_log_density;
        shared.responsibilities = Some(outcome.responsibilities);
    }
    fed.shared_responsibilities().cloned()
}

/// Moments one party has assembled so far.
struct MStepWork<'a> {
    rt: &'a mut PartyRuntime,
    totals: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    /// Covariance centers: previous or updated means.
    centers: Vec<DVector<f64>>,
    reseeds: Vec<(usize, DVector<f64>)>,
}

impl Party for MStepWork<'_> {
    fn id(&self) -> PartyId {
        self.rt.id()
    }
}

fn upper_len(t: usize) -> usize {
    t * (t + 1) / 2
}

/// Private M-step: afterwards every party holds `theta^{k+1}`.
pub fn private_m_step(fed: &mut Federation, iteration: usize, cfg: &EmConfig) -> Result<GmmParams> {
    let layout = fed.layout();
    let (rows, periods, num_farms) = (fed.num_obs(), layout.num_periods(), layout.num_farms());
    let session_seed = fed.session_seed();
    let (net, parties) = fed.parts_mut();

    let mut work = parties
        .iter_mut()
        .map(|rt| {
            let q = rt
                .shared
                .responsibilities
                .as_ref()
                .ok_or_else(|| Error::InvalidParams(format!("farm {} holds no responsibilities", rt.farm())))?;
            let prev = params_of(rt)?;
            Ok(MStepWork {
                totals: q.totals(),
                means: prev.components().iter().map(|c| c.mean.clone()).collect(),
                covs: prev.components().iter().map(|c| c.covariance.clone()).collect(),
                centers: prev.components().iter().map(|c| c.mean.clone()).collect(),
                reseeds: Vec::new(),
                rt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let totals = work[0].totals.clone();
    let active: Vec<usize> = (0..totals.len())
        .filter(|j| !empty_components(&totals).contains(j))
        .collect();
    let local_tag = |j: usize, m: usize| Tag::new(Protocol::MStepLocal, 0, &[iteration, j, m]);

    // Own means and within-farm covariance blocks.
    run_round(
        net,
        &mut work,
        |w, out| {
            let m = w.rt.farm();
            let cols = layout.farm_range(m);
            let q = w.rt.shared.responsibilities.as_ref().expect("checked above");
            let slice = w.rt.slice();
            for &j in &active {
                let weights = q.column(j);
                let total = w.totals[j];
                let mean: Vec<f64> = (0..periods)
                    .map(|t| dot_weighted(weights, slice.column(t)) / total)
                    .collect();
                for (t, v) in mean.iter().enumerate() {
                    w.means[j][cols.start + t] = *v;
                }
                let center: Vec<f64> = if cfg.use_updated_mean {
                    mean.clone()
                } else {
                    (0..periods).map(|t| w.centers[j][cols.start + t]).collect()
                };
                let mut payload = mean;
                payload.reserve(upper_len(periods));
                for t in 0..periods {
                    for v in t..periods {
                        let (a, b) = (slice.column(t), slice.column(v));
                        let s: f64 = (0..rows)
                            .map(|i| weights[i] * (a[i] - center[t]) * (b[i] - center[v]))
                            .sum();
                        payload.push(s / total);
                    }
                }
                out.broadcast(local_tag(j, m), Payload::real(payload.clone()))?;
                fill_local(&mut w.means[j], &mut w.covs[j], layout.farm_range(m), &payload, periods);
            }
            Ok(())
        },
        |w, inbox| {
            let n = w.rt.farm();
            for &j in &active {
                for m in (1..=num_farms).filter(|m| *m != n) {
                    let p = inbox.take(PartyId::farm(m), local_tag(j, m))?;
                    fill_local(&mut w.means[j], &mut w.covs[j], layout.farm_range(m), real(&p)?, periods);
                }
                if cfg.use_updated_mean {
                    w.centers[j] = w.means[j].clone();
                }
            }
            Ok(())
        },
    )?;

    // Empty components restart from the least likely observations; each
    // farm contributes its block of those rows.
    let empty = empty_components(&totals);
    if !empty.is_empty() && cfg.empty_component == EmptyComponentPolicy::Reseed {
        let chosen = reseed_rows(&work[0].rt.shared.row_log_density, empty.len());
        let reseed_tag = |j: usize, m: usize| Tag::new(Protocol::Reseed, 0, &[iteration, j, m]);
        run_round(
            net,
            &mut work,
            |w, out| {
                let m = w.rt.farm();
                for (&j, &i) in empty.iter().zip(&chosen) {
                    let block: Vec<f64> = (0..periods).map(|t| w.rt.slice().get(i, t)).collect();
                    out.broadcast(reseed_tag(j, m), Payload::real(block))?;
                }
                Ok(())
            },
            |w, inbox| {
                let n = w.rt.farm();
                for (&j, &i) in empty.iter().zip(&chosen) {
                    let mut row = DVector::zeros(layout.dim());
                    for m in 1..=num_farms {
                        let cols = layout.farm_range(m);
                        if m == n {
                            for t in 0..periods {
                                row[cols.start + t] = w.rt.slice().get(i, t);
                            }
                        } else {
                            let p = inbox.take(PartyId::farm(m), reseed_tag(j, m))?;
                            for (t, v) in real(&p)?.iter().enumerate() {
                                row[cols.start + t] = *v;
                            }
                        }
                    }
                    w.reseeds.push((j, row));
                }
                Ok(())
            },
        )?;
    }

    // Cross-farm covariance entries through secure scalar products.
    for &j in &active {
        for m in 1..num_farms {
            for n in (m + 1)..=num_farms {
                cross_block(net, &mut work, iteration, session_seed, j, m, n, layout, rows)?;
            }
        }
    }
    net.barrier()?;

    let mut out = Vec::with_capacity(work.len());
    for w in work {
        let prev = params_of(w.rt)?;
        let moments = Moments {
            totals: w.totals,
            means: w.means,
            covariances: w.covs,
        };
        let next = finish_m_step(rows, moments, prev, cfg, &w.reseeds)?;
        w.rt.shared.params = Some(next.clone());
        out.push(next);
    }
    fed.check_consensus()?;
    Ok(out.swap_remove(0))
}

fn dot_weighted(w: &[f64], y: &[f64]) -> f64 {
    w.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Writes a farm's `[means; upper triangle]` payload into the assembled
/// moments.
fn fill_local(
    mean: &mut DVector<f64>,
    cov: &mut DMatrix<f64>,
    cols: std::ops::Range<usize>,
    payload: &[f64],
    periods: usize,
) {
    let base = cols.start;
    for t in 0..periods {
        mean[base + t] = payload[t];
    }
    let mut k = periods;
    for t in 0..periods {
        for v in t..periods {
            cov[(base + t, base + v)] = payload[k];
            cov[(base + v, base + t)] = payload[k];
            k += 1;
        }
    }
}

fn ssp_tag(round: u32, iteration: usize, j: usize, m: usize, t: usize, n: usize, v: usize) -> Tag {
    Tag::new(Protocol::Ssp, round, &[iteration, j, m, t + 1, n, v + 1])
}

/// All `T x T` scalar products between farms `m < n` for component `j`,
/// then the resulting covariance entries: both farms derive them, and `m`
/// shares them with every other farm.
#[allow(clippy::too_many_arguments)]
fn cross_block(
    net: &mut crate::simnet::Network,
    work: &mut [MStepWork<'_>],
    iteration: usize,
    session_seed: u64,
    j: usize,
    m: usize,
    n: usize,
    layout: crate::dims::Layout,
    rows: usize,
) -> Result<()> {
    let periods = layout.num_periods();
    let (pm, pn) = (PartyId::farm(m), PartyId::farm(n));
    let jobs: Vec<(usize, usize)> = (0..periods).flat_map(|t| (0..periods).map(move |v| (t, v))).collect();
    let mask_seed = |t: usize, v: usize| {
        derive_seed(
            session_seed,
            "ssp-mask",
            &[iteration as u64, j as u64, m as u64, t as u64, n as u64, v as u64],
        )
    };

    // Initiator: s_m = U R + X for every job.
    let initiated = {
        let wm = &work[m - 1];
        let q = wm.rt.shared.responsibilities.as_ref().expect("checked by caller");
        let weights = q.column(j);
        let xs: Vec<Vec<f64>> = (0..periods)
            .map(|t| {
                let y = wm.rt.slice().column(t);
                weights.iter().zip(y).map(|(a, b)| a * b).collect()
            })
            .collect();
        let secret = wm.rt.secret_seed();
        let initiated = jobs
            .par_iter()
            .map(|&(t, v)| {
                let session = SspSession::new(rows, mask_seed(t, v))?;
                let r_seed = derive_seed(secret, "ssp-r", &[iteration as u64, j as u64, t as u64, n as u64, v as u64]);
                session.initiate(&xs[t], r_seed).map(|(s, sec)| (session, s, sec))
            })
            .collect::<Result<Vec<_>>>()?;
        initiated
    };
    let mut secrets = Vec::with_capacity(jobs.len());
    for (&(t, v), (session, s_m, secret)) in jobs.iter().zip(initiated) {
        net.send(pm, pn, ssp_tag(1, iteration, j, m, t, n, v), Payload::real(s_m))?;
        secrets.push((session, secret));
    }

    // Responder: (s_{n,1}, s_{n,2}).
    let received = jobs
        .iter()
        .map(|&(t, v)| net.recv(pn, pm, ssp_tag(1, iteration, j, m, t, n, v)))
        .collect::<Result<Vec<_>>>()?;
    let replies = {
        let wn = &work[n - 1];
        jobs.par_iter()
            .zip(received.par_iter())
            .zip(secrets.par_iter())
            .map(|((&(_, v), s_m), (session, _))| {
                let (s1, s2) = session.respond(real(s_m)?, wn.rt.slice().column(v))?;
                let mut reply = Vec::with_capacity(1 + s2.len());
                reply.push(s1);
                reply.extend(s2);
                Ok(reply)
            })
            .collect::<Result<Vec<_>>>()?
    };
    for (&(t, v), reply) in jobs.iter().zip(replies) {
        net.send(pn, pm, ssp_tag(2, iteration, j, m, t, n, v), Payload::real(reply))?;
    }

    // Initiator finishes and returns the product.
    let mut products = Vec::with_capacity(jobs.len());
    for (&(t, v), (session, secret)) in jobs.iter().zip(&secrets) {
        let reply = net.recv(pm, pn, ssp_tag(2, iteration, j, m, t, n, v))?;
        let reply = real(&reply)?;
        let s = session.finish(secret, reply[0], &reply[1..])?;
        net.send(pm, pn, ssp_tag(3, iteration, j, m, t, n, v), Payload::scalar(s))?;
        products.push(s);
    }
    let at_responder = jobs
        .iter()
        .map(|&(t, v)| Ok(real(&net.recv(pn, pm, ssp_tag(3, iteration, j, m, t, n, v))?)?[0]))
        .collect::<Result<Vec<f64>>>()?;

    let (bm, bn) = (layout.farm_range(m).start, layout.farm_range(n).start);
    let entries_for = |w: &MStepWork<'_>, s: &[f64]| -> Vec<f64> {
        let total = w.totals[j];
        let (mu, c) = (&w.means[j], &w.centers[j]);
        jobs.iter()
            .zip(s)
            .map(|(&(t, v), s)| {
                let (a, b) = (bm + t, bn + v);
                s / total - mu[a] * c[b] - c[a] * mu[b] + c[a] * c[b]
            })
            .collect()
    };
    let place = |w: &mut MStepWork<'_>, entries: &[f64]| {
        for (&(t, v), e) in jobs.iter().zip(entries) {
            let (a, b) = (bm + t, bn + v);
            w.covs[j][(a, b)] = *e;
            w.covs[j][(b, a)] = *e;
        }
    };

    let entries = entries_for(&work[m - 1], &products);
    place(&mut work[m - 1], &entries);
    let at_n = entries_for(&work[n - 1], &at_responder);
    place(&mut work[n - 1], &at_n);

    let others: Vec<PartyId> = (1..=layout.num_farms())
        .filter(|k| *k != m && *k != n)
        .map(PartyId::farm)
        .collect();
    let share_tag = Tag::new(Protocol::MStepCross, 0, &[iteration, j, m, n]);
    net.multicast(pm, &others, share_tag, Payload::real(entries))?;
    for p in others {
        let got = net.recv(p, pm, share_tag)?;
        place(&mut work[p.index()], real(&got)?);
    }
    Ok(())
}

/// Settings of a distributed fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistributedConfig {
    pub fit: FitConfig,
    /// Shared seed: initialization, SSP masks and the parties' own
    /// randomness all derive from it.
    pub seed: u64,
    pub transcript: TranscriptMode,
    /// Observations per E-step broadcast round.
    pub chunk_obs: usize,
}

impl Default for DistributedConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            seed: 0,
            transcript: TranscriptMode::Full,
            chunk_obs: DEFAULT_CHUNK,
        }
    }
}

/// Log-likelihood of `theta^iter` and the traffic spent evaluating it and,
/// unless it was the final check, re-estimating from it.
#[derive(Clone, Debug)]
pub struct IterationSummary {
    pub iter: usize,
    pub loglik: f64,
    pub traffic: TrafficMeter,
}

impl IterationSummary {
    /// `iter,loglik,up_bytes,down_bytes` for one farm.
    pub fn csv_line(&self, farm: usize) -> String {
        let p = self.traffic.party(PartyId::farm(farm));
        format!("{},{:.17e},{},{}", self.iter, self.loglik, p.up_bytes, p.down_bytes)
    }
}

pub struct DistributedReport {
    pub fit: FitReport,
    pub summaries: Vec<IterationSummary>,
    /// The federation after the fit: party states and transcript.
    pub federation: Federation,
}

/// Fits from the shared-seed initialization.
pub fn fit_distributed(
    dataset: FullDataset,
    num_components: usize,
    cfg: &DistributedConfig,
) -> Result<DistributedReport> {
    let init = GmmParams::initial(dataset.layout(), &dataset.capacities(), num_components, cfg.seed)?;
    fit_distributed_from(dataset, init, cfg)
}

/// Fits from a given public initialization, mirroring the centralized loop
/// step for step.
pub fn fit_distributed_from(
    dataset: FullDataset,
    init: GmmParams,
    cfg: &DistributedConfig,
) -> Result<DistributedReport> {
    if init.dim() != dataset.layout().dim() {
        return Err(Error::DimensionMismatch {
            context: "initial parameter dimension",
            expected: dataset.layout().dim(),
            found: init.dim(),
        });
    }
    let mut fed = Federation::new(dataset, cfg.seed, cfg.transcript).with_chunk(cfg.chunk_obs);
    fed.install(&init);
    let mut history = Vec::new();
    if cfg.fit.record_history {
        history.push(init.clone());
    }
    let mut trace = Vec::new();
    let mut summaries = Vec::new();
    let mut iterations = 0;
    let mut converged = f64::INFINITY <= cfg.fit.tol;
    while !converged && iterations < cfg.fit.max_iter {
        let before = fed.network().traffic().clone();
        private_e_step(&mut fed, iterations).map_err(|e| e.at_iteration(iterations))?;
        let ll = fed.party(1).shared.log_likelihood.expect("set by the E-step");
        let done = trace.last().is_some_and(|&prev| has_converged(prev, ll, cfg.fit.tol));
        trace.push(ll);
        if !done {
            let next = private_m_step(&mut fed, iterations, &cfg.fit.em)
                .map_err(|e| e.at_iteration(iterations))?;
            if cfg.fit.record_history {
                history.push(next);
            }
        }
        summaries.push(IterationSummary {
            iter: iterations,
            loglik: ll,
            traffic: fed.network().traffic().since(&before),
        });
        if done {
            converged = true;
            break;
        }
        iterations += 1;
    }
    let params = fed.shared_params()?.clone();
    Ok(DistributedReport {
        fit: FitReport {
            params,
            iterations,
            loglik_trace: trace,
            converged,
            history,
        },
        summaries,
        federation: fed,
    })
}

#[cfg(test)]
mod tests;
