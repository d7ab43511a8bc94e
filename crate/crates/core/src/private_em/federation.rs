use crate::dims::Layout;
use crate::error::{Error, Result};
use crate::gmm::{GmmParams, Responsibilities};
use crate::partition::FullDataset;
use crate::simnet::{Network, PartyRuntime};
use crate::smc::mask::derive_seed;
use crate::smc::{Transcript, TranscriptMode};

use super::DEFAULT_CHUNK;

/// The farms of one session and the network between them.
///
/// The federation owns each farm's slice only through that farm's
/// [`PartyRuntime`]; protocol code reaches a farm's data through its runtime
/// and nothing else.
#[derive(Debug)]
pub struct Federation {
    layout: Layout,
    num_obs: usize,
    session_seed: u64,
    chunk: usize,
    sessions: usize,
    net: Network,
    parties: Vec<PartyRuntime>,
}

impl Federation {
    pub fn new(dataset: FullDataset, seed: u64, mode: TranscriptMode) -> Self {
        let layout = dataset.layout();
        let num_obs = dataset.num_obs();
        let parties: Vec<PartyRuntime> = dataset
            .into_slices()
            .into_iter()
            .map(|s| PartyRuntime::new(s, seed))
            .collect();
        Self {
            layout,
            num_obs,
            session_seed: derive_seed(seed, "session", &[]),
            chunk: DEFAULT_CHUNK,
            sessions: 0,
            net: Network::new(parties.len(), mode),
            parties,
        }
    }

    /// Observations per E-step round; only changes how messages are grouped
    /// into rounds.
    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn num_obs(&self) -> usize {
        self.num_obs
    }

    pub fn chunk(&self) -> usize {
        self.chunk
    }

    /// Public seed every farm agreed on for shared masks.
    pub(crate) fn session_seed(&self) -> u64 {
        self.session_seed
    }

    /// Fresh identifier for a secure-sum session.
    pub(crate) fn next_session(&mut self) -> usize {
        self.sessions += 1;
        self.sessions
    }

    pub fn parties(&self) -> &[PartyRuntime] {
        &self.parties
    }

    /// Farm `m`, 1-based.
    pub fn party(&self, farm: usize) -> &PartyRuntime {
        &self.parties[farm - 1]
    }

    pub fn party_mut(&mut self, farm: usize) -> &mut PartyRuntime {
        &mut self.parties[farm - 1]
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn transcript(&self) -> &Transcript {
        self.net.transcript()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Network, &mut [PartyRuntime]) {
        (&mut self.net, &mut self.parties)
    }

    /// Hands the same public parameters to every farm.
    pub fn install(&mut self, params: &GmmParams) {
        for p in &mut self.parties {
            p.shared.params = Some(params.clone());
        }
    }

    /// Parameters every farm holds; an error if any two farms disagree in
    /// any bit.
    pub fn shared_params(&self) -> Result<&GmmParams> {
        self.check_consensus()?;
        self.parties[0]
            .shared
            .params
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("no parameters installed".into()))
    }

    pub(crate) fn shared_responsibilities(&self) -> Result<&Responsibilities> {
        self.check_consensus()?;
        self.parties[0]
            .shared
            .responsibilities
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("no E-step has run".into()))
    }

    pub fn check_consensus(&self) -> Result<()> {
        let reference: Vec<u64> = bits(&self.parties[0]);
        for p in &self.parties[1..] {
            if bits(p) != reference {
                return Err(Error::ProtocolDesync {
                    tag: format!("farm {} disagrees with farm 1 on shared state", p.farm()),
                });
            }
        }
        Ok(())
    }
}

fn bits(p: &PartyRuntime) -> Vec<u64> {
    let s = &p.shared;
    let mut out: Vec<u64> = Vec::new();
    if let Some(params) = &s.params {
        out.extend(params.flatten().iter().map(|v| v.to_bits()));
    }
    if let Some(q) = &s.responsibilities {
        out.extend(q.matrix().iter().map(|v| v.to_bits()));
    }
    out.extend(s.row_log_density.iter().map(|v| v.to_bits()));
    out.extend(s.log_likelihood.map(f64::to_bits));
    out
}
