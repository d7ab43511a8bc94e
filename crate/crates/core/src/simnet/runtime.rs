use crate::gmm::{ConditionalGmm, GmmParams, Responsibilities};
use crate::partition::VerticalSlice;
use crate::smc::mask::derive_seed;
use crate::smc::wire::PartyId;

use super::Party;

/// Values a party has learned from the protocols, as opposed to its own
/// private slice.
#[derive(Clone, Debug, Default)]
pub struct SharedState {
    pub params: Option<GmmParams>,
    pub responsibilities: Option<Responsibilities>,
    /// `ln f(y^i; theta)` for the last E-step.
    pub row_log_density: Vec<f64>,
    pub log_likelihood: Option<f64>,
    /// Conditional weights of the last forecast session, shared by everyone.
    pub forecast_weights: Option<Vec<f64>>,
    /// Intermediate aggregates of the last forecast session
    /// (`C^c`, then `S^c`, per component).
    pub forecast_scratch: Vec<f64>,
    /// Predictive mixtures delivered to this party; only ever its own farm.
    pub forecasts: Vec<ConditionalGmm>,
}

/// One simulated wind farm: its private data, its private randomness and
/// everything it has been told.
#[derive(Clone, Debug)]
pub struct PartyRuntime {
    id: PartyId,
    slice: VerticalSlice,
    secret_seed: u64,
    pub shared: SharedState,
}

impl PartyRuntime {
    /// `master_seed` stands in for each farm's own entropy source; the
    /// per-party seed is never sent anywhere.
    pub fn new(slice: VerticalSlice, master_seed: u64) -> Self {
        let id = PartyId::farm(slice.farm());
        Self {
            id,
            secret_seed: derive_seed(master_seed, "party-secret", &[id.0 as u64]),
            slice,
            shared: SharedState::default(),
        }
    }

    pub fn farm(&self) -> usize {
        self.id.0 as usize
    }

    pub fn slice(&self) -> &VerticalSlice {
        &self.slice
    }

    pub(crate) fn secret_seed(&self) -> u64 {
        self.secret_seed
    }

    /// Every number in the shared state, for inspection in tests.
    pub fn shared_values(&self) -> Vec<f64> {
        let s = &self.shared;
        let mut out = Vec::new();
        if let Some(p) = &s.params {
            out.extend(p.flatten());
        }
        if let Some(q) = &s.responsibilities {
            out.extend(q.matrix().iter().copied());
        }
        out.extend(&s.row_log_density);
        out.extend(s.log_likelihood);
        if let Some(w) = &s.forecast_weights {
            out.extend(w);
        }
        out.extend(&s.forecast_scratch);
        for f in &s.forecasts {
            out.extend(&f.weights);
            out.extend(&f.means);
            out.extend(&f.variances);
        }
        out
    }
}

impl Party for PartyRuntime {
    fn id(&self) -> PartyId {
        self.id
    }
}
