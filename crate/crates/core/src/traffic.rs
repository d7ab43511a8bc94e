//! Traffic of the private fit against a gather-everything baseline, in the
//! shape of a two-row upstream/downstream comparison table.

use std::fmt::Write as _;

use crate::error::Result;
use crate::gmm::GmmParams;
use crate::partition::FullDataset;
use crate::simnet::Network;
use crate::smc::{Payload, PartyId, PartyTraffic, Protocol, Tag, TrafficMeter, TranscriptMode};

/// Bytes per reported megabyte.
pub const MEGABYTE: f64 = 1e6;

/// Baseline where every farm uploads its whole slice to a central server
/// (party `M + 1`) and downloads the fitted parameters.
pub fn centralized_traffic(dataset: &FullDataset, params: &GmmParams) -> Result<TrafficMeter> {
    let farms = dataset.layout().num_farms();
    let mut net = Network::new(farms + 1, TranscriptMode::MeterOnly);
    let server = PartyId::from_index(farms);
    for slice in dataset.slices() {
        let farm = PartyId::farm(slice.farm());
        let tag = Tag::new(Protocol::Upload, 0, &[slice.farm()]);
        net.send(farm, server, tag, Payload::real(slice.values().as_slice().to_vec()))?;
        net.recv(server, farm, tag)?;
    }
    let theta = Payload::real(params.flatten());
    for m in 1..=farms {
        let tag = Tag::new(Protocol::Download, 0, &[m]);
        net.send(server, PartyId::farm(m), tag, theta.clone())?;
        net.recv(PartyId::farm(m), server, tag)?;
    }
    net.barrier()?;
    Ok(net.traffic().clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficReport {
    /// Farm whose traffic fills the table.
    pub farm: usize,
    pub centralized: TrafficMeter,
    pub proposed: TrafficMeter,
}

impl TrafficReport {
    pub fn new(farm: usize, centralized: TrafficMeter, proposed: TrafficMeter) -> Self {
        Self {
            farm,
            centralized,
            proposed,
        }
    }

    pub fn centralized_farm(&self) -> PartyTraffic {
        self.centralized.party(PartyId::farm(self.farm))
    }

    pub fn proposed_farm(&self) -> PartyTraffic {
        self.proposed.party(PartyId::farm(self.farm))
    }

    /// Proposed over centralized, both counted as up plus down at the
    /// reporting farm.
    pub fn ratio(&self) -> f64 {
        let c = self.centralized_farm();
        let p = self.proposed_farm();
        (p.up_bytes + p.down_bytes) as f64 / (c.up_bytes + c.down_bytes) as f64
    }

    fn rows(&self) -> [(&'static str, u64, u64); 2] {
        let (c, p) = (self.centralized_farm(), self.proposed_farm());
        [
            ("upstream", c.up_bytes, p.up_bytes),
            ("downstream", c.down_bytes, p.down_bytes),
        ]
    }

    /// `direction,centralized_bytes,proposed_bytes,centralized_mb,proposed_mb,ratio`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("direction,centralized_bytes,proposed_bytes,centralized_mb,proposed_mb,ratio\n");
        for (name, c, p) in self.rows() {
            let _ = writeln!(
                out,
                "{name},{c},{p},{:.6},{:.6},{:.3}",
                c as f64 / MEGABYTE,
                p as f64 / MEGABYTE,
                p as f64 / c as f64
            );
        }
        out
    }

    /// `method,party,up_bytes,down_bytes` for every party of both runs;
    /// within a method the two byte columns have equal sums.
    pub fn parties_csv(&self) -> String {
        let mut out = String::from("method,party,up_bytes,down_bytes\n");
        for (method, meter) in [("centralized", &self.centralized), ("proposed", &self.proposed)] {
            for (k, p) in meter.parties().iter().enumerate() {
                let _ = writeln!(out, "{method},{},{},{}", k + 1, p.up_bytes, p.down_bytes);
            }
        }
        out
    }

    /// Human-readable two-row table.
    pub fn render(&self) -> String {
        let mut out = format!(
            "traffic of farm {} (Mb = 10^6 bytes)\n{:<12}{:>18}{:>18}\n",
            self.farm, "", "centralized", "proposed"
        );
        for (name, c, p) in self.rows() {
            let _ = writeln!(
                out,
                "{:<12}{:>15.6} Mb{:>15.6} Mb",
                name,
                c as f64 / MEGABYTE,
                p as f64 / MEGABYTE
            );
        }
        let _ = writeln!(out, "proposed / centralized: {:.1}x", self.ratio());
        out
    }
}
