//! Versioned binary policy snapshots.
//!
//! Layout (little-endian): magic `SQCK`, `u32` format version, `u64` header
//! length, UTF-8 JSON header, `u64` parameter count `n`, then `n` online and
//! `n` target parameters as `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dqn::{AgentState, Architecture, DqnAgent, QNetwork};
use crate::env::{EpisodeSpec, MarginalEval};
use crate::error::{Error, Result};
use crate::network::{DemandTable, Network};
use crate::paths::Route;
use crate::trainer::{AssignmentDistribution, Baselines, TrainMode, TrainerConfig};

pub const MAGIC: &[u8; 4] = b"SQCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub mode: TrainMode,
    pub config: TrainerConfig,
    pub architecture: Architecture,
    /// Route node names per OD, in slot order.
    pub route_sets: Vec<Vec<Vec<String>>>,
    /// `(origin, destination, demand)` per OD.
    pub demand: Vec<(String, String, f64)>,
    pub num_links: usize,
    pub k_max: usize,
    pub marginal_eval: MarginalEval,
    pub time_scale: f64,
    pub distribution: AssignmentDistribution,
    pub agent: AgentState,
    pub baselines: Option<Baselines>,
    /// Greedy TSTT at the evaluation arrival order when the snapshot was taken.
    pub greedy_tstt: f64,
}

impl CheckpointHeader {
    pub fn new(
        spec: &EpisodeSpec,
        mode: TrainMode,
        config: &TrainerConfig,
        agent: &DqnAgent,
        m: &AssignmentDistribution,
        baselines: Option<Baselines>,
        greedy_tstt: f64,
    ) -> Self {
        let net = spec.net();
        CheckpointHeader {
            mode,
            config: config.clone(),
            architecture: agent.online().architecture().clone(),
            route_sets: spec
                .route_sets()
                .iter()
                .map(|set| {
                    set.iter()
                        .map(|r| {
                            r.nodes(net)
                                .into_iter()
                                .map(|n| net.node_name(n).to_string())
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            demand: spec
                .demand()
                .entries()
                .iter()
                .map(|e| {
                    (
                        net.node_name(e.origin).to_string(),
                        net.node_name(e.destination).to_string(),
                        e.demand,
                    )
                })
                .collect(),
            num_links: net.num_links(),
            k_max: spec.k_max(),
            marginal_eval: spec.marginal_eval(),
            time_scale: spec.time_scale(),
            distribution: m.clone(),
            agent: agent.state(),
            baselines,
            greedy_tstt,
        }
    }

    /// Rebuilds the trained episode template on `net`/`demand`.
    pub fn episode_spec(&self, net: &Network, demand: &DemandTable) -> Result<EpisodeSpec> {
        if net.num_links() != self.num_links {
            return Err(Error::Structural(format!(
                "checkpoint was trained on {} links, network has {}",
                self.num_links,
                net.num_links()
            )));
        }
        let entries = demand.entries();
        if entries.len() != self.demand.len() {
            return Err(Error::Structural(format!(
                "checkpoint has {} OD pairs, demand table has {}",
                self.demand.len(),
                entries.len()
            )));
        }
        for (e, (o, d, q)) in entries.iter().zip(&self.demand) {
            if net.node_name(e.origin) != o || net.node_name(e.destination) != d || e.demand != *q {
                return Err(Error::Structural(format!(
                    "demand entry {o}->{d} ({q}) does not match the checkpoint"
                )));
            }
        }
        let mut sets = Vec::with_capacity(self.route_sets.len());
        for (set, e) in self.route_sets.iter().zip(entries) {
            let mut routes = Vec::with_capacity(set.len());
            for names in set {
                routes.push(route_from_names(net, names, e.origin, e.destination)?);
            }
            sets.push(routes);
        }
        let mut spec = EpisodeSpec::new(
            net.clone(),
            demand.clone(),
            sets,
            self.k_max,
            self.marginal_eval,
        )?;
        spec.set_time_scale(self.time_scale)?;
        Ok(spec)
    }
}

fn route_from_names(
    net: &Network,
    names: &[String],
    origin: usize,
    destination: usize,
) -> Result<Route> {
    let ids = names
        .iter()
        .map(|n| {
            net.node_id(n).ok_or_else(|| {
                Error::Structural(format!("checkpoint route uses unknown node {n:?}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let links = ids
        .windows(2)
        .map(|w| {
            net.find_link(w[0], w[1]).ok_or_else(|| {
                Error::Structural(format!(
                    "checkpoint route uses missing link {}->{}",
                    net.node_name(w[0]),
                    net.node_name(w[1])
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if ids.first() != Some(&origin) {
        return Err(Error::Structural(
            "checkpoint route starts at the wrong origin".into(),
        ));
    }
    Route::new(net, origin, destination, links)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub online: Vec<f64>,
    pub target: Vec<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n = self.online.len();
        if self.target.len() != n {
            return Err(Error::Checkpoint(
                "online and target parameter counts differ".into(),
            ));
        }
        let mut out = Vec::with_capacity(4 + 4 + 8 + header.len() + 8 + 16 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for p in self.online.iter().chain(&self.target) {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = usize::try_from(r.u64("header length")?)
            .map_err(|_| Error::Checkpoint("header length overflows".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let n = usize::try_from(r.u64("parameter count")?)
            .map_err(|_| Error::Checkpoint("parameter count overflows".into()))?;
        let expected = header
            .architecture
            .param_count()
            .ok_or_else(|| Error::Checkpoint("architecture size overflows".into()))?;
        if n != expected {
            return Err(Error::Checkpoint(format!(
                "header describes {expected} parameters, file stores {n}"
            )));
        }
        let body = n
            .checked_mul(16)
            .ok_or_else(|| Error::Checkpoint("parameter block overflows".into()))?;
        if r.bytes.len() != body {
            return Err(Error::Checkpoint(format!(
                "parameter block is {} bytes, expected {body}",
                r.bytes.len()
            )));
        }
        let mut params = r
            .bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let online: Vec<f64> = params.by_ref().take(n).collect();
        let target: Vec<f64> = params.collect();
        let ck = Checkpoint {
            header,
            online,
            target,
        };
        ck.header
            .architecture
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(ck)
    }

    pub fn online_network(&self) -> Result<QNetwork> {
        QNetwork::from_params(self.header.architecture.clone(), self.online.clone())
    }

    pub fn target_network(&self) -> Result<QNetwork> {
        QNetwork::from_params(self.header.architecture.clone(), self.target.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use crate::dqn::DqnConfig;
    use crate::trainer::{build_spec, train};

    fn tiny() -> Checkpoint {
        let (net, demand) = data::braess().unwrap();
        let config = TrainerConfig {
            episodes: 3,
            dqn: DqnConfig {
                hidden: vec![4, 3],
                ..DqnConfig::default()
            },
            ..TrainerConfig::default()
        };
        let spec = build_spec(&net, &demand, TrainMode::Ksp(3), &config).unwrap();
        train(spec, TrainMode::Ksp(3), &config, None)
            .unwrap()
            .checkpoint
    }

    #[test]
    fn round_trip() {
        let ck = tiny();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), ck);
    }

    #[test]
    fn save_and_load() {
        let ck = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(
            Checkpoint::load(dir.path().join("missing.bin")),
            Err(Error::FileNotFound(_))
        ));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = tiny().encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(
            matches!(Checkpoint::decode(&bad), Err(Error::Checkpoint(m)) if m.contains("version"))
        );
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::decode(&long).is_err());
        assert!(Checkpoint::decode(&[]).is_err());
    }

    #[test]
    fn spec_rebuild_checks_dimensions() {
        let ck = tiny();
        let (net, demand) = data::braess().unwrap();
        let spec = ck.header.episode_spec(&net, &demand).unwrap();
        assert_eq!(spec.route_sets()[0].len(), 3);
        let (ow, ow_demand) = data::ow().unwrap();
        assert!(matches!(
            ck.header.episode_spec(&ow, &ow_demand),
            Err(Error::Structural(_))
        ));
    }
}
