//! Benchmark networks compiled into the library.

use crate::error::Result;
use crate::network::{parse_network, parse_trips, DemandTable, Network};

pub const BRAESS_NET: &str = include_str!("../../../data/braess.net");
pub const BRAESS_TRIPS: &str = include_str!("../../../data/braess.trips");
pub const OW_NET: &str = include_str!("../../../data/ow.net");
pub const OW_TRIPS: &str = include_str!("../../../data/ow.trips");

fn load(net: &str, trips: &str) -> Result<(Network, DemandTable)> {
    let net = parse_network(net)?;
    let demand = parse_trips(trips, &net)?;
    Ok((net, demand))
}

/// Six travelers from A to B over the five-link Braess diamond.
pub fn braess() -> Result<(Network, DemandTable)> {
    load(BRAESS_NET, BRAESS_TRIPS)
}

/// The 13-node, 48-link OW network with 1700 travelers.
pub fn ow() -> Result<(Network, DemandTable)> {
    load(OW_NET, OW_TRIPS)
}

/// Looks up a bundled benchmark by name (`braess` or `ow`).
pub fn bundled(name: &str) -> Option<Result<(Network, DemandTable)>> {
    match name {
        "braess" => Some(braess()),
        "ow" => Some(ow()),
        _ => None,
    }
}
