//! TNTP-style link and trips files.
//!
//! Link records: `tail head capacity free_flow_time [alpha [beta]] ;` for BPR
//! links or `tail head affine a b ;` for affine links. Trips: `Origin o`
//! headers followed by `d : demand;` pairs. Lines starting with `~` and
//! `<...>` metadata lines are skipped.

use std::fmt::Write as _;
use std::path::Path;

use super::{CostFunction, DemandTable, Network, BPR_ALPHA, BPR_BETA};
use crate::error::{Error, Result};

fn is_skippable(line: &str) -> bool {
    line.is_empty() || line.starts_with('~') || line.starts_with('<')
}

fn parse_num(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("expected number for {what}, found {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{what} must be finite"),
        });
    }
    Ok(v)
}

/// Parses `(tail, head, cost)` records without building the graph.
pub fn parse_link_records(text: &str) -> Result<Vec<(String, String, CostFunction)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if is_skippable(line) {
            continue;
        }
        let body = line.strip_suffix(';').unwrap_or(line);
        let toks: Vec<&str> = body.split_whitespace().collect();
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        if toks.len() < 4 {
            return Err(parse_err(format!(
                "link record needs at least 4 fields, found {}",
                toks.len()
            )));
        }
        if toks.iter().any(|t| t.contains(';')) {
            return Err(parse_err("unexpected ';' inside link record".into()));
        }
        let (tail, head) = (toks[0].to_string(), toks[1].to_string());
        let cost = if toks[2].eq_ignore_ascii_case("affine") {
            if toks.len() != 5 {
                return Err(parse_err(
                    "affine record must be `tail head affine a b ;`".into(),
                ));
            }
            CostFunction::affine(
                parse_num(toks[3], line_no, "a")?,
                parse_num(toks[4], line_no, "b")?,
            )
        } else {
            if toks.len() > 6 {
                return Err(parse_err(format!(
                    "too many fields in BPR record ({})",
                    toks.len()
                )));
            }
            let capacity = parse_num(toks[2], line_no, "capacity")?;
            let free_flow = parse_num(toks[3], line_no, "free_flow_time")?;
            let alpha = toks
                .get(4)
                .map(|t| parse_num(t, line_no, "alpha"))
                .transpose()?;
            let beta = toks
                .get(5)
                .map(|t| parse_num(t, line_no, "beta"))
                .transpose()?;
            CostFunction::Bpr {
                free_flow,
                capacity,
                alpha: alpha.unwrap_or(BPR_ALPHA),
                beta: beta.unwrap_or(BPR_BETA),
            }
        };
        cost.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push((tail, head, cost));
    }
    Ok(out)
}

pub fn parse_network(text: &str) -> Result<Network> {
    let records = parse_link_records(text)?;
    if records.is_empty() {
        return Err(Error::Validation("link file contains no links".into()));
    }
    Network::from_links(&records)
}

/// Parses `(origin, destination, demand)` records by node name.
pub fn parse_trip_records(text: &str) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::new();
    let mut origin: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if is_skippable(line) {
            continue;
        }
        let mut words = line.split_whitespace();
        if words.next() == Some("Origin") {
            let name = words.next().ok_or(Error::Parse {
                line: line_no,
                msg: "Origin header without a node".into(),
            })?;
            if words.next().is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "trailing tokens after Origin header".into(),
                });
            }
            origin = Some(name.to_string());
            continue;
        }
        let Some(o) = origin.as_ref() else {
            return Err(Error::Parse {
                line: line_no,
                msg: "demand entry before any Origin header".into(),
            });
        };
        for chunk in line.split(';') {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                continue;
            }
            let (dest, value) = chunk.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected `destination : demand`, found {chunk:?}"),
            })?;
            let dest = dest.trim();
            if dest.is_empty() || dest.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("bad destination {dest:?}"),
                });
            }
            let q = parse_num(value.trim(), line_no, "demand")?;
            if q < 0.0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "demand must be nonnegative".into(),
                });
            }
            out.push((o.clone(), dest.to_string(), q));
        }
    }
    Ok(out)
}

/// Parses a trips file against `net`. Zero-demand pairs are dropped.
pub fn parse_trips(text: &str, net: &Network) -> Result<DemandTable> {
    let records: Vec<_> = parse_trip_records(text)?
        .into_iter()
        .filter(|(_, _, q)| *q > 0.0)
        .collect();
    DemandTable::from_names(net, &records)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_network(
    link_file: impl AsRef<Path>,
    trips_file: impl AsRef<Path>,
) -> Result<(Network, DemandTable)> {
    let net = parse_network(&read(link_file.as_ref())?)?;
    let demand = parse_trips(&read(trips_file.as_ref())?, &net)?;
    Ok((net, demand))
}

pub fn write_network(net: &Network) -> String {
    let mut s = String::from(
        "~ tail head capacity free_flow_time alpha beta ;  |  tail head affine a b ;\n",
    );
    for link in net.links() {
        let (t, h) = (net.node_name(link.tail), net.node_name(link.head));
        match link.cost {
            CostFunction::Bpr {
                free_flow,
                capacity,
                alpha,
                beta,
            } => writeln!(s, "{t} {h} {capacity:?} {free_flow:?} {alpha:?} {beta:?} ;"),
            CostFunction::Affine { a, b } => writeln!(s, "{t} {h} affine {a:?} {b:?} ;"),
        }
        .expect("writing to a String cannot fail");
    }
    s
}

pub fn write_trips(net: &Network, demand: &DemandTable) -> String {
    let mut s = format!("<TOTAL OD FLOW> {:?}\n<END OF METADATA>\n", demand.total());
    let mut current = None;
    for e in demand.entries() {
        if current != Some(e.origin) {
            let _ = writeln!(s, "\nOrigin {}", net.node_name(e.origin));
            current = Some(e.origin);
        }
        let _ = writeln!(s, "    {} : {:?};", net.node_name(e.destination), e.demand);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use proptest::prelude::*;

    #[test]
    fn bundled_braess() {
        let (net, demand) = data::braess().unwrap();
        assert_eq!(net.num_nodes(), 4);
        assert_eq!(net.num_links(), 5);
        assert_eq!(demand.len(), 1);
        let e = demand.entries()[0];
        assert_eq!(net.node_name(e.origin), "A");
        assert_eq!(net.node_name(e.destination), "B");
        assert_eq!(e.demand, 6.0);
    }

    #[test]
    fn bundled_ow() {
        let (net, demand) = data::ow().unwrap();
        assert_eq!(net.num_nodes(), 13);
        assert_eq!(net.num_links(), 48);
        assert_eq!(demand.total(), 1700.0);
        let rows: Vec<_> = demand
            .entries()
            .iter()
            .map(|e| {
                (
                    net.node_name(e.origin),
                    net.node_name(e.destination),
                    e.demand,
                )
            })
            .collect();
        assert_eq!(
            rows,
            vec![
                ("1", "12", 600.0),
                ("1", "13", 400.0),
                ("2", "12", 300.0),
                ("2", "13", 400.0)
            ]
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "~ header\nA B affine 1 2 ;\nA C banana 3 ;\n";
        match parse_network(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_trip_records("Origin A\n B : x;\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_trip_records("B : 1;\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn dangling_trip_node_is_validation_error() {
        let (net, _) = data::braess().unwrap();
        let err = parse_trips("Origin A\n Q : 3;\n", &net).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains('Q')),
            "{err}"
        );
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_network("/nonexistent/x.net", "/nonexistent/x.trips").unwrap_err();
        assert!(matches!(err, Error::FileNotFound(ref p) if p.ends_with("x.net")));
    }

    #[test]
    fn optional_bpr_shape_fields() {
        let net = parse_network("1 2 100 10 ;\n2 3 50 4 0.5 ;\n").unwrap();
        assert_eq!(net.link(0).cost, CostFunction::bpr(10.0, 100.0));
        assert_eq!(
            net.link(1).cost,
            CostFunction::Bpr {
                free_flow: 4.0,
                capacity: 50.0,
                alpha: 0.5,
                beta: 4.0
            }
        );
    }

    fn arb_network() -> impl Strategy<Value = Vec<(String, String, CostFunction)>> {
        let cost = prop_oneof![
            (0.1f64..100.0, 1.0f64..5000.0, 0.0f64..2.0, 1.0f64..8.0).prop_map(|(t, w, a, b)| {
                CostFunction::Bpr {
                    free_flow: t,
                    capacity: w,
                    alpha: a,
                    beta: b,
                }
            }),
            (0.0f64..100.0, 0.0f64..10.0).prop_map(|(a, b)| CostFunction::affine(a, b)),
        ];
        proptest::collection::btree_map((0u8..8, 0u8..8), cost, 1..30).prop_map(|m| {
            m.into_iter()
                .filter(|((a, b), _)| a != b)
                .map(|((a, b), c)| (format!("n{a}"), format!("n{b}"), c))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(records in arb_network()) {
            prop_assume!(!records.is_empty());
            let net = Network::from_links(&records).unwrap();
            let back = parse_network(&write_network(&net)).unwrap();
            prop_assert_eq!(&back, &net);
            let demand = DemandTable::from_names(&net, &[(records[0].0.as_str(), records[0].1.as_str(), 7.0)]).unwrap();
            prop_assert_eq!(parse_trips(&write_trips(&net, &demand), &back).unwrap(), demand);
        }
    }
}
