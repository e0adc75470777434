//! TNTP network and trip tables, as distributed with the public
//! transportation network test problems.

use std::collections::BTreeMap;
use std::path::Path;

use ptequil_core::network::{ChargingDestination, EvOrigin, OdDemand, RoadLink, TransportNetwork};

use crate::error::{read_to_string, IoError};

/// One link row, fields in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TntpLink {
    pub init_node: u32,
    pub term_node: u32,
    pub capacity: f64,
    pub length: f64,
    pub free_flow_time: f64,
    pub b: f64,
    pub power: f64,
    pub speed: f64,
    pub toll: f64,
    pub link_type: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TntpNet {
    pub zones: u32,
    pub nodes: u32,
    pub first_thru_node: u32,
    pub links: Vec<TntpLink>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripEntry {
    pub origin: u32,
    pub destination: u32,
    pub demand: f64,
}

/// How a trip table becomes EV and conventional demand.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandOptions {
    /// Multiplies trips and link capacities.
    pub scale: f64,
    /// Fraction of each origin's trips made by EVs that need to charge.
    pub ev_share: f64,
    /// Multiplies free-flow times.
    pub free_flow_scale: f64,
    pub beta_time: f64,
    pub beta_cost: f64,
}

impl Default for DemandOptions {
    fn default() -> Self {
        Self {
            scale: 1.0,
            ev_share: 0.2,
            free_flow_scale: 1.0,
            beta_time: 1.0,
            beta_cost: 0.1,
        }
    }
}

/// Splits metadata from the body. Returns the tags and the line number
/// where the body starts.
fn metadata<'a>(text: &'a str, file: &str) -> Result<(BTreeMap<String, &'a str>, usize), IoError> {
    let mut tags = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if !line.starts_with('<') {
            return Err(IoError::parse(file, k + 1, "expected <END OF METADATA> before data"));
        }
        let close = line
            .find('>')
            .ok_or_else(|| IoError::parse(file, k + 1, "unterminated metadata tag"))?;
        let key = line[1..close].trim().to_ascii_uppercase();
        if key == "END OF METADATA" {
            return Ok((tags, k + 1));
        }
        tags.insert(key, line[close + 1..].trim());
    }
    Err(IoError::Missing {
        file: file.to_string(),
        what: "<END OF METADATA>".into(),
    })
}

fn tag_u32(tags: &BTreeMap<String, &str>, key: &str, file: &str) -> Result<Option<u32>, IoError> {
    tags.get(key)
        .map(|v| {
            v.parse::<u32>()
                .map_err(|_| IoError::parse(file, 0, format!("<{key}> is not an integer: {v:?}")))
        })
        .transpose()
}

fn number<T: std::str::FromStr>(s: &str, file: &str, line: usize, field: &str) -> Result<T, IoError> {
    s.parse()
        .map_err(|_| IoError::parse(file, line, format!("field {field}: not a number: {s:?}")))
}

pub fn parse_net(text: &str, file: &str) -> Result<TntpNet, IoError> {
    let (tags, body) = metadata(text, file)?;
    let need = |key: &str| -> Result<u32, IoError> {
        tag_u32(&tags, key, file)?.ok_or_else(|| IoError::Missing {
            file: file.to_string(),
            what: format!("<{key}>"),
        })
    };
    let nodes = need("NUMBER OF NODES")?;
    let n_links = need("NUMBER OF LINKS")?;
    let zones = tag_u32(&tags, "NUMBER OF ZONES", file)?.unwrap_or(nodes);
    let first_thru_node = tag_u32(&tags, "FIRST THRU NODE", file)?.unwrap_or(1);

    let mut links = Vec::with_capacity(n_links as usize);
    for (k, raw) in text.lines().enumerate().skip(body) {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        let line_no = k + 1;
        let fields: Vec<&str> = line.trim_end_matches(';').split_whitespace().collect();
        if fields.len() < 10 {
            return Err(IoError::parse(file, line_no, format!("expected 10 link fields, found {}", fields.len())));
        }
        let link = TntpLink {
            init_node: number(fields[0], file, line_no, "init_node")?,
            term_node: number(fields[1], file, line_no, "term_node")?,
            capacity: number(fields[2], file, line_no, "capacity")?,
            length: number(fields[3], file, line_no, "length")?,
            free_flow_time: number(fields[4], file, line_no, "free_flow_time")?,
            b: number(fields[5], file, line_no, "b")?,
            power: number(fields[6], file, line_no, "power")?,
            speed: number(fields[7], file, line_no, "speed")?,
            toll: number(fields[8], file, line_no, "toll")?,
            link_type: number(fields[9], file, line_no, "link_type")?,
        };
        for node in [link.init_node, link.term_node] {
            if node == 0 || node > nodes {
                return Err(IoError::parse(file, line_no, format!("node {node} outside 1..={nodes}")));
            }
        }
        links.push(link);
    }
    if links.len() != n_links as usize {
        return Err(IoError::invalid(
            file,
            format!("<NUMBER OF LINKS> is {n_links} but {} link rows were read", links.len()),
        ));
    }
    Ok(TntpNet {
        zones,
        nodes,
        first_thru_node,
        links,
    })
}

/// Trip table entries in file order; zero cells are dropped.
pub fn parse_trips(text: &str, file: &str) -> Result<Vec<TripEntry>, IoError> {
    let (tags, body) = metadata(text, file)?;
    let zones = tag_u32(&tags, "NUMBER OF ZONES", file)?;
    let mut out = Vec::new();
    let mut origin: Option<u32> = None;
    for (k, raw) in text.lines().enumerate().skip(body) {
        let line = raw.trim();
        let line_no = k + 1;
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("Origin") {
            let r: u32 = number(rest.trim(), file, line_no, "origin")?;
            origin = Some(r);
            continue;
        }
        let r = origin.ok_or_else(|| IoError::parse(file, line_no, "demand before any Origin block"))?;
        for cell in line.split(';') {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            let (s, v) = cell
                .split_once(':')
                .ok_or_else(|| IoError::parse(file, line_no, format!("expected `dest : demand`, got {cell:?}")))?;
            let s: u32 = number(s.trim(), file, line_no, "destination")?;
            let v: f64 = number(v.trim(), file, line_no, "demand")?;
            if v != 0.0 {
                out.push(TripEntry {
                    origin: r,
                    destination: s,
                    demand: v,
                });
            }
        }
    }
    if let Some(z) = zones {
        if let Some(e) = out.iter().find(|e| e.origin > z || e.destination > z || e.origin == 0 || e.destination == 0) {
            return Err(IoError::invalid(
                file,
                format!("trip {} -> {} references a zone outside 1..={z}", e.origin, e.destination),
            ));
        }
    }
    Ok(out)
}

/// Builds the road side of the coupled system. EVs leave each origin at
/// `ev_share` of its scaled trips and choose among `charging`; the rest of
/// the trip table stays as fixed conventional demand.
pub fn build_transport(
    net: &TntpNet,
    trips: &[TripEntry],
    charging: Vec<ChargingDestination>,
    options: &DemandOptions,
) -> Result<TransportNetwork, IoError> {
    if !(options.scale > 0.0) || !(0.0..=1.0).contains(&options.ev_share) || !(options.free_flow_scale > 0.0) {
        return Err(IoError::invalid(
            "demand options",
            "scale and free_flow_scale must be positive and ev_share in [0, 1]",
        ));
    }
    let links = net
        .links
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let mut link = RoadLink::new(
                k as u32 + 1,
                l.init_node,
                l.term_node,
                l.free_flow_time * options.free_flow_scale,
                l.capacity * options.scale,
            );
            link.bpr_alpha = l.b;
            link.bpr_beta = l.power;
            link
        })
        .collect();
    let mut origin_total: BTreeMap<u32, f64> = BTreeMap::new();
    let mut conventional = Vec::new();
    for t in trips {
        if t.origin > net.nodes || t.destination > net.nodes {
            return Err(IoError::invalid(
                "trips",
                format!("trip {} -> {} references a node not in the network", t.origin, t.destination),
            ));
        }
        if t.origin == t.destination {
            continue;
        }
        let q = t.demand * options.scale;
        *origin_total.entry(t.origin).or_default() += q * options.ev_share;
        let fixed = q * (1.0 - options.ev_share);
        if fixed > 0.0 {
            conventional.push(OdDemand {
                origin: t.origin,
                destination: t.destination,
                demand: fixed,
            });
        }
    }
    let ev_origins = origin_total
        .into_iter()
        .filter(|&(_, q)| q > 0.0)
        .map(|(node, demand)| EvOrigin { node, demand })
        .collect();
    Ok(TransportNetwork {
        nodes: (1..=net.nodes).collect(),
        links,
        ev_origins,
        destinations: charging,
        conventional_od: conventional,
        energy_overrides: vec![],
        beta_time: options.beta_time,
        beta_cost: options.beta_cost,
    })
}

pub fn read_net(path: &Path) -> Result<TntpNet, IoError> {
    parse_net(&read_to_string(path)?, &path.display().to_string())
}

pub fn read_trips(path: &Path) -> Result<Vec<TripEntry>, IoError> {
    parse_trips(&read_to_string(path)?, &path.display().to_string())
}

/// Reads both files and builds the transport network.
pub fn parse_tntp(
    net_path: &Path,
    trips_path: &Path,
    charging: Vec<ChargingDestination>,
    options: &DemandOptions,
) -> Result<TransportNetwork, IoError> {
    let net = read_net(net_path)?;
    let trips = read_trips(trips_path)?;
    build_transport(&net, &trips, charging, options)
}
