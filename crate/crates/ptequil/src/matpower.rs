//! MATPOWER case files, restricted to what a DC dispatch needs: bus loads,
//! branch reactance and rating, generator limits and polynomial costs.

use std::collections::BTreeMap;
use std::path::Path;

use ptequil_core::network::{GeneratorSpec, PowerBranch, PowerBus, PowerNetwork};

use crate::error::{read_to_string, IoError};

/// Raw numeric tables keyed by field name (`bus`, `gen`, ...), with the line
/// each row started on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaseTables {
    pub base_mva: Option<f64>,
    pub tables: BTreeMap<String, Vec<(usize, Vec<f64>)>>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(k) => &line[..k],
        None => line,
    }
}

pub fn parse_tables(text: &str, file: &str) -> Result<CaseTables, IoError> {
    let mut out = CaseTables::default();
    let mut open: Option<(String, Vec<(usize, Vec<f64>)>)> = None;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let mut line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if open.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else { continue };
            let Some((name, value)) = rest.split_once('=') else { continue };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                open = Some((name, Vec::new()));
                line = body.trim();
                if line.is_empty() {
                    continue;
                }
            } else {
                if name == "baseMVA" {
                    let v = value.trim_end_matches(';').trim();
                    out.base_mva = Some(
                        v.parse()
                            .map_err(|_| IoError::parse(file, line_no, format!("baseMVA is not a number: {v:?}")))?,
                    );
                }
                continue;
            }
        }
        let (name, rows) = open.as_mut().expect("inside a table");
        let (body, closed) = match line.find(']') {
            Some(end) => (&line[..end], true),
            None => (line, false),
        };
        for row in body.split(';') {
            let cells: Vec<&str> = row.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
            if cells.is_empty() {
                continue;
            }
            let values = cells
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| IoError::parse(file, line_no, format!("mpc.{name}: not a number: {c:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((line_no, values));
        }
        if closed {
            let (name, rows) = open.take().expect("inside a table");
            out.tables.insert(name, rows);
        }
    }
    if let Some((name, _)) = open {
        return Err(IoError::invalid(file, format!("mpc.{name} is never closed")));
    }
    Ok(out)
}

fn table<'a>(t: &'a CaseTables, name: &str, file: &str) -> Result<&'a [(usize, Vec<f64>)], IoError> {
    t.tables.get(name).map(Vec::as_slice).ok_or_else(|| IoError::Missing {
        file: file.to_string(),
        what: format!("mpc.{name} table"),
    })
}

fn col(row: &(usize, Vec<f64>), idx: usize, file: &str, table: &str) -> Result<f64, IoError> {
    row.1.get(idx).copied().ok_or_else(|| {
        IoError::parse(file, row.0, format!("mpc.{table} row has {} columns, need at least {}", row.1.len(), idx + 1))
    })
}

fn as_id(v: f64, file: &str, line: usize) -> Result<u32, IoError> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(IoError::parse(file, line, format!("{v} is not a bus number")))
    }
}

/// Builds the power network. Susceptance is `baseMVA / x` in MW per radian;
/// a zero `rateA` means the branch is unconstrained. Out-of-service
/// generators and branches are dropped. Renewable sites and the budget are
/// not part of the case format and start empty.
pub fn build_power(t: &CaseTables, file: &str) -> Result<PowerNetwork, IoError> {
    let base = t.base_mva.unwrap_or(100.0);
    let mut buses = Vec::new();
    for row in table(t, "bus", file)? {
        let id = as_id(col(row, 0, file, "bus")?, file, row.0)?;
        let mut bus = PowerBus::new(id, col(row, 2, file, "bus")?);
        bus.is_reference = col(row, 1, file, "bus")? == 3.0;
        buses.push(bus);
    }
    let index: BTreeMap<u32, usize> = buses.iter().enumerate().map(|(k, b)| (b.id, k)).collect();
    if index.len() != buses.len() {
        return Err(IoError::invalid(file, "duplicate bus number"));
    }
    let lookup = |id: u32, line: usize| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| IoError::parse(file, line, format!("unknown bus {id}")))
    };

    let gens = table(t, "gen", file)?;
    let costs = table(t, "gencost", file)?;
    if costs.len() < gens.len() {
        return Err(IoError::invalid(
            file,
            format!("{} generators but only {} gencost rows", gens.len(), costs.len()),
        ));
    }
    for (g, c) in gens.iter().zip(costs) {
        if g.1.len() > 7 && col(g, 7, file, "gen")? <= 0.0 {
            continue;
        }
        let bus = lookup(as_id(col(g, 0, file, "gen")?, file, g.0)?, g.0)?;
        if col(c, 0, file, "gencost")? != 2.0 {
            return Err(IoError::parse(file, c.0, "only polynomial generator costs (model 2) are supported"));
        }
        let n = col(c, 3, file, "gencost")? as usize;
        let coeff: Vec<f64> = (0..n).map(|k| col(c, 4 + k, file, "gencost")).collect::<Result<_, _>>()?;
        let (c2, c1, c0) = match coeff.as_slice() {
            [c2, c1, c0] => (*c2, *c1, *c0),
            [c1, c0] => (0.0, *c1, *c0),
            [c0] => (0.0, 0.0, *c0),
            _ => return Err(IoError::parse(file, c.0, format!("cost polynomial of degree {} not supported", n.saturating_sub(1)))),
        };
        if buses[bus].generator.is_some() {
            return Err(IoError::parse(file, g.0, format!("second generator at bus {}", buses[bus].id)));
        }
        buses[bus].generator = Some(GeneratorSpec {
            lower: col(g, 9, file, "gen")?,
            upper: col(g, 8, file, "gen")?,
            cost_quadratic: c2,
            cost_linear: c1,
            cost_constant: c0,
        });
    }

    let mut branches = Vec::new();
    for row in table(t, "branch", file)? {
        if row.1.len() > 10 && col(row, 10, file, "branch")? <= 0.0 {
            continue;
        }
        let from = as_id(col(row, 0, file, "branch")?, file, row.0)?;
        let to = as_id(col(row, 1, file, "branch")?, file, row.0)?;
        lookup(from, row.0)?;
        lookup(to, row.0)?;
        let x = col(row, 3, file, "branch")?;
        if x == 0.0 {
            return Err(IoError::ZeroReactance { from, to });
        }
        let rate = col(row, 5, file, "branch")?;
        branches.push(PowerBranch {
            id: branches.len() as u32 + 1,
            from_bus: from,
            to_bus: to,
            susceptance: base / x.abs(),
            limit: if rate > 0.0 { rate } else { f64::INFINITY },
        });
    }
    if !buses.iter().any(|b| b.is_reference) {
        if let Some(b) = buses.first_mut() {
            b.is_reference = true;
        }
    }
    Ok(PowerNetwork {
        buses,
        branches,
        budget: 0.0,
    })
}

pub fn parse_power_case(text: &str, file: &str) -> Result<PowerNetwork, IoError> {
    build_power(&parse_tables(text, file)?, file)
}

pub fn read_power_case(path: &Path) -> Result<PowerNetwork, IoError> {
    parse_power_case(&read_to_string(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = two\nmpc.version = '2';\nmpc.baseMVA = 100;\n\
        mpc.bus = [\n\t1\t3\t0\t0;\n\t2\t1\t80.5\t10;\n];\n\
        % bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin\n\
        mpc.gen = [\n\t1\t0\t0\t0\t0\t1\t100\t1\t250\t5;\n];\n\
        mpc.branch = [\n\t1\t2\t0.01\t0.05\t0\t120\t0\t0\t0\t0\t1;\n];\n\
        mpc.gencost = [\n\t2\t0\t0\t3\t0.02\t12\t1.5;\n];\n";

    #[test]
    fn two_bus_echo() {
        let p = parse_power_case(TWO_BUS, "two").unwrap();
        assert_eq!(p.buses.len(), 2);
        assert!(p.buses[0].is_reference && !p.buses[1].is_reference);
        assert_eq!(p.buses[1].load, 80.5);
        assert_eq!(
            p.buses[0].generator,
            Some(GeneratorSpec {
                lower: 5.0,
                upper: 250.0,
                cost_quadratic: 0.02,
                cost_linear: 12.0,
                cost_constant: 1.5,
            })
        );
        assert_eq!(p.branches.len(), 1);
        assert!((p.branches[0].susceptance - 2000.0).abs() < 1e-9);
        assert_eq!(p.branches[0].limit, 120.0);
    }

    #[test]
    fn zero_reactance_and_missing_table() {
        let bad = TWO_BUS.replace("0.01\t0.05", "0.01\t0");
        assert!(matches!(parse_power_case(&bad, "x"), Err(IoError::ZeroReactance { from: 1, to: 2 })));
        let no_gencost = TWO_BUS.split("mpc.gencost").next().unwrap();
        let err = parse_power_case(no_gencost, "x").unwrap_err();
        assert!(err.to_string().contains("mpc.gencost"), "{err}");
    }

    #[test]
    fn zero_rating_is_unconstrained() {
        let p = parse_power_case(&TWO_BUS.replace("\t120\t", "\t0\t"), "x").unwrap();
        assert!(p.branches[0].limit.is_infinite());
    }
}
