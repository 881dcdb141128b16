//! MATPOWER `.m` case parser: raw table extraction, generator aggregation and
//! conversion into a validated per-unit [`Network`].

use std::collections::BTreeMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::network::{Branch, Bus, Generator, Network, Shunt};

/// Raw case tables exactly as read from the file, before per-unit conversion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawCase {
    pub base_mva: f64,
    pub bus_table: Vec<Vec<f64>>,
    pub gen_table: Vec<Vec<f64>>,
    pub branch_table: Vec<Vec<f64>>,
    pub gencost_table: Vec<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unsupported case version '{0}' (only version 2 is supported)")]
    UnsupportedVersion(String),
    #[error("missing {0}")]
    MissingTable(&'static str),
    #[error("baseMVA must be positive, got {0}")]
    BadBaseMva(f64),
    #[error("{table} row {row} references bus {bus} absent from bus table")]
    UnknownBus { table: &'static str, row: usize, bus: usize },
    #[error("bus {0} is marked isolated")]
    IsolatedBus(usize),
    #[error("bus {0}: vmin > vmax")]
    VoltageBounds(usize),
    #[error("generator at bus {0}: nonlinear cost unsupported")]
    NonlinearCost(usize),
    #[error("generator at bus {0}: unsupported cost model {1}")]
    CostModel(usize, usize),
    #[error("branch {0}: zero or negative impedance magnitude")]
    BadImpedance(usize),
    #[error("branch {0}: transformer ratio must be positive")]
    BadRatio(usize),
}

/// Parse the textual MATPOWER format into raw tables.
///
/// Whitespace-tolerant; `%` starts a comment; rows may be separated by
/// newlines or semicolons. Per-unit conversion is not applied here.
pub fn parse_case(text: &str) -> Result<RawCase, ParseError> {
    let mut case = RawCase { base_mva: 0.0, ..Default::default() };
    let mut version: Option<String> = None;
    let mut saw_base = false;

    let mut lines = text.lines().enumerate().peekable();
    while let Some((lineno, raw)) = lines.next() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("mpc.version") {
            let value = rest.trim_start_matches(['=', ' ', '\t']).trim_end_matches(';').trim();
            version = Some(value.trim_matches('\'').to_string());
        } else if let Some(rest) = line.strip_prefix("mpc.baseMVA") {
            let value = rest.trim_start_matches(['=', ' ', '\t']).trim_end_matches(';').trim();
            case.base_mva = value.parse().map_err(|_| ParseError::Syntax {
                line: lineno + 1,
                message: format!("invalid baseMVA '{value}'"),
            })?;
            saw_base = true;
        } else if let Some(name) = matrix_name(line) {
            let body_start = line.find('[').map(|i| &line[i + 1..]).unwrap_or("");
            let mut body = String::from(body_start);
            let mut closed = body.contains(']');
            let mut last_line = lineno;
            while !closed {
                let Some((no, next)) = lines.next() else {
                    return Err(ParseError::Syntax {
                        line: last_line + 1,
                        message: format!("unterminated matrix mpc.{name}"),
                    });
                };
                last_line = no;
                let next = strip_comment(next);
                if let Some(end) = next.find(']') {
                    body.push('\n');
                    body.push_str(&next[..end]);
                    closed = true;
                } else {
                    body.push('\n');
                    body.push_str(&next);
                }
            }
            let body = body.split(']').next().unwrap_or(&body);
            let rows = parse_matrix(body, lineno + 1)?;
            match name.as_str() {
                "bus" => case.bus_table = rows,
                "gen" => case.gen_table = rows,
                "branch" => case.branch_table = rows,
                "gencost" => case.gencost_table = rows,
                _ => {} // areas, bus_name and friends are ignored
            }
        }
    }

    match version.as_deref() {
        Some("2") => {}
        Some(v) => return Err(ParseError::UnsupportedVersion(v.to_string())),
        None => return Err(ParseError::MissingTable("mpc.version")),
    }
    if !saw_base {
        return Err(ParseError::MissingTable("baseMVA"));
    }
    if case.base_mva <= 0.0 {
        return Err(ParseError::BadBaseMva(case.base_mva));
    }
    if case.bus_table.is_empty() {
        return Err(ParseError::MissingTable("bus table"));
    }
    if case.branch_table.is_empty() {
        return Err(ParseError::MissingTable("branch table"));
    }
    if case.gen_table.is_empty() {
        return Err(ParseError::MissingTable("gen table"));
    }
    if case.gencost_table.is_empty() {
        return Err(ParseError::MissingTable("gencost"));
    }

    let bus_ids: std::collections::BTreeSet<usize> =
        case.bus_table.iter().map(|r| r[0] as usize).collect();
    for (i, row) in case.gen_table.iter().enumerate() {
        if !bus_ids.contains(&(row[0] as usize)) {
            return Err(ParseError::UnknownBus { table: "gen", row: i + 1, bus: row[0] as usize });
        }
    }
    for (i, row) in case.branch_table.iter().enumerate() {
        for col in 0..2 {
            if !bus_ids.contains(&(row[col] as usize)) {
                return Err(ParseError::UnknownBus {
                    table: "branch",
                    row: i + 1,
                    bus: row[col] as usize,
                });
            }
        }
    }
    Ok(case)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn matrix_name(line: &str) -> Option<String> {
    let rest = line.strip_prefix("mpc.")?;
    let eq = rest.find('=')?;
    let name = rest[..eq].trim();
    if rest[eq..].contains('[') && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        Some(name.to_string())
    } else {
        None
    }
}

fn parse_matrix(body: &str, start_line: usize) -> Result<Vec<Vec<f64>>, ParseError> {
    let mut rows = Vec::new();
    for (off, line) in body.lines().enumerate() {
        let line = strip_comment(line);
        for chunk in line.split(';') {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for tok in chunk.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| ParseError::Syntax {
                    line: start_line + off,
                    message: format!("invalid number '{tok}'"),
                })?;
                row.push(v);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Gen-table column indices used below.
const GEN_BUS: usize = 0;
const GEN_QMAX: usize = 3;
const GEN_QMIN: usize = 4;
const GEN_STATUS: usize = 7;
const GEN_PMAX: usize = 8;
const GEN_PMIN: usize = 9;

/// Merge multiple generators at one bus into a single record: power bounds
/// are summed and the cost row of the last in-service generator (file order)
/// is kept. Out-of-service generators are dropped first.
pub fn aggregate_generators(raw: &RawCase) -> RawCase {
    let mut out = raw.clone();
    let mut order: Vec<usize> = Vec::new();
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (gen, cost) in raw.gen_table.iter().zip(&raw.gencost_table) {
        if gen[GEN_STATUS] == 0.0 {
            continue;
        }
        let bus = gen[GEN_BUS] as usize;
        match groups.get_mut(&bus) {
            None => {
                order.push(bus);
                groups.insert(bus, (gen.clone(), cost.clone()));
            }
            Some((agg, agg_cost)) => {
                agg[GEN_PMIN] += gen[GEN_PMIN];
                agg[GEN_PMAX] += gen[GEN_PMAX];
                agg[GEN_QMIN] += gen[GEN_QMIN];
                agg[GEN_QMAX] += gen[GEN_QMAX];
                *agg_cost = cost.clone();
            }
        }
    }
    out.gen_table = order.iter().map(|b| groups[b].0.clone()).collect();
    out.gencost_table = order.iter().map(|b| groups[b].1.clone()).collect();
    out
}

/// Bus-table column indices.
const BUS_ID: usize = 0;
const BUS_TYPE: usize = 1;
const BUS_PD: usize = 2;
const BUS_QD: usize = 3;
const BUS_GS: usize = 4;
const BUS_BS: usize = 5;
const BUS_VMAX: usize = 11;
const BUS_VMIN: usize = 12;

/// Branch-table column indices.
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const BR_RATE_A: usize = 5;
const BR_RATIO: usize = 8;
const BR_ANGLE: usize = 9;
const BR_STATUS: usize = 10;

/// Convert an aggregated raw case to a per-unit [`Network`].
///
/// Conventions: rateA (MVA) becomes the per-unit current bound; rateA = 0
/// means unconstrained; a zero ratio field means 1; the phase-shift column is
/// negated going from the file convention to the model's `e^{j shift}` form;
/// charging susceptance is stored per branch end; a bus carries a shunt iff
/// Gs or Bs is nonzero; cost rows must have a zero quadratic coefficient.
pub fn to_network(raw: &RawCase) -> Result<Network, ParseError> {
    let base = raw.base_mva;
    let mut buses = BTreeMap::new();
    for row in &raw.bus_table {
        let id = row[BUS_ID] as usize;
        if row[BUS_TYPE] as usize == 4 {
            return Err(ParseError::IsolatedBus(id));
        }
        let vmin = row[BUS_VMIN];
        let vmax = row[BUS_VMAX];
        if vmin > vmax {
            return Err(ParseError::VoltageBounds(id));
        }
        let shunt = if row[BUS_GS] != 0.0 || row[BUS_BS] != 0.0 {
            Some(Shunt { g: row[BUS_GS] / base, b: row[BUS_BS] / base })
        } else {
            None
        };
        buses.insert(
            id,
            Bus { load: Complex64::new(row[BUS_PD] / base, row[BUS_QD] / base), vmin, vmax, shunt },
        );
    }

    let mut generators = BTreeMap::new();
    for (gen, cost) in raw.gen_table.iter().zip(&raw.gencost_table) {
        if gen[GEN_STATUS] == 0.0 {
            continue;
        }
        let bus = gen[GEN_BUS] as usize;
        let (c_lin, c_const) = linear_cost(bus, cost)?;
        generators.insert(
            bus,
            Generator {
                pmin: gen[GEN_PMIN] / base,
                pmax: gen[GEN_PMAX] / base,
                qmin: gen[GEN_QMIN] / base,
                qmax: gen[GEN_QMAX] / base,
                cost: c_lin * base,
                cost0: c_const,
            },
        );
    }

    let mut branches = Vec::new();
    for (i, row) in raw.branch_table.iter().enumerate() {
        if row[BR_STATUS] == 0.0 {
            continue;
        }
        let z = Complex64::new(row[BR_R], row[BR_X]);
        if z.norm() == 0.0 {
            return Err(ParseError::BadImpedance(i + 1));
        }
        let ratio = if row[BR_RATIO] == 0.0 { 1.0 } else { row[BR_RATIO] };
        if ratio <= 0.0 {
            return Err(ParseError::BadRatio(i + 1));
        }
        let imax = if row[BR_RATE_A] == 0.0 { f64::INFINITY } else { row[BR_RATE_A] / base };
        branches.push(Branch {
            from: row[0] as usize,
            to: row[1] as usize,
            admittance: z.inv(),
            charging: row[BR_B] / 2.0,
            ratio,
            shift: -row[BR_ANGLE].to_radians(),
            imax,
        });
    }

    Ok(Network { buses, generators, branches })
}

/// Extract `(linear, constant)` coefficients from a polynomial gencost row.
fn linear_cost(bus: usize, row: &[f64]) -> Result<(f64, f64), ParseError> {
    let model = row[0] as usize;
    if model != 2 {
        return Err(ParseError::CostModel(bus, model));
    }
    let n = row[3] as usize;
    let coeffs = &row[4..4 + n.min(row.len() - 4)];
    // Polynomial is ordered highest degree first; everything above the linear
    // term must vanish.
    if coeffs.len() > 2 && coeffs[..coeffs.len() - 2].iter().any(|&c| c != 0.0) {
        return Err(ParseError::NonlinearCost(bus));
    }
    let c1 = if coeffs.len() >= 2 { coeffs[coeffs.len() - 2] } else { 0.0 };
    let c0 = *coeffs.last().unwrap_or(&0.0);
    Ok((c1, c0))
}

/// Parse, aggregate and convert a case file in one call.
pub fn load_network(text: &str) -> Result<Network, ParseError> {
    let raw = parse_case(text)?;
    to_network(&aggregate_generators(&raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
function mpc = tiny
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0   0  0 0  1 1 0 0 1 1.06 0.94;
    2 1 90 30  0 19 1 1 0 0 1 1.06 0.94;
];
mpc.gen = [
    1 0 0 50 -50 1 100 1 200 0 0 0 0 0 0 0 0 0 0 0 0;
];
mpc.branch = [
    1 2 0.01 0.05 0.02 130 0 0 0 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0 20 0;
];
"#;

    #[test]
    fn parses_tiny_case() {
        let raw = parse_case(TINY).unwrap();
        assert_eq!(raw.base_mva, 100.0);
        assert_eq!(raw.bus_table.len(), 2);
        assert_eq!(raw.gen_table.len(), 1);
        assert_eq!(raw.branch_table.len(), 1);
    }

    #[test]
    fn network_conversion_applies_per_unit() {
        let net = load_network(TINY).unwrap();
        let bus2 = &net.buses[&2];
        assert!((bus2.load.re - 0.9).abs() < 1e-15);
        assert!((bus2.load.im - 0.3).abs() < 1e-15);
        assert_eq!(bus2.shunt, Some(Shunt { g: 0.0, b: 0.19 }));
        let g = &net.generators[&1];
        assert!((g.pmax - 2.0).abs() < 1e-15);
        assert!((g.cost - 2000.0).abs() < 1e-12);
        let br = &net.branches[0];
        assert!((br.imax - 1.3).abs() < 1e-15);
        assert!((br.charging - 0.01).abs() < 1e-15);
    }

    #[test]
    fn missing_gencost_is_reported() {
        let text = TINY.replace("mpc.gencost = [\n    2 0 0 3 0 20 0;\n];", "");
        match parse_case(&text) {
            Err(ParseError::MissingTable(t)) => assert_eq!(t, "gencost"),
            other => panic!("expected missing gencost, got {other:?}"),
        }
    }

    #[test]
    fn unknown_branch_bus_is_reported() {
        let text = TINY.replace("1 2 0.01", "1 999 0.01");
        assert!(matches!(parse_case(&text), Err(ParseError::UnknownBus { bus: 999, .. })));
    }

    #[test]
    fn quadratic_cost_is_rejected() {
        let text = TINY.replace("2 0 0 3 0 20 0;", "2 0 0 3 0.04 20 0;");
        let raw = parse_case(&text).unwrap();
        assert!(matches!(to_network(&raw), Err(ParseError::NonlinearCost(1))));
    }

    #[test]
    fn aggregation_sums_bounds_keeps_last_cost() {
        let mut raw = parse_case(TINY).unwrap();
        raw.gen_table = vec![
            vec![1.0, 0.0, 0.0, 40.0, -10.0, 1.0, 100.0, 1.0, 100.0, 0.0],
            vec![1.0, 0.0, 0.0, 20.0, -5.0, 1.0, 100.0, 1.0, 150.0, 10.0],
        ];
        raw.gencost_table =
            vec![vec![2.0, 0.0, 0.0, 3.0, 0.0, 2.0, 0.0], vec![2.0, 0.0, 0.0, 3.0, 0.0, 5.0, 0.0]];
        let agg = aggregate_generators(&raw);
        assert_eq!(agg.gen_table.len(), 1);
        assert_eq!(agg.gen_table[0][GEN_PMAX], 250.0);
        assert_eq!(agg.gen_table[0][GEN_PMIN], 10.0);
        assert_eq!(agg.gen_table[0][GEN_QMAX], 60.0);
        assert_eq!(agg.gencost_table[0][5], 5.0);
        // idempotent
        assert_eq!(aggregate_generators(&agg), agg);
    }

    #[test]
    fn all_dead_generators_leave_bus_bare() {
        let mut raw = parse_case(TINY).unwrap();
        raw.gen_table[0][GEN_STATUS] = 0.0;
        let agg = aggregate_generators(&raw);
        assert!(agg.gen_table.is_empty());
        let net = to_network(&agg).unwrap();
        assert!(net.generators.is_empty());
    }

    #[test]
    fn isolated_bus_is_rejected() {
        let text = TINY.replace("2 1 90", "2 4 90");
        let raw = parse_case(&text).unwrap();
        assert!(matches!(to_network(&raw), Err(ParseError::IsolatedBus(2))));
    }
}
