//! Reader and writer for the MATPOWER `.m` case subset used here:
//! `baseMVA`, `bus`, `gen`, `branch` and polynomial `gencost`.
//!
//! AC quantities (resistance, charging, shunts, voltages, taps) are read and
//! discarded.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Branch, Bus, BusKind, Generator, GridCase};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unsupported feature: {feature}")]
    Unsupported { line: usize, feature: String },
    #[error("missing section `mpc.{0}`")]
    Missing(&'static str),
    #[error("invalid case: {0}")]
    Validation(String),
}

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

/// A numeric matrix together with the source line of each row.
#[derive(Debug, Default)]
struct Table {
    rows: Vec<(usize, Vec<f64>)>,
}

fn malformed(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Malformed {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    // Quotes only appear in `mpc.version = '2';` style assignments, which are
    // skipped anyway, so a bare `%` search is sufficient.
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_number(tok: &str, line: usize) -> Result<f64, ParseError> {
    match tok {
        "Inf" | "inf" | "+Inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| malformed(line, format!("invalid number `{tok}`"))),
    }
}

/// Matrix currently being read: its field name, the partial row and the line
/// where that row started.
struct OpenMatrix {
    field: String,
    row: Vec<f64>,
    row_line: usize,
}

/// Feeds one line of matrix body into `table`. Returns true once `]` is seen.
fn feed_matrix(open: &mut OpenMatrix, body: &str, lineno: usize, table: &mut Table) -> Result<bool, ParseError> {
    let (body, closed) = match body.find(']') {
        Some(end) => {
            if !body[end + 1..].trim().trim_end_matches(';').trim().is_empty() {
                return Err(malformed(lineno, "unexpected text after `]`"));
            }
            (&body[..end], true)
        }
        None => (body, false),
    };
    for (k, chunk) in body.split(';').enumerate() {
        if k > 0 && !open.row.is_empty() {
            table.rows.push((open.row_line, std::mem::take(&mut open.row)));
        }
        for tok in chunk
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            if open.row.is_empty() {
                open.row_line = lineno;
            }
            open.row.push(parse_number(tok, lineno)?);
        }
    }
    // A newline also terminates a matrix row.
    if !open.row.is_empty() {
        table.rows.push((open.row_line, std::mem::take(&mut open.row)));
    }
    Ok(closed)
}

struct Scanned {
    name: Option<String>,
    base_mva: Option<(usize, f64)>,
    tables: HashMap<String, Table>,
}

/// Splits the source into `mpc.<name> = <value>` statements.
fn scan(text: &str) -> Result<Scanned, ParseError> {
    let mut name = None;
    let mut base_mva = None;
    let mut tables: HashMap<String, Table> = HashMap::new();
    let mut open: Option<OpenMatrix> = None;
    let mut skipping_cell = false;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if skipping_cell {
            skipping_cell = !line.contains('}');
            continue;
        }
        if let Some(mut m) = open.take() {
            let table = tables.entry(m.field.clone()).or_default();
            if !feed_matrix(&mut m, line, lineno, table)? {
                open = Some(m);
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, n)) = rest.split_once('=') {
                name = Some(n.trim().trim_end_matches(';').to_string());
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some((field, value)) = rest.split_once('=') else {
            return Err(malformed(lineno, "expected `mpc.<field> = <value>`"));
        };
        let field = field.trim().to_string();
        let value = value.trim();
        if value.starts_with('{') {
            skipping_cell = !value.contains('}');
        } else if let Some(inner) = value.strip_prefix('[') {
            let mut m = OpenMatrix {
                field: field.clone(),
                row: Vec::new(),
                row_line: lineno,
            };
            let table = tables.entry(field).or_default();
            *table = Table::default();
            if !feed_matrix(&mut m, inner, lineno, table)? {
                open = Some(m);
            }
        } else if field == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            base_mva = Some((lineno, parse_number(v, lineno)?));
        }
    }
    if let Some(m) = open {
        return Err(malformed(m.row_line, format!("matrix `mpc.{}` is never closed", m.field)));
    }
    Ok(Scanned {
        name,
        base_mva,
        tables,
    })
}

fn check_width(table: &Table, min: usize, what: &str) -> Result<(), ParseError> {
    for (line, row) in &table.rows {
        if row.len() < min {
            return Err(malformed(
                *line,
                format!("{what} row has {} columns, expected at least {min}", row.len()),
            ));
        }
    }
    Ok(())
}

fn as_id(v: f64, line: usize, what: &str) -> Result<u32, ParseError> {
    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
        return Err(malformed(line, format!("{what} `{v}` is not a positive integer")));
    }
    Ok(v as u32)
}

pub fn parse_case(text: &str) -> Result<GridCase, ParseError> {
    let Scanned {
        name,
        base_mva,
        mut tables,
    } = scan(text)?;
    let (mva_line, base_mva) = base_mva.ok_or(ParseError::Missing("baseMVA"))?;
    if !(base_mva > 0.0 && base_mva.is_finite()) {
        return Err(malformed(mva_line, "baseMVA must be positive"));
    }
    let mut take = |key: &'static str| tables.remove(key).ok_or(ParseError::Missing(key));
    let bus_t = take("bus")?;
    let gen_t = take("gen")?;
    let branch_t = take("branch")?;
    let cost_t = take("gencost")?;
    check_width(&bus_t, BUS_COLS, "bus")?;
    check_width(&gen_t, GEN_COLS, "gen")?;
    check_width(&branch_t, BRANCH_COLS, "branch")?;
    check_width(&cost_t, 4, "gencost")?;

    let mut buses = Vec::with_capacity(bus_t.rows.len());
    for (line, row) in &bus_t.rows {
        let id = as_id(row[0], *line, "bus id")?;
        let kind = match row[1] as i64 {
            1 => BusKind::Load,
            2 => BusKind::GeneratorCapable,
            3 => BusKind::Reference,
            4 => {
                return Err(ParseError::Unsupported {
                    line: *line,
                    feature: "isolated bus (type 4)".into(),
                })
            }
            other => return Err(malformed(*line, format!("unknown bus type {other}"))),
        };
        buses.push(Bus {
            id,
            kind,
            base_demand_mw: row[2],
        });
    }
    buses.sort_by_key(|b| b.id);
    let refs = buses.iter().filter(|b| b.kind == BusKind::Reference).count();
    if refs != 1 {
        return Err(ParseError::Validation(format!(
            "expected exactly one reference bus, found {refs}"
        )));
    }

    if cost_t.rows.len() < gen_t.rows.len() {
        return Err(malformed(
            cost_t.rows.last().map(|r| r.0).unwrap_or(1),
            format!(
                "gencost has {} rows for {} generators",
                cost_t.rows.len(),
                gen_t.rows.len()
            ),
        ));
    }
    let mut generators = Vec::with_capacity(gen_t.rows.len());
    for ((line, row), (cline, cost)) in gen_t.rows.iter().zip(&cost_t.rows) {
        let (c2, c1, c0) = polynomial_cost(cost, *cline)?;
        generators.push(Generator {
            at_bus: as_id(row[0], *line, "generator bus")?,
            p_min_mw: row[9],
            p_max_mw: row[8],
            cost_c2: c2,
            cost_c1: c1,
            cost_c0: c0,
            in_service: row[7] > 0.0,
        });
    }

    let mut branches = Vec::with_capacity(branch_t.rows.len());
    for (line, row) in &branch_t.rows {
        branches.push(Branch {
            from_bus: as_id(row[0], *line, "branch from bus")?,
            to_bus: as_id(row[1], *line, "branch to bus")?,
            reactance_pu: row[3],
            rate_a_mw: row[5],
            in_service: row[10] > 0.0,
        });
    }

    Ok(GridCase {
        name: name.unwrap_or_else(|| "case".to_string()),
        base_mva,
        buses,
        generators,
        branches,
    })
}

/// Decodes a `gencost` row into `(c2, c1, c0)`.
fn polynomial_cost(row: &[f64], line: usize) -> Result<(f64, f64, f64), ParseError> {
    match row[0] as i64 {
        1 => {
            return Err(ParseError::Unsupported {
                line,
                feature: "piecewise-linear generator cost (model 1)".into(),
            })
        }
        2 => {}
        other => return Err(malformed(line, format!("unknown cost model {other}"))),
    }
    let n = row[3];
    if n.fract() != 0.0 || n < 0.0 {
        return Err(malformed(line, format!("invalid coefficient count {n}")));
    }
    let n = n as usize;
    if row.len() < 4 + n {
        return Err(malformed(line, format!("gencost row declares {n} coefficients but has {}", row.len() - 4)));
    }
    let coeffs = &row[4..4 + n];
    // Highest order first; anything above quadratic must be zero.
    let (high, low) = coeffs.split_at(n.saturating_sub(3));
    if high.iter().any(|c| *c != 0.0) {
        return Err(ParseError::Unsupported {
            line,
            feature: format!("polynomial cost of degree {}", n - 1),
        });
    }
    let mut c = [0.0; 3];
    for (k, v) in low.iter().rev().enumerate() {
        c[k] = *v;
    }
    Ok((c[2], c[1], c[0]))
}

/// Serializes the modelled fields back into MATPOWER syntax. AC columns are
/// filled with neutral defaults.
pub fn write_case(grid: &GridCase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", grid.name);
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", grid.base_mva);
    let _ = writeln!(out, "\n%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in &grid.buses {
        let kind = match b.kind {
            BusKind::Load => 1,
            BusKind::GeneratorCapable => 2,
            BusKind::Reference => 3,
        };
        let _ = writeln!(out, "\t{}\t{}\t{}\t0\t0\t0\t1\t1\t0\t1\t1\t1.1\t0.9;", b.id, kind, b.base_demand_mw);
    }
    let _ = writeln!(out, "];\n\n%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &grid.generators {
        let _ = writeln!(
            out,
            "\t{}\t0\t0\t0\t0\t1\t{}\t{}\t{}\t{};",
            g.at_bus,
            grid.base_mva,
            u8::from(g.in_service),
            g.p_max_mw,
            g.p_min_mw
        );
    }
    let _ = writeln!(out, "];\n\n%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax");
    let _ = writeln!(out, "mpc.branch = [");
    for br in &grid.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t0\t{}\t0\t{}\t{}\t{}\t0\t0\t{}\t-360\t360;",
            br.from_bus,
            br.to_bus,
            br.reactance_pu,
            br.rate_a_mw,
            br.rate_a_mw,
            br.rate_a_mw,
            u8::from(br.in_service)
        );
    }
    let _ = writeln!(out, "];\n\n%% 2 startup shutdown n c2 c1 c0");
    let _ = writeln!(out, "mpc.gencost = [");
    for g in &grid.generators {
        let _ = writeln!(out, "\t2\t0\t0\t3\t{}\t{}\t{};", g.cost_c2, g.cost_c1, g.cost_c0);
    }
    let _ = writeln!(out, "];");
    out
}
