//! Reader and writer for the MATPOWER version 2 case format.
//!
//! Only the `bus`, `gen` and `branch` matrices and `baseMVA` are consumed.
//! `gencost` rows are accepted but ignored: every generator bus gets the
//! uniform linear cost, which the sidecar may override.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{
    Branch, Bus, BusType, Generator, LinearCost, RawCase, DEFAULT_COST_P, DEFAULT_COST_Q,
};
use crate::{Error, Result};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

struct Matrix {
    start_line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

enum State {
    Top,
    Matrix { name: String, matrix: Matrix },
    Cell,
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' => in_quote = !in_quote,
            '%' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    match tok {
        "Inf" | "inf" | "+Inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| syntax(line, format!("invalid number '{tok}'"))),
    }
}

/// Feeds matrix body text into `matrix`; returns the text after `]` if the
/// matrix closes on this line.
fn consume_matrix_text<'a>(
    text: &'a str,
    line: usize,
    matrix: &mut Matrix,
    pending: &mut Vec<f64>,
) -> Result<Option<&'a str>> {
    let (body, rest) = match text.find(']') {
        Some(pos) => (&text[..pos], Some(&text[pos + 1..])),
        None => (text, None),
    };
    for (k, chunk) in body.split(';').enumerate() {
        if k > 0 && !pending.is_empty() {
            matrix.rows.push((line, std::mem::take(pending)));
        }
        for tok in chunk
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            pending.push(parse_number(tok, line)?);
        }
    }
    // A newline also terminates a row.
    if !pending.is_empty() {
        matrix.rows.push((line, std::mem::take(pending)));
    }
    Ok(rest)
}

/// Parses a MATPOWER version 2 case body.
pub fn parse_matpower(text: &str) -> Result<RawCase> {
    let mut state = State::Top;
    let mut matrices: BTreeMap<String, Matrix> = BTreeMap::new();
    let mut base_mva: Option<f64> = None;
    let mut pending = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = strip_comment(raw).trim();

        match &mut state {
            State::Cell => {
                if content.contains('}') {
                    state = State::Top;
                }
                continue;
            }
            State::Matrix { name, matrix } => {
                if let Some(rest) = consume_matrix_text(content, line, matrix, &mut pending)? {
                    let rest = rest.trim();
                    if !(rest.is_empty() || rest == ";") {
                        return Err(syntax(line, format!("unexpected '{rest}' after ']'")));
                    }
                    let name = std::mem::take(name);
                    let State::Matrix { matrix, .. } = std::mem::replace(&mut state, State::Top)
                    else {
                        unreachable!()
                    };
                    matrices.insert(name, matrix);
                }
                continue;
            }
            State::Top => {}
        }

        if content.is_empty() || content.starts_with("function") {
            continue;
        }
        let Some(assign) = content.strip_prefix("mpc.") else {
            return Err(syntax(line, format!("unexpected statement '{content}'")));
        };
        let Some((name, value)) = assign.split_once('=') else {
            return Err(syntax(line, "expected 'mpc.<field> = <value>'"));
        };
        let name = name.trim();
        let value = value.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(syntax(line, format!("invalid field name '{name}'")));
        }

        if let Some(body) = value.strip_prefix('[') {
            let mut matrix = Matrix {
                start_line: line,
                rows: Vec::new(),
            };
            match consume_matrix_text(body, line, &mut matrix, &mut pending)? {
                Some(rest) => {
                    let rest = rest.trim();
                    if !(rest.is_empty() || rest == ";") {
                        return Err(syntax(line, format!("unexpected '{rest}' after ']'")));
                    }
                    matrices.insert(name.to_string(), matrix);
                }
                None => {
                    state = State::Matrix {
                        name: name.to_string(),
                        matrix,
                    }
                }
            }
        } else if value.starts_with('{') {
            if !value.contains('}') {
                state = State::Cell;
            }
        } else {
            let value = value
                .strip_suffix(';')
                .ok_or_else(|| syntax(line, "missing ';'"))?
                .trim();
            match name {
                "baseMVA" => base_mva = Some(parse_number(value, line)?),
                "version" => {
                    let v = value.trim_matches('\'').trim_matches('"');
                    if v != "2" {
                        return Err(syntax(line, format!("unsupported case version '{v}'")));
                    }
                }
                _ => {}
            }
        }
    }

    let eof = last_line + 1;
    match state {
        State::Top => {}
        State::Matrix { name, matrix } => {
            return Err(syntax(
                matrix.start_line,
                format!("matrix mpc.{name} is not closed"),
            ))
        }
        State::Cell => return Err(syntax(eof, "cell array is not closed")),
    }

    let base_mva = base_mva.ok_or_else(|| syntax(eof, "missing mpc.baseMVA"))?;
    let bus_m = matrices
        .remove("bus")
        .ok_or_else(|| syntax(eof, "missing mpc.bus"))?;
    let gen_m = matrices
        .remove("gen")
        .ok_or_else(|| syntax(eof, "missing mpc.gen"))?;
    let branch_m = matrices
        .remove("branch")
        .ok_or_else(|| syntax(eof, "missing mpc.branch"))?;

    let buses = rows_of(&bus_m, "bus", BUS_COLS)?
        .map(|(line, r)| {
            let kind = BusType::from_code(as_int(r[1], line)?)
                .ok_or_else(|| syntax(line, format!("invalid bus type {}", r[1])))?;
            Ok(Bus {
                id: as_id(r[0], line)?,
                kind,
                p_load: r[2],
                q_load: r[3],
                shunt_g: r[4],
                shunt_b: r[5],
                v_max: r[11],
                v_min: r[12],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let gens = rows_of(&gen_m, "gen", GEN_COLS)?
        .map(|(line, r)| {
            Ok(Generator {
                bus: as_id(r[0], line)?,
                q_max: r[3],
                q_min: r[4],
                status: r[7] > 0.0,
                p_max: r[8],
                p_min: r[9],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let branches = rows_of(&branch_m, "branch", BRANCH_COLS)?
        .map(|(line, r)| {
            if r[9] != 0.0 {
                return Err(syntax(
                    line,
                    format!("phase-shifting transformers are not supported (angle {})", r[9]),
                ));
            }
            Ok(Branch {
                from: as_id(r[0], line)?,
                to: as_id(r[1], line)?,
                r: r[2],
                x: r[3],
                b_charging: r[4],
                rate: r[5],
                tap: r[8],
                status: r[10] > 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut costs: Vec<LinearCost> = Vec::new();
    for g in gens.iter().filter(|g| g.status) {
        if !costs.iter().any(|c| c.bus == g.bus) {
            costs.push(LinearCost {
                bus: g.bus,
                c_p: DEFAULT_COST_P,
                c_q: DEFAULT_COST_Q,
            });
        }
    }

    let case = RawCase {
        base_mva,
        buses,
        branches,
        gens,
        costs,
    };
    case.validate_topology()?;
    Ok(case)
}

fn rows_of<'a>(
    m: &'a Matrix,
    name: &str,
    min_cols: usize,
) -> Result<impl Iterator<Item = (usize, &'a [f64])>> {
    for (line, row) in &m.rows {
        if row.len() < min_cols {
            return Err(syntax(
                *line,
                format!(
                    "mpc.{name} row has {} columns, expected at least {min_cols}",
                    row.len()
                ),
            ));
        }
    }
    Ok(m.rows.iter().map(|(l, r)| (*l, r.as_slice())))
}

fn as_int(v: f64, line: usize) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(syntax(line, format!("expected an integer, got {v}")));
    }
    Ok(v as i64)
}

fn as_id(v: f64, line: usize) -> Result<u32> {
    let i = as_int(v, line)?;
    u32::try_from(i)
        .ok()
        .filter(|&id| id > 0)
        .ok_or_else(|| syntax(line, format!("invalid bus id {v}")))
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "Inf".into()
    } else if v == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        format!("{v}")
    }
}

/// Serializes a case back to MATPOWER text. Linear costs are not written.
pub fn write_matpower(case: &RawCase) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = case_export");
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {};", num(case.base_mva));
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin"
    );
    let _ = writeln!(s, "mpc.bus = [");
    for b in &case.buses {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t1\t0\t0\t1\t{}\t{};",
            b.id,
            b.kind.code(),
            num(b.p_load),
            num(b.q_load),
            num(b.shunt_g),
            num(b.shunt_b),
            num(b.v_max),
            num(b.v_min)
        );
    }
    let _ = writeln!(s, "];\n");
    let _ = writeln!(
        s,
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin"
    );
    let _ = writeln!(s, "mpc.gen = [");
    for g in &case.gens {
        let _ = writeln!(
            s,
            "\t{}\t0\t0\t{}\t{}\t1\t{}\t{}\t{}\t{};",
            g.bus,
            num(g.q_max),
            num(g.q_min),
            num(case.base_mva),
            u8::from(g.status),
            num(g.p_max),
            num(g.p_min)
        );
    }
    let _ = writeln!(s, "];\n");
    let _ = writeln!(
        s,
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax"
    );
    let _ = writeln!(s, "mpc.branch = [");
    for br in &case.branches {
        let rate = num(br.rate);
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{rate}\t{rate}\t{rate}\t{}\t0\t{}\t-360\t360;",
            br.from,
            br.to,
            num(br.r),
            num(br.x),
            num(br.b_charging),
            num(br.tap),
            u8::from(br.status)
        );
    }
    let _ = writeln!(s, "];");
    s
}
