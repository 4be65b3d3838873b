//! MATPOWER-style case files.
//!
//! Only the `bus`, `gen` and `branch` matrices are read. Every other block
//! (`gencost`, `bus_name`, `areas`, ...) is skipped so that files straight out
//! of public benchmark libraries parse unchanged.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::grid::{Branch, Bus, BusType, Complex, Grid};

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("malformed {table} table at line {line}: {reason}")]
    MalformedTable {
        table: String,
        line: usize,
        reason: String,
    },
    #[error("{table} row {row} references unknown bus {bus}")]
    DanglingReference { table: String, row: usize, bus: i64 },
    #[error("case has no slack bus")]
    NoSlack,
    #[error("case has {0} slack buses, exactly one is required")]
    MultipleSlack(usize),
    #[error("grid is not connected over in-service branches ({islands} islands)")]
    Disconnected { islands: usize },
    #[error("cannot serialise non-finite value in {0}")]
    Serialization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BusKind {
    Pq = 1,
    Pv = 2,
    Slack = 3,
}

impl BusKind {
    fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            1 if code == 1.0 => Some(Self::Pq),
            2 if code == 2.0 => Some(Self::Pv),
            3 if code == 3.0 => Some(Self::Slack),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawBus {
    pub id: i64,
    pub kind: BusKind,
    /// MW
    pub p_demand: f64,
    /// MVAr
    pub q_demand: f64,
    /// p.u.
    pub v_set: f64,
    /// degrees
    pub v_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawGen {
    pub bus_id: i64,
    pub p_gen: f64,
    pub q_gen: f64,
    pub v_set: f64,
    pub status: i64,
}

impl RawGen {
    pub fn in_service(&self) -> bool {
        self.status > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawBranch {
    pub from: i64,
    pub to: i64,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap: f64,
    pub status: i64,
}

impl RawBranch {
    pub fn in_service(&self) -> bool {
        self.status > 0
    }
}

/// Tabular case as read from disk, still in MW/MVAr/degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<RawBus>,
    pub gens: Vec<RawGen>,
    pub branches: Vec<RawBranch>,
}

// Column positions in the MATPOWER matrices.
const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

struct Block {
    start_line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

fn malformed(table: &str, line: usize, reason: impl Into<String>) -> CaseError {
    CaseError::MalformedTable {
        table: table.to_string(),
        line,
        reason: reason.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parse MATPOWER case text.
pub fn parse_case(text: &str) -> Result<RawCase, CaseError> {
    let mut name = String::new();
    let mut base_mva: Option<f64> = None;
    let mut blocks: HashMap<String, Block> = HashMap::new();

    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = strip_comment(lines[i]).trim();
        i += 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, fname)) = rest.split_once('=') {
                name = fname.trim().trim_end_matches(';').trim().to_string();
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some((field, value)) = rest.split_once('=') else {
            continue;
        };
        let field = field.trim();
        let value = value.trim();
        if field == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            base_mva = Some(
                v.parse()
                    .map_err(|_| malformed("baseMVA", lineno, format!("bad number {v:?}")))?,
            );
            continue;
        }
        let opener = value.chars().next();
        if !matches!(opener, Some('[') | Some('{')) {
            continue;
        }
        let closer = if opener == Some('[') { ']' } else { '}' };
        let wanted = matches!(field, "bus" | "gen" | "branch") && closer == ']';

        // Gather the body up to the closing bracket, remembering source lines.
        let mut body: Vec<(usize, String)> = Vec::new();
        let mut first = value[1..].to_string();
        let mut closed = false;
        if let Some(pos) = first.find(closer) {
            first.truncate(pos);
            closed = true;
        }
        body.push((lineno, first));
        while !closed && i < lines.len() {
            let ln = i + 1;
            let mut l = strip_comment(lines[i]).to_string();
            i += 1;
            if let Some(pos) = l.find(closer) {
                l.truncate(pos);
                closed = true;
            }
            body.push((ln, l));
        }
        if !closed {
            return Err(malformed(field, lineno, "unterminated matrix"));
        }
        if !wanted {
            continue;
        }
        let mut rows = Vec::new();
        for (ln, l) in body {
            for chunk in l.split(';') {
                let chunk = chunk.trim();
                if chunk.is_empty() {
                    continue;
                }
                let vals = chunk
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|t| !t.is_empty())
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| malformed(field, ln, format!("bad number {t:?}")))
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                rows.push((ln, vals));
            }
        }
        blocks.insert(
            field.to_string(),
            Block {
                start_line: lineno,
                rows,
            },
        );
    }

    let base_mva = base_mva.ok_or_else(|| malformed("baseMVA", 0, "missing"))?;
    if !(base_mva > 0.0) {
        return Err(malformed("baseMVA", 0, "must be positive"));
    }
    let take = |table: &str| -> Result<Block, CaseError> {
        blocks
            .get(table)
            .map(|b| Block {
                start_line: b.start_line,
                rows: b.rows.clone(),
            })
            .ok_or_else(|| malformed(table, 0, "table missing"))
    };
    let bus_block = take("bus")?;
    let gen_block = take("gen")?;
    let branch_block = take("branch")?;

    let mut buses = Vec::with_capacity(bus_block.rows.len());
    for (ln, row) in &bus_block.rows {
        if row.len() < 9 {
            return Err(malformed("bus", *ln, format!("expected >= 9 columns, got {}", row.len())));
        }
        let kind = BusKind::from_code(row[1])
            .ok_or_else(|| malformed("bus", *ln, format!("unsupported bus type {}", row[1])))?;
        buses.push(RawBus {
            id: row[0] as i64,
            kind,
            p_demand: row[2],
            q_demand: row[3],
            v_set: row[7],
            v_angle: row[8],
        });
    }
    let mut ids = HashSet::new();
    for (b, (ln, _)) in buses.iter().zip(&bus_block.rows) {
        if !ids.insert(b.id) {
            return Err(malformed("bus", *ln, format!("duplicate bus id {}", b.id)));
        }
    }

    let mut gens = Vec::with_capacity(gen_block.rows.len());
    for (k, (ln, row)) in gen_block.rows.iter().enumerate() {
        if row.len() < 8 {
            return Err(malformed("gen", *ln, format!("expected >= 8 columns, got {}", row.len())));
        }
        let bus_id = row[0] as i64;
        if !ids.contains(&bus_id) {
            return Err(CaseError::DanglingReference {
                table: "gen".into(),
                row: k,
                bus: bus_id,
            });
        }
        gens.push(RawGen {
            bus_id,
            p_gen: row[1],
            q_gen: row[2],
            v_set: row[5],
            status: row[7] as i64,
        });
    }

    let mut branches = Vec::with_capacity(branch_block.rows.len());
    for (k, (ln, row)) in branch_block.rows.iter().enumerate() {
        if row.len() < BRANCH_COLS {
            return Err(malformed(
                "branch",
                *ln,
                format!("expected >= {BRANCH_COLS} columns, got {}", row.len()),
            ));
        }
        let (from, to) = (row[0] as i64, row[1] as i64);
        for bus in [from, to] {
            if !ids.contains(&bus) {
                return Err(CaseError::DanglingReference {
                    table: "branch".into(),
                    row: k,
                    bus,
                });
            }
        }
        let br = RawBranch {
            from,
            to,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            tap: row[8],
            status: row[10] as i64,
        };
        if br.in_service() && br.r == 0.0 && br.x == 0.0 {
            return Err(malformed("branch", *ln, "in-service branch with zero impedance"));
        }
        branches.push(br);
    }

    if !buses.iter().any(|b| b.kind == BusKind::Slack) {
        return Err(CaseError::NoSlack);
    }

    Ok(RawCase {
        name,
        base_mva,
        buses,
        gens,
        branches,
    })
}

fn check_finite(what: &str, vals: &[f64]) -> Result<(), CaseError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CaseError::Serialization(what.to_string()))
    }
}

/// Write a case back out in MATPOWER syntax. Columns not carried by
/// [`RawCase`] are written as neutral values.
pub fn serialize_case(case: &RawCase) -> Result<String, CaseError> {
    check_finite("baseMVA", &[case.base_mva])?;
    let name = if case.name.is_empty() { "case" } else { &case.name };
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {name}");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", case.base_mva);

    let _ = writeln!(out, "\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    out.push_str("mpc.bus = [\n");
    for b in &case.buses {
        check_finite("bus", &[b.p_demand, b.q_demand, b.v_set, b.v_angle])?;
        let mut cols = vec![
            b.id.to_string(),
            (b.kind as i64).to_string(),
            b.p_demand.to_string(),
            b.q_demand.to_string(),
            "0".into(),
            "0".into(),
            "1".into(),
            b.v_set.to_string(),
            b.v_angle.to_string(),
        ];
        cols.extend(["0", "1", "1.1", "0.9"].map(String::from));
        debug_assert_eq!(cols.len(), BUS_COLS);
        let _ = writeln!(out, "\t{};", cols.join("\t"));
    }
    out.push_str("];\n");

    let _ = writeln!(out, "\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    out.push_str("mpc.gen = [\n");
    for g in &case.gens {
        check_finite("gen", &[g.p_gen, g.q_gen, g.v_set])?;
        let cols = [
            g.bus_id.to_string(),
            g.p_gen.to_string(),
            g.q_gen.to_string(),
            "0".into(),
            "0".into(),
            g.v_set.to_string(),
            case.base_mva.to_string(),
            g.status.to_string(),
            "0".into(),
            "0".into(),
        ];
        debug_assert_eq!(cols.len(), GEN_COLS);
        let _ = writeln!(out, "\t{};", cols.join("\t"));
    }
    out.push_str("];\n");

    let _ = writeln!(out, "\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus");
    out.push_str("mpc.branch = [\n");
    for br in &case.branches {
        check_finite("branch", &[br.r, br.x, br.b_charging, br.tap])?;
        let cols = [
            br.from.to_string(),
            br.to.to_string(),
            br.r.to_string(),
            br.x.to_string(),
            br.b_charging.to_string(),
            "0".into(),
            "0".into(),
            "0".into(),
            br.tap.to_string(),
            "0".into(),
            br.status.to_string(),
        ];
        let _ = writeln!(out, "\t{};", cols.join("\t"));
    }
    out.push_str("];\n");
    Ok(out)
}

/// Reduce a raw case to the series-impedance bus/branch model in per-unit.
///
/// Line charging, shunts and tap ratios are discarded. Generation and demand
/// at each bus are kept separately on [`Bus`] so load perturbations can act on
/// demand alone; the net injection is `gen - demand`. A PV bus without an
/// in-service generator becomes a load bus.
pub fn reduce_case(case: &RawCase) -> Result<Grid, CaseError> {
    let base = case.base_mva;
    let index: HashMap<i64, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();

    let n_slack = case.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    match n_slack {
        0 => return Err(CaseError::NoSlack),
        1 => {}
        n => return Err(CaseError::MultipleSlack(n)),
    }

    let mut buses: Vec<Bus> = case
        .buses
        .iter()
        .map(|b| Bus {
            kind: match b.kind {
                BusKind::Pq => BusType::Load,
                BusKind::Pv => BusType::Generator,
                BusKind::Slack => BusType::Slack,
            },
            p_gen: 0.0,
            q_gen: 0.0,
            p_load: b.p_demand / base,
            q_load: b.q_demand / base,
            v_set: b.v_set,
            angle_set: b.v_angle.to_radians(),
        })
        .collect();

    let mut has_gen = vec![false; buses.len()];
    for g in case.gens.iter().filter(|g| g.in_service()) {
        let i = index[&g.bus_id];
        let bus = &mut buses[i];
        bus.p_gen += g.p_gen / base;
        bus.q_gen += g.q_gen / base;
        if !has_gen[i] {
            // First in-service unit sets the regulated voltage.
            bus.v_set = g.v_set;
            has_gen[i] = true;
        }
    }
    for (bus, &g) in buses.iter_mut().zip(&has_gen) {
        match bus.kind {
            BusType::Generator if !g => bus.kind = BusType::Load,
            BusType::Slack if !g => return Err(CaseError::NoSlack),
            BusType::Load => bus.v_set = 1.0,
            _ => {}
        }
    }

    let branches: Vec<Branch> = case
        .branches
        .iter()
        .filter(|b| b.in_service())
        .map(|b| Branch {
            from: index[&b.from],
            to: index[&b.to],
            z: Complex::new(b.r, b.x),
        })
        .collect();

    let grid = Grid {
        name: case.name.clone(),
        base_mva: base,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        buses,
        branches,
    };
    let islands = grid.island_count();
    if islands != 1 {
        return Err(CaseError::Disconnected { islands });
    }
    Ok(grid)
}

/// Parse and reduce in one step.
pub fn load_grid(text: &str) -> Result<(RawCase, Grid), CaseError> {
    let raw = parse_case(text)?;
    let grid = reduce_case(&raw)?;
    Ok((raw, grid))
}
