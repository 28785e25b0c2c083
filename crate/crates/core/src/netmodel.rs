//! Grid case parsing, validation, and the immutable network model.
//!
//! Two input formats are supported: a documented subset of the MATPOWER
//! case layout (`mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch` tables)
//! and a native JSON schema that round-trips [`GridCase`] exactly. All
//! quantities are converted to per-unit on `base_mva` at parse time and
//! bus ids are normalized to 0-based contiguous indices; the original ids
//! are retained in `external_ids`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Normalized 0-based index.
    pub id: usize,
    pub kind: BusKind,
    /// Voltage magnitude setpoint (p.u.), meaningful for PV/slack.
    pub v_set: f64,
    /// Nominal active load, p.u. on base_mva.
    pub p_load: f64,
    /// Nominal reactive load, p.u. on base_mva.
    pub q_load: f64,
    /// Shunt conductance, p.u.
    pub shunt_g: f64,
    /// Shunt susceptance, p.u.
    pub shunt_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series resistance, p.u.
    pub r: f64,
    /// Series reactance, p.u. Never zero.
    pub x: f64,
    /// Total line charging susceptance, p.u.
    pub b: f64,
    /// Off-nominal turns ratio on the from side; 1.0 for plain lines.
    pub tap: f64,
    /// Normal MW rating, p.u. on base_mva. Always > 0.
    pub rating_normal: f64,
    pub in_service: bool,
}

impl Branch {
    /// True for a transformer record (off-nominal tap).
    pub fn is_transformer(&self) -> bool {
        self.tap != 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// Active dispatch, p.u.
    pub p_set: f64,
    /// Voltage setpoint, p.u.
    pub v_set: f64,
    /// Reactive limits, p.u.
    pub q_min: f64,
    pub q_max: f64,
    pub in_service: bool,
}

/// Immutable network description shared by all downstream modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    /// Original bus ids, indexed by normalized id.
    pub external_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    MatpowerSubset,
    NativeJson,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("semantic error in {element}: {message}")]
    Semantic { element: String, message: String },
}

impl CaseError {
    fn semantic(element: impl Into<String>, message: impl Into<String>) -> Self {
        CaseError::Semantic {
            element: element.into(),
            message: message.into(),
        }
    }
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Index of the slack bus. Construction guarantees exactly one.
    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    /// In-service generators attached to `bus`.
    pub fn gens_at(&self, bus: usize) -> impl Iterator<Item = &Generator> {
        self.generators
            .iter()
            .filter(move |g| g.in_service && g.bus == bus)
    }

    /// Total nominal load (p, q) in p.u.
    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }
}

/// Parse case text in the declared format into a validated [`GridCase`].
pub fn parse_case(text: &str, format: CaseFormat) -> Result<GridCase, CaseError> {
    let case = match format {
        CaseFormat::MatpowerSubset => parse_matpower(text)?,
        CaseFormat::NativeJson => parse_native(text)?,
    };
    validate(&case)?;
    Ok(case)
}

/// Serialize to the native JSON schema. `parse_case(serialize_native(c),
/// NativeJson)` reproduces `c` exactly.
pub fn serialize_native(case: &GridCase) -> String {
    serde_json::to_string_pretty(case).expect("GridCase serializes")
}

fn parse_native(text: &str) -> Result<GridCase, CaseError> {
    serde_json::from_str(text).map_err(|e| CaseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Partition buses into connected components over in-service branches.
/// A singleton list means the case is connected.
pub fn validate_connectivity(case: &GridCase) -> Vec<Vec<usize>> {
    let n = case.buses.len();
    let mut adj = vec![Vec::new(); n];
    for br in case.branches.iter().filter(|b| b.in_service) {
        adj[br.from_bus].push(br.to_bus);
        adj[br.to_bus].push(br.from_bus);
    }
    let mut seen = vec![false; n];
    let mut islands = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut island = vec![start];
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    island.push(v);
                    queue.push_back(v);
                }
            }
        }
        island.sort_unstable();
        islands.push(island);
    }
    islands
}

fn validate(case: &GridCase) -> Result<(), CaseError> {
    let n = case.buses.len();
    if n == 0 {
        return Err(CaseError::semantic("case", "no buses"));
    }
    if case.base_mva <= 0.0 {
        return Err(CaseError::semantic("case", "base_mva must be positive"));
    }
    let slack_count = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .count();
    if slack_count != 1 {
        return Err(CaseError::semantic(
            "case",
            format!("expected exactly one slack bus, found {slack_count}"),
        ));
    }
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.id != i {
            return Err(CaseError::semantic(
                format!("bus {i}"),
                "ids must be 0-based contiguous after normalization",
            ));
        }
        if matches!(bus.kind, BusKind::Slack | BusKind::Pv) && bus.v_set <= 0.0 {
            return Err(CaseError::semantic(
                format!("bus {}", case.external_ids[i]),
                "v_set must be positive for PV/slack buses",
            ));
        }
    }
    if case.external_ids.len() != n {
        return Err(CaseError::semantic("case", "external id map length mismatch"));
    }
    for (i, br) in case.branches.iter().enumerate() {
        let elem = format!("branch {i}");
        if br.from_bus >= n || br.to_bus >= n {
            let missing = if br.from_bus >= n { br.from_bus } else { br.to_bus };
            return Err(CaseError::semantic(elem, format!("references missing bus {missing}")));
        }
        if br.from_bus == br.to_bus {
            return Err(CaseError::semantic(elem, "from_bus equals to_bus"));
        }
        if br.x == 0.0 {
            return Err(CaseError::semantic(elem, "zero reactance"));
        }
        if br.rating_normal <= 0.0 {
            return Err(CaseError::semantic(elem, "rating_normal must be positive"));
        }
        if br.tap <= 0.0 {
            return Err(CaseError::semantic(elem, "tap must be positive"));
        }
    }
    for (i, g) in case.generators.iter().enumerate() {
        let elem = format!("generator {i}");
        if g.bus >= n {
            return Err(CaseError::semantic(elem, format!("references missing bus {}", g.bus)));
        }
        if g.q_min > g.q_max {
            return Err(CaseError::semantic(elem, "q_min exceeds q_max"));
        }
    }
    let islands = validate_connectivity(case);
    if islands.len() != 1 {
        return Err(CaseError::semantic(
            "case",
            format!("graph over in-service branches has {} islands", islands.len()),
        ));
    }
    Ok(())
}

// --- MATPOWER subset parser ------------------------------------------------

struct RawRow {
    line: usize,
    values: Vec<f64>,
}

/// Extract `mpc.<name> = [ rows ];` into numeric rows with line tracking.
fn extract_table(text: &str, name: &str) -> Result<Vec<RawRow>, CaseError> {
    let marker = format!("mpc.{name}");
    let mut rows = Vec::new();
    let mut in_table = false;
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw_line.split('%').next().unwrap_or("");
        if !in_table {
            let t = content.trim_start();
            if t.starts_with(&marker) {
                let rest = t[marker.len()..].trim_start();
                let rest = rest.strip_prefix('=').ok_or(CaseError::Syntax {
                    line,
                    column: 1,
                    message: format!("expected '=' after {marker}"),
                })?;
                let rest = rest.trim_start();
                if let Some(body) = rest.strip_prefix('[') {
                    in_table = true;
                    parse_table_rows(body, line, &mut rows, &mut in_table)?;
                } else {
                    return Err(CaseError::Syntax {
                        line,
                        column: 1,
                        message: format!("expected '[' to open {marker} table"),
                    });
                }
            }
            continue;
        }
        parse_table_rows(content, line, &mut rows, &mut in_table)?;
    }
    if in_table {
        return Err(CaseError::Syntax {
            line: text.lines().count(),
            column: 1,
            message: format!("unterminated table mpc.{name}"),
        });
    }
    if rows.is_empty() && name != "gen" {
        return Err(CaseError::Syntax {
            line: 1,
            column: 1,
            message: format!("missing table mpc.{name}"),
        });
    }
    Ok(rows)
}

fn parse_table_rows(
    content: &str,
    line: usize,
    rows: &mut Vec<RawRow>,
    in_table: &mut bool,
) -> Result<(), CaseError> {
    let (body, done) = match content.find(']') {
        Some(pos) => (&content[..pos], true),
        None => (content, false),
    };
    // rows may be ';'-terminated or newline-separated
    for segment in body.split(';') {
        let seg = segment.trim();
        if seg.is_empty() {
            continue;
        }
        let mut values = Vec::new();
        for tok in seg.split_whitespace().flat_map(|t| t.split(',')) {
            if tok.is_empty() {
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| CaseError::Syntax {
                line,
                column: content.find(tok).map_or(1, |c| c + 1),
                message: format!("malformed number '{tok}'"),
            })?;
            values.push(v);
        }
        if !values.is_empty() {
            rows.push(RawRow { line, values });
        }
    }
    if done {
        *in_table = false;
    }
    Ok(())
}

fn extract_scalar(text: &str, name: &str) -> Result<f64, CaseError> {
    let marker = format!("mpc.{name}");
    for (lineno, raw_line) in text.lines().enumerate() {
        let content = raw_line.split('%').next().unwrap_or("").trim();
        if let Some(rest) = content.strip_prefix(&marker) {
            let rest = rest.trim_start();
            if let Some(expr) = rest.strip_prefix('=') {
                let expr = expr.trim().trim_end_matches(';').trim();
                return expr.parse().map_err(|_| CaseError::Syntax {
                    line: lineno + 1,
                    column: 1,
                    message: format!("malformed number '{expr}' for {marker}"),
                });
            }
        }
    }
    Err(CaseError::Syntax {
        line: 1,
        column: 1,
        message: format!("missing scalar mpc.{name}"),
    })
}

fn require_cols(row: &RawRow, want: usize, table: &str) -> Result<(), CaseError> {
    if row.values.len() < want {
        return Err(CaseError::Syntax {
            line: row.line,
            column: 1,
            message: format!(
                "{table} row has {} columns, expected at least {want}",
                row.values.len()
            ),
        });
    }
    Ok(())
}

fn parse_matpower(text: &str) -> Result<GridCase, CaseError> {
    let base_mva = extract_scalar(text, "baseMVA")?;
    if base_mva <= 0.0 {
        return Err(CaseError::semantic("case", "baseMVA must be positive"));
    }
    let bus_rows = extract_table(text, "bus")?;
    let gen_rows = extract_table(text, "gen")?;
    let branch_rows = extract_table(text, "branch")?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut external_ids = Vec::with_capacity(bus_rows.len());
    let mut id_map = std::collections::HashMap::new();
    for row in &bus_rows {
        require_cols(row, 13, "bus")?;
        let ext_id = row.values[0] as u64;
        let idx = buses.len();
        if id_map.insert(ext_id, idx).is_some() {
            return Err(CaseError::semantic(
                format!("bus {ext_id}"),
                "duplicate bus id",
            ));
        }
        let kind = match row.values[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            other => {
                return Err(CaseError::semantic(
                    format!("bus {ext_id}"),
                    format!("unknown bus type {other}"),
                ))
            }
        };
        buses.push(Bus {
            id: idx,
            kind,
            v_set: row.values[7],
            p_load: row.values[2] / base_mva,
            q_load: row.values[3] / base_mva,
            shunt_g: row.values[4] / base_mva,
            shunt_b: row.values[5] / base_mva,
        });
        external_ids.push(ext_id);
    }

    let lookup = |ext: f64, elem: &str| -> Result<usize, CaseError> {
        id_map.get(&(ext as u64)).copied().ok_or_else(|| {
            CaseError::semantic(elem.to_string(), format!("references missing bus {}", ext as u64))
        })
    };

    let mut generators = Vec::with_capacity(gen_rows.len());
    for (i, row) in gen_rows.iter().enumerate() {
        require_cols(row, 10, "gen")?;
        let bus = lookup(row.values[0], &format!("generator {i}"))?;
        generators.push(Generator {
            bus,
            p_set: row.values[1] / base_mva,
            v_set: row.values[5],
            q_min: row.values[4] / base_mva,
            q_max: row.values[3] / base_mva,
            in_service: row.values[7] > 0.0,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (i, row) in branch_rows.iter().enumerate() {
        require_cols(row, 11, "branch")?;
        let elem = format!("branch {i}");
        let from_bus = lookup(row.values[0], &elem)?;
        let to_bus = lookup(row.values[1], &elem)?;
        let ratio = row.values[8];
        branches.push(Branch {
            from_bus,
            to_bus,
            r: row.values[2],
            x: row.values[3],
            b: row.values[4],
            tap: if ratio == 0.0 { 1.0 } else { ratio },
            rating_normal: row.values[5] / base_mva,
            in_service: row.values[10] > 0.0,
        });
    }

    // PV/slack setpoints come from their generator Vg when present.
    for g in &generators {
        if g.in_service {
            buses[g.bus].v_set = g.v_set;
        }
    }
    // A PV bus with no in-service generator cannot hold voltage; demote it.
    for bus in buses.iter_mut() {
        if bus.kind == BusKind::Pv
            && !generators.iter().any(|g| g.in_service && g.bus == bus.id)
        {
            bus.kind = BusKind::Pq;
        }
    }

    Ok(GridCase {
        base_mva,
        buses,
        branches,
        generators,
        external_ids,
    })
}
