//! Plain-text tables with `# key=value` metadata lines, and checkpoints.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::equilibrium::{EquilibriumProfile, ShellLayout};
use crate::error::{GasError, Result};
use crate::gasmodel::Configuration;
use crate::minimizer::TracePoint;
use crate::stats::{CorrelationCurve, RadialHistogram};

/// Numeric table with ordered metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            metadata: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut out = BufWriter::new(out);
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}")?;
        }
        out.flush()?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut metadata = Vec::new();
        let mut body = String::new();
        for line in BufReader::new(input).lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| GasError::Parse(format!("metadata line without '=': {line}")))?;
                metadata.push((k.trim().to_string(), v.trim().to_string()));
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let columns = reader.headers()?.iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| GasError::Parse(format!("{s}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Table { metadata, columns, rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

pub fn profile_table(profile: &EquilibriumProfile, points: usize) -> Result<Table> {
    let meta = profile.metadata()?;
    let mut t = Table::new(&["r", "rho", "rho_q", "q_of_r"])
        .meta("dimension", profile.dimension())
        .meta("support_radius", profile.support_radius())
        .meta("flag", format!("{:?}", profile.flag()))
        .meta("mean_charge", profile.mean_charge())
        .meta("metadata", serde_json::to_string(&meta)?);
    for row in profile.tabulate(points) {
        t.push(vec![row.r, row.rho, row.rho_q, row.q_of_r]);
    }
    Ok(t)
}

pub fn shell_table(layout: &ShellLayout) -> Table {
    let mut t = Table::new(&["charge", "fraction", "inner_radius", "outer_radius", "density"])
        .meta("dimension", layout.dimension)
        .meta("increasing", layout.increasing);
    for s in &layout.shells {
        t.push(vec![s.charge, s.fraction, s.inner_radius, s.outer_radius, s.density]);
    }
    t
}

pub fn trace_table(trace: &[TracePoint]) -> Table {
    let mut t = Table::new(&["step", "energy", "residual", "beta"]);
    for p in trace {
        t.push(vec![p.step as f64, p.energy, p.residual, p.beta]);
    }
    t
}

pub fn histogram_table(h: &RadialHistogram) -> Table {
    let mut t = Table::new(&[
        "r_lo", "r_hi", "r_mid", "rho", "rho_se", "rho_q", "rho_q_se", "mean_q", "mean_q_se", "count",
    ])
    .meta("dimension", h.dimension)
    .meta("replicas", h.replicas)
    .meta("bins", h.bins())
    .meta("empty_bins", format!("{:?}", h.empty_bins));
    let mid = h.centers();
    for b in 0..h.bins() {
        t.push(vec![
            h.edges[b],
            h.edges[b + 1],
            mid[b],
            h.density[b],
            h.density_se[b],
            h.charge_density[b],
            h.charge_density_se[b],
            h.mean_charge[b],
            h.mean_charge_se[b],
            h.counts[b] as f64,
        ]);
    }
    t
}

pub fn correlation_table(c: &CorrelationCurve) -> Table {
    let mut t = Table::new(&["r", "g", "g_se"])
        .meta("r0", c.r0)
        .meta("width", c.width)
        .meta("normalization", c.normalization)
        .meta("references", c.references)
        .meta("replicas", c.replicas);
    for (k, mid) in c.centers().into_iter().enumerate() {
        t.push(vec![mid, c.values[k], c.standard_errors[k]]);
    }
    t
}

/// Checkpoint as `(q, x_1, …, x_d)` rows.
pub fn configuration_table(config: &Configuration) -> Table {
    let d = config.dimension();
    let mut columns = vec!["q".to_string()];
    columns.extend((1..=d).map(|k| format!("x{k}")));
    let mut t = Table {
        metadata: vec![("dimension".into(), d.to_string()), ("n".into(), config.len().to_string())],
        columns,
        rows: Vec::with_capacity(config.len()),
    };
    for i in 0..config.len() {
        let mut row = vec![config.charges()[i]];
        row.extend_from_slice(config.position(i));
        t.push(row);
    }
    t
}

pub fn configuration_from_table(t: &Table) -> Result<Configuration> {
    let d = t.columns.len().checked_sub(1).filter(|&d| d >= 1).ok_or_else(|| GasError::Parse("checkpoint needs q and coordinates".into()))?;
    if t.columns[0] != "q" {
        return Err(GasError::Parse(format!("first checkpoint column must be q, got {}", t.columns[0])));
    }
    let mut charges = Vec::with_capacity(t.rows.len());
    let mut positions = Vec::with_capacity(t.rows.len() * d);
    for row in &t.rows {
        charges.push(row[0]);
        positions.extend_from_slice(&row[1..]);
    }
    Configuration::new(d, positions, charges)
}

const MAGIC: &[u8; 8] = b"HETGAS01";

/// Binary checkpoint: magic, `n` and `d` as little-endian `u64`, then `n`
/// rows of `(q, x_1, …, x_d)` as little-endian `f64`.
pub fn write_checkpoint(config: &Configuration, out: impl Write) -> Result<()> {
    let mut out = BufWriter::new(out);
    out.write_all(MAGIC)?;
    out.write_all(&(config.len() as u64).to_le_bytes())?;
    out.write_all(&(config.dimension() as u64).to_le_bytes())?;
    for i in 0..config.len() {
        out.write_all(&config.charges()[i].to_le_bytes())?;
        for v in config.position(i) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(input: impl Read) -> Result<Configuration> {
    let mut input = BufReader::new(input);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GasError::Parse("not a checkpoint file".into()));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let d = u64::from_le_bytes(word) as usize;
    let mut charges = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n * d);
    for _ in 0..n {
        input.read_exact(&mut word)?;
        charges.push(f64::from_le_bytes(word));
        for _ in 0..d {
            input.read_exact(&mut word)?;
            positions.push(f64::from_le_bytes(word));
        }
    }
    Configuration::new(d, positions, charges)
}

pub fn save_checkpoint(config: &Configuration, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(config, File::create(path)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Configuration> {
    read_checkpoint(File::open(path)?)
}
