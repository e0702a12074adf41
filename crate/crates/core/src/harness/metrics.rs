//! Per-iteration metrics CSV, the wall-clock sidecar, and the aligned
//! plot-data table built from several metrics files.
//!
//! Wall-clock time lives in `timing.csv` so `metrics.csv` is a pure function
//! of config and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::env::NUM_SLICES;
use crate::error::{Error, Result};
use crate::rl::{ConstraintSpec, IterationStats};
use crate::traffic::Slice;

pub fn header(constraints: &ConstraintSpec) -> Vec<String> {
    let mut h: Vec<String> = ["iteration", "phase", "mode", "reward"]
        .map(String::from)
        .to_vec();
    for c in &constraints.cumulative {
        h.push(format!("j_{}", c.slice));
        h.push(format!("omega_{}", c.slice));
        h.push(format!("cost_violation_{}", c.slice));
    }
    for s in Slice::ALL {
        h.push(format!("latency_{s}"));
    }
    for l in &constraints.latency {
        h.push(format!("epsilon_{}", l.slice));
    }
    h.push("latency_violation_frac".into());
    for s in Slice::ALL {
        h.push(format!("alloc_{s}"));
    }
    for s in Slice::ALL {
        h.push(format!("dissat_{s}"));
    }
    h.extend(
        [
            "t",
            "t_increased",
            "approx_kl",
            "value_loss",
            "barrier_fallbacks",
            "projected_frac",
            "infeasible_projections",
        ]
        .map(String::from),
    );
    h
}

pub fn row(constraints: &ConstraintSpec, s: &IterationStats) -> Vec<String> {
    let f = |x: f64| x.to_string();
    let mut r = vec![
        s.iteration.to_string(),
        format!("{:?}", s.phase).to_lowercase(),
        s.mode.to_string(),
        f(s.mean_episode_reward),
    ];
    for (i, c) in constraints.cumulative.iter().enumerate() {
        r.push(f(s.cost_j[i]));
        r.push(f(c.omega));
        r.push(f(s.cost_violation_frac[i]));
    }
    r.extend(s.mean_latency.iter().map(|&x| f(x)));
    r.extend(constraints.latency.iter().map(|l| f(l.epsilon)));
    r.push(f(s.latency_violation_frac));
    r.extend(s.mean_allocation.iter().map(|&x| f(x)));
    r.extend(s.mean_dissatisfaction.iter().map(|&x| f(x)));
    r.push(f(s.t));
    r.push(s.t_increased.to_string());
    r.push(f(s.approx_kl));
    r.push(f(s.value_loss));
    r.push(s.barrier_fallbacks.to_string());
    r.push(f(s.projected_frac));
    r.push(s.infeasible_projections.to_string());
    r
}

pub struct MetricsWriter<W: Write> {
    out: csv::Writer<W>,
    constraints: ConstraintSpec,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(w: W, constraints: &ConstraintSpec) -> Result<Self> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header(constraints))?;
        Ok(MetricsWriter {
            out,
            constraints: constraints.clone(),
        })
    }

    pub fn write(&mut self, s: &IterationStats) -> Result<()> {
        self.out.write_record(row(&self.constraints, s))?;
        self.out.flush()?;
        Ok(())
    }

    /// Copies rows from an earlier file verbatim.
    pub fn write_raw(&mut self, rows: &[Vec<String>]) -> Result<()> {
        for r in rows {
            self.out.write_record(r)?;
        }
        self.out.flush()?;
        Ok(())
    }
}

/// A metrics file as header plus string rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed {
            path: path.display().to_string(),
            reason,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| malformed(e.to_string()))?
            .iter()
            .map(String::from)
            .collect();
        if header.first().map(String::as_str) != Some("iteration") {
            return Err(malformed("first column must be `iteration`".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            if rec[0].parse::<u64>().is_err() {
                return Err(malformed(format!("bad iteration {:?}", &rec[0])));
            }
            rows.push(rec.iter().map(String::from).collect());
        }
        Ok(MetricsTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric value of `name` in every row (unparsable cells are skipped).
    pub fn series(&self, name: &str) -> Vec<f64> {
        match self.column(name) {
            Some(c) => self.rows.iter().filter_map(|r| r[c].parse().ok()).collect(),
            None => Vec::new(),
        }
    }
}

fn plotted(col: &str) -> bool {
    col == "reward"
        || col == "latency_violation_frac"
        || ["j_", "omega_", "latency_", "epsilon_"]
            .iter()
            .any(|p| col.starts_with(p))
}

/// Outer join of several runs on `iteration`. Columns are
/// `<label>.<metric>` for reward, constraint values and limits, and
/// latencies; cells missing from a run are left empty.
pub fn plot_table(runs: &[(String, MetricsTable)]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["iteration".to_string()];
    let mut columns: Vec<(usize, usize)> = Vec::new();
    for (r, (label, table)) in runs.iter().enumerate() {
        for (c, name) in table.header.iter().enumerate() {
            if plotted(name) {
                header.push(format!("{label}.{name}"));
                columns.push((r, c));
            }
        }
    }
    let mut by_iter: Vec<BTreeMap<u64, &Vec<String>>> = Vec::with_capacity(runs.len());
    let mut iters = BTreeSet::new();
    for (_, table) in runs {
        let m: BTreeMap<u64, &Vec<String>> = table
            .rows
            .iter()
            .map(|row| (row[0].parse().unwrap_or(0), row))
            .collect();
        iters.extend(m.keys().copied());
        by_iter.push(m);
    }
    let rows = iters
        .into_iter()
        .map(|it| {
            let mut row = vec![it.to_string()];
            row.extend(columns.iter().map(|&(r, c)| {
                by_iter[r]
                    .get(&it)
                    .map(|v| v[c].clone())
                    .unwrap_or_default()
            }));
            row
        })
        .collect();
    (header, rows)
}

pub fn write_plot_table<W: Write>(w: W, runs: &[(String, MetricsTable)]) -> Result<()> {
    let (header, rows) = plot_table(runs);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&header)?;
    for r in rows {
        out.write_record(&r)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean of the last `n` values (all of them when fewer).
pub fn tail_mean(x: &[f64], n: usize) -> f64 {
    let tail = &x[x.len().saturating_sub(n)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Mean allocation of the final row, for summary tables.
pub fn final_allocation(table: &MetricsTable) -> Option<[f64; NUM_SLICES]> {
    let last = table.rows.last()?;
    let mut a = [0.0; NUM_SLICES];
    for (k, s) in Slice::ALL.iter().enumerate() {
        a[k] = last[table.column(&format!("alloc_{s}"))?].parse().ok()?;
    }
    Some(a)
}
