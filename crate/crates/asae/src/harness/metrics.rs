//! Metrics CSV emission and parsing.
//!
//! One row per (seed, iteration). Floats are printed with 17 significant
//! digits so byte-level diffs double as reproducibility checks; the win_rate
//! column exists only for environments with a win condition.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub iteration: usize,
    /// Cumulative environment steps within this seed's run.
    pub env_steps: usize,
    pub mean_return: f64,
    pub win_rate: Option<f64>,
    pub per_agent_kl: Vec<f64>,
    pub per_agent_entropy: Vec<f64>,
    pub critic_loss: f64,
    pub clip_fraction: f64,
}

/// f64 -> decimal string with 17 significant digits; round-trips bit-exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(n_agents: usize, with_win_rate: bool) -> String {
    let mut cols = vec!["seed".to_string(), "iteration".into(), "env_steps".into(), "mean_return".into()];
    if with_win_rate {
        cols.push("win_rate".into());
    }
    for a in 0..n_agents {
        cols.push(format!("kl_agent{a}"));
    }
    for a in 0..n_agents {
        cols.push(format!("entropy_agent{a}"));
    }
    cols.push("critic_loss".into());
    cols.push("clip_fraction".into());
    cols.join(",")
}

pub fn format_row(row: &MetricsRow) -> String {
    let mut cols = vec![
        row.seed.to_string(),
        row.iteration.to_string(),
        row.env_steps.to_string(),
        format_float(row.mean_return),
    ];
    if let Some(w) = row.win_rate {
        cols.push(format_float(w));
    }
    for &kl in &row.per_agent_kl {
        cols.push(format_float(kl));
    }
    for &h in &row.per_agent_entropy {
        cols.push(format_float(h));
    }
    cols.push(format_float(row.critic_loss));
    cols.push(format_float(row.clip_fraction));
    cols.join(",")
}

/// Incremental metrics writer; flushes after every row so partial files
/// survive a mid-run failure.
pub struct MetricsWriter<W: Write> {
    out: W,
    n_agents: usize,
    with_win_rate: bool,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, n_agents: usize, with_win_rate: bool) -> Result<Self> {
        writeln!(out, "{}", header(n_agents, with_win_rate))?;
        out.flush()?;
        Ok(MetricsWriter {
            out,
            n_agents,
            with_win_rate,
        })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        if row.per_agent_kl.len() != self.n_agents
            || row.per_agent_entropy.len() != self.n_agents
            || row.win_rate.is_some() != self.with_win_rate
        {
            return Err(Error::Data("metrics row does not match header layout".into()));
        }
        writeln!(self.out, "{}", format_row(row))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed metrics file, as needed by the plot command.
#[derive(Debug, Clone)]
pub struct MetricsFile {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("metrics file is empty".into()))?;
        let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|cell| {
                    cell.parse::<f64>().map_err(|_| {
                        Error::Data(format!("metrics row {}: bad cell `{cell}`", i + 2))
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != columns.len() {
                return Err(Error::Data(format!(
                    "metrics row {} has {} cells for {} columns",
                    i + 2,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(MetricsFile { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Row indices grouped by seed, in first-appearance order.
    pub fn seed_groups(&self) -> Vec<(u64, Vec<usize>)> {
        let seed_col = self.column_index("seed").unwrap_or(0);
        let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            let seed = row[seed_col] as u64;
            match groups.iter_mut().find(|(s, _)| *s == seed) {
                Some((_, idxs)) => idxs.push(i),
                None => groups.push((seed, vec![i])),
            }
        }
        groups
    }
}
