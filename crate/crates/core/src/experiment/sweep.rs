use std::io::Write;
use std::path::Path;

use super::config::ExperimentConfig;
use super::pipeline::run;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            _ => Err(Error::Config(format!("can only sweep alpha or beta, not {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub map_i2t: f64,
    pub map_t2i: f64,
}

/// Trains and evaluates once per value of `param`, holding the other
/// weight at 1.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let mut c = cfg.clone();
            (c.alpha, c.beta) = match param {
                SweepParam::Alpha => (value, 1.0),
                SweepParam::Beta => (1.0, value),
            };
            let out = run(&c)?;
            Ok(SweepRow {
                value,
                map_i2t: out.results[0].map,
                map_t2i: out.results[1].map,
            })
        })
        .collect()
}

/// Columns `value, map_i2t, map_t2i`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<W> {
    writeln!(out, "value,map_i2t,map_t2i")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.value, r.map_i2t, r.map_t2i)?;
    }
    Ok(out)
}

pub fn save_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_sweep_csv(rows, file)?.flush()?;
    Ok(())
}
