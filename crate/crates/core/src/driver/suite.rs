use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{adaptive_solve, write_csv, write_json, IterationRecord, RunConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteName {
    /// Unit interval.
    Fig3,
    /// L-shape.
    Fig4,
}

impl std::str::FromStr for SuiteName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig3" => Ok(SuiteName::Fig3),
            "fig4" => Ok(SuiteName::Fig4),
            _ => Err(Error::Config(format!("unknown suite {s:?}, expected fig3 or fig4"))),
        }
    }
}

impl SuiteName {
    pub fn dim(self) -> usize {
        match self {
            SuiteName::Fig3 => 1,
            SuiteName::Fig4 => 2,
        }
    }

    pub fn alphas(self) -> [f64; 4] {
        [0.5, 2.0 / 3.0, 1.0, 2.0]
    }

    /// Expected asymptotic rate of b against N.
    pub fn reference_rate(self, alpha: f64) -> f64 {
        match self {
            SuiteName::Fig3 => alpha,
            SuiteName::Fig4 => 0.5 * alpha.min(1.0),
        }
    }

    pub fn default_max_elements(self) -> usize {
        match self {
            SuiteName::Fig3 => 100_000,
            SuiteName::Fig4 => 200_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub alpha: f64,
    pub slope: f64,
    pub reference: f64,
    pub points: usize,
    pub final_n: usize,
    pub final_b: f64,
    pub iterations: usize,
}

/// Least-squares slope of log y against log x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Slope of b against N over the records within the last decade of N.
pub fn last_decade_slope(records: &[IterationRecord]) -> (f64, usize) {
    let top = records.iter().map(|r| r.n).max().unwrap_or(0) as f64;
    let pts: Vec<&IterationRecord> = records.iter().filter(|r| r.n as f64 >= top / 10.0 && r.b > 0.0).collect();
    let x: Vec<f64> = pts.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = pts.iter().map(|r| r.b).collect();
    (if pts.len() >= 2 { fit_slope(&x, &y) } else { f64::NAN }, pts.len())
}

/// Runs all four α of a suite in parallel, writing `<name>_alpha<α>.csv/json`
/// per run and `<name>_summary.csv` into `out`. `base` supplies every other
/// parameter; its `dim` and `alpha` are overridden.
pub fn run_suite(name: SuiteName, base: &RunConfig, alphas: &[f64], out: &Path) -> Result<Vec<SuiteEntry>> {
    std::fs::create_dir_all(out)?;
    let tag = match name {
        SuiteName::Fig3 => "fig3",
        SuiteName::Fig4 => "fig4",
    };
    let entries: Vec<Result<SuiteEntry>> = alphas
        .par_iter()
        .map(|&alpha| {
            let cfg = RunConfig { dim: name.dim(), alpha, ..base.clone() };
            cfg.validate()?;
            let res = adaptive_solve(&cfg)?;
            let stem = format!("{tag}_alpha{alpha:.4}");
            write_csv(&res.records, &out.join(format!("{stem}.csv")))?;
            write_json(&cfg, &res, &out.join(format!("{stem}.json")))?;
            let (slope, points) = last_decade_slope(&res.records);
            let last = res.records.last().unwrap();
            Ok(SuiteEntry {
                alpha,
                slope,
                reference: -name.reference_rate(alpha),
                points,
                final_n: last.n,
                final_b: last.b,
                iterations: res.records.len(),
            })
        })
        .collect();
    let entries: Vec<SuiteEntry> = entries.into_iter().collect::<Result<_>>()?;
    let mut w = csv::Writer::from_path(out.join(format!("{tag}_summary.csv"))).map_err(std::io::Error::other)?;
    for e in &entries {
        w.serialize(e).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(entries)
}
