use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde_json::json;

use super::{IterationRecord, RunConfig, RunOutput};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = ["k", "N", "F", "b", "eta", "rhat", "pcg_iters", "wall_ms"];

/// Crate version plus the commit hash captured at build time, if any.
pub fn build_id() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), option_env!("SGAFEM_GIT_HASH").unwrap_or("unknown"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_csv(records: &[IterationRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(&[
            r.k.to_string(),
            r.n.to_string(),
            r.f.to_string(),
            format!("{:e}", r.b),
            format!("{:e}", r.eta),
            format!("{:e}", r.rhat),
            r.pcg_iters.to_string(),
            r.wall_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Config echo, derived constants and the full records.
pub fn write_json(cfg: &RunConfig, out: &RunOutput, path: &Path) -> Result<()> {
    let v = json!({
        "build": build_id(),
        "config": cfg,
        "zeta": cfg.zeta(),
        "j_hat": cfg.j_hat(),
        "zeta_j": cfg.zeta_j(),
        "ell": out.ell,
        "conditions": out.conditions,
        "stop": out.stop,
        "records": out.records,
    });
    let mut f = File::create(path)?;
    f.write_all(serde_json::to_string_pretty(&v).map_err(std::io::Error::other)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
