//! Plot-ready CSV tables.

use std::io::Write;
use std::path::Path;

use lindbladiff::eigen::eigvalsh;
use lindbladiff::optimize::Iterate;
use lindbladiff::{integrate, Error, Result};
use serde_json::Value;

use crate::config::Experiment;

/// 17 significant digits, enough to round-trip any `f64`.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidConfig(format!("CSV write failed: {e}"))
}

/// `iter,F,grad_norm,step`, one row per accepted iterate.
pub fn trace_csv(iterates: &[Iterate], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "F", "grad_norm", "step"]).map_err(csv_err)?;
    for it in iterates {
        w.write_record([it.iter.to_string(), num(it.f), num(it.grad_norm), num(it.step)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

/// `t,trace_rho,purity,min_eig` at `samples + 1` equally spaced times.
pub fn trajectory_csv(exp: &Experiment, samples: usize, out: impl Write) -> Result<()> {
    if samples == 0 {
        return Err(Error::InvalidConfig("samples must be positive".into()));
    }
    let (t0, t1) = exp.t_span();
    let c = &exp.config;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "trace_rho", "purity", "min_eig"]).map_err(csv_err)?;
    let mut state = exp.rho0.clone();
    let mut t = t0;
    for k in 0..=samples {
        let next = t0 + (t1 - t0) * k as f64 / samples as f64;
        if k > 0 {
            state = integrate(&exp.model, &c.params, &state, (t, next), &c.solver)?.final_state;
        }
        t = next;
        let m = state.matrix();
        let min_eig = eigvalsh(m)?[0];
        w.write_record([num(t), num(m.trace()?.re), num(state.purity()), num(min_eig)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

/// Iterates from a JSON-lines trace or from an `optimize` report.
pub fn read_trace(path: &Path) -> Result<Vec<Iterate>> {
    let where_ = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::parse(&where_, format!("cannot read file: {e}")))?;
    if let Ok(v) = serde_json::from_str::<Value>(&text) {
        if v.get("schema").is_some() {
            let its = v
                .pointer("/stages/optimize/trace/iterates")
                .ok_or_else(|| Error::parse(format!("{where_}#/stages/optimize"), "report has no optimization trace"))?;
            return serde_json::from_value(its.clone())
                .map_err(|e| Error::parse(format!("{where_}#/stages/optimize/trace/iterates"), e.to_string()));
        }
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Error::parse(format!("{where_}:{}", n + 1), e.to_string()))?;
        if v.get("summary").is_some() {
            continue;
        }
        out.push(
            serde_json::from_value(v).map_err(|e| Error::parse(format!("{where_}:{}", n + 1), e.to_string()))?,
        );
    }
    Ok(out)
}
