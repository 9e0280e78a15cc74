//! CSV trace output.
//!
//! Numbers are written in scientific notation with 17 significant digits so
//! that every `f64` survives a text round trip bit-exactly. Each file starts
//! with a `# config_sha256=...` comment line followed by a header row.

use std::io::Write;

use crate::datadriven::DataDrivenIterate;
use crate::error::Result;
use crate::policy_iteration::PiIterate;

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn fmt_flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes `# <comment>` then the CSV records.
pub fn write_csv<W: Write>(
    mut out: W,
    comment: Option<&str>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub const PI_TRACE_HEADER: [&str; 5] = ["i", "err_to_opt", "delta_g_norm", "hurwitz", "p_norm"];

pub fn pi_trace_rows(iterates: &[PiIterate]) -> Vec<Vec<String>> {
    iterates
        .iter()
        .map(|it| {
            vec![
                it.index.to_string(),
                fmt_opt(it.err_to_opt),
                fmt_num(it.delta_g_norm),
                fmt_flag(it.next_stabilizing).to_string(),
                fmt_num(it.p.frobenius()),
            ]
        })
        .collect()
}

pub const DATA_TRACE_HEADER: [&str; 7] = [
    "i",
    "err_to_opt",
    "rank_ok",
    "hurwitz",
    "p_norm",
    "lsq_residual",
    "theta_cond",
];

pub fn data_trace_rows(iterates: &[DataDrivenIterate]) -> Vec<Vec<String>> {
    iterates
        .iter()
        .map(|it| {
            vec![
                it.index.to_string(),
                fmt_opt(it.err_to_opt),
                fmt_flag(it.rank_ok).to_string(),
                it.next_stabilizing
                    .map(|b| fmt_flag(b).to_string())
                    .unwrap_or_default(),
                fmt_num(it.p_hat.frobenius()),
                fmt_num(it.lsq_residual),
                fmt_num(it.theta_cond),
            ]
        })
        .collect()
}
