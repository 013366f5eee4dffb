//! CSV output of sweep results.

use std::io::Write;

use crate::harness::SweepRow;

pub const CSV_HEADER: &str = "method,snr_db,trials,ber,ser,nmse_range,nmse_velocity,detected_mean";

/// C-style `%.6g`: six significant digits, trailing zeros dropped,
/// exponent form when the exponent is below -4 or at least 6.
pub fn format_g6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Rounding to six digits first fixes the exponent (9.999995 -> 10).
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// One CSV line (without newline). Cells a method does not produce are empty.
pub fn csv_line(row: &SweepRow) -> String {
    let comm = row.method.reports_communication();
    let sens = row.method.reports_sensing();
    let cell = |on: bool, v: f64| if on { format_g6(v) } else { String::new() };
    format!(
        "{},{},{},{},{},{},{},{}",
        row.method.name(),
        format_g6(row.snr_db),
        row.trials,
        cell(comm, row.ber),
        cell(comm, row.ser),
        cell(sens, row.nmse_range),
        cell(sens, row.nmse_velocity),
        format_g6(row.detected_mean),
    )
}

pub fn write_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", csv_line(r))?;
    }
    Ok(())
}

pub fn csv_string(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}
