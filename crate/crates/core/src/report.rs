//! Small formatting helpers shared by CSV and JSON writers.

/// Round-trip float formatting used in every CSV column.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `header` followed by one line per row.
pub fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
