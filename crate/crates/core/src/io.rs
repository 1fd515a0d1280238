//! Shared text-output helpers. Every float written by this crate goes through
//! [`fmt_float`] so outputs are byte-stable across runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// Scientific notation with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a header line followed by pre-formatted rows.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// `x_1,...,x_d` column names.
pub fn state_columns(dim: usize) -> String {
    (1..=dim)
        .map(|i| format!("x_{i}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 7.0, f64::MAX] {
            let s = fmt_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
    }
}
