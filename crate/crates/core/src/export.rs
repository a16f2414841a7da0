//! CSV helpers shared by every exporter.
//!
//! All floats are written with 17 significant digits so that a written
//! series parses back to the same `f64` bit pattern.

use std::io::{self, Write};

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_owned()
    } else if v > 0.0 {
        "inf".to_owned()
    } else {
        "-inf".to_owned()
    }
}

/// Writes a header line followed by rows of floats, `\n` terminated.
pub fn write_rows<W, I, R>(mut out: W, header: &[&str], rows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for row in rows {
        line.clear();
        for (i, v) in row.as_ref().iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&fmt_f64(*v));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()
}
