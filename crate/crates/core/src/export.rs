//! CSV rendering and content hashing shared by every artifact writer.

use sha2::{Digest, Sha256};

/// 17 significant digits in scientific form; parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_owned()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{v:.16e}")
    }
}

/// Builds a CSV document with `\n` line endings and no quoting; fields never contain commas.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) -> &mut Self {
        debug_assert_eq!(fields.len(), self.columns, "csv row width");
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
        self
    }

    /// Free-form trailing line such as `slope=<value>`.
    pub fn footer(&mut self, line: &str) -> &mut Self {
        self.text.push_str(line);
        self.text.push('\n');
        self
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
