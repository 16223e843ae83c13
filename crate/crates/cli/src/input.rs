use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use sn_mple::Error;

/// Open a path, treating `-` as stdin.
pub fn open(path: &Path) -> Result<Box<dyn Read>, Error> {
    if path.as_os_str() == "-" {
        Ok(Box::new(io::stdin()))
    } else {
        File::open(path)
            .map(|f| Box::new(f) as Box<dyn Read>)
            .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
    }
}

/// Numbers separated by commas, semicolons or whitespace. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_values(text: &str) -> Result<Vec<f64>, Error> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split(|c: char| c == ',' || c == ';' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: i as u64 + 1,
                message: format!("not a number: {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("non-finite value {tok:?}"),
                });
            }
            out.push(v);
        }
    }
    Ok(out)
}
