use std::fmt::Display;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sn_mple::Error;

/// Resolved configuration, echoed as `# key=value` lines.
#[derive(Debug, Default)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(command: &str) -> Self {
        let mut h = Self::default();
        h.set("command", command);
        h.set("version", env!("CARGO_PKG_VERSION"));
        h
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn write(&self, out: &mut dyn Write) -> io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }
}

/// `path` or stdout.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

/// `dir/name`, creating `dir` if needed.
pub fn in_dir(dir: &Path, name: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir).map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

pub fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}
