//! File helpers: classified errors and atomic writes.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or unreadable input files (exit 1).
    Usage(String),
    /// Malformed data or a solver failure (exit 2).
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl From<rotavg::Error> for Failure {
    fn from(e: rotavg::Error) -> Self {
        match e {
            rotavg::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn data(msg: impl Into<String>) -> Failure {
    Failure::Data(msg.into())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

/// Parses a file, prefixing format errors with its path.
pub fn parse_file<T>(path: &Path, parse: impl FnOnce(&str) -> rotavg::Result<T>) -> CliResult<T> {
    let text = read_text(path)?;
    parse(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Output files collected during a command and written only once it has
/// succeeded. Each file goes through a temporary file in the target
/// directory followed by a rename.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: &Path, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.to_path_buf(), bytes.into()));
    }

    /// Writes to `path` when given, otherwise to stdout.
    pub fn add_or_stdout(&mut self, path: Option<&Path>, bytes: impl Into<Vec<u8>>) -> CliResult<()> {
        match path {
            Some(p) => {
                self.add(p, bytes);
                Ok(())
            }
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(&bytes.into()).and_then(|_| out.flush()).map_err(|e| data(format!("stdout: {e}")))
            }
        }
    }

    pub fn commit(self) -> CliResult<()> {
        for (path, bytes) in self.files {
            write_atomic(&path, &bytes)?;
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: &dyn fmt::Display| usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(bytes).map_err(|e| fail(&e))?;
    tmp.as_file().sync_all().map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable report");
    s.push('\n');
    s
}
