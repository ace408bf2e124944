//! Deterministic CSV and JSON writers. Every file starts with the resolved
//! configuration and the code version.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const GENERATOR: &str = concat!("optomech ", env!("CARGO_PKG_VERSION"));

pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        Cell::Num(x.unwrap_or(f64::NAN))
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn render(cell: &Cell) -> String {
    match cell {
        Cell::Num(x) => format_num(*x),
        Cell::Int(i) => i.to_string(),
        Cell::Bool(b) => u8::from(*b).to_string(),
        Cell::Text(s) => s.clone(),
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    generator: &'a str,
    config: &'a RunConfig,
    result: &'a T,
}

/// The single sink for all result files of a run.
pub struct Writer {
    dir: PathBuf,
    config: RunConfig,
    header: String,
    written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path, config: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let resolved = toml::to_string(config).map_err(|e| CliError::Io(format!("serializing configuration: {e}")))?;
        let mut header = format!("# {GENERATOR}\n# resolved configuration:\n");
        for line in resolved.lines() {
            let _ = writeln!(header, "# {line}");
        }
        Ok(Self { dir: dir.to_path_buf(), config: config.clone(), header, written: Vec::new() })
    }

    pub fn csv<I>(&mut self, name: &str, columns: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<Cell>>,
    {
        let mut out = self.header.clone();
        out.push_str(&columns.join(","));
        out.push('\n');
        for row in rows {
            let line: Vec<String> = row.iter().map(render).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        self.put(&format!("{name}.csv"), out)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let env = Envelope { generator: GENERATOR, config: &self.config, result: value };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Io(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.put(&format!("{name}.json"), text)
    }

    fn put(&mut self, file: &str, text: String) -> Result<(), CliError> {
        let path = self.dir.join(file);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
