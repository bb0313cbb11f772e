use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::Failure;

/// CSV with a fixed header. Numbers use 17 significant digits.
pub struct Csv {
    header: Vec<String>,
    body: String,
}

pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<i32> for Cell {
    fn from(v: i32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Csv {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            body: String::new(),
        }
    }

    /// Header for an n-dimensional point column group: `x1,…,xn`.
    pub fn coords(prefix: &str, n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }

    pub fn row(&mut self, what: &str, cells: Vec<Cell>) -> Result<(), Failure> {
        assert_eq!(cells.len(), self.header.len(), "row width");
        for (k, c) in cells.into_iter().enumerate() {
            if k > 0 {
                self.body.push(',');
            }
            match c {
                Cell::Num(v) if v.is_nan() => {
                    return Err(Failure::NonFinite(format!("{what} ({})", self.header[k])));
                }
                Cell::Num(v) => {
                    let _ = write!(self.body, "{:.16e}", v + 0.0);
                }
                Cell::Int(v) => {
                    let _ = write!(self.body, "{v}");
                }
                Cell::Bool(v) => self.body.push_str(if v { "true" } else { "false" }),
                Cell::Text(s) => self.body.push_str(&s),
            }
        }
        self.body.push('\n');
        Ok(())
    }

    pub fn into_bytes(self) -> Vec<u8> {
        let mut out = self.header.join(",");
        out.push('\n');
        out.push_str(&self.body);
        out.into_bytes()
    }
}

pub fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("reports serialize");
    out.push(b'\n');
    out
}

/// Files produced by one command, written in order after it finishes.
#[derive(Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Vec<String>,
    /// set when a pass criterion failed
    pub failed: Option<String>,
}

impl Outputs {
    pub fn csv(&mut self, name: &str, csv: Csv) {
        self.files.push((name.to_string(), csv.into_bytes()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        self.files.push((name.to_string(), json(value)));
    }

    pub fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    pub fn fail(&mut self, why: impl Into<String>) {
        let why = why.into();
        match &mut self.failed {
            Some(w) => {
                w.push_str("; ");
                w.push_str(&why);
            }
            None => self.failed = Some(why),
        }
    }
}

pub fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
