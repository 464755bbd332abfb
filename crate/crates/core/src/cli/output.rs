use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use super::{Failure, Format};

/// Numeric table with a header row.
pub(super) struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub(super) fn new(header: &[&'static str]) -> Table {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub(super) fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub(super) fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            for (i, v) in r.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{v:e}");
            }
            s.push('\n');
        }
        s
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let m: Map<String, Value> = self.header.iter().zip(r).map(|(k, v)| (k.to_string(), finite(*v))).collect();
                    Value::Object(m)
                })
                .collect(),
        )
    }
}

fn finite(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub(super) struct Output {
    dir: Option<PathBuf>,
    format: Format,
}

fn check_dir(dir: Option<&Path>) -> Result<(), Failure> {
    match dir {
        Some(d) if !d.is_dir() => Err(Failure::usage(format!("output directory {} does not exist", d.display()))),
        _ => Ok(()),
    }
}

fn write_file(path: PathBuf, text: &str) -> Result<(), Failure> {
    fs::write(&path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

impl Output {
    pub(super) fn new(dir: Option<&Path>, format: Format) -> Result<Output, Failure> {
        check_dir(dir)?;
        Ok(Output {
            dir: dir.map(Path::to_path_buf),
            format,
        })
    }

    /// Writes the table and the summary. With a directory, files are
    /// `<name>.csv` plus `<name>.json` (csv format) or a single `<name>.json`
    /// holding the summary and rows (json format), and the summary is echoed
    /// on stdout. Without one, csv goes to stdout with the summary on
    /// stderr, and json prints the combined document.
    pub(super) fn emit(&self, name: &str, table: &Table, summary: Value) -> Result<(), Failure> {
        let combined = || {
            let mut doc = summary.clone();
            if let Value::Object(m) = &mut doc {
                m.insert("rows".into(), table.to_json());
            }
            doc
        };
        match (&self.dir, self.format) {
            (Some(d), Format::Csv) => {
                write_file(d.join(format!("{name}.csv")), &table.to_csv())?;
                write_file(d.join(format!("{name}.json")), &pretty(&summary))?;
                print(&pretty(&summary))
            }
            (Some(d), Format::Json) => {
                write_file(d.join(format!("{name}.json")), &pretty(&combined()))?;
                print(&pretty(&summary))
            }
            (None, Format::Csv) => {
                eprint!("{}", pretty(&summary));
                print(&table.to_csv())
            }
            (None, Format::Json) => print(&pretty(&combined())),
        }
    }
}

/// JSON-only commands: writes `<name>.json` when a directory is given and
/// always prints the document.
pub(super) fn emit_json(dir: Option<&Path>, name: &str, doc: &Value) -> Result<(), Failure> {
    check_dir(dir)?;
    let text = pretty(doc);
    if let Some(d) = dir {
        write_file(d.join(format!("{name}.json")), &text)?;
    }
    print(&text)
}

fn print(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
