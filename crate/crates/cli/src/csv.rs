use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// In-memory CSV with a `# gce <version> config=<hash>` first line.
pub struct Csv {
    buf: String,
    columns: usize,
}

impl Csv {
    pub fn new(config_hash: &str, header: &[&str]) -> Self {
        let mut buf = format!("# gce {} config={config_hash}\n", crate::VERSION);
        buf.push_str(&header.join(","));
        buf.push('\n');
        Csv {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        assert_eq!(cells.len(), self.columns, "csv row width");
        for (k, c) in cells.iter().enumerate() {
            if k > 0 {
                self.buf.push(',');
            }
            match c {
                Cell::Text(s) => self.buf.push_str(s),
                Cell::Int(v) => write!(self.buf, "{v}").expect("string write"),
                Cell::Num(v) => write!(self.buf, "{v:e}").expect("string write"),
                Cell::Empty => {}
            }
        }
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, &self.buf).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

pub enum Cell<'a> {
    Text(&'a str),
    Int(u64),
    Num(f64),
    Empty,
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let mut c = Csv::new("abc", &["a", "b", "c"]);
        c.row(&[Cell::Int(1), Cell::Num(0.5), Cell::Empty]);
        c.row(&[Cell::Text("x"), Cell::Num(-2.0), Cell::Num(1e-20)]);
        let expected = format!("# gce {} config=abc\na,b,c\n1,5e-1,\nx,-2e0,1e-20\n", crate::VERSION);
        assert_eq!(c.as_str(), expected);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
