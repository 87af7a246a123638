//! Named-matrix checkpoint files: each section is a `#name rows cols`
//! header followed by `rows` CSV lines.

use std::fmt::Write as _;
use std::path::Path;

use crate::textio::{parse_csv_row, push_csv_row, read_text, write_text};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.sections.push((name.into(), m));
    }

    pub fn sections(&self) -> &[(String, Matrix)] {
        &self.sections
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Config(format!("checkpoint has no section {name:?}")))
    }

    pub fn get_shaped(&self, name: &str, shape: (usize, usize)) -> Result<&Matrix> {
        let m = self.get(name)?;
        if m.shape() != shape {
            return Err(Error::Shape {
                op: "checkpoint section",
                lhs: m.shape(),
                rhs: shape,
            });
        }
        Ok(m)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, m) in &self.sections {
            writeln!(out, "#{name} {} {}", m.rows(), m.cols()).expect("write to string");
            for r in 0..m.rows() {
                push_csv_row(&mut out, m.row(r));
            }
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut sections = Vec::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((i, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let header = line
                .strip_prefix('#')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `#name rows cols` header"))?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let (name, rows, cols) = match parts.as_slice() {
                [name, r, c] => match (r.parse::<usize>(), c.parse::<usize>()) {
                    (Ok(r), Ok(c)) => (*name, r, c),
                    _ => return Err(Error::parse(path, i + 1, "bad section dimensions")),
                },
                _ => return Err(Error::parse(path, i + 1, "expected `#name rows cols` header")),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let (j, row_line) = lines.next().ok_or_else(|| {
                    Error::parse(path, i + 1, format!("section {name} ends after {r} of {rows} rows"))
                })?;
                let row = parse_csv_row(path, j + 1, row_line)?;
                if row.len() != cols {
                    return Err(Error::parse(
                        path,
                        j + 1,
                        format!("row {r} of {name} has {} values, expected {cols}", row.len()),
                    ));
                }
                data.extend(row);
            }
            sections.push((name.to_string(), Matrix::from_vec(rows, cols, data)?));
        }
        Ok(Checkpoint { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }
}
