//! CelebA `list_attr_celeba`-style attribute tables.
//!
//! ```text
//! 3
//! Attractive Male Smiling
//! 000001.jpg  1 -1  1
//! 000002.jpg -1 -1  1
//! 000003.jpg  1  1 -1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One labelled sample. `y` and `s` are mapped from ±1 to {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub y: u8,
    pub s: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<i8>)>,
}

impl AttributeTable {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, count_line) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let count: usize = count_line
            .trim()
            .parse()
            .map_err(|_| perr(1, format!("expected record count, got {count_line:?}")))?;
        let (_, header) = lines
            .next()
            .ok_or_else(|| perr(2, "missing attribute header".into()))?;
        let names: Vec<String> = header.split_whitespace().map(str::to_owned).collect();
        if names.is_empty() {
            return Err(perr(2, "no attribute names".into()));
        }
        let mut rows = Vec::with_capacity(count);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id = fields.next().unwrap().to_owned();
            let values = fields
                .map(|f| match f {
                    "1" | "+1" => Ok(1i8),
                    "-1" => Ok(-1i8),
                    other => Err(perr(lineno, format!("attribute value {other:?} is not ±1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != names.len() {
                return Err(perr(
                    lineno,
                    format!("{} values for {} attributes", values.len(), names.len()),
                ));
            }
            rows.push((id, values));
        }
        if rows.len() != count {
            return Err(perr(
                1,
                format!("header declares {count} records, found {}", rows.len()),
            ));
        }
        Ok(Self { names, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::config(format!("attribute {name:?} not in header")))
    }

    pub fn records(&self, target: &str, sensitive: &str) -> Result<Vec<SampleRecord>> {
        let (ti, si) = (self.column(target)?, self.column(sensitive)?);
        let bit = |v: i8| u8::from(v > 0);
        Ok(self
            .rows
            .iter()
            .map(|(id, vals)| SampleRecord {
                id: id.clone(),
                y: bit(vals[ti]),
                s: bit(vals[si]),
            })
            .collect())
    }

    pub fn render(&self) -> String {
        let mut out = format!("{}\n{}\n", self.rows.len(), self.names.join(" "));
        for (id, vals) in &self.rows {
            out.push_str(id);
            for v in vals {
                out.push_str(if *v > 0 { " 1" } else { " -1" });
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_attributes(
    path: impl AsRef<Path>,
    target: &str,
    sensitive: &str,
) -> Result<Vec<SampleRecord>> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    AttributeTable::parse(&text, &path)?.records(target, sensitive)
}
