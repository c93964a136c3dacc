//! CSV ingestion: header-addressed numeric columns with row/column diagnostics.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use shiftlab::{CovariateMatrix, Covariates, LabeledData, PooledDataset};

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    /// Group features `x1`.
    pub group_columns: Vec<String>,
    /// Remaining features `x2`.
    pub feature_columns: Vec<String>,
    pub label_column: Option<String>,
    /// Present when source and target rows share one file.
    pub domain_column: Option<String>,
}

impl ColumnSchema {
    pub fn validate(&self) -> Result<()> {
        if self.group_columns.is_empty() {
            bail!("at least one group column is required");
        }
        if self.feature_columns.is_empty() {
            bail!("at least one feature column is required");
        }
        let mut seen = std::collections::HashSet::new();
        let all = self
            .group_columns
            .iter()
            .chain(&self.feature_columns)
            .chain(&self.label_column)
            .chain(&self.domain_column);
        for name in all {
            if !seen.insert(name) {
                bail!("column '{name}' is assigned more than one role");
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.group_columns.len()
    }

    pub fn q(&self) -> usize {
        self.feature_columns.len()
    }
}

/// A parsed CSV file kept as text until columns are requested.
#[derive(Debug, Clone)]
pub struct Table {
    path: PathBuf,
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        let headers = reader
            .headers()
            .with_context(|| format!("{}: cannot read header row", path.display()))?
            .iter()
            .map(str::to_string)
            .collect();
        let records = reader
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: malformed CSV", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            anyhow!(
                "{}: column '{name}' not found (columns: {})",
                self.path.display(),
                self.headers.join(", ")
            )
        })
    }

    fn location(&self, row: usize, col: usize) -> String {
        let line = self.records[row]
            .position()
            .map_or(row as u64 + 2, |p| p.line());
        format!(
            "{}: line {line}, column '{}'",
            self.path.display(),
            self.headers[col]
        )
    }

    fn cell(&self, row: usize, col: usize) -> Result<&str> {
        self.records[row]
            .get(col)
            .ok_or_else(|| anyhow!("{}: missing value", self.location(row, col)))
    }

    pub fn number(&self, row: usize, col: usize) -> Result<f64> {
        let text = self.cell(row, col)?;
        let value: f64 = text.parse().map_err(|_| {
            anyhow!("{}: cannot parse '{text}' as a number", self.location(row, col))
        })?;
        if !value.is_finite() {
            bail!("{}: non-finite value '{text}'", self.location(row, col));
        }
        Ok(value)
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        (0..self.len()).map(|r| self.number(r, col)).collect()
    }

    /// Binary labels written as `0`/`1` (any numeric spelling) or `true`/`false`.
    pub fn labels(&self, name: &str) -> Result<Vec<bool>> {
        let col = self.column(name)?;
        (0..self.len())
            .map(|r| {
                let text = self.cell(r, col)?;
                match text.to_ascii_lowercase().as_str() {
                    "true" => return Ok(true),
                    "false" => return Ok(false),
                    _ => {}
                }
                match text.parse::<f64>() {
                    Ok(1.0) => Ok(true),
                    Ok(0.0) => Ok(false),
                    _ => bail!(
                        "{}: label '{text}' is not binary (expected 0/1 or true/false)",
                        self.location(r, col)
                    ),
                }
            })
            .collect()
    }

    /// `true` for source rows: `source` or `1`; target rows are `target` or `0`.
    pub fn domains(&self, name: &str) -> Result<Vec<bool>> {
        let col = self.column(name)?;
        (0..self.len())
            .map(|r| {
                let text = self.cell(r, col)?;
                match text.to_ascii_lowercase().as_str() {
                    "source" | "1" => Ok(true),
                    "target" | "0" => Ok(false),
                    _ => bail!(
                        "{}: domain '{text}' must be source/target or 1/0",
                        self.location(r, col)
                    ),
                }
            })
            .collect()
    }

    pub fn covariates(&self, schema: &ColumnSchema) -> Result<CovariateMatrix> {
        let group: Vec<usize> = schema
            .group_columns
            .iter()
            .map(|c| self.column(c))
            .collect::<Result<_>>()?;
        let features: Vec<usize> = schema
            .feature_columns
            .iter()
            .map(|c| self.column(c))
            .collect::<Result<_>>()?;
        let mut m = CovariateMatrix::with_capacity(group.len(), features.len(), self.len())?;
        let mut x1 = vec![0.0; group.len()];
        let mut x2 = vec![0.0; features.len()];
        for r in 0..self.len() {
            for (v, &c) in x1.iter_mut().zip(&group) {
                *v = self.number(r, c)?;
            }
            for (v, &c) in x2.iter_mut().zip(&features) {
                *v = self.number(r, c)?;
            }
            m.push(Covariates { x1: &x1, x2: &x2 })?;
        }
        Ok(m)
    }

    fn subset(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            path: self.path.clone(),
            headers: self.headers.clone(),
            records: (0..self.len())
                .filter(|&r| keep(r))
                .map(|r| self.records[r].clone())
                .collect(),
        }
    }
}

/// Where the source and target rows come from.
#[derive(Debug, Clone, clap::Args)]
pub struct DataArgs {
    /// Labeled source-domain CSV.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Unlabeled target-domain CSV.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// A single CSV holding both domains, split by the domain column.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    pub data: Option<PathBuf>,
}

/// Source and target tables, in that order.
pub fn load_tables(args: &DataArgs, schema: &ColumnSchema) -> Result<(Table, Table)> {
    if let Some(path) = &args.data {
        let name = schema
            .domain_column
            .as_deref()
            .ok_or_else(|| anyhow!("--data needs a domain column (--domain-col)"))?;
        let table = Table::read(path)?;
        let domains = table.domains(name)?;
        return Ok((table.subset(|r| domains[r]), table.subset(|r| !domains[r])));
    }
    match (&args.source, &args.target) {
        (Some(s), Some(t)) => Ok((Table::read(s)?, Table::read(t)?)),
        (None, _) => bail!("missing --source (or --data with a domain column)"),
        (_, None) => bail!("missing --target (or --data with a domain column)"),
    }
}

pub fn labeled(table: &Table, schema: &ColumnSchema) -> Result<LabeledData> {
    let name = schema
        .label_column
        .as_deref()
        .ok_or_else(|| anyhow!("a label column (--label-col) is required for source rows"))?;
    Ok(LabeledData::new(table.covariates(schema)?, table.labels(name)?)?)
}

pub fn pooled(source: &Table, target: &Table, schema: &ColumnSchema) -> Result<PooledDataset> {
    Ok(PooledDataset::new(
        labeled(source, schema)?,
        target.covariates(schema)?,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn schema() -> ColumnSchema {
        ColumnSchema {
            group_columns: vec!["g".into()],
            feature_columns: vec!["a".into(), "b".into()],
            label_column: Some("y".into()),
            domain_column: None,
        }
    }

    #[test]
    fn parses_numeric_columns() {
        let f = write("g,a,b,y\n1,0.5,-2,1\n0,1e-3,4,false\n");
        let t = Table::read(f.path()).unwrap();
        let d = labeled(&t, &schema()).unwrap();
        assert_eq!(d.y, vec![true, false]);
        assert_eq!(d.x.row(1).x2, &[1e-3, 4.0]);
    }

    #[test]
    fn bad_cells_are_addressed() {
        let f = write("g,a,b,y\n1,0.5,-2,1\n0,abc,4,0\n");
        let t = Table::read(f.path()).unwrap();
        let err = labeled(&t, &schema()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("column 'a'") && err.contains("abc"), "{err}");

        let f = write("g,a,b,y\n1,NaN,-2,1\n");
        let err = Table::read(f.path()).unwrap().numeric_column("a").unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");

        let f = write("g,a,b,y\n1,0,-2,2\n");
        let err = labeled(&Table::read(f.path()).unwrap(), &schema()).unwrap_err().to_string();
        assert!(err.contains("not binary"), "{err}");

        let f = write("g,a,y\n1,0,1\n");
        let err = labeled(&Table::read(f.path()).unwrap(), &schema()).unwrap_err().to_string();
        assert!(err.contains("column 'b' not found"), "{err}");
    }

    #[test]
    fn schema_roles_must_be_disjoint() {
        let mut s = schema();
        s.feature_columns.push("g".into());
        assert!(s.validate().is_err());
        assert!(schema().validate().is_ok());
    }

    #[test]
    fn single_file_is_split_by_domain() {
        let f = write("g,a,b,y,dom\n1,0,0,1,source\n0,1,1,,target\n1,2,2,0,1\n");
        let mut s = schema();
        s.domain_column = Some("dom".into());
        let args = DataArgs { source: None, target: None, data: Some(f.path().into()) };
        let (src, tgt) = load_tables(&args, &s).unwrap();
        assert_eq!((src.len(), tgt.len()), (2, 1));
        let data = pooled(&src, &tgt, &s).unwrap();
        assert_eq!((data.n1(), data.n0()), (2, 1));
    }
}
