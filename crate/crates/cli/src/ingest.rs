//! Reading count and covariate tables.
//!
//! Tables are delimited text with a header row and sample ids in the first
//! column. The delimiter is a tab if the header line contains one, otherwise
//! a comma.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use foldfit::data::numerical_rank;
use foldfit::{CountMatrix, DesignMatrix};
use nalgebra::DMatrix;

use crate::error::{CliError, Result};

pub const INTERCEPT: &str = "(Intercept)";

/// Where the design comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DesignSource {
    /// Covariate table; numeric columns pass through, text columns are one-hot
    /// encoded, and an intercept is prepended.
    Covariates(PathBuf),
    /// Prebuilt design matrix used as is (first column must be the intercept).
    Design(PathBuf),
}

/// Raw delimited table, all cells kept as trimmed strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub cells: Vec<Vec<String>>,
    /// Source line of each data row.
    pub lines: Vec<u64>,
}

pub fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    parse_table(path, &text)
}

pub fn parse_table(path: &Path, text: &str) -> Result<Table> {
    let table_err = |message: String| CliError::Table { path: path.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(text))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| table_err(e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(table_err("expected a sample id column and at least one data column".into()));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut seen_columns = BTreeSet::new();
    for c in &columns {
        if !seen_columns.insert(c) {
            return Err(table_err(format!("duplicate column '{c}'")));
        }
    }

    let mut ids = Vec::new();
    let mut cells = Vec::new();
    let mut lines = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| table_err(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(CliError::Cell {
                path: path.to_path_buf(),
                line,
                column: header.get(0).unwrap_or("").to_string(),
                message: "empty sample id".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(CliError::DuplicateId { path: path.to_path_buf(), id });
        }
        ids.push(id);
        cells.push(record.iter().skip(1).map(str::to_string).collect());
        lines.push(line);
    }
    if ids.is_empty() {
        return Err(table_err("no data rows".into()));
    }
    Ok(Table { path: path.to_path_buf(), columns, ids, cells, lines })
}

impl Table {
    fn cell_error(&self, row: usize, col: usize, message: String) -> CliError {
        CliError::Cell {
            path: self.path.clone(),
            line: self.lines[row],
            column: self.columns[col].clone(),
            message,
        }
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let raw = &self.cells[row][col];
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.cell_error(row, col, format!("'{raw}' is not a finite number"))),
        }
    }

    /// Rows reordered to follow `order`, which must hold exactly the same ids.
    pub fn reorder(&self, order: &[String]) -> Result<Table> {
        let position: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let ours: BTreeSet<&str> = self.ids.iter().map(String::as_str).collect();
        let theirs: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        if ours != theirs {
            return Err(CliError::SampleMismatch {
                only_in_counts: theirs.difference(&ours).map(|s| s.to_string()).collect(),
                only_in_covariates: ours.difference(&theirs).map(|s| s.to_string()).collect(),
            });
        }
        let rows: Vec<usize> = order.iter().map(|id| position[id.as_str()]).collect();
        Ok(Table {
            path: self.path.clone(),
            columns: self.columns.clone(),
            ids: order.to_vec(),
            cells: rows.iter().map(|&r| self.cells[r].clone()).collect(),
            lines: rows.iter().map(|&r| self.lines[r]).collect(),
        })
    }
}

/// Samples-by-categories count matrix with nonnegative finite entries.
pub fn parse_counts(table: &Table) -> Result<CountMatrix<f64>> {
    let n = table.ids.len();
    let n_cat = table.columns.len();
    if n_cat < 2 {
        return Err(CliError::Config(
            "at least two categories are required; constraints and tests are undefined for a single category".into(),
        ));
    }
    let mut values = DMatrix::zeros(n, n_cat);
    for i in 0..n {
        for j in 0..n_cat {
            let v = table.number(i, j)?;
            if v < 0.0 {
                return Err(table.cell_error(i, j, format!("negative count {v}")));
            }
            values[(i, j)] = v;
        }
        if values.row(i).sum() <= 0.0 {
            return Err(CliError::EmptySample { id: table.ids[i].clone() });
        }
    }
    Ok(CountMatrix::new(values, table.ids.clone(), table.columns.clone())?)
}

/// Intercept, numeric columns as is, and one indicator per non-reference
/// level of each text column. The reference level is the lexicographically
/// first; indicator columns are named `{column}_{level}`.
pub fn encode_covariates(table: &Table) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = table.ids.len();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut names = vec![INTERCEPT.to_string()];
    for (c, name) in table.columns.iter().enumerate() {
        if let Some(i) = (0..n).find(|&i| table.cells[i][c].is_empty()) {
            return Err(table.cell_error(i, c, "missing value".into()));
        }
        let numeric: Option<Vec<f64>> = (0..n).map(|i| table.number(i, c).ok()).collect();
        match numeric {
            Some(values) => {
                columns.push(values);
                names.push(name.clone());
            }
            None => {
                let levels: BTreeSet<&str> = (0..n).map(|i| table.cells[i][c].as_str()).collect();
                for level in levels.into_iter().skip(1) {
                    columns.push((0..n).map(|i| (table.cells[i][c] == level) as u8 as f64).collect());
                    names.push(format!("{name}_{level}"));
                }
            }
        }
    }
    let values = DMatrix::from_fn(n, columns.len(), |i, k| columns[k][i]);
    Ok((values, names))
}

/// All-numeric prebuilt design.
pub fn parse_design(table: &Table) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = table.ids.len();
    let p = table.columns.len();
    let mut values = DMatrix::zeros(n, p);
    for i in 0..n {
        for k in 0..p {
            values[(i, k)] = table.number(i, k)?;
        }
    }
    Ok((values, table.columns.clone()))
}

/// Columns that do not raise the rank when added left to right.
pub fn dependent_columns(values: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for k in 0..values.ncols() {
        let mut trial = kept.clone();
        trial.push(k);
        let sub = values.select_columns(&trial);
        if numerical_rank(&sub) == trial.len() {
            kept = trial;
        } else {
            dependent.push(names[k].clone());
        }
    }
    dependent
}

fn build_design(values: DMatrix<f64>, names: Vec<String>) -> Result<DesignMatrix<f64>> {
    if numerical_rank(&values) < values.ncols() {
        return Err(CliError::RankDeficient { columns: dependent_columns(&values, &names) });
    }
    Ok(DesignMatrix::new(values, names)?)
}

/// Reads both tables, aligns the covariate rows to the count rows by sample
/// id and builds the design.
pub fn ingest(counts_path: &Path, source: &DesignSource) -> Result<(CountMatrix<f64>, DesignMatrix<f64>)> {
    let counts_table = read_table(counts_path)?;
    let counts = parse_counts(&counts_table)?;
    let (path, prebuilt) = match source {
        DesignSource::Covariates(p) => (p, false),
        DesignSource::Design(p) => (p, true),
    };
    let covariates = read_table(path)?.reorder(&counts_table.ids)?;
    let (values, names) = if prebuilt { parse_design(&covariates)? } else { encode_covariates(&covariates)? };
    Ok((counts, build_design(values, names)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        parse_table(Path::new("mem.tsv"), text).unwrap()
    }

    #[test]
    fn delimiter_detection() {
        assert_eq!(detect_delimiter("id\ta\tb\n"), b'\t');
        assert_eq!(detect_delimiter("id,a,b\n"), b',');
    }

    #[test]
    fn counts_and_binary_covariate() {
        let counts = parse_counts(&table("sample\tc1\tc2\ns1\t3\t0\ns2\t1\t4\ns3\t0\t2\n")).unwrap();
        assert_eq!(counts.n_samples(), 3);
        assert_eq!(counts.category_ids(), ["c1", "c2"]);
        let (x, names) = encode_covariates(&table("sample,treated\ns1,0\ns2,1\ns3,1\n")).unwrap();
        assert_eq!(names, [INTERCEPT, "treated"]);
        assert_eq!(x, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn text_columns_drop_first_level() {
        let (x, names) = encode_covariates(&table("id,site,age\na,north,1.5\nb,south,2\nc,east,3\nd,south,4\n")).unwrap();
        assert_eq!(names, [INTERCEPT, "site_north", "site_south", "age"]);
        assert_eq!(x.column(1).as_slice(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(x.column(2).as_slice(), [0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn negative_count_reports_position() {
        let err = parse_counts(&table("id,a,b\ns1,1,2\ns2,-1,3\n")).unwrap_err();
        match err {
            CliError::Cell { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_count_reports_position() {
        let err = parse_counts(&table("id,a,b\ns1,1,x\n")).unwrap_err();
        assert!(matches!(err, CliError::Cell { line: 2, ref column, .. } if column == "b"), "{err}");
    }

    #[test]
    fn single_category_rejected() {
        let err = parse_counts(&table("id,a\ns1,1\ns2,3\n")).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn empty_sample_named() {
        let err = parse_counts(&table("id,a,b\ns1,1,2\ns2,0,0\n")).unwrap_err();
        assert!(matches!(err, CliError::EmptySample { ref id } if id == "s2"));
    }

    #[test]
    fn reorder_by_id_and_report_mismatches() {
        let t = table("id,x\nb,2\na,1\n");
        let r = t.reorder(&["a".into(), "b".into()]).unwrap();
        assert_eq!(r.cells, vec![vec!["1".to_string()], vec!["2".to_string()]]);
        let err = t.reorder(&["a".into(), "b".into(), "c".into()]).unwrap_err();
        match err {
            CliError::SampleMismatch { only_in_counts, only_in_covariates } => {
                assert_eq!(only_in_counts, ["c"]);
                assert!(only_in_covariates.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse_table(Path::new("t.csv"), "id,x\na,1\na,2\n").unwrap_err();
        assert!(matches!(err, CliError::DuplicateId { .. }));
    }

    #[test]
    fn rank_deficient_design_names_columns() {
        let (x, names) = encode_covariates(&table("id,g,h\na,0,0\nb,1,2\nc,1,2\n")).unwrap();
        let err = build_design(x, names).unwrap_err();
        assert!(matches!(err, CliError::RankDeficient { ref columns } if columns == &["h".to_string()]), "{err}");
    }
}
