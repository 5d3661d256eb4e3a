//! Readers for count matrices, group files and parameter files.
//!
//! Counts come either as CSV triples `row,col,count` (with a header, 0-based
//! indices) or as MatrixMarket `coordinate integer` files (1-based). Groups
//! come as CSV `row,group` with a header; group names may be any string.

use std::collections::BTreeMap;
use std::io::{BufRead, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counts::{CountMatrix, GroupPartition};
use crate::error::{DelveError, Result};
use crate::population::TrueParams;

fn parse_err(line: usize, msg: impl Into<String>) -> DelveError {
    DelveError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Raw triples plus the shape, when the format states it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCounts {
    pub triples: Vec<(usize, usize, u64)>,
    pub shape: Option<(usize, usize)>,
}

impl RawCounts {
    /// Builds the matrix, inferring any dimension the file did not state from
    /// the largest index seen (or from `min_rows` when that is larger).
    pub fn into_matrix(self, min_rows: usize, cols: Option<usize>) -> Result<CountMatrix> {
        let (n, p) = match self.shape {
            Some(shape) => shape,
            None => {
                let n = self.triples.iter().map(|t| t.0 + 1).max().unwrap_or(0);
                let p = self.triples.iter().map(|t| t.1 + 1).max().unwrap_or(0);
                (n.max(min_rows), cols.unwrap_or(p))
            }
        };
        CountMatrix::from_triples(&self.triples, n, p)
    }
}

/// Reads CSV triples `row,col,count` with a header line.
pub fn read_triples_csv<R: Read>(reader: R) -> Result<RawCounts> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut triples = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        let field = |f: usize, what: &str| -> Result<u64> {
            rec[f]
                .parse::<u64>()
                .map_err(|_| parse_err(line, format!("{what} '{}' is not a nonnegative integer", &rec[f])))
        };
        let row = field(0, "row")? as usize;
        let col = field(1, "col")? as usize;
        let count = field(2, "count")?;
        if count > 0 {
            triples.push((row, col, count));
        }
    }
    Ok(RawCounts {
        triples,
        shape: None,
    })
}

/// Reads a MatrixMarket `coordinate integer` file.
pub fn read_matrix_market<R: BufRead>(reader: R) -> Result<RawCounts> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty MatrixMarket file"))?;
    let header = header?.to_lowercase();
    let words: Vec<&str> = header.split_whitespace().collect();
    if words.len() < 4 || words[0] != "%%matrixmarket" || words[1] != "matrix" || words[2] != "coordinate" {
        return Err(parse_err(1, "expected '%%MatrixMarket matrix coordinate ...' header"));
    }
    if words[3] != "integer" {
        return Err(parse_err(1, format!("field type '{}' is not integer", words[3])));
    }
    if words.get(4).is_some_and(|s| *s != "general") {
        return Err(parse_err(1, "only general symmetry is supported"));
    }
    let mut shape = None;
    let mut expected = 0usize;
    let mut triples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let nums: Vec<&str> = t.split_whitespace().collect();
        if shape.is_none() {
            if nums.len() != 3 {
                return Err(parse_err(line_no, "size line needs 'rows cols entries'"));
            }
            let parse = |s: &str| s.parse::<usize>().map_err(|_| parse_err(line_no, format!("bad size '{s}'")));
            shape = Some((parse(nums[0])?, parse(nums[1])?));
            expected = parse(nums[2])?;
            continue;
        }
        if nums.len() != 3 {
            return Err(parse_err(line_no, "entry line needs 'row col value'"));
        }
        let idx1 = |s: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(parse_err(line_no, format!("bad 1-based index '{s}'"))),
            }
        };
        let row = idx1(nums[0])?;
        let col = idx1(nums[1])?;
        let count: u64 = nums[2]
            .parse()
            .map_err(|_| parse_err(line_no, format!("count '{}' is not a nonnegative integer", nums[2])))?;
        if count > 0 {
            triples.push((row, col, count));
        }
    }
    let shape = shape.ok_or_else(|| parse_err(1, "missing size line"))?;
    let stored = triples.len();
    if stored > expected {
        return Err(parse_err(0, format!("size line declares {expected} entries, found more")));
    }
    Ok(RawCounts {
        triples,
        shape: Some(shape),
    })
}

/// Reads a counts file, picking the format from its first line.
pub fn read_counts_file(path: &Path) -> Result<RawCounts> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with("%%") {
        read_matrix_market(text.as_bytes())
    } else {
        read_triples_csv(text.as_bytes())
    }
}

/// Group assignment read from a file, with the original group names.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedGroups {
    pub partition: GroupPartition,
    pub names: Vec<String>,
}

/// Reads CSV `row,group` with a header. Every row index in `0..n` must appear
/// exactly once. Group ids are assigned in numeric order when every name is an
/// integer and in lexicographic order otherwise.
pub fn read_groups_csv<R: Read>(reader: R) -> Result<NamedGroups> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut by_row: BTreeMap<usize, String> = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let row: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(line, format!("row '{}' is not a nonnegative integer", &rec[0])))?;
        if by_row.insert(row, rec[1].to_string()).is_some() {
            return Err(parse_err(line, format!("row {row} assigned twice")));
        }
    }
    let n = by_row.len();
    if let Some((&last, _)) = by_row.iter().next_back() {
        if last + 1 != n {
            let missing = (0..n).find(|i| !by_row.contains_key(i)).unwrap_or(n);
            return Err(parse_err(0, format!("row {missing} has no group")));
        }
    }
    let mut names: Vec<String> = by_row.values().cloned().collect();
    names.sort();
    names.dedup();
    let numeric: Option<Vec<i64>> = names.iter().map(|s| s.parse().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(i64, String)> = nums.into_iter().zip(names).collect();
        pairs.sort();
        names = pairs.into_iter().map(|(_, s)| s).collect();
    }
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels = by_row.values().map(|s| index[s.as_str()]).collect();
    let partition = GroupPartition::new(labels, names.len())?;
    Ok(NamedGroups { partition, names })
}

pub fn read_groups_file(path: &Path) -> Result<NamedGroups> {
    read_groups_csv(std::fs::File::open(path)?)
}

/// JSON layout of a parameters file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub totals: Vec<u64>,
    pub omega: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ParamsFile {
    pub fn into_params(self) -> Result<TrueParams> {
        let g = GroupPartition::from_labels(self.labels)?;
        TrueParams::new(self.totals, self.omega, g)
    }

    pub fn from_params(params: &TrueParams) -> Self {
        Self {
            totals: params.totals.clone(),
            omega: params.omega.clone(),
            labels: params.groups.labels().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_triples_round_trip() {
        let text = "row,col,count\n0,0,2\n1,1,2\n";
        let m = read_triples_csv(text.as_bytes()).unwrap().into_matrix(0, None).unwrap();
        assert_eq!(m.row_totals(), &[2, 2]);
        assert_eq!(m.n_cols(), 2);
    }

    #[test]
    fn csv_rejects_garbage() {
        let err = read_triples_csv("row,col,count\n0,x,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DelveError::Parse { line: 2, .. }));
        let err = read_triples_csv("row,col,count\n0,1,-2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DelveError::Parse { .. }));
    }

    #[test]
    fn csv_duplicates_fail_at_build() {
        let raw = read_triples_csv("row,col,count\n0,0,1\n0,0,1\n".as_bytes()).unwrap();
        assert!(matches!(raw.into_matrix(0, None), Err(DelveError::DuplicateEntry { .. })));
    }

    #[test]
    fn matrix_market_reads_one_based() {
        let text = "%%MatrixMarket matrix coordinate integer general\n% comment\n2 3 2\n1 1 4\n2 3 1\n";
        let m = read_matrix_market(text.as_bytes()).unwrap().into_matrix(0, None).unwrap();
        assert_eq!((m.n_rows(), m.n_cols()), (2, 3));
        assert_eq!(m.triples(), vec![(0, 0, 4), (1, 2, 1)]);
        assert!(read_matrix_market("%%MatrixMarket matrix coordinate real general\n1 1 0\n".as_bytes()).is_err());
    }

    #[test]
    fn groups_numeric_and_named() {
        let g = read_groups_csv("row,group\n0,10\n1,2\n2,10\n".as_bytes()).unwrap();
        assert_eq!(g.names, vec!["2", "10"]);
        assert_eq!(g.partition.labels(), &[1, 0, 1]);
        let g = read_groups_csv("row,group\n1,bob\n0,alice\n".as_bytes()).unwrap();
        assert_eq!(g.names, vec!["alice", "bob"]);
        assert_eq!(g.partition.labels(), &[0, 1]);
        assert!(read_groups_csv("row,group\n0,a\n2,b\n".as_bytes()).is_err());
    }
}
