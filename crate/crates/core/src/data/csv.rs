//! `id,label,f0,…,f{D−1}` embedding files.

use std::fmt::Write as _;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn load_embeddings_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

pub(crate) fn parse_embeddings(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
        return Err(err(1, "header must start with `id,label,f0`".into()));
    }
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(err(1, format!("expected column `f{j}`, found `{c}`")));
        }
    }
    let dim = cols.len() - 2;

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (line, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != dim + 2 {
            return Err(err(line, format!("expected {} fields, found {}", dim + 2, fields.len())));
        }
        ids.push(fields[0].to_string());
        let label: i64 = fields[1]
            .parse()
            .map_err(|_| err(line, format!("label `{}` is not an integer", fields[1])))?;
        if label < -1 {
            return Err(err(line, format!("label {label} below -1")));
        }
        labels.push(label);
        for (j, f) in fields[2..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| err(line, format!("f{j} = `{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(line, format!("f{j} is not finite")));
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    let features = Tensor::new(vec![labels.len(), dim], data)?;
    Dataset::new(ids, features, labels)
}

/// Writes shortest round-trip decimal representations, so reading the file
/// back reproduces every value bit for bit.
pub fn write_embeddings_csv(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, render_embeddings(ds)).map_err(|e| Error::io(path, e))
}

pub(crate) fn render_embeddings(ds: &Dataset) -> String {
    let mut out = String::from("id,label");
    for j in 0..ds.dim() {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for i in 0..ds.len() {
        write!(out, "{},{}", ds.ids[i], ds.labels[i]).unwrap();
        for v in ds.features.row_slice(i) {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Dataset> {
        parse_embeddings(s, Path::new("mem.csv"))
    }

    fn line_of(e: Error) -> usize {
        match e {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn parses_valid_file() {
        let ds = parse("id,label,f0,f1\na,0,1.5,-2\nb,-1,0,3e-2\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![0, -1]);
        assert_eq!(ds.features.row_slice(1), &[0.0, 0.03]);
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(line_of(parse("").unwrap_err()), 1);
        assert_eq!(line_of(parse("a,b,c\n1,2,3\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("id,label,f0,f1\na,0,1,2\nb,0,1\n").unwrap_err()), 3);
        assert_eq!(line_of(parse("id,label,f0\na,0,x\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("id,label,f0\na,0,1\nb,1,NaN\n").unwrap_err()), 3);
        assert_eq!(line_of(parse("id,label,f0\na,zero,1\n").unwrap_err()), 2);
    }

    proptest! {
        #[test]
        fn round_trips_bit_exactly(rows in prop::collection::vec(
            (-1i64..20, prop::collection::vec(-1e6f64..1e6, 3)), 1..12)) {
            let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
            let labels = rows.iter().map(|r| r.0).collect();
            let data = rows.iter().flat_map(|r| r.1.clone()).collect();
            let ds = Dataset::new(ids, Tensor::new(vec![rows.len(), 3], data).unwrap(), labels).unwrap();
            let text = render_embeddings(&ds);
            let back = parse(&text).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(render_embeddings(&back), text);
        }
    }
}
