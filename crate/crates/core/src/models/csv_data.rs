use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Datum, VecSource};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSpec {
    pub response: String,
    /// Feature columns in order; `None` takes every column except the response.
    pub features: Option<Vec<String>>,
    pub train_fraction: f64,
    pub seed: u64,
    /// Prepend a constant 1 covariate.
    pub intercept: bool,
}

impl CsvSpec {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            features: None,
            train_fraction: 0.5,
            seed: 0,
            intercept: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsvSplit<T> {
    pub train: VecSource<T>,
    pub test: Vec<Datum<T>>,
    pub feature_names: Vec<String>,
    /// Zero-based data-row indices (header excluded) of each part, in stream order.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Rows dropped because a cell was missing or not a number.
    pub skipped: usize,
}

#[derive(Serialize)]
struct SplitManifest<'a> {
    response: &'a str,
    features: &'a [String],
    seed: u64,
    train_fraction: f64,
    skipped: usize,
    train_rows: &'a [usize],
    test_rows: &'a [usize],
}

impl<T: Scalar> CsvSplit<T> {
    /// JSON record of which rows went where.
    pub fn write_manifest<W: Write>(&self, spec: &CsvSpec, w: W) -> Result<()> {
        let m = SplitManifest {
            response: &spec.response,
            features: &self.feature_names,
            seed: spec.seed,
            train_fraction: spec.train_fraction,
            skipped: self.skipped,
            train_rows: &self.train_rows,
            test_rows: &self.test_rows,
        };
        serde_json::to_writer_pretty(w, &m)?;
        Ok(())
    }
}

/// Reads a binary-response CSV and splits it after a seeded shuffle.
pub fn csv_stream<T: Scalar>(path: impl AsRef<Path>, spec: &CsvSpec) -> Result<CsvSplit<T>> {
    let file = std::fs::File::open(path)?;
    csv_split_reader(file, spec)
}

pub fn csv_split_reader<T: Scalar, R: Read>(reader: R, spec: &CsvSpec) -> Result<CsvSplit<T>> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = find(&spec.response)?;
    let feature_names: Vec<String> = match &spec.features {
        Some(f) => f.clone(),
        None => headers.iter().filter(|h| **h != spec.response).cloned().collect(),
    };
    let x_cols = feature_names.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<(usize, Datum<T>)> = Vec::new();
    let mut skipped = 0;
    let parse = |rec: &csv::StringRecord, c: usize| rec.get(c).and_then(|s| s.trim().parse::<f64>().ok());
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let y = parse(&rec, y_col);
        let xs: Option<Vec<f64>> = x_cols.iter().map(|&c| parse(&rec, c).filter(|v| v.is_finite())).collect();
        let (Some(y), Some(xs)) = (y, xs) else {
            skipped += 1;
            continue;
        };
        if y != 0.0 && y != 1.0 {
            return Err(Error::Data {
                row: idx + 1,
                column: spec.response.clone(),
                message: format!("response must be 0 or 1, got {y}"),
            });
        }
        let mut x = Vec::with_capacity(xs.len() + usize::from(spec.intercept));
        if spec.intercept {
            x.push(T::one());
        }
        x.extend(xs.into_iter().map(T::lit));
        rows.push((idx, Datum { x, y: T::lit(y) }));
    }
    if rows.len() < 2 {
        return Err(Error::Degenerate(format!("only {} usable rows", rows.len())));
    }
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((rows.len() as f64 * spec.train_fraction).round() as usize).clamp(1, rows.len() - 1);
    let test_part = rows.split_off(n_train);
    let (train_rows, train): (Vec<usize>, Vec<Datum<T>>) = rows.into_iter().unzip();
    let (test_rows, test): (Vec<usize>, Vec<Datum<T>>) = test_part.into_iter().unzip();
    let mut names = Vec::new();
    if spec.intercept {
        names.push("(intercept)".to_string());
    }
    names.extend(feature_names);
    Ok(CsvSplit {
        train: VecSource::new(train),
        test,
        feature_names: names,
        train_rows,
        test_rows,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "y,a,b\n1,0.5,1\n0,1.5,-2\n1,2.5,3\n0,-1,4\n";

    fn spec() -> CsvSpec {
        CsvSpec {
            seed: 3,
            ..CsvSpec::new("y")
        }
    }

    #[test]
    fn toy_split_reproducible() {
        let a: CsvSplit<f64> = csv_split_reader(TOY.as_bytes(), &spec()).unwrap();
        let b: CsvSplit<f64> = csv_split_reader(TOY.as_bytes(), &spec()).unwrap();
        assert_eq!(a.train.remaining(), 2);
        assert_eq!(a.test.len(), 2);
        assert_eq!(a.train_rows, b.train_rows);
        assert_eq!(a.test, b.test);
        let mut all: Vec<usize> = a.train_rows.iter().chain(&a.test_rows).copied().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(a.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn missing_column_named() {
        let s = CsvSpec {
            features: Some(vec!["a".into(), "zz".into()]),
            ..spec()
        };
        let err = csv_split_reader::<f64, _>(TOY.as_bytes(), &s).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "zz"));
        assert!(err.is_data_error());
    }

    #[test]
    fn non_numeric_row_skipped() {
        let text = format!("{TOY}1,abc,2\n");
        let s: CsvSplit<f64> = csv_split_reader(text.as_bytes(), &spec()).unwrap();
        assert_eq!(s.skipped, 1);
        assert_eq!(s.train.remaining() + s.test.len(), 4);
    }

    #[test]
    fn non_binary_response_rejected() {
        let text = format!("{TOY}2,1,1\n");
        match csv_split_reader::<f64, _>(text.as_bytes(), &spec()) {
            Err(Error::Data { row, column, .. }) => {
                assert_eq!(row, 5);
                assert_eq!(column, "y");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn intercept_and_manifest() {
        let s = CsvSpec {
            intercept: true,
            ..spec()
        };
        let split: CsvSplit<f64> = csv_split_reader(TOY.as_bytes(), &s).unwrap();
        assert!(split.test.iter().all(|d| d.x.len() == 3 && d.x[0] == 1.0));
        let mut buf = Vec::new();
        split.write_manifest(&s, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["train_rows"].as_array().unwrap().len(), 2);
    }
}
