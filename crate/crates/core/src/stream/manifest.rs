//! CSV feature manifests.
//!
//! Header: `feature_0..feature_{d-1}, label_0..label_{n-1}, known_0..known_{n-1}, split`.
//! Extra columns (such as `admitted_at` in buffer dumps) are written after
//! `split` and ignored on load.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{Sample, TaskDataset, TaskSpec};
use crate::{Error, Result};

fn header(dim: usize, n_classes: usize, extra: Option<&str>) -> Vec<String> {
    let mut h: Vec<String> = (0..dim).map(|i| format!("feature_{i}")).collect();
    h.extend((0..n_classes).map(|j| format!("label_{j}")));
    h.extend((0..n_classes).map(|j| format!("known_{j}")));
    h.push("split".into());
    if let Some(e) = extra {
        h.push(e.into());
    }
    h
}

/// Writes `(sample, split, extra)` rows. All samples must share dimensions.
pub fn write_samples_csv<'a, W, I>(writer: W, extra_column: Option<&str>, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a Sample, &'a str, Option<String>)>,
{
    let mut rows = rows.into_iter().peekable();
    let mut out = csv::Writer::from_writer(writer);
    let Some((first, _, _)) = rows.peek() else {
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        return Ok(());
    };
    let dim = first.features.len();
    let n = first.n_classes();
    out.write_record(header(dim, n, extra_column))?;
    for (s, split, extra) in rows {
        if s.features.len() != dim || s.n_classes() != n {
            return Err(Error::Validation("samples in one manifest must share dimensions".into()));
        }
        let mut rec: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        rec.extend(s.oracle_targets().iter().map(|v| v.to_string()));
        rec.extend(s.known_mask().iter().map(|v| v.to_string()));
        rec.push(split.to_string());
        if extra_column.is_some() {
            rec.push(extra.unwrap_or_default());
        }
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_manifest(dataset: &TaskDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let rows = dataset
        .train
        .iter()
        .map(|s| (s, "train", None))
        .chain(dataset.val.iter().map(|s| (s, "val", None)))
        .chain(dataset.test.iter().map(|s| (s, "test", None)));
    write_samples_csv(file, None, rows)
}

/// Loads a manifest as task 0 in domain 0. See [`load_manifest_as`].
pub fn load_manifest(path: &Path) -> Result<TaskDataset> {
    load_manifest_as(path, 0, 0)
}

/// Loads a manifest. The task's label set is the set of classes known in
/// every row.
pub fn load_manifest_as(path: &Path, task_id: usize, domain_id: usize) -> Result<TaskDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file, task_id, domain_id)
}

fn indexed_columns(
    cols: &HashMap<&str, usize>,
    prefix: &str,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    while let Some(&i) = cols.get(format!("{prefix}_{}", out.len()).as_str()) {
        out.push(i);
    }
    // A gap (e.g. label_0, label_2) means a column is missing.
    let stray = cols
        .keys()
        .filter_map(|k| k.strip_prefix(prefix)?.strip_prefix('_')?.parse::<usize>().ok())
        .find(|&i| i >= out.len());
    if let Some(i) = stray {
        return Err(Error::Parse {
            line: 1,
            detail: format!("missing column {prefix}_{}", i.min(out.len())),
        });
    }
    Ok(out)
}

fn parse_bit(field: &str, line: usize, col: &str) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            line,
            detail: format!("column {col} has non-binary value {other:?}"),
        }),
    }
}

pub(crate) fn parse_manifest<R: std::io::Read>(
    reader: R,
    task_id: usize,
    domain_id: usize,
) -> Result<TaskDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let feat = indexed_columns(&cols, "feature")?;
    let label = indexed_columns(&cols, "label")?;
    let known = indexed_columns(&cols, "known")?;
    let split_col = *cols.get("split").ok_or(Error::Parse {
        line: 1,
        detail: "missing column split".into(),
    })?;
    if feat.is_empty() || label.is_empty() {
        return Err(Error::Parse {
            line: 1,
            detail: "manifest needs at least one feature and one label column".into(),
        });
    }
    if known.len() != label.len() {
        return Err(Error::Parse {
            line: 1,
            detail: format!(
                "{} label columns but {} known columns",
                label.len(),
                known.len()
            ),
        });
    }

    let n = label.len();
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut always_known = vec![true; n];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(row + 2, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                detail: format!("row has {} fields, header has {}", rec.len(), headers.len()),
            });
        }
        let features = feat
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                rec[c].trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Parse {
                        line,
                        detail: format!("feature_{i} is not a finite number: {:?}", &rec[c]),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = label
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_bit(&rec[c], line, &format!("label_{j}")))
            .collect::<Result<Vec<_>>>()?;
        let mask = known
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_bit(&rec[c], line, &format!("known_{j}")))
            .collect::<Result<Vec<_>>>()?;
        for (a, &k) in always_known.iter_mut().zip(&mask) {
            *a &= k == 1;
        }
        let sample = Sample::new(features, targets, mask, task_id)?;
        match rec[split_col].trim() {
            "train" => train.push(sample),
            "val" => val.push(sample),
            "test" => test.push(sample),
            other => {
                return Err(Error::Parse {
                    line,
                    detail: format!("unknown split {other:?}"),
                })
            }
        }
    }
    let n_samples = train.len() + val.len() + test.len();
    let label_set: Vec<usize> = (0..n).filter(|&j| always_known[j] && n_samples > 0).collect();
    Ok(TaskDataset {
        task: TaskSpec {
            task_id,
            label_set,
            domain_id,
            n_samples,
        },
        train,
        val,
        test,
    })
}
