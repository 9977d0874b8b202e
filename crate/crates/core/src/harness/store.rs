//! On-disk layout: JSON-lines run records, pretty JSON summaries, and
//! datasets as CSV with a JSON metadata sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::dataset::{DatasetMeta, IdentDataset};
use super::experiment::SweepRow;
use crate::error::{Error, Result};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn dataset_stem(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("dataset_{id:05}"))
}

/// Writes `dataset_NNNNN.csv` (`t,u,y`) and `dataset_NNNNN.json`.
pub fn write_dataset(dir: &Path, ds: &IdentDataset) -> Result<()> {
    let stem = dataset_stem(dir, ds.id);
    let mut w = BufWriter::new(File::create(stem.with_extension("csv"))?);
    writeln!(w, "t,u,y")?;
    for (t, (u, y)) in ds.u.samples().iter().zip(ds.y.samples()).enumerate() {
        writeln!(w, "{t},{u:?},{y:?}")?;
    }
    w.flush()?;
    write_json(&stem.with_extension("json"), &ds.meta())
}

/// Reads a dataset back from its CSV and checks it against the sidecar
/// metadata.
pub fn read_dataset(dir: &Path, id: usize) -> Result<IdentDataset> {
    let stem = dataset_stem(dir, id);
    let meta: DatasetMeta = read_json(&stem.with_extension("json"))?;
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (n, line) in BufReader::new(File::open(stem.with_extension("csv"))?)
        .lines()
        .enumerate()
        .skip(1)
    {
        let line = line?;
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", n + 1)))
        };
        if cols.len() != 3 {
            return Err(Error::InvalidArgument(format!("line {}: expected 3 columns", n + 1)));
        }
        u.push(parse(cols[1])?);
        y.push(parse(cols[2])?);
    }
    let ds = IdentDataset::from_meta(&meta)?;
    if ds.u.samples() != u.as_slice() || ds.y.samples() != y.as_slice() {
        return Err(Error::InvalidArgument(format!(
            "dataset {id} does not match its metadata"
        )));
    }
    Ok(ds)
}

/// Plot-ready sweep table: `key,test_input,mean,std,abs_mean,rho_rep0,...`.
pub fn write_sweep_csv(path: &Path, key_name: &str, rows: &[SweepRow]) -> Result<()> {
    let reps = rows.iter().map(|r| r.per_repetition.len()).max().unwrap_or(0);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "{key_name},test_input,mean,std,abs_mean")?;
    for r in 0..reps {
        write!(w, ",rho_rep{r}")?;
    }
    writeln!(w)?;
    let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
    for row in rows {
        write!(
            w,
            "{},{},{},{},{}",
            row.key,
            row.test_input,
            cell(row.mean),
            cell(row.std),
            cell(row.abs_mean)
        )?;
        for v in &row.per_repetition {
            write!(w, ",{}", cell(*v))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
