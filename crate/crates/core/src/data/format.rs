//! Dataset files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic   8 bytes "ASCLDS1\0"
//! M       u32   number of records
//! D       u32   features per record
//! C       u32   number of classes
//! split   u8    0 train, 1 test
//! M records of D x f64 features followed by a u32 label
//! ```
//!
//! CSV files carry a header row `f0,...,f{D-1},label`.

use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"ASCLDS1\0";
const HEADER_LEN: usize = 8 + 4 * 3 + 1;

pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    for v in [d.len(), d.dim(), d.num_classes()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&[d.split().as_u8()])?;
    for (row, &label) in d.features().row_iter().zip(d.labels()) {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(label as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + d.len() * (d.dim() * 8 + 4));
    write_dataset(d, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn u32_at(buf: &[u8], at: usize) -> usize {
    u32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes")) as usize
}

/// Parses a binary dataset; `name` becomes the dataset name.
pub fn read_dataset<R: Read>(mut r: R, name: &str) -> Result<Dataset> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < HEADER_LEN {
        return Err(format_err(buf.len(), "file ends inside the header"));
    }
    if &buf[..8] != DATASET_MAGIC {
        return Err(format_err(0, "bad magic, not a dataset file"));
    }
    let (m, d, c) = (u32_at(&buf, 8), u32_at(&buf, 12), u32_at(&buf, 16));
    if m == 0 {
        return Err(format_err(8, "record count is zero"));
    }
    if c == 0 {
        return Err(format_err(16, "class count is zero"));
    }
    let split = Split::from_u8(buf[20]).ok_or_else(|| format_err(20, format!("bad split tag {}", buf[20])))?;
    let record = d * 8 + 4;
    let expected = m
        .checked_mul(record)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(8, "header sizes overflow"))?;
    if buf.len() < expected {
        let complete = (buf.len() - HEADER_LEN) / record;
        return Err(format_err(
            HEADER_LEN + complete * record,
            format!("truncated: header promises {m} records, file holds {complete} complete"),
        ));
    }
    if buf.len() > expected {
        return Err(format_err(expected, "trailing bytes after the last record"));
    }
    let mut data = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let base = HEADER_LEN + i * record;
        for j in 0..d {
            let at = base + 8 * j;
            let v = f64::from_le_bytes(buf[at..at + 8].try_into().expect("8 bytes"));
            if !(0.0..=1.0).contains(&v) {
                return Err(format_err(at, format!("feature {v} outside [0, 1]")));
            }
            data.push(v);
        }
        let label = u32_at(&buf, base + 8 * d);
        if label >= c {
            return Err(format_err(base + 8 * d, format!("label {label} >= class count {c}")));
        }
        labels.push(label);
    }
    Dataset::new(name, split, Tensor::new(vec![m, d], data)?, labels, c)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    read_dataset(std::fs::File::open(path)?, &name)
}

pub fn export_csv<W: Write>(d: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..d.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    out.write_record(&header).map_err(csv_err)?;
    for (row, label) in d.features().row_iter().zip(d.labels()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV with a header row whose last column is the label. The class
/// count is `num_classes` when given, else one more than the largest label.
pub fn import_csv<R: Read>(
    r: R,
    name: &str,
    split: Split,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(r);
    let width = rdr.headers().map_err(csv_err)?.len();
    if width < 2 {
        return Err(format_err(0, "CSV needs at least one feature column and a label"));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        if rec.len() != width {
            return Err(format_err(offset, format!("expected {width} fields, got {}", rec.len())));
        }
        let row = rec
            .iter()
            .take(width - 1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(offset, format!("bad feature: {e}")))?;
        let label = rec[width - 1]
            .trim()
            .parse::<usize>()
            .map_err(|e| format_err(offset, format!("bad label: {e}")))?;
        rows.push(row);
        labels.push(label);
    }
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&l| l + 1));
    Dataset::new(name, split, Tensor::from_rows(&rows)?, labels, c)
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Format {
        offset,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, make_two_moons, BlobsConfig};

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let d = make_two_moons(57, 0.2, 11).unwrap().with_split(Split::Test);
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 57 * (2 * 8 + 4));
        let back = read_dataset(buf.as_slice(), "two-moons").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn truncation_reports_offset() {
        let d = make_two_moons(10, 0.1, 1).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        match read_dataset(&buf[..buf.len() - 3], "x") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, HEADER_LEN + 9 * 20),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_dataset(&buf[..10], "x"), Err(Error::Format { .. })));
    }

    #[test]
    fn record_count_must_match_header() {
        let d = make_blobs(&BlobsConfig {
            classes: 3,
            per_class: 4,
            dims: 2,
            spread: 0.1,
            seed: 0,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        for claimed in [1u32, 11, 13, 1000] {
            let mut b = buf.clone();
            b[8..12].copy_from_slice(&claimed.to_le_bytes());
            assert!(
                matches!(read_dataset(b.as_slice(), "x"), Err(Error::Format { .. })),
                "claimed {claimed}"
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = make_two_moons(20, 0.05, 3).unwrap();
        let mut buf = Vec::new();
        export_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f0,f1,label\n"));
        let back = import_csv(buf.as_slice(), "two-moons", Split::Train, Some(2)).unwrap();
        assert_eq!(back, d);
    }
}
