use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Dataset;

const IDX_UBYTE: u8 = 0x08;

struct IdxArray<'a> {
    dims: Vec<usize>,
    data: &'a [u8],
}

fn parse_idx_array<'a>(bytes: &'a [u8], name: &str) -> Result<IdxArray<'a>> {
    if bytes.len() < 4 {
        return Err(Error::parse(name, "byte 0", format!("file holds {} bytes, too short for the magic number", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::parse(
            name,
            "byte 0",
            format!("bad magic {:02x}{:02x}{:02x}{:02x}: expected two leading zero bytes", bytes[0], bytes[1], bytes[2], bytes[3]),
        ));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(Error::parse(name, "byte 2", format!("unsupported element type 0x{:02x}; only unsigned bytes (0x08) are read", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::parse(name, "byte 3", "zero dimensions"));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::parse(
            name,
            format!("byte {}", bytes.len()),
            format!("header truncated: expected {header} bytes, found {}", bytes.len()),
        ));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::parse(
            name,
            format!("byte {header}"),
            format!("expected {expected} data bytes for dimensions {dims:?}, found {actual}"),
        ));
    }
    Ok(IdxArray { dims, data: &bytes[header..] })
}

/// Parses an IDX image/label pair (the MNIST container). Pixel bytes are
/// scaled to [0, 1]; the class count is the largest label plus one.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let img = parse_idx_array(images, "images")?;
    let lab = parse_idx_array(labels, "labels")?;
    if lab.dims.len() != 1 {
        return Err(Error::parse("labels", "byte 3", format!("expected 1 dimension, found {}", lab.dims.len())));
    }
    if img.dims.len() < 2 {
        return Err(Error::parse("images", "byte 3", format!("expected at least 2 dimensions, found {}", img.dims.len())));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::parse(
            "labels",
            "byte 4",
            format!("{} labels for {} images", lab.dims[0], img.dims[0]),
        ));
    }
    let dim: usize = img.dims[1..].iter().product();
    let labels: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let features = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(features, dim, labels, num_classes)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx(&fs::read(images)?, &fs::read(labels)?).map_err(|e| match e {
        Error::Parse { source_name, position, message } => {
            let path = if source_name == "images" { images } else { labels };
            Error::Parse { source_name: path.display().to_string(), position, message }
        }
        other => other,
    })
}

/// Reads `label,f0,f1,...` rows.
pub fn parse_csv<R: Read>(reader: R, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("label") || headers.len() < 2 {
        return Err(Error::parse(name, "line 1", "header must be `label,f0,f1,...`"));
    }
    let dim = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = format!("line {}", i + 2);
        if record.len() != dim + 1 {
            return Err(Error::parse(name, line, format!("expected {} fields, found {}", dim + 1, record.len())));
        }
        let label = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::parse(name, line.clone(), format!("label `{}` is not a non-negative integer", &record[0])))?;
        labels.push(label);
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(name, line.clone(), format!("feature f{j} `{field}` is not a number")))?;
            features.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(name, "line 2", "no data rows"));
    }
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, dim, labels, num_classes)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    parse_csv(fs::File::open(path)?, &path.display().to_string())
}

pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec = vec![ds.label(i).to_string()];
        rec.extend(ds.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `sampleIndex,clientId` file into a row → client vector. Every
/// index in `0..rows` must appear exactly once.
pub fn parse_assignment<R: Read>(reader: R, name: &str) -> Result<Vec<usize>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["sampleIndex", "clientId"] {
        return Err(Error::parse(name, "line 1", "header must be `sampleIndex,clientId`"));
    }
    let mut pairs = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = format!("line {}", i + 2);
        let field = |j: usize| -> Result<usize> {
            record
                .get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::parse(name, line.clone(), "expected two non-negative integers"))
        };
        pairs.push((field(0)?, field(1)?, line.clone()));
    }
    let mut assignment = vec![usize::MAX; pairs.len()];
    for (idx, client, line) in pairs {
        match assignment.get_mut(idx) {
            Some(slot) if *slot == usize::MAX => *slot = client,
            Some(_) => return Err(Error::parse(name, line, format!("sample {idx} assigned twice"))),
            None => return Err(Error::parse(name, line, format!("sample index {idx} out of range"))),
        }
    }
    Ok(assignment)
}

pub fn load_assignment(path: &Path) -> Result<Vec<usize>> {
    parse_assignment(fs::File::open(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(magic_type: u8, dims: &[u32], data: &[u8]) -> Vec<u8> {
        let mut out = vec![0, 0, magic_type, dims.len() as u8];
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn idx_pair_roundtrip() {
        let images = idx(8, &[2, 2, 2], &[0, 255, 51, 102, 0, 0, 0, 255]);
        let labels = idx(8, &[2], &[3, 9]);
        let ds = parse_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn idx_errors_name_position() {
        let labels = idx(8, &[2], &[3, 9]);
        let truncated = idx(8, &[2, 2, 2], &[0, 1, 2]);
        let err = parse_idx(&truncated, &labels).unwrap_err().to_string();
        assert!(err.contains("expected 8 data bytes"), "{err}");
        assert!(err.contains("found 3"), "{err}");
        let bad_magic = vec![1, 0, 8, 1, 0, 0, 0, 0];
        assert!(parse_idx(&idx(8, &[1, 1], &[0]), &bad_magic).unwrap_err().to_string().contains("bad magic"));
        let mismatch = idx(8, &[3], &[0, 1, 2]);
        assert!(parse_idx(&idx(8, &[2, 1], &[0, 1]), &mismatch).is_err());
    }

    #[test]
    fn csv_shape_and_errors() {
        let ds = parse_csv("label,f0,f1\n0,1.5,2\n1,0,0\n2,-1,3e-1\n".as_bytes(), "t").unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.row(2), &[-1.0, 0.3]);
        let ragged = parse_csv("label,f0,f1\n0,1,2\n1,0\n".as_bytes(), "t").unwrap_err().to_string();
        assert!(ragged.contains("line 3"), "{ragged}");
        let bad_label = parse_csv("label,f0\n-1,0\n".as_bytes(), "t").unwrap_err().to_string();
        assert!(bad_label.contains("line 2"), "{bad_label}");
        assert!(parse_csv("y,f0\n0,0\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn csv_write_then_read() {
        let ds = Dataset::new(vec![0.25, -1.0, 3.0, 1e-7], 2, vec![1, 0], 2).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert!(buf.starts_with(b"label,f0,f1\n1,0.25,-1\n"));
        assert_eq!(parse_csv(buf.as_slice(), "t").unwrap(), ds);
    }

    #[test]
    fn assignment_file() {
        let a = parse_assignment("sampleIndex,clientId\n1,0\n0,1\n2,1\n".as_bytes(), "a").unwrap();
        assert_eq!(a, vec![1, 0, 1]);
        assert!(parse_assignment("sampleIndex,clientId\n0,0\n0,1\n".as_bytes(), "a").is_err());
        assert!(parse_assignment("sampleIndex,clientId\n5,0\n".as_bytes(), "a").is_err());
    }
}
