//! Binary matrix formats and the dataset directory layout.
//!
//! All three formats share a 12-byte header: a 4-byte magic, then `rows` and
//! `cols` as little-endian u32, followed by `rows × cols` row-major entries.
//!
//! | format | magic  | entry            |
//! |--------|--------|------------------|
//! | FMAT   | `FMT1` | f64 little-endian|
//! | LMAT   | `LMT1` | u8 in {0, 1}     |
//! | IMAT   | `IMT1` | i8 in {−1, +1}   |

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::data::{CodeMatrix, FeatureMatrix, LabelMatrix};
use crate::error::{Error, Result};

pub const FMAT_MAGIC: &[u8; 4] = b"FMT1";
pub const LMAT_MAGIC: &[u8; 4] = b"LMT1";
pub const IMAT_MAGIC: &[u8; 4] = b"IMT1";

const HEADER: usize = 12;

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn header(rows: usize, cols: usize, magic: &[u8; 4], entry: usize) -> Result<Vec<u8>> {
    let r = u32::try_from(rows).map_err(|_| Error::InvalidArgument("too many rows".into()))?;
    let c = u32::try_from(cols).map_err(|_| Error::InvalidArgument("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER + rows * cols * entry);
    out.extend_from_slice(magic);
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    Ok(out)
}

fn parse_header(bytes: &[u8], magic: &[u8; 4], entry: usize, path: &Path) -> Result<(usize, usize)> {
    if bytes.len() < 4 {
        return Err(format_err(path, bytes.len(), "truncated magic"));
    }
    if &bytes[..4] != magic {
        return Err(format_err(
            path,
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    if bytes.len() < HEADER {
        return Err(format_err(path, bytes.len(), "truncated header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(entry))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| format_err(path, 4, "declared dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: {} bytes, expected {expected}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(
            path,
            expected,
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    Ok((rows, cols))
}

pub fn encode_fmat(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let mut out = header(m.nrows(), m.ncols(), FMAT_MAGIC, 8)?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes an FMAT payload, rejecting non-finite entries.
pub fn decode_fmat(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    let (rows, cols) = parse_header(bytes, FMAT_MAGIC, 8, path)?;
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let off = HEADER + (r * cols + c) * 8;
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(format_err(path, off, format!("non-finite value {v}")));
            }
            m[(r, c)] = v;
        }
    }
    Ok(m)
}

pub fn encode_lmat(m: &LabelMatrix) -> Result<Vec<u8>> {
    let v = m.values();
    let mut out = header(v.nrows(), v.ncols(), LMAT_MAGIC, 1)?;
    for r in 0..v.nrows() {
        for c in 0..v.ncols() {
            out.push(v[(r, c)]);
        }
    }
    Ok(out)
}

pub fn decode_lmat(bytes: &[u8], path: &Path) -> Result<LabelMatrix> {
    let (rows, cols) = parse_header(bytes, LMAT_MAGIC, 1, path)?;
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let off = HEADER + r * cols + c;
            let v = bytes[off];
            if v > 1 {
                return Err(format_err(path, off, format!("label value {v} not in {{0,1}}")));
            }
            m[(r, c)] = v;
        }
    }
    LabelMatrix::new(m)
}

pub fn encode_imat(m: &CodeMatrix) -> Result<Vec<u8>> {
    let v = m.values();
    let mut out = header(v.nrows(), v.ncols(), IMAT_MAGIC, 1)?;
    for r in 0..v.nrows() {
        for c in 0..v.ncols() {
            out.push(v[(r, c)] as u8);
        }
    }
    Ok(out)
}

pub fn decode_imat(bytes: &[u8], path: &Path) -> Result<CodeMatrix> {
    let (rows, cols) = parse_header(bytes, IMAT_MAGIC, 1, path)?;
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let off = HEADER + r * cols + c;
            let v = bytes[off] as i8;
            if v != 1 && v != -1 {
                return Err(format_err(path, off, format!("code value {v} not in {{-1,+1}}")));
            }
            m[(r, c)] = v;
        }
    }
    CodeMatrix::new(m)
}

/// `fs::read` with the path attached to any error.
pub fn read(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

pub fn save_feature_matrix(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    fs::write(path, encode_fmat(m.values())?)?;
    Ok(())
}

pub fn load_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = read(path)?;
    FeatureMatrix::new(decode_fmat(&bytes, path)?)
}

pub fn save_label_matrix(path: impl AsRef<Path>, m: &LabelMatrix) -> Result<()> {
    fs::write(path, encode_lmat(m)?)?;
    Ok(())
}

pub fn load_label_matrix(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    let path = path.as_ref();
    let bytes = read(path)?;
    decode_lmat(&bytes, path)
}

pub fn save_code_matrix(path: impl AsRef<Path>, m: &CodeMatrix) -> Result<()> {
    fs::write(path, encode_imat(m)?)?;
    Ok(())
}

pub fn load_code_matrix(path: impl AsRef<Path>) -> Result<CodeMatrix> {
    let path = path.as_ref();
    let bytes = read(path)?;
    decode_imat(&bytes, path)
}

pub fn save_categories(path: impl AsRef<Path>, names: &[String]) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(names)?)?;
    Ok(())
}

pub fn load_categories(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(serde_json::from_slice(&read(path)?)?)
}

/// A multi-modal labeled dataset: `modality_<m>.fmat`, `labels.lmat` and
/// `categories.json` inside one directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub modalities: Vec<FeatureMatrix>,
    pub labels: LabelMatrix,
    pub categories: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn modality_path(dir: &Path, m: usize) -> PathBuf {
        dir.join(format!("modality_{}.fmat", m + 1))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (m, x) in self.modalities.iter().enumerate() {
            save_feature_matrix(Self::modality_path(dir, m), x)?;
        }
        save_label_matrix(dir.join("labels.lmat"), &self.labels)?;
        save_categories(dir.join("categories.json"), &self.categories)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut modalities = Vec::new();
        loop {
            let p = Self::modality_path(dir, modalities.len());
            if !p.exists() {
                break;
            }
            modalities.push(load_feature_matrix(p)?);
        }
        if modalities.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{}: no modality_1.fmat found",
                dir.display()
            )));
        }
        let labels = load_label_matrix(dir.join("labels.lmat"))?;
        let categories = load_categories(dir.join("categories.json"))?;
        if categories.len() != labels.categories() {
            return Err(Error::Dimension(format!(
                "{} category names for {} label rows",
                categories.len(),
                labels.categories()
            )));
        }
        for (m, x) in modalities.iter().enumerate() {
            if x.len() != labels.len() {
                return Err(Error::Dimension(format!(
                    "modality {} has {} columns, labels have {}",
                    m + 1,
                    x.len(),
                    labels.len()
                )));
            }
        }
        Ok(Self {
            modalities,
            labels,
            categories,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_fmat(rows: u32, cols: u32, vals: &[f64]) -> Vec<u8> {
        let mut b = b"FMT1".to_vec();
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&cols.to_le_bytes());
        for v in vals {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn reads_row_major_fmat() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fmat");
        fs::write(&p, raw_fmat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let m = load_feature_matrix(&p).unwrap();
        assert_eq!(
            m.values(),
            &DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        );
        let again = dir.path().join("n.fmat");
        save_feature_matrix(&again, &m).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn empty_payload_is_accepted() {
        let p = Path::new("mem");
        assert_eq!(decode_fmat(&raw_fmat(0, 4, &[]), p).unwrap().shape(), (0, 4));
        assert_eq!(decode_fmat(&raw_fmat(3, 0, &[]), p).unwrap().shape(), (3, 0));
    }

    #[test]
    fn nan_reports_offset() {
        let bytes = raw_fmat(1, 3, &[1.0, f64::NAN, 2.0]);
        match decode_fmat(&bytes, Path::new("x.fmat")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = raw_fmat(1, 2, &[1.0, 2.0]);
        let p = Path::new("x");
        assert!(matches!(
            decode_fmat(&bytes[..bytes.len() - 3], p),
            Err(Error::Format { offset: 25, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_fmat(&bytes, p), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_fmat(&bytes[..6], p), Err(Error::Format { .. })));
    }

    #[test]
    fn label_and_code_validation() {
        let mut b = b"LMT1".to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&[1, 2]);
        assert!(matches!(decode_lmat(&b, Path::new("l")), Err(Error::Format { offset: 13, .. })));
        let mut c = b"IMT1".to_vec();
        c.extend_from_slice(&1u32.to_le_bytes());
        c.extend_from_slice(&2u32.to_le_bytes());
        c.extend_from_slice(&[1, 0]);
        assert!(matches!(decode_imat(&c, Path::new("c")), Err(Error::Format { offset: 13, .. })));
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            modalities: vec![
                FeatureMatrix::from_row_major(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap(),
                FeatureMatrix::from_row_major(1, 2, &[-1.0, 0.5]).unwrap(),
            ],
            labels: LabelMatrix::from_label_lists(2, &[vec![0], vec![0, 1]]).unwrap(),
            categories: vec!["tree".into(), "sky".into()],
        };
        ds.save(dir.path()).unwrap();
        assert!(dir.path().join("modality_2.fmat").exists());
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn formats_round_trip_bit_exactly(
            rows in 0usize..6,
            cols in 0usize..6,
            seed in proptest::collection::vec(any::<u64>(), 36),
        ) {
            let p = Path::new("mem");
            let vals: Vec<f64> = (0..rows * cols)
                .map(|i| f64::from_bits(seed[i] >> 2) * if seed[i] & 1 == 0 { 1.0 } else { -1.0 })
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let f = DMatrix::from_row_slice(rows, cols, &vals);
            let back = decode_fmat(&encode_fmat(&f).unwrap(), p).unwrap();
            prop_assert!(back.iter().zip(f.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));

            let codes = CodeMatrix::new(DMatrix::from_fn(rows, cols, |r, c| {
                if seed[r * 6 + c] & 2 == 0 { 1 } else { -1 }
            })).unwrap();
            prop_assert_eq!(decode_imat(&encode_imat(&codes).unwrap(), p).unwrap(), codes);

            let labels = LabelMatrix::new(DMatrix::from_fn(rows, cols, |r, c| {
                (seed[r * 6 + c] & 4 == 0) as u8
            })).unwrap();
            prop_assert_eq!(decode_lmat(&encode_lmat(&labels).unwrap(), p).unwrap(), labels);
        }
    }
}
