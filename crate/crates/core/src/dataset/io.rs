use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{LabelSpace, SampleSet};
use crate::codec::{to_usize, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::scalar::Scalar;

pub const FEATURE_MAGIC: &[u8; 4] = b"DTRC";
pub const FEATURE_VERSION: u32 = 1;

/// Everything in a feature file ahead of the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureHeader {
    pub version: u32,
    pub n_samples: usize,
    pub n_features: usize,
    pub class_names: Vec<String>,
}

/// Serialises to the `DTRC` layout, little-endian throughout:
///
/// ```text
/// "DTRC" | u32 version=1 | u64 n | u64 m | u32 classes
/// classes x (u16 byte length, UTF-8 name)
/// n*m f32 features, row-major
/// n u32 labels
/// ```
///
/// Features are narrowed to `f32`.
pub fn encode_features<T: Scalar>(data: &SampleSet<T>) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(FEATURE_MAGIC);
    w.u32(FEATURE_VERSION);
    w.u64(data.n_samples() as u64);
    w.u64(data.n_features() as u64);
    let names = data.label_space().names();
    w.u32(
        u32::try_from(names.len()).map_err(|_| Error::invalid("too many classes for u32 count"))?,
    );
    for name in names {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("class name longer than {} bytes", u16::MAX)))?;
        w.u16(len);
        w.bytes(name.as_bytes());
    }
    for v in data.features().iter() {
        w.f32(v.to_f32().unwrap_or(f32::NAN));
    }
    for &l in data.labels() {
        w.u32(l as u32);
    }
    Ok(w.finish())
}

fn decode_header(r: &mut Reader<'_>) -> Result<FeatureHeader, FormatError> {
    r.magic_and_version(FEATURE_MAGIC, FEATURE_VERSION)?;
    let n_samples = to_usize(r.u64("sample count")?, "sample count")?;
    let n_features = to_usize(r.u64("feature count")?, "feature count")?;
    let classes = r.u32("class count")? as usize;
    let mut class_names = Vec::with_capacity(classes.min(1 << 16));
    for _ in 0..classes {
        let len = r.u16("class name length")? as usize;
        let bytes = r.take(len, "class name")?;
        let name = std::str::from_utf8(bytes)
            .map_err(|_| FormatError::Invalid("class name is not UTF-8".into()))?;
        class_names.push(name.to_owned());
    }
    Ok(FeatureHeader {
        version: FEATURE_VERSION,
        n_samples,
        n_features,
        class_names,
    })
}

pub fn decode_features<T: Scalar>(bytes: &[u8]) -> Result<SampleSet<T>, FormatError> {
    let mut r = Reader::new(bytes);
    let header = decode_header(&mut r)?;
    let (n, m) = (header.n_samples, header.n_features);
    let cells = n
        .checked_mul(m)
        .ok_or_else(|| FormatError::Invalid("feature matrix size overflows".into()))?;
    let payload = r.take(
        cells.checked_mul(4).ok_or(FormatError::Truncated { what: "features" })?,
        "features",
    )?;
    let values: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().expect("chunk of 4"))).unwrap_or_else(T::nan))
        .collect();
    let classes = header.class_names.len();
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let l = r.u32("labels")? as u64;
        if l as usize >= classes {
            return Err(FormatError::LabelOutOfRange { label: l, classes });
        }
        labels.push(l as usize);
    }
    r.expect_end()?;
    let features = Array2::from_shape_vec((n, m), values).expect("shape checked");
    let space = LabelSpace::new(header.class_names)
        .map_err(|e| FormatError::Invalid(e.to_string()))?;
    SampleSet::new(features, labels, space).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_features<T: Scalar>(data: &SampleSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features<T: Scalar>(path: impl AsRef<Path>) -> Result<SampleSet<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses only the header; the payload is not validated.
pub fn read_header(path: impl AsRef<Path>) -> Result<FeatureHeader> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_header(&mut Reader::new(&bytes)).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Debug export: header `f0,...,f{m-1},label`, label written as its index.
pub fn write_csv<T: Scalar>(data: &SampleSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let header: Vec<String> = (0..data.n_features()).map(|j| format!("f{j}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",label\n");
    for (row, &label) in data.features().rows().into_iter().zip(data.labels()) {
        for v in row {
            out.push_str(&v.to_string());
            out.push(',');
        }
        out.push_str(&label.to_string());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> SampleSet<f32> {
        SampleSet::new(
            array![[1.5f32, -2.0, 0.0]],
            vec![0],
            LabelSpace::new(["norm"]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn smallest_instance_layout() {
        let bytes = encode_features(&tiny()).unwrap();
        let header = 4 + 4 + 8 + 8 + 4 + (2 + 4);
        assert_eq!(bytes.len(), header + 12 + 4);
        assert_eq!(&bytes[..4], b"DTRC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[header..header + 4], &1.5f32.to_le_bytes());
        assert_eq!(decode_features::<f32>(&bytes).unwrap(), tiny());
    }

    #[test]
    fn file_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dtrc");
        write_features(&tiny(), &path).unwrap();
        assert_eq!(read_features::<f32>(&path).unwrap(), tiny());
        let h = read_header(&path).unwrap();
        assert_eq!((h.n_samples, h.n_features), (1, 3));
        assert_eq!(h.class_names, vec!["norm".to_string()]);
    }

    #[test]
    fn distinct_errors() {
        let good = encode_features(&tiny()).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        let err = decode_features::<f32>(&bad).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic { .. }));
        assert!(err.to_string().contains("bad magic"));

        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_features::<f32>(&bad).unwrap_err(),
            FormatError::VersionMismatch { found: 2, .. }
        ));

        let bad = &good[..good.len() - 2];
        assert!(matches!(
            decode_features::<f32>(bad).unwrap_err(),
            FormatError::Truncated { .. }
        ));

        let mut bad = good.clone();
        let end = bad.len();
        bad[end - 4..].copy_from_slice(&5u32.to_le_bytes());
        assert_eq!(
            decode_features::<f32>(&bad).unwrap_err(),
            FormatError::LabelOutOfRange { label: 5, classes: 1 }
        );
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            read_features::<f32>("/no/such/file.dtrc").unwrap_err(),
            Error::FileNotFound(_)
        ));
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv(&tiny(), &path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "f0,f1,f2,label\n1.5,-2,0,0\n");
    }
}
