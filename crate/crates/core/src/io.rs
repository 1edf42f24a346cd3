//! On-disk formats: binary PGM images and the ensemble dump.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::measurement::{MeasurementVector, SpeckleEnsemble};

/// Grey-level image as stored in a P5 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    /// 255 or 65535.
    pub maxval: u16,
    pub samples: Vec<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(&self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

impl PgmImage {
    /// Quantizes `values / max(values)`; negatives and non-finite values map to 0.
    pub fn from_values(values: ArrayView2<f64>, depth: BitDepth) -> Self {
        let maxval = depth.maxval();
        let top = values.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, &v| m.max(v));
        let samples = values
            .iter()
            .map(|&v| {
                if top > 0.0 && v.is_finite() && v > 0.0 {
                    (v / top * maxval as f64).round().min(maxval as f64) as u16
                } else {
                    0
                }
            })
            .collect();
        Self {
            width: values.ncols(),
            height: values.nrows(),
            maxval,
            samples,
        }
    }

    /// Samples scaled to `[0, 1]`.
    pub fn to_values(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |(r, c)| {
            self.samples[r * self.width + c] as f64 / self.maxval as f64
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "P5\n{} {}\n{}\n", self.width, self.height, self.maxval)?;
        if self.maxval < 256 {
            out.write_all(&self.samples.iter().map(|&s| s as u8).collect::<Vec<_>>())?;
        } else {
            for s in &self.samples {
                out.write_all(&s.to_be_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let fail = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut pos = 0;
        let mut token = || -> Option<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token().as_deref() != Some("P5") {
            return Err(fail("not a binary PGM (P5)"));
        }
        let mut number = || token().and_then(|t| t.parse::<usize>().ok());
        let width = number().ok_or_else(|| fail("bad width"))?;
        let height = number().ok_or_else(|| fail("bad height"))?;
        let maxval = number().ok_or_else(|| fail("bad maxval"))?;
        if maxval == 0 || maxval > 65535 {
            return Err(fail("maxval outside 1..=65535"));
        }
        // exactly one whitespace byte separates the header from the raster
        let data = bytes.get(pos + 1..).ok_or_else(|| fail("missing raster"))?;
        let count = width * height;
        let samples: Vec<u16> = if maxval < 256 {
            if data.len() != count {
                return Err(fail("raster size does not match header"));
            }
            data.iter().map(|&b| b as u16).collect()
        } else {
            if data.len() != 2 * count {
                return Err(fail("raster size does not match header"));
            }
            data.chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]])).collect()
        };
        Ok(Self {
            width,
            height,
            maxval: maxval as u16,
            samples,
        })
    }
}

/// Writes `values` as a max-normalized PGM.
pub fn write_pgm(path: &Path, values: ArrayView2<f64>, depth: BitDepth) -> Result<()> {
    PgmImage::from_values(values, depth).write(path)
}

const MAGIC: &[u8; 4] = b"GISC";
const VERSION: u16 = 1;

/// Little-endian dump of paired reference images and bucket values.
pub fn write_ensemble(path: &Path, ensemble: &SpeckleEnsemble, y: &MeasurementVector) -> Result<()> {
    let k = ensemble.count();
    if k != y.len() {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: y.len(),
        });
    }
    let narrow = |v: usize, name: &'static str| {
        u16::try_from(v).map_err(|_| Error::InvalidArgument {
            name,
            reason: format!("{v} does not fit the dump header"),
        })
    };
    let (nx, ny) = (narrow(ensemble.grid.nx, "nx")?, narrow(ensemble.grid.ny, "ny")?);
    let k32 = u32::try_from(k).map_err(|_| Error::InvalidArgument {
        name: "K",
        reason: format!("{k} does not fit the dump header"),
    })?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&k32.to_le_bytes())?;
    out.write_all(&nx.to_le_bytes())?;
    out.write_all(&ny.to_le_bytes())?;
    out.write_all(&ensemble.grid.pitch.to_le_bytes())?;
    for v in ensemble.images.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in y.values.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<(SpeckleEnsemble, MeasurementVector)> {
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut input = BufReader::new(File::open(path)?);
    let mut header = [0u8; 22];
    input
        .read_exact(&mut header)
        .map_err(|_| fail("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(fail("missing GISC magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let k = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    let nx = u16::from_le_bytes([header[10], header[11]]) as usize;
    let ny = u16::from_le_bytes([header[12], header[13]]) as usize;
    let pitch = f64::from_le_bytes(header[14..22].try_into().expect("8 bytes"));
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let expected = (k * nx * ny + k) * 8;
    if body.len() != expected {
        return Err(fail(format!("expected {expected} payload bytes, found {}", body.len())));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let images = Array3::from_shape_vec((k, ny, nx), values.by_ref().take(k * nx * ny).collect())
        .map_err(|e| fail(e.to_string()))?;
    let buckets = Array1::from_iter(values);
    let grid = Grid::new(nx, ny, pitch).map_err(|e| fail(e.to_string()))?;
    let ensemble = SpeckleEnsemble::new(grid, images).map_err(|e| fail(e.to_string()))?;
    Ok((ensemble, MeasurementVector::noiseless(buckets)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pgm_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let values = array![[0.0, 0.25, 1.0], [-3.0, 0.5, f64::NAN]];
        for depth in [BitDepth::Eight, BitDepth::Sixteen] {
            let path = dir.path().join("img.pgm");
            let img = PgmImage::from_values(values.view(), depth);
            img.write(&path).unwrap();
            let back = PgmImage::read(&path).unwrap();
            assert_eq!(back, img);
            let path2 = dir.path().join("again.pgm");
            back.write(&path2).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
            let v = back.to_values();
            assert_eq!(v[(0, 2)], 1.0);
            assert_eq!(v[(1, 0)], 0.0);
            assert_eq!(v[(1, 2)], 0.0);
        }
    }

    #[test]
    fn pgm_header_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# made by hand\n2 1\n255\n\x10\x20").unwrap();
        let img = PgmImage::read(&path).unwrap();
        assert_eq!(img.samples, vec![16, 32]);
        std::fs::write(&path, b"P2\n2 1\n255\n1 2").unwrap();
        assert!(matches!(PgmImage::read(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn ensemble_dump_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.gisc");
        let grid = Grid::new(3, 2, 12.5e-6).unwrap();
        let images = Array3::from_shape_fn((2, 2, 3), |(k, r, c)| (k * 100 + r * 10 + c) as f64);
        let ensemble = SpeckleEnsemble::new(grid, images).unwrap();
        let y = MeasurementVector::noiseless(array![1.5, 2.5]);
        write_ensemble(&path, &ensemble, &y).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"GISC");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 3);
        assert_eq!(u16::from_le_bytes([bytes[12], bytes[13]]), 2);
        assert_eq!(f64::from_le_bytes(bytes[14..22].try_into().unwrap()), 12.5e-6);
        assert_eq!(bytes.len(), 22 + 8 * (12 + 2));
        let (e2, y2) = read_ensemble(&path).unwrap();
        assert_eq!(e2, ensemble);
        assert_eq!(y2.values, y.values);

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_ensemble(&path), Err(Error::Format { .. })));
    }
}
