//! Density and level-set files (binary and CSV) and the history table.
//!
//! Binary layouts, all little-endian, values x-fastest:
//!
//! * density: `b"TPDN"`, `u32` version (1), `u32` D, D x `u32` dims, then one
//!   `f64` per element.
//! * level set: `b"TPLS"`, `u32` version (1), `u32` D, D x `u32` dims, `f64`
//!   element size (1), `f64` theta, `f64` kappa, `f64` w_max, `f64` support
//!   radius, then one `f64` weight per centroid.

use std::fmt::Write as _;
use std::path::Path;

use super::io_err;
use crate::error::{Error, Result};
use crate::history::HistoryRow;
use crate::levelset::{RbfLevelSet, SUPPORT_RADIUS};
use crate::simp::DensityField;

const DENSITY_MAGIC: &[u8; 4] = b"TPDN";
const LSF_MAGIC: &[u8; 4] = b"TPLS";
const VERSION: u32 = 1;

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4], dims: &[usize]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.bytes.len()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> std::result::Result<Vec<usize>, String> {
        if self.take(4)? != magic {
            return Err(format!("missing {} magic", String::from_utf8_lossy(magic)));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(format!("unsupported version {v}"));
        }
        let dim = self.u32()? as usize;
        if !(1..=3).contains(&dim) {
            return Err(format!("dimension {dim} out of range"));
        }
        let dims = (0..dim)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if dims.contains(&0) {
            return Err("zero extent".into());
        }
        Ok(dims)
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

fn format_err(path: &Path) -> impl FnOnce(String) -> Error + '_ {
    move |message| Error::Format {
        path: path.to_path_buf(),
        message,
    }
}

pub fn write_density(path: &Path, field: &DensityField) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 8 * field.len());
    put_header(&mut out, DENSITY_MAGIC, field.dims());
    put_f64s(&mut out, &field.values);
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn read_density(path: &Path) -> Result<DensityField> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let parsed = (|| {
        let dims = r.header(DENSITY_MAGIC)?;
        let values = r.f64s(dims.iter().product())?;
        r.finish()?;
        Ok((dims, values))
    })();
    let (dims, values) = parsed.map_err(format_err(path))?;
    DensityField::new(&dims, values).map_err(|e| format_err(path)(e.to_string()))
}

pub fn write_level_set(path: &Path, lsf: &RbfLevelSet) -> Result<()> {
    let mut out = Vec::with_capacity(56 + 8 * lsf.weights.len());
    put_header(&mut out, LSF_MAGIC, lsf.dims());
    put_f64s(&mut out, &[1.0, lsf.theta, lsf.kappa, lsf.w_max, SUPPORT_RADIUS]);
    put_f64s(&mut out, &lsf.weights);
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn read_level_set(path: &Path) -> Result<RbfLevelSet> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let parsed = (|| {
        let dims = r.header(LSF_MAGIC)?;
        let [h, theta, kappa, w_max, radius] = [r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        if h != 1.0 || radius != SUPPORT_RADIUS {
            return Err(format!("unsupported element size {h} or support radius {radius}"));
        }
        let weights = r.f64s(dims.iter().product())?;
        r.finish()?;
        Ok((dims, theta, kappa, w_max, weights))
    })();
    let (dims, theta, kappa, w_max, weights) = parsed.map_err(format_err(path))?;
    let mut lsf = RbfLevelSet::new(&dims, weights, w_max).map_err(|e| format_err(path)(e.to_string()))?;
    lsf.theta = theta;
    lsf.kappa = kappa;
    Ok(lsf)
}

fn index_columns(dim: usize) -> &'static str {
    ["i", "i,j", "i,j,k"][dim - 1]
}

fn write_index(s: &mut String, dims: &[usize], n: usize) {
    let mut rest = n;
    for (d, &len) in dims.iter().enumerate() {
        if d > 0 {
            s.push(',');
        }
        let _ = write!(s, "{}", rest % len);
        rest /= len;
    }
}

pub fn write_density_csv(path: &Path, field: &DensityField) -> Result<()> {
    let mut s = format!("{},rho\n", index_columns(field.dims().len()));
    for (n, v) in field.values.iter().enumerate() {
        write_index(&mut s, field.dims(), n);
        let _ = writeln!(s, ",{v}");
    }
    std::fs::write(path, s).map_err(io_err(path))
}

pub fn write_level_set_csv(path: &Path, lsf: &RbfLevelSet) -> Result<()> {
    let mut s = format!(
        "# theta={},kappa={},w_max={},support_radius={SUPPORT_RADIUS}\n{},weight\n",
        lsf.theta,
        lsf.kappa,
        lsf.w_max,
        index_columns(lsf.dim())
    );
    for (n, w) in lsf.weights.iter().enumerate() {
        write_index(&mut s, lsf.dims(), n);
        let _ = writeln!(s, ",{w}");
    }
    std::fs::write(path, s).map_err(io_err(path))
}

/// `stage,iteration,compliance,c_over_cref,volume_ratio`.
pub fn write_history_csv(path: &Path, rows: &[HistoryRow], c_ref: f64) -> Result<()> {
    let mut s = String::from("stage,iteration,compliance,c_over_cref,volume_ratio\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.stage,
            r.iteration,
            r.compliance,
            r.compliance / c_ref,
            r.volume_ratio
        );
    }
    std::fs::write(path, s).map_err(io_err(path))
}

/// Rows of a file written by [`write_history_csv`].
pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some("stage,iteration,compliance,c_over_cref,volume_ratio") {
        return Err(format_err(path)("unexpected header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let bad = || format_err(path)(format!("bad row {}: `{line}`", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(HistoryRow {
                stage: f[0].parse().map_err(|_| bad())?,
                iteration: f[1].parse().map_err(|_| bad())?,
                compliance: f[2].parse().map_err(|_| bad())?,
                volume_ratio: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_roundtrip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tpdn");
        let field = DensityField::new(&[3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.0]).unwrap();
        write_density(&p, &field).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"TPDN");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 6 * 8);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 0.1);
        assert_eq!(read_density(&p).unwrap(), field);
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_density(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn level_set_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.tpls");
        let mut lsf = RbfLevelSet::new(&[2, 2, 2], (0..8).map(|i| i as f64 * 0.05 - 0.2).collect(), 0.3).unwrap();
        lsf.theta = 0.123;
        lsf.kappa = 24.5;
        write_level_set(&p, &lsf).unwrap();
        assert_eq!(read_level_set(&p).unwrap(), lsf);
        assert!(matches!(read_density(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_forms() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_density_csv(&p, &DensityField::new(&[2, 2], vec![0.5, 1.0, 0.25, 0.75]).unwrap()).unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert_eq!(s, "i,j,rho\n0,0,0.5\n1,0,1\n0,1,0.25\n1,1,0.75\n");
        let h = dir.path().join("h.csv");
        let rows = [HistoryRow {
            stage: 1,
            iteration: 1,
            compliance: 50.0,
            volume_ratio: 1.0,
        }];
        write_history_csv(&h, &rows, 100.0).unwrap();
        assert_eq!(
            std::fs::read_to_string(&h).unwrap(),
            "stage,iteration,compliance,c_over_cref,volume_ratio\n1,1,50,0.5,1\n"
        );
        assert_eq!(read_history_csv(&h).unwrap(), rows);
        let missing = dir.path().join("no/such/dir/x.csv");
        assert!(matches!(write_history_csv(&missing, &rows, 1.0), Err(Error::Io { .. })));
    }
}
