//! Column-compressed transition matrices with per-entry radii.
//!
//! Binary layout (little endian): magic `ULAMSPM\0`, version `u32`, index width `u32`
//! (4 or 8), rows `u64`, cols `u64`, nnz `u64`, entry_tol `f64`, then `nnz` records of
//! `(row, col, value f64, radius f64)` in column-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::interval::{add_down, add_up, mul_up, Interval};

const MAGIC: &[u8; 8] = b"ULAMSPM\0";
const VERSION: u32 = 1;

/// Unit roundoff of binary64.
pub const U: f64 = f64::EPSILON / 2.0;

/// `k u / (1 - k u)` rounded up.
pub fn gamma(k: usize) -> f64 {
    let ku = k as f64 * U;
    (ku / (1.0 - ku)) * (1.0 + 4.0 * U)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseTransitionMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<u32>,
    pub value: Vec<f64>,
    pub radius: Vec<f64>,
    pub entry_tol: f64,
}

impl SparseTransitionMatrix {
    /// Builds the matrix from `(col, row, enclosure)` triplets; duplicates are summed.
    pub fn from_entries(
        n_rows: usize,
        n_cols: usize,
        mut entries: Vec<(u32, u32, Interval)>,
        entry_tol: f64,
    ) -> Self {
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut col_ptr = vec![0usize; n_cols + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut value = Vec::with_capacity(entries.len());
        let mut radius = Vec::with_capacity(entries.len());
        let mut i = 0;
        while i < entries.len() {
            let (c, r, mut acc) = entries[i];
            i += 1;
            while i < entries.len() && entries[i].0 == c && entries[i].1 == r {
                acc = acc + entries[i].2;
                i += 1;
            }
            col_ptr[c as usize + 1] += 1;
            row_idx.push(r);
            value.push(acc.mid());
            radius.push(acc.rad());
        }
        for c in 0..n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        SparseTransitionMatrix { n_rows, n_cols, col_ptr, row_idx, value, radius, entry_tol }
    }

    pub fn nnz(&self) -> usize {
        self.value.len()
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (self.col_ptr[c]..self.col_ptr[c + 1])
            .map(move |k| (self.row_idx[k] as usize, self.value[k], self.radius[k]))
    }

    pub fn entry(&self, row: usize, col: usize) -> Option<(f64, f64)> {
        let rows = &self.row_idx[self.col_ptr[col]..self.col_ptr[col + 1]];
        rows.binary_search(&(row as u32)).ok().map(|k| {
            let k = self.col_ptr[col] + k;
            (self.value[k], self.radius[k])
        })
    }

    pub fn max_radius(&self) -> f64 {
        self.radius.iter().cloned().fold(0.0, f64::max)
    }

    /// Upper bound on `max_col Σ radius`, i.e. on `‖P - P̂‖₁`.
    pub fn max_col_radius_sum(&self) -> f64 {
        (0..self.n_cols)
            .map(|c| self.radius[self.col_ptr[c]..self.col_ptr[c + 1]].iter().fold(0.0, |a, &r| add_up(a, r)))
            .fold(0.0, f64::max)
    }

    /// Enclosure of each column sum of the exact matrix.
    pub fn col_sums(&self) -> Vec<Interval> {
        (0..self.n_cols)
            .map(|c| {
                let (mut lo, mut hi) = (0.0, 0.0);
                for (_, v, r) in self.column(c) {
                    lo = add_down(lo, add_down(v, -r));
                    hi = add_up(hi, add_up(v, r));
                }
                Interval::new(lo, hi).unwrap()
            })
            .collect()
    }

    /// Upper bound on the midpoint matrix column sums.
    pub fn max_col_abs_sum(&self) -> f64 {
        (0..self.n_cols)
            .map(|c| self.value[self.col_ptr[c]..self.col_ptr[c + 1]].iter().fold(0.0, |a, &v| add_up(a, v.abs())))
            .fold(0.0, f64::max)
    }

    pub fn max_row_count(&self) -> usize {
        let mut cnt = vec![0u32; self.n_rows];
        for &r in &self.row_idx {
            cnt[r as usize] += 1;
        }
        cnt.into_iter().max().unwrap_or(0) as usize
    }

    /// `y = P̂ x` in plain floating point.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k] as usize] += self.value[k] * xc;
            }
        }
    }

    /// Upper bound on `‖fl(P̂x) - P x‖₁` for the exact matrix P, given `‖x‖₁ <= x_l1`.
    pub fn matvec_error(&self, x_l1: f64) -> f64 {
        let fp = mul_up(gamma(self.max_row_count() + 1), mul_up(self.max_col_abs_sum(), x_l1));
        add_up(fp, mul_up(self.max_col_radius_sum(), x_l1))
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let wide = self.n_rows.max(self.n_cols) > u32::MAX as usize;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(if wide { 8u32 } else { 4u32 }).to_le_bytes())?;
        w.write_all(&(self.n_rows as u64).to_le_bytes())?;
        w.write_all(&(self.n_cols as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        w.write_all(&self.entry_tol.to_le_bytes())?;
        for c in 0..self.n_cols {
            for (r, v, rad) in self.column(c) {
                if wide {
                    w.write_all(&(r as u64).to_le_bytes())?;
                    w.write_all(&(c as u64).to_le_bytes())?;
                } else {
                    w.write_all(&(r as u32).to_le_bytes())?;
                    w.write_all(&(c as u32).to_le_bytes())?;
                }
                w.write_all(&v.to_le_bytes())?;
                w.write_all(&rad.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{}: bad magic", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported matrix version {version}")));
        }
        let width = read_u32(&mut r)?;
        if width != 4 && width != 8 {
            return Err(Error::Format(format!("bad index width {width}")));
        }
        let n_rows = read_u64(&mut r)? as usize;
        let n_cols = read_u64(&mut r)? as usize;
        let nnz = read_u64(&mut r)? as usize;
        let entry_tol = f64::from_bits(read_u64(&mut r)?);
        let mut col_ptr = vec![0usize; n_cols + 1];
        let mut row_idx = Vec::with_capacity(nnz);
        let mut value = Vec::with_capacity(nnz);
        let mut radius = Vec::with_capacity(nnz);
        let mut last = (0usize, 0usize);
        for k in 0..nnz {
            let (row, col) = if width == 8 {
                (read_u64(&mut r)? as usize, read_u64(&mut r)? as usize)
            } else {
                (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize)
            };
            if row >= n_rows || col >= n_cols || (k > 0 && (col, row) <= (last.1, last.0)) {
                return Err(Error::Format(format!("entry {k} out of order or range")));
            }
            last = (row, col);
            col_ptr[col + 1] += 1;
            row_idx.push(row as u32);
            value.push(f64::from_bits(read_u64(&mut r)?));
            radius.push(f64::from_bits(read_u64(&mut r)?));
        }
        for c in 0..n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(SparseTransitionMatrix { n_rows, n_cols, col_ptr, row_idx, value, radius, entry_tol })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "row,col,value,radius")?;
        for c in 0..self.n_cols {
            for (r, v, rad) in self.column(c) {
                writeln!(w, "{r},{c},{v:e},{rad:e}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a `index,value` CSV with a header line.
pub(crate) fn read_indexed_csv(path: &Path) -> Result<Vec<f64>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (ln, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (i, v) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("{}:{}: expected two fields", path.display(), ln + 1)))?;
        let i: usize = i.trim().parse().map_err(|_| Error::Format(format!("bad index on line {}", ln + 1)))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::Format(format!("bad value on line {}", ln + 1)))?;
        if i != out.len() {
            return Err(Error::Format(format!("index {i} out of sequence on line {}", ln + 1)));
        }
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_merge_and_roundtrip() {
        let h = Interval::point(0.5);
        let m = SparseTransitionMatrix::from_entries(
            2,
            2,
            vec![(0, 0, h), (0, 1, h), (1, 1, Interval::point(0.25)), (1, 1, Interval::point(0.25)), (1, 0, h)],
            0.0,
        );
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.entry(1, 1), Some((0.5, 0.0)));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        m.write_binary(&p).unwrap();
        assert_eq!(SparseTransitionMatrix::read_binary(&p).unwrap(), m);
        std::fs::write(&p, b"garbage!").unwrap();
        assert!(SparseTransitionMatrix::read_binary(&p).is_err());
    }
}
