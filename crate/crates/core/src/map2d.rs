//! Skew products `F(x, y) = (T(x), G(x, y))` whose fibre maps are affine in `y`, their
//! geometric constants, and localization of the attractor on a cell grid.
//!
//! On a branch of `T^m` the iterate is `F^m(x, y) = (T^m x, A(x) + C(x) y)`, where `A` and
//! `C` follow the recursion `A ← a(x_s) + c(x_s) A`, `C ← c(x_s) C` along the orbit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Compiled, Expr, Var};
use crate::interval::{add_up, Interval, Rational};
use crate::map1d::{branch_partition, lorenz_1d, sup_abs, IteratedMap, PiecewiseMap1D};
use crate::ulam1d::StepDensity1D;

/// Fibre map of one base branch, `G(x, y) = a(x) + c(x) y`.
#[derive(Clone, Debug)]
pub struct FiberBranch {
    pub g: Expr,
    a: Compiled,
    c: Compiled,
    da: Compiled,
    dc: Compiled,
}

impl FiberBranch {
    /// Splits `g` into `a + c·y`; fails unless `∂g/∂y` is free of `y`.
    pub fn new(g: Expr) -> Result<Self> {
        let c = g.diff(Var::Y);
        if c.depends_on(Var::Y) {
            return Err(Error::Inconsistent(format!("fibre map {g} is not affine in y")));
        }
        let a = g.subst(&Expr::X, &Expr::int(0));
        Ok(FiberBranch {
            da: a.diff(Var::X).compile()?,
            dc: c.diff(Var::X).compile()?,
            a: a.compile()?,
            c: c.compile()?,
            g,
        })
    }
}

/// Values and x-derivatives of `T^m`, `A` and `C` over an x-interval.
#[derive(Clone, Copy, Debug)]
pub struct FiberJet {
    pub x: Interval,
    pub dx: Interval,
    pub a: Interval,
    pub c: Interval,
    pub da: Interval,
    pub dc: Interval,
}

impl FiberJet {
    /// Enclosure of `A + C y`.
    pub fn g(&self, y: Interval) -> Interval {
        self.a + self.c * y
    }

    /// Enclosure of `∂x(A + C y)`.
    pub fn dg(&self, y: Interval) -> Interval {
        self.da + self.dc * y
    }
}

#[derive(Clone, Debug)]
pub struct SkewProductMap {
    pub base: PiecewiseMap1D,
    pub fibers: Vec<FiberBranch>,
    /// Branches of `T^m`.
    pub iterate: IteratedMap,
}

impl SkewProductMap {
    pub fn new(base: PiecewiseMap1D, fibers: Vec<Expr>, m: usize) -> Result<Self> {
        if fibers.len() != base.branches.len() {
            return Err(Error::Inconsistent(format!(
                "{} fibre maps for {} base branches",
                fibers.len(),
                base.branches.len()
            )));
        }
        let fibers = fibers.into_iter().map(FiberBranch::new).collect::<Result<Vec<_>>>()?;
        let iterate = branch_partition(&base, m)?;
        let f = SkewProductMap { base, fibers, iterate };
        f.check_fibres()?;
        Ok(f)
    }

    /// Fibre maps must preserve orientation (`c >= 0`) and send `[0, 1]` into itself.
    fn check_fibres(&self) -> Result<()> {
        for (b, (br, fb)) in self.base.branches.iter().zip(&self.fibers).enumerate() {
            let d = br.domain();
            let n = 256;
            for i in 0..n {
                let lo = d.lo() + (d.hi() - d.lo()) * i as f64 / n as f64;
                let hi = if i + 1 == n { d.hi() } else { d.lo() + (d.hi() - d.lo()) * (i + 1) as f64 / n as f64 };
                let x = Interval::new(lo, hi)?;
                let c = fb.c.eval_x(x)?;
                if c.hi() < 0.0 {
                    return Err(Error::Inconsistent(format!("fibre map of branch {b} reverses orientation")));
                }
                let g = fb.a.eval_x(x)? + c.max(&Interval::point(0.0)) * Interval::unit();
                if g.lo() < -1e-9 || g.hi() > 1.0 + 1e-9 {
                    return Err(Error::Inconsistent(format!("fibre map of branch {b} leaves [0, 1] near x = {}", x.mid())));
                }
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.iterate.m
    }

    pub fn branch_count(&self) -> usize {
        self.iterate.branches.len()
    }

    /// Jet of branch `k` of `F^m` over `x` (clamped to the branch domain).
    pub fn jet(&self, k: usize, x: Interval) -> Result<FiberJet> {
        let br = &self.iterate.branches[k];
        let mut x = x.clamp_to(&br.domain());
        let one = Interval::point(1.0);
        let zero = Interval::point(0.0);
        let (mut dx, mut a, mut c, mut da, mut dc) = (one, zero, one, zero, zero);
        for &b in &br.path {
            let base = &self.base.branches[b];
            let fb = &self.fibers[b];
            x = x.clamp_to(&base.domain());
            let (as_, cs) = (fb.a.eval_x(x)?, fb.c.eval_x(x)?);
            let (das, dcs) = (fb.da.eval_x(x)? * dx, fb.dc.eval_x(x)? * dx);
            da = das + dcs * a + cs * da;
            dc = dcs * c + cs * dc;
            a = as_ + cs * a;
            c = cs * c;
            dx = dx * base.deriv.eval_x(x)?;
            x = base.map.eval_x(x)?;
        }
        Ok(FiberJet { x, dx, a, c, da, dc })
    }

    /// `(A, C)` of branch `k` over `x`, without derivatives.
    pub fn affine(&self, k: usize, x: Interval) -> Result<(Interval, Interval)> {
        let br = &self.iterate.branches[k];
        let mut x = x.clamp_to(&br.domain());
        let (mut a, mut c) = (Interval::point(0.0), Interval::point(1.0));
        for &b in &br.path {
            let base = &self.base.branches[b];
            let fb = &self.fibers[b];
            x = x.clamp_to(&base.domain());
            let cs = fb.c.eval_x(x)?;
            a = fb.a.eval_x(x)? + cs * a;
            c = cs * c;
            x = base.map.eval_x(x)?;
        }
        Ok((a, c))
    }

    /// `A + C y` of branch `k` at a point, in doubles.
    pub fn g_f64(&self, k: usize, x: f64, y: f64) -> f64 {
        let br = &self.iterate.branches[k];
        let (mut x, mut y) = (x.clamp(br.lo_end.lo(), br.hi_end.hi()), y);
        for &b in &br.path {
            let base = &self.base.branches[b];
            let xc = x.clamp(base.lo_end.lo(), base.hi_end.hi());
            y = self.fibers[b].g_f64(xc, y);
            x = base.eval_f64(xc);
        }
        y
    }

    /// One application of the base skew product `F`, in doubles.
    pub fn step_f64(&self, x: f64, y: f64) -> (f64, f64) {
        let b = self.base.branch_at(x);
        let br = &self.base.branches[b];
        let xc = x.clamp(br.lo_end.lo(), br.hi_end.hi());
        (br.eval_f64(xc), self.fibers[b].g_f64(xc, y))
    }

    /// `F^m` in doubles.
    pub fn eval_f64(&self, x: f64, y: f64) -> (f64, f64) {
        let k = self.iterate.branch_at(x);
        (self.iterate.eval_f64(k, x), self.g_f64(k, x, y))
    }

    /// Interior discontinuities of `T^m`.
    pub fn discontinuities(&self) -> Vec<Interval> {
        self.iterate.branches.windows(2).map(|w| w[0].hi_end.hull(&w[1].lo_end)).collect()
    }
}

impl FiberBranch {
    fn g_f64(&self, x: f64, y: f64) -> f64 {
        self.a.eval_f64(x, 0.0) + self.c.eval_f64(x, 0.0) * y
    }
}

/// The two-dimensional Lorenz-like map: `T` from [`lorenz_1d`] and
/// `G(x, y) = (y − 1/2)|x − 1/2|^β + 1/4` for `x < 1/2`, `+ 3/4` for `x > 1/2`.
pub fn lorenz_2d(alpha: &Rational, theta: &Rational, beta: &Rational, m: usize) -> Result<SkewProductMap> {
    let base = lorenz_1d(alpha, theta)?;
    let half = Expr::rat(1, 2);
    let left = Expr::add(
        Expr::mul(Expr::sub(Expr::Y, half.clone()), Expr::pow(Expr::sub(half.clone(), Expr::X), beta.clone())),
        Expr::rat(1, 4),
    );
    let right = Expr::add(
        Expr::mul(Expr::sub(Expr::Y, half.clone()), Expr::pow(Expr::sub(Expr::X, half), beta.clone())),
        Expr::rat(3, 4),
    );
    SkewProductMap::new(base, vec![left, right], m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometricConstants {
    /// `sup |∂y G^m|`.
    pub lambda: Interval,
    pub bad_radius: f64,
    /// Intervals around the discontinuities of `T^m`, merged and clipped to `[0, 1]`.
    pub bad_set: Vec<(f64, f64)>,
    /// `f_δ`-mass of the bad set.
    pub l: Interval,
    /// Lipschitz constant of `F^m` off `bad_set × [0, 1]` in the sup metric.
    pub lbar: Interval,
}

pub fn geometric_constants(f: &SkewProductMap, bad_radius: f64, f_delta: &StepDensity1D) -> Result<GeometricConstants> {
    if !(bad_radius > 0.0) {
        return Err(Error::Inconsistent("bad_radius must be positive".into()));
    }
    let mut raw: Vec<(f64, f64)> = f
        .discontinuities()
        .iter()
        .map(|d| ((d.lo() - bad_radius).next_down().max(0.0), (d.hi() + bad_radius).next_up().min(1.0)))
        .collect();
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut bad_set: Vec<(f64, f64)> = Vec::new();
    for (a, b) in raw {
        match bad_set.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => bad_set.push((a, b)),
        }
    }
    if bad_set.iter().any(|&(a, b)| a <= 0.0 && b >= 1.0) {
        return Err(Error::Inconsistent("the bad set covers the whole interval".into()));
    }

    let nb = f.branch_count();
    let per_branch: Vec<Result<((f64, f64), (f64, f64))>> = (0..nb)
        .into_par_iter()
        .map(|k| {
            let dom = f.iterate.branches[k].domain();
            let lam = sup_abs(|x| Ok(f.jet(k, x)?.c), dom, 1e-6)?;
            let mut lip = (0.0f64, 0.0f64);
            for piece in subtract(dom, &bad_set) {
                let s = sup_abs(|x| lipschitz(f, k, x), piece, 1e-4)?;
                lip = (lip.0.max(s.0), lip.1.max(s.1));
            }
            Ok((lam, lip))
        })
        .collect();
    let (mut lam, mut lip) = ((0.0f64, 0.0f64), (0.0f64, 0.0f64));
    for r in per_branch {
        let (a, b) = r?;
        lam = (lam.0.max(a.0), lam.1.max(a.1));
        lip = (lip.0.max(b.0), lip.1.max(b.1));
    }
    let lambda = Interval::new(lam.0, lam.1)?;
    let lbar = Interval::new(lip.0, lip.1)?;

    let n = f_delta.n();
    let nf = n as f64;
    let mut l = Interval::point(0.0);
    for &(a, b) in &bad_set {
        let i0 = ((a * nf).floor() as usize).min(n - 1);
        let i1 = ((b * nf).ceil() as usize).clamp(i0 + 1, n);
        for i in i0..i1 {
            let cell = f_delta.partition().cell(i);
            let lo = cell.lo().max(a);
            let hi = cell.hi().min(b);
            if hi > lo {
                let w = Interval::point(hi) - Interval::point(lo);
                l = l + w * Interval::point(f_delta.masses[i]) * Interval::point(nf);
            }
        }
    }
    let l = Interval::new(0.0, l.hi())?;
    Ok(GeometricConstants { lambda, bad_radius, bad_set, l, lbar })
}

/// `max(|T'|, |∂x G| + |∂y G|)` over `x × [0, 1]`, as an interval whose upper end bounds it.
fn lipschitz(f: &SkewProductMap, k: usize, x: Interval) -> Result<Interval> {
    let j = f.jet(k, x)?;
    let hi = j.dx.mag().max(add_up(j.dg(Interval::unit()).mag(), j.c.mag()));
    let lo = j.dx.mig().max(j.c.mig());
    Ok(Interval::new(lo.min(hi), hi)?)
}

/// Closed pieces of `dom` outside the open intervals of `bad` (sorted, disjoint).
fn subtract(dom: Interval, bad: &[(f64, f64)]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut start = dom.lo();
    for &(a, b) in bad {
        if b <= start || a >= dom.hi() {
            continue;
        }
        if a > start {
            out.push(Interval::new(start, a).unwrap());
        }
        start = start.max(b);
    }
    if start < dom.hi() {
        out.push(Interval::new(start, dom.hi()).unwrap());
    }
    out
}

/// Marked cells of an `nx × ny` grid, stored by column with rows ascending. A cell's dense
/// index is its position in `rows`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSet2D {
    pub nx: usize,
    pub ny: usize,
    pub col_ptr: Vec<usize>,
    pub rows: Vec<u32>,
}

const CELL_MAGIC: &[u8; 8] = b"ULAMCELL";
const CELL_VERSION: u32 = 1;

impl CellSet2D {
    pub fn full(nx: usize, ny: usize) -> Self {
        let col_ptr = (0..=nx).map(|i| i * ny).collect();
        let rows = (0..nx).flat_map(|_| 0..ny as u32).collect();
        CellSet2D { nx, ny, col_ptr, rows }
    }

    /// From a row-major bitset (`bit j·nx + i` marks column `i`, row `j`).
    pub fn from_bits(nx: usize, ny: usize, bits: &[u64]) -> Self {
        let mut col_ptr = vec![0usize; nx + 1];
        let mut rows = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                let b = j * nx + i;
                if bits[b / 64] >> (b % 64) & 1 == 1 {
                    rows.push(j as u32);
                }
            }
            col_ptr[i + 1] = rows.len();
        }
        CellSet2D { nx, ny, col_ptr, rows }
    }

    pub fn to_bits(&self) -> Vec<u64> {
        let mut bits = vec![0u64; (self.nx * self.ny).div_ceil(64)];
        for i in 0..self.nx {
            for &j in self.column(i) {
                let b = j as usize * self.nx + i;
                bits[b / 64] |= 1 << (b % 64);
            }
        }
        bits
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, i: usize) -> &[u32] {
        &self.rows[self.col_ptr[i]..self.col_ptr[i + 1]]
    }

    pub fn index(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.nx {
            return None;
        }
        self.column(i).binary_search(&(j as u32)).ok().map(|p| self.col_ptr[i] + p)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.index(i, j).is_some()
    }

    /// `(column, row)` of a dense index.
    pub fn cell(&self, idx: usize) -> (usize, usize) {
        let i = self.col_ptr.partition_point(|&p| p <= idx) - 1;
        (i, self.rows[idx] as usize)
    }

    /// Cell containing the point, with the top and right edges assigned to the last cell.
    pub fn locate(&self, x: f64, y: f64) -> (usize, usize) {
        let i = ((x * self.nx as f64) as usize).min(self.nx - 1);
        let j = ((y * self.ny as f64) as usize).min(self.ny - 1);
        (i, j)
    }

    /// Cells within one cell (in the sup metric on indices) of a marked cell.
    pub fn dilate(&self) -> CellSet2D {
        let mut bits = vec![0u64; (self.nx * self.ny).div_ceil(64)];
        for i in 0..self.nx {
            for &j in self.column(i) {
                let j = j as usize;
                for ii in i.saturating_sub(1)..=(i + 1).min(self.nx - 1) {
                    for jj in j.saturating_sub(1)..=(j + 1).min(self.ny - 1) {
                        let b = jj * self.nx + ii;
                        bits[b / 64] |= 1 << (b % 64);
                    }
                }
            }
        }
        CellSet2D::from_bits(self.nx, self.ny, &bits)
    }

    pub fn is_subset_of(&self, other: &CellSet2D) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (0..self.nx).all(|i| self.column(i).iter().all(|&j| other.contains(i, j as usize)))
    }

    pub fn write_bitmap(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CELL_MAGIC)?;
        w.write_all(&CELL_VERSION.to_le_bytes())?;
        w.write_all(&(self.nx as u64).to_le_bytes())?;
        w.write_all(&(self.ny as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let bytes = (self.nx * self.ny).div_ceil(8);
        let bits = self.to_bits();
        let raw: Vec<u8> = bits.iter().flat_map(|b| b.to_le_bytes()).take(bytes).collect();
        w.write_all(&raw)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_bitmap(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CELL_MAGIC {
            return Err(Error::Format(format!("{}: bad magic", path.display())));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != CELL_VERSION {
            return Err(Error::Format("unsupported cell bitmap version".into()));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<usize> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8) as usize)
        };
        let nx = next(&mut r)?;
        let ny = next(&mut r)?;
        let count = next(&mut r)?;
        let mut raw = vec![0u8; (nx * ny).div_ceil(8)];
        r.read_exact(&mut raw)?;
        let mut bits = vec![0u64; (nx * ny).div_ceil(64)];
        for (k, &byte) in raw.iter().enumerate() {
            bits[k / 8] |= (byte as u64) << (8 * (k % 8));
        }
        let set = CellSet2D::from_bits(nx, ny, &bits);
        if set.len() != count {
            return Err(Error::Format(format!("header says {count} cells, bitmap has {}", set.len())));
        }
        Ok(set)
    }

    /// CSV `index,col,row` of the marked cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "index,col,row")?;
        for i in 0..self.nx {
            for (p, &j) in self.column(i).iter().enumerate() {
                writeln!(w, "{},{i},{j}", self.col_ptr[i] + p)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, nx: usize, ny: usize) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut bits = vec![0u64; (nx * ny).div_ceil(64)];
        for (ln, line) in r.lines().enumerate().skip(1) {
            let line = line?;
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(Error::Format(format!("line {}: expected index,col,row", ln + 1)));
            }
            let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("line {}: bad integer", ln + 1)));
            let (i, j) = (parse(f[1])?, parse(f[2])?);
            if i >= nx || j >= ny {
                return Err(Error::Format(format!("line {}: cell outside the grid", ln + 1)));
            }
            let b = j * nx + i;
            bits[b / 64] |= 1 << (b % 64);
        }
        Ok(CellSet2D::from_bits(nx, ny, &bits))
    }
}

/// Marks every cell of the `nx × ny` grid that meets an enclosure of `F^m(R)`, where `R`
/// runs over `coarse_k` slices of each branch domain times `y_slices` slices of `[0, 1]`.
pub fn localize_attractor(f: &SkewProductMap, coarse_k: usize, y_slices: usize, nx: usize, ny: usize) -> Result<CellSet2D> {
    if !nx.is_power_of_two() || !ny.is_power_of_two() {
        return Err(Error::Inconsistent("grid sizes must be powers of two".into()));
    }
    if coarse_k == 0 || y_slices == 0 {
        return Err(Error::Inconsistent("coarse partition must be nonempty".into()));
    }
    let words = (nx * ny).div_ceil(64);
    let parts: Vec<Result<Vec<u64>>> = (0..f.branch_count())
        .into_par_iter()
        .map(|k| {
            let mut bits = vec![0u64; words];
            let dom = f.iterate.branches[k].domain();
            let w = dom.hi() - dom.lo();
            let cut = |i: usize| if i == coarse_k { dom.hi() } else { dom.lo() + w * i as f64 / coarse_k as f64 };
            for i in 0..coarse_k {
                let x = Interval::new(cut(i), cut(i + 1).max(cut(i)))?;
                let j = f.jet(k, x)?;
                let xm = Interval::point(x.mid());
                let jm = f.jet(k, xm)?;
                // T^m is monotone on the branch
                let ends = f.iterate.eval(k, Interval::point(x.lo()))?.hull(&f.iterate.eval(k, Interval::point(x.hi()))?);
                let img_x = ends.intersect(&j.x).unwrap_or(ends).clamp_to(&Interval::unit());
                let c0 = ((img_x.lo() * nx as f64) as usize).min(nx - 1);
                let c1 = ((img_x.hi() * nx as f64) as usize).min(nx - 1);
                for s in 0..y_slices {
                    let y = Interval::new(s as f64 / y_slices as f64, (s + 1) as f64 / y_slices as f64)?;
                    let direct = j.g(y);
                    let centered = jm.g(y) + j.dg(y) * (x - xm);
                    let g = direct.intersect(&centered).unwrap_or(direct).clamp_to(&Interval::unit());
                    let r0 = ((g.lo() * ny as f64) as usize).min(ny - 1);
                    let r1 = ((g.hi() * ny as f64) as usize).min(ny - 1);
                    for row in r0..=r1 {
                        for col in c0..=c1 {
                            let b = row * nx + col;
                            bits[b / 64] |= 1 << (b % 64);
                        }
                    }
                }
            }
            Ok(bits)
        })
        .collect();
    let mut bits = vec![0u64; words];
    for p in parts {
        for (a, b) in bits.iter_mut().zip(p?) {
            *a |= b;
        }
    }
    Ok(CellSet2D::from_bits(nx, ny, &bits))
}
