//! Ulam matrix of a skew product on a localized cell grid.
//!
//! For a source cell `I_i × J_b` and a branch of `T^m`, the preimage of target column `c` is an
//! x-interval `X`. Over `X` the cell is mapped to the slab between `g₀ = A + C v` and
//! `g₁ = A + C (v + δ′)`, so the mass below a level `q` is `∫_X K_q` with
//! `K_q(x) = clamp((q − A)/C − v, 0, δ′)`. Entries are differences of these integrals at
//! consecutive row levels. Where `g₀, g₁` are monotone in `x` the same area is integrated in
//! `y` instead, over the curve `x*(y)` solving `A + C y = q` (certified inversion plus a
//! mean-value form); elsewhere pieces are bisected, down to a width where `[0, δ′w]` is
//! accepted.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interval::{add_up, mul_up, sub_up, Interval};
use crate::map1d::invert_monotone;
use crate::map2d::{CellSet2D, FiberJet, SkewProductMap};
use crate::sparse::SparseTransitionMatrix;

/// Masses over the marked cells of a [`CellSet2D`], indexed densely.
#[derive(Clone, Debug, PartialEq)]
pub struct CellDensity2D {
    pub masses: Vec<f64>,
}

impl CellDensity2D {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Inconsistent("masses must be finite and nonnegative".into()));
        }
        Ok(CellDensity2D { masses })
    }

    /// Equal mass on every marked cell.
    pub fn uniform(cells: &CellSet2D) -> Self {
        CellDensity2D { masses: vec![1.0 / cells.len() as f64; cells.len()] }
    }

    pub fn total_mass(&self) -> Interval {
        let lo = self.masses.iter().fold(0.0, |a, &m| crate::interval::add_down(a, m));
        let hi = self.masses.iter().fold(0.0, |a, &m| add_up(a, m));
        Interval::new(lo, hi).unwrap()
    }

    /// Column masses (the x-marginal as cell masses), summed in doubles.
    pub fn x_marginal(&self, cells: &CellSet2D) -> Vec<f64> {
        (0..cells.nx).map(|i| self.masses[cells.col_ptr[i]..cells.col_ptr[i + 1]].iter().sum()).collect()
    }

    /// CSV `index,col,row,mass`.
    pub fn write_csv(&self, cells: &CellSet2D, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "index,col,row,mass")?;
        for (idx, m) in self.masses.iter().enumerate() {
            let (i, j) = cells.cell(idx);
            writeln!(w, "{idx},{i},{j},{m:e}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assembled 2D matrix with its leak accounting.
#[derive(Clone, Debug)]
pub struct Ulam2D {
    pub matrix: SparseTransitionMatrix,
    /// Per source cell: upper bound of the mass sent to unmarked cells.
    pub leak: Vec<f64>,
}

impl Ulam2D {
    pub fn max_leak(&self) -> f64 {
        self.leak.iter().cloned().fold(0.0, f64::max)
    }
}

struct Ctx<'a> {
    f: &'a SkewProductMap,
    k: usize,
    nx: usize,
    ny: usize,
    dy: f64,
    /// Bisection floor; below it a piece contributes `[0, δ′w]`.
    w_min: f64,
    /// Allowed error of a level integral per unit of y-length, for a piece spanning a column.
    eps_rate: f64,
}

fn pt(x: f64) -> Interval {
    Interval::point(x)
}

impl Ctx<'_> {
    fn new(f: &SkewProductMap, k: usize, nx: usize, ny: usize, tol: f64) -> Ctx<'_> {
        Ctx { f, k, nx, ny, dy: 1.0 / ny as f64, w_min: tol / (16.0 * nx as f64), eps_rate: tol / (8.0 * nx as f64) }
    }

    /// Enclosures of `g₀ = A + C v₀` and `g₁ = A + C v₁` over `x`, intersected with their
    /// mean-value forms.
    fn slab(&self, j: &FiberJet, x: Interval, v0: f64, v1: f64) -> Result<(Interval, Interval)> {
        let m = pt(x.mid());
        let (am, cm) = self.f.affine(self.k, m)?;
        let one = |v: f64| {
            let direct = j.g(pt(v));
            let centered = am + cm * pt(v) + j.dg(pt(v)) * (x - m);
            direct.intersect(&centered).unwrap_or(direct)
        };
        Ok((one(v0), one(v1)))
    }

    /// Adds `∫_P K_q` to `acc[t]` for every level `(t, q)`.
    fn piece(&self, p0: f64, p1: f64, v0: f64, v1: f64, levels: &[(usize, f64)], acc: &mut [Interval]) -> Result<()> {
        let x = Interval::new(p0, p1)?;
        let full = (pt(p1) - pt(p0)) * pt(self.dy);
        let j = self.f.jet(self.k, x)?;
        let (g0, g1) = self.slab(&j, x, v0, v1)?;
        let mut active = Vec::new();
        for &(t, q) in levels {
            if q >= g1.hi() {
                acc[t] = acc[t] + full;
            } else if q > g0.lo() {
                active.push((t, q));
            }
        }
        if active.is_empty() {
            return Ok(());
        }
        if p1 - p0 <= self.w_min {
            for (t, _) in active {
                acc[t] = acc[t] + Interval::new(0.0, full.hi())?;
            }
            return Ok(());
        }
        let (s0, s1) = (j.dg(pt(v0)), j.dg(pt(v1)));
        let inc = s0.lo() > 0.0 && s1.lo() > 0.0;
        let dec = s0.hi() < 0.0 && s1.hi() < 0.0;
        if (inc || dec) && j.c.lo() > 0.0 {
            for (t, q) in active {
                acc[t] = acc[t] + self.monotone(p0, p1, v0, v1, q, inc)?;
            }
            return Ok(());
        }
        let m = 0.5 * (p0 + p1);
        if m <= p0 || m >= p1 {
            for (t, _) in active {
                acc[t] = acc[t] + Interval::new(0.0, full.hi())?;
            }
            return Ok(());
        }
        self.piece(p0, m, v0, v1, &active, acc)?;
        self.piece(m, p1, v0, v1, &active, acc)
    }

    /// Enclosure of `{x in [p0, p1] : A + C v = q}` for `A + C v` monotone there.
    fn crossing(&self, p0: f64, p1: f64, v: f64, q: f64, inc: bool) -> Result<Interval> {
        let (f, k) = (self.f, self.k);
        let g = move |x: f64| -> Result<Interval> {
            let (a, c) = f.affine(k, pt(x))?;
            Ok(a + c * pt(v))
        };
        let (e0, e1) = (g(p0)?, g(p1)?);
        let (at_start, at_end) = if inc { (e0.lo() >= q, e1.hi() <= q) } else { (e0.hi() <= q, e1.lo() >= q) };
        if at_start {
            return Ok(pt(p0));
        }
        if at_end {
            return Ok(pt(p1));
        }
        invert_monotone(g, |x| f.g_f64(k, x, v), Interval::new(p0, p1)?, inc, pt(q), (e0, e1))
    }

    /// `∫_P K_q` where `g₀, g₁` are strictly monotone on `P` in the direction `inc` and `C > 0`.
    ///
    /// Integrated in `y`: for fixed `y` the set `{x ∈ P : A + C y ≤ q}` is an interval with one
    /// free end `x*(y)`, and `x*` is smooth with `x*′ = −C/(A′ + C′y)`. The `y` where the free end
    /// leaves `P` are explicit because `g` is affine in `y`.
    fn monotone(&self, p0: f64, p1: f64, v0: f64, v1: f64, q: f64, inc: bool) -> Result<Interval> {
        let w = pt(p1) - pt(p0);
        let (near, far) = if inc { (p0, p1) } else { (p1, p0) };
        let rows = Interval::new(v0, v1)?;
        let level_y = |p: f64| -> Result<Interval> {
            let (a, c) = self.f.affine(self.k, pt(p))?;
            Ok((pt(q) - a).checked_div(&c)?.clamp_to(&rows))
        };
        // the whole width lies below q for y < yf, none of it for y > yn
        let (yf, yn) = (level_y(far)?, level_y(near)?);
        let full = w * (pt(yf.lo()) - pt(v0));
        if yf.hi() >= yn.lo() {
            return Ok(full + Interval::new(0.0, mul_up(w.hi(), sub_up(yn.hi(), yf.lo()).max(0.0)))?);
        }
        let slivers = Interval::new(0.0, mul_up(w.hi(), add_up(yf.width(), yn.width())))?;
        let rate = self.eps_rate * ((p1 - p0) * self.nx as f64).max(1.0 / 64.0);
        let (ya, yb) = (yf.hi(), yn.lo());
        let xa = self.crossing(p0, p1, ya, q, inc)?;
        let xb = self.crossing(p0, p1, yb, q, inc)?;
        let core = self.strip(p0, p1, near, inc, q, (ya, xa), (yb, xb), rate, 0)?;
        Ok(full + slivers + core)
    }

    /// `∫ |x*(y) − near| dy` over `[ya, yb]`, given enclosures of `x*` at both ends, by the
    /// mean-value form around the midpoint with adaptive bisection.
    #[allow(clippy::too_many_arguments)]
    fn strip(&self, p0: f64, p1: f64, near: f64, inc: bool, q: f64, (ya, xa): (f64, Interval), (yb, xb): (f64, Interval), rate: f64, depth: u32) -> Result<Interval> {
        let h = pt(yb) - pt(ya);
        let side = |x: Interval| if inc { x - pt(near) } else { pt(near) - x };
        // λ(y) = |x*(y) − near| is nonincreasing in y
        let bounds = h * side(xb).hull(&side(xa)).max(&pt(0.0));
        let ym = 0.5 * (ya + yb);
        if ym <= ya || ym >= yb {
            return Ok(bounds);
        }
        let xm = self.crossing(p0, p1, ym, q, inc)?;
        let span = xa.hull(&xb).intersect(&Interval::new(p0, p1)?).unwrap_or(xa.hull(&xb));
        let j = self.f.jet(self.k, span)?;
        let slope = -(j.c.checked_div(&(j.da + Interval::new(ya, yb)? * j.dc))?);
        let slope = if inc { slope } else { -slope };
        let l = (pt(ym) - pt(ya)).sqr() * pt(0.5);
        let r = (pt(yb) - pt(ym)).sqr() * pt(0.5);
        let rem = slope * r - slope * l;
        let est = h * side(xm) + rem;
        let est = est.intersect(&bounds).unwrap_or(bounds);
        if est.width() <= rate * (yb - ya) || rem.width() <= h.hi() * xm.width() || depth >= 40 {
            return Ok(est);
        }
        let lo = self.strip(p0, p1, near, inc, q, (ya, xa), (ym, xm), rate, depth + 1)?;
        let hi = self.strip(p0, p1, near, inc, q, (ym, xm), (yb, xb), rate, depth + 1)?;
        Ok(lo + hi)
    }

    /// Entries `(target row, value)` for the source row `b` over the x-range between the
    /// enclosures `left` and `right`, as masses relative to `δ δ′` (i.e. matrix entries).
    fn row_entries(&self, left: Interval, right: Interval, outer_jet: &FiberJet, b: usize) -> Result<Vec<(usize, Interval)>> {
        let ny = self.ny;
        let v0 = b as f64 / ny as f64;
        let v1 = (b + 1) as f64 / ny as f64;
        let outer = Interval::new(left.lo(), right.hi())?;
        let (g0, g1) = self.slab(outer_jet, outer, v0, v1)?;
        let row = |g: f64| ((g * ny as f64).floor().max(0.0) as usize).min(ny - 1);
        let (d0, d1) = (row(g0.lo()), row(g1.hi()));
        let len = (right - left).max(&pt(0.0));
        let scale = pt((self.nx * ny) as f64);
        if d0 == d1 {
            return Ok(vec![(d0, len * pt(self.nx as f64))]);
        }
        // levels q_t = (d0 + t)/ny, t = 0..=d1-d0+1; the outer two are exact
        let nl = d1 - d0 + 2;
        let mut acc = vec![pt(0.0); nl];
        acc[nl - 1] = len * pt(self.dy);
        let levels: Vec<(usize, f64)> = (1..nl - 1).map(|t| (t, (d0 + t) as f64 / ny as f64)).collect();
        if left.hi() < right.lo() {
            let sliver = Interval::new(0.0, mul_up(add_up(left.width(), right.width()), self.dy))?;
            for &(t, _) in &levels {
                acc[t] = sliver;
            }
            self.piece(left.hi(), right.lo(), v0, v1, &levels, &mut acc)?;
        } else {
            let all = Interval::new(0.0, mul_up(sub_up(right.hi(), left.lo()).max(0.0), self.dy))?;
            for &(t, _) in &levels {
                acc[t] = all;
            }
        }
        let mut out = Vec::with_capacity(nl - 1);
        for t in 0..nl - 1 {
            let e = (acc[t + 1] - acc[t]) * scale;
            if e.hi() > 0.0 {
                out.push((d0 + t, Interval::new(e.lo().max(0.0), e.hi())?));
            }
        }
        Ok(out)
    }
}

/// Cut points `T_k⁻¹(j/nx)` for the target columns met by branch `k`, with the first column.
fn column_cuts(f: &SkewProductMap, k: usize, nx: usize) -> Result<(usize, Vec<Interval>)> {
    let br = &f.iterate.branches[k];
    let img = br.image();
    let (min_end, max_end) = if br.increasing { (br.lo_end, br.hi_end) } else { (br.hi_end, br.lo_end) };
    let nf = nx as f64;
    let j_lo = ((img.lo() * nf).floor().max(0.0) as usize).min(nx - 1);
    let j_hi = (((img.hi() * nf).ceil() as usize).saturating_sub(1)).clamp(j_lo, nx - 1);
    let cuts = (j_lo..=j_hi + 1)
        .map(|j| {
            let y = j as f64 / nf;
            if y <= img.lo() {
                Ok(min_end)
            } else if y >= img.hi() {
                Ok(max_end)
            } else {
                f.iterate.invert(k, pt(y))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((j_lo, cuts))
}

/// Entries of branch `k`, as `(source index, target index, value)`, plus per-source leak.
fn branch_entries(f: &SkewProductMap, k: usize, cells: &CellSet2D, tol: f64) -> Result<(Vec<(u32, u32, Interval)>, Vec<(usize, f64)>)> {
    let (nx, ny) = (cells.nx, cells.ny);
    let ctx = Ctx::new(f, k, nx, ny, tol);
    let inc = f.iterate.branches[k].increasing;
    let (j_lo, cuts) = column_cuts(f, k, nx)?;
    let nf = nx as f64;
    let mut out = Vec::new();
    let mut leak = Vec::new();
    for c in j_lo..j_lo + cuts.len() - 1 {
        let (a, b) = (cuts[c - j_lo], cuts[c + 1 - j_lo]);
        let (e_lo, e_hi) = if inc { (a, b) } else { (b, a) };
        let i_lo = ((e_lo.lo() * nf).floor().max(0.0) as usize).min(nx - 1);
        let i_hi = ((e_hi.hi() * nf).floor().max(0.0) as usize).min(nx - 1);
        for i in i_lo..=i_hi {
            let rows = cells.column(i);
            if rows.is_empty() {
                continue;
            }
            let left = pt(i as f64 / nf).max(&e_lo);
            let right = pt((i + 1) as f64 / nf).min(&e_hi);
            if right.hi() <= left.lo() {
                continue;
            }
            let outer = Interval::new(left.lo(), right.hi())?;
            let jet = f.jet(k, outer)?;
            for (p, &b) in rows.iter().enumerate() {
                let src = cells.col_ptr[i] + p;
                for (d, e) in ctx.row_entries(left, right, &jet, b as usize)? {
                    match cells.index(c, d) {
                        Some(tgt) => out.push((src as u32, tgt as u32, e)),
                        None if e.lo() > 0.0 => {
                            return Err(Error::SupportMismatch(format!(
                                "cell ({i}, {b}) sends mass {e} to unmarked cell ({c}, {d})"
                            )))
                        }
                        None => leak.push((src, e.hi())),
                    }
                }
            }
        }
    }
    Ok((out, leak))
}

/// Ulam matrix of `F^m` on the marked cells: entry (target, source) encloses
/// `m(F⁻¹R_t ∩ R_s)/m(R_s)`.
///
/// Mass that the enclosures cannot exclude from unmarked cells is reported as leak; more than
/// `max_leak` from any source cell is an error. `tol` is the target entry radius; the returned
/// matrix carries the radius actually achieved in `entry_tol`.
pub fn assemble_ulam_2d(f: &SkewProductMap, cells: &CellSet2D, tol: f64, max_leak: f64) -> Result<Ulam2D> {
    if cells.is_empty() {
        return Err(Error::EmptyCellSet);
    }
    if !(tol > 0.0) {
        return Err(Error::Inconsistent("entry tolerance must be positive".into()));
    }
    let parts: Vec<_> = (0..f.branch_count()).into_par_iter().map(|k| branch_entries(f, k, cells, tol)).collect();
    let mut entries = Vec::new();
    let mut leak = vec![0.0f64; cells.len()];
    for p in parts {
        let (e, l) = p?;
        entries.extend(e);
        for (s, v) in l {
            leak[s] = add_up(leak[s], v);
        }
    }
    let matrix = SparseTransitionMatrix::from_entries(cells.len(), cells.len(), entries, tol);
    for (s, &l) in leak.iter().enumerate() {
        if l > max_leak {
            return Err(Error::Leak { col: s, sum: format!("leak {l:e}"), tol: max_leak });
        }
    }
    for (s, sum) in matrix.col_sums().iter().enumerate() {
        if !(sum.lo() <= 1.0 && add_up(sum.hi(), leak[s]) >= 1.0) {
            return Err(Error::Leak { col: s, sum: sum.to_string(), tol: max_leak });
        }
    }
    let mut matrix = matrix;
    // entries touching a fibre that degenerates at a branch end may stay wider than `tol`;
    // the matrix records what was achieved
    matrix.entry_tol = matrix.max_radius().max(tol);
    Ok(Ulam2D { matrix, leak })
}

/// A single coefficient `m(F⁻¹R_t ∩ R_s)/m(R_s)` for source cell `(i, b)` and target cell
/// `(c, d)` of the `nx × ny` grid, summed over the branches of `T^m`.
pub fn cell_coefficient(f: &SkewProductMap, nx: usize, ny: usize, source: (usize, usize), target: (usize, usize), tol: f64) -> Result<Interval> {
    let (i, b) = source;
    let (c, d) = target;
    let nf = nx as f64;
    let mut total = pt(0.0);
    for k in 0..f.branch_count() {
        let br = &f.iterate.branches[k];
        let img = br.image();
        let (y0, y1) = (c as f64 / nf, (c + 1) as f64 / nf);
        if y1 <= img.lo() || y0 >= img.hi() {
            continue;
        }
        let (min_end, max_end) = if br.increasing { (br.lo_end, br.hi_end) } else { (br.hi_end, br.lo_end) };
        let cut = |y: f64| if y <= img.lo() { Ok(min_end) } else if y >= img.hi() { Ok(max_end) } else { f.iterate.invert(k, pt(y)) };
        let (a, e) = (cut(y0)?, cut(y1)?);
        let (e_lo, e_hi) = if br.increasing { (a, e) } else { (e, a) };
        let left = pt(i as f64 / nf).max(&e_lo);
        let right = pt((i + 1) as f64 / nf).min(&e_hi);
        if right.hi() <= left.lo() {
            continue;
        }
        let ctx = Ctx::new(f, k, nx, ny, tol);
        let jet = f.jet(k, Interval::new(left.lo(), right.hi())?)?;
        for (row, v) in ctx.row_entries(left, right, &jet, b)? {
            if row == d {
                total = total + v;
            }
        }
    }
    Ok(total)
}
