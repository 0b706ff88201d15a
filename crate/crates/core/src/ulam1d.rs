//! Ulam discretization of a 1D transfer operator and the L¹ certificate for its fixed point.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{add_down, add_up, mul_up, sub_down, sub_up, Interval};
use crate::map1d::{IteratedMap, LYCoefficients};
use crate::sparse::{gamma, read_indexed_csv, SparseTransitionMatrix};

/// Uniform partition of [0,1) into `n` cells, `n` a power of two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition1D {
    pub n: usize,
}

impl Partition1D {
    pub fn new(n: usize) -> Result<Self> {
        if !n.is_power_of_two() || n > 1 << 31 {
            return Err(Error::Inconsistent(format!("cell count {n} must be a power of two <= 2^31")));
        }
        Ok(Partition1D { n })
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cell(&self, i: usize) -> Interval {
        Interval::new(i as f64 * self.delta(), (i + 1) as f64 * self.delta()).unwrap()
    }
}

/// Step density stored as cell masses.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDensity1D {
    pub masses: Vec<f64>,
}

impl StepDensity1D {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        Partition1D::new(masses.len())?;
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Inconsistent("masses must be finite and nonnegative".into()));
        }
        Ok(StepDensity1D { masses })
    }

    pub fn uniform(n: usize) -> Self {
        StepDensity1D { masses: vec![1.0 / n as f64; n] }
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn partition(&self) -> Partition1D {
        Partition1D { n: self.n() }
    }

    /// Density value on cell `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.masses[i] * self.n() as f64
    }

    pub fn total_mass(&self) -> Interval {
        sum_enclosure(&self.masses)
    }

    /// Sum of interior jumps of the density.
    pub fn variation(&self) -> Interval {
        let (mut lo, mut hi) = (0.0, 0.0);
        for w in self.masses.windows(2) {
            let d = (w[1] - w[0]).abs();
            let (dl, dh) = if w[1] >= w[0] {
                (sub_down(w[1], w[0]), sub_up(w[1], w[0]))
            } else {
                (sub_down(w[0], w[1]), sub_up(w[0], w[1]))
            };
            debug_assert!(dl <= d && d <= dh);
            lo = add_down(lo, dl);
            hi = add_up(hi, dh);
        }
        // masses scale to densities by n, a power of two
        Interval::new(lo, hi).unwrap() * Interval::point(self.n() as f64)
    }

    /// Enclosure of the L¹ distance between two step densities on nested dyadic grids.
    pub fn l1_distance(&self, other: &StepDensity1D) -> Interval {
        let (fine, coarse) = if self.n() >= other.n() { (self, other) } else { (other, self) };
        let r = fine.n() / coarse.n();
        let inv_r = 1.0 / r as f64;
        let (mut lo, mut hi) = (0.0, 0.0);
        for (i, &m) in fine.masses.iter().enumerate() {
            let c = coarse.masses[i / r] * inv_r;
            let (dl, dh) = if m >= c { (sub_down(m, c), sub_up(m, c)) } else { (sub_down(c, m), sub_up(c, m)) };
            lo = add_down(lo, dl);
            hi = add_up(hi, dh);
        }
        Interval::new(lo, hi).unwrap()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "cell_index,mass")?;
        for (i, m) in self.masses.iter().enumerate() {
            writeln!(w, "{i},{m:e}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        StepDensity1D::new(read_indexed_csv(path)?)
    }
}

pub(crate) fn sum_enclosure(v: &[f64]) -> Interval {
    let (mut lo, mut hi) = (0.0, 0.0);
    for &x in v {
        lo = add_down(lo, x);
        hi = add_up(hi, x);
    }
    Interval::new(lo, hi).unwrap()
}

/// `Var(f) + 2‖f‖₁`, an upper bound for the BV norm.
pub fn bv_norm(f: &StepDensity1D) -> Interval {
    f.variation() + Interval::point(2.0) * f.total_mass()
}

/// Averages `f` onto `coarse`; the loss bound is `‖f‖_BV · δ` plus summation rounding.
pub fn coarsen(f: &StepDensity1D, coarse: Partition1D) -> Result<(StepDensity1D, Interval)> {
    if coarse.n > f.n() || f.n() % coarse.n != 0 {
        return Err(Error::Inconsistent(format!("cannot coarsen {} cells to {}", f.n(), coarse.n)));
    }
    let r = f.n() / coarse.n;
    let masses: Vec<f64> = f.masses.chunks(r).map(|c| c.iter().sum()).collect();
    let rounding = mul_up(gamma(r), f.total_mass().hi());
    let loss = bv_norm(f) * Interval::point(coarse.delta()) + Interval::new(0.0, rounding)?;
    Ok((StepDensity1D { masses }, loss))
}

/// Ulam matrix of `map` on the partition: entry (j, i) encloses `n·|I_i ∩ T⁻¹ I_j|`.
///
/// The per-entry radius of order `n·ulp` is unavoidable in binary64, so `entry_tol` is enforced as a
/// column budget: the radius sum of every column must stay below `n · entry_tol`.
pub fn assemble_ulam_1d(map: &IteratedMap, part: Partition1D, entry_tol: f64) -> Result<SparseTransitionMatrix> {
    if !(entry_tol > 0.0) {
        return Err(Error::Inconsistent("entry_tol must be positive".into()));
    }
    let n = part.n;
    let nf = Interval::point(n as f64);
    let per_branch: Vec<Result<Vec<(u32, u32, Interval)>>> =
        (0..map.branches.len()).into_par_iter().map(|k| branch_entries(map, k, n)).collect();
    let mut entries = Vec::new();
    for b in per_branch {
        entries.extend(b?);
    }
    for e in entries.iter_mut() {
        e.2 = e.2 * nf;
    }
    let m = SparseTransitionMatrix::from_entries(n, n, entries, entry_tol);
    for (c, s) in m.col_sums().iter().enumerate() {
        if !s.contains(1.0) {
            return Err(Error::Leak { col: c, sum: s.to_string(), tol: entry_tol });
        }
    }
    let budget = m.max_col_radius_sum();
    if budget > n as f64 * entry_tol {
        return Err(Error::EntryTolUnachievable { requested: entry_tol, achieved: budget / n as f64 });
    }
    Ok(m)
}

fn branch_entries(map: &IteratedMap, k: usize, n: usize) -> Result<Vec<(u32, u32, Interval)>> {
    let br = &map.branches[k];
    let img = br.image();
    let (min_end, max_end) = if br.increasing { (br.lo_end, br.hi_end) } else { (br.hi_end, br.lo_end) };
    let nf = n as f64;
    let j_lo = ((img.lo() * nf).floor().max(0.0) as usize).min(n - 1);
    let j_hi = (((img.hi() * nf).ceil() as usize).saturating_sub(1)).clamp(j_lo, n - 1);
    let cut = |j: usize| -> Result<Interval> {
        let y = j as f64 / nf;
        if y <= img.lo() {
            Ok(min_end)
        } else if y >= img.hi() {
            Ok(max_end)
        } else {
            map.invert(k, Interval::point(y))
        }
    };
    let cuts = (j_lo..=j_hi + 1).map(cut).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for j in j_lo..=j_hi {
        let (a, b) = (cuts[j - j_lo], cuts[j + 1 - j_lo]);
        let (e_lo, e_hi) = if br.increasing { (a, b) } else { (b, a) };
        let i_lo = ((e_lo.lo() * nf).floor().max(0.0) as usize).min(n - 1);
        let i_hi = ((e_hi.hi() * nf).floor().max(0.0) as usize).min(n - 1);
        for i in i_lo..=i_hi {
            let left = Interval::point(i as f64 / nf).max(&e_lo);
            let right = Interval::point((i + 1) as f64 / nf).min(&e_hi);
            let len = right - left;
            if len.hi() <= 0.0 {
                continue;
            }
            out.push((i as u32, j as u32, Interval::new(len.lo().max(0.0), len.hi())?));
        }
    }
    Ok(out)
}

fn l1_diff_upper(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (&x, &y)| add_up(s, if x >= y { sub_up(x, y) } else { sub_up(y, x) }))
}

fn l1_diff_lower(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (&x, &y)| add_down(s, if x >= y { sub_down(x, y) } else { sub_down(y, x) }))
}

/// Enclosure of `‖P v − v‖₁` for the exact matrix enclosed by `p`.
pub fn residual(p: &SparseTransitionMatrix, v: &StepDensity1D) -> Interval {
    let mut y = vec![0.0; p.n_rows];
    p.matvec(&v.masses, &mut y);
    let err = p.matvec_error(v.total_mass().hi());
    let lo = sub_down(l1_diff_lower(&y, &v.masses), err).max(0.0);
    let hi = add_up(l1_diff_upper(&y, &v.masses), err);
    Interval::new(lo, hi).unwrap()
}

/// Power iteration from the uniform density until successive iterates are within `tol` in L¹.
pub fn fixed_point(p: &SparseTransitionMatrix, tol: f64, max_iter: usize) -> Result<(StepDensity1D, Interval)> {
    let n = p.n_cols;
    let mut v = vec![1.0 / n as f64; n];
    let mut w = vec![0.0; n];
    let mut diff = f64::INFINITY;
    for _ in 0..max_iter {
        p.matvec(&v, &mut w);
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x = (*x / s).max(0.0));
        diff = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut v, &mut w);
        if diff <= tol {
            let f = StepDensity1D { masses: v };
            let r = residual(p, &f);
            return Ok((f, r));
        }
    }
    Err(Error::NotConverged { iterations: max_iter, diff })
}

/// Certified contraction data of the Ulam matrix on zero-mass vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionProfile {
    /// Smallest `N` with `‖P^N v‖₁ <= ½‖v‖₁` certified on zero-mass vectors.
    pub n_contraction: usize,
    /// `bounds[k] >= sup_i ‖P^k e_i − π‖₁` for the exact matrix, `k = 0..=N`.
    pub bounds: Vec<f64>,
    /// Upper bound on `‖Pπ − π‖₁` used to extend bounds past early-stopped blocks.
    pub pi_drift: f64,
}

impl ContractionProfile {
    /// `C_0, …, C_{N−1}` with `‖P^k|_V‖ <= C_k`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.bounds[..self.n_contraction].iter().map(|b| b.min(1.0)).collect();
        c[0] = 1.0;
        c
    }
}

struct BlockRun {
    bounds: Vec<f64>,
}

impl BlockRun {
    fn at(&self, k: usize, drift: f64) -> f64 {
        if k < self.bounds.len() {
            self.bounds[k]
        } else {
            let last = self.bounds.len() - 1;
            add_up(self.bounds[last], mul_up((k - last) as f64, drift))
        }
    }
}

struct BlockCtx<'a> {
    p: &'a SparseTransitionMatrix,
    pi: &'a [f64],
    pi_l1: f64,
    /// per-step growth of the computed iterate mass
    growth: f64,
    /// per-step matvec error per unit mass
    step_err: f64,
    dist_gamma: f64,
    cap: usize,
    width: usize,
}

impl BlockCtx<'_> {
    /// Iterates the unit vectors `e_c0..e_{c0+b}` until step >= min_len with bound <= ½, or the cap.
    fn run(&self, c0: usize, min_len: usize) -> BlockRun {
        let (p, n) = (self.p, self.p.n_cols);
        let b = self.width.min(n - c0);
        let mut x = vec![0.0; n * b];
        let mut y = vec![0.0; n * b];
        let mut active = vec![false; n];
        let mut next = vec![false; n];
        for t in 0..b {
            x[(c0 + t) * b + t] = 1.0;
            active[c0 + t] = true;
        }
        let mut bounds = vec![2.0];
        let (mut mass, mut acc_err) = (1.0f64, 0.0f64);
        let mut dist = vec![0.0; b];
        for k in 1..=self.cap {
            y.iter_mut().for_each(|v| *v = 0.0);
            next.iter_mut().for_each(|v| *v = false);
            for c in 0..n {
                if !active[c] {
                    continue;
                }
                let xc = &x[c * b..(c + 1) * b];
                for (r, v, _) in p.column(c) {
                    next[r] = true;
                    let yr = &mut y[r * b..(r + 1) * b];
                    for (yt, &xt) in yr.iter_mut().zip(xc) {
                        *yt += v * xt;
                    }
                }
            }
            std::mem::swap(&mut x, &mut y);
            std::mem::swap(&mut active, &mut next);
            acc_err = add_up(acc_err, mul_up(self.step_err, mass));
            mass = mul_up(mass, self.growth);
            dist.iter_mut().for_each(|d| *d = 0.0);
            for (r, &pr) in self.pi.iter().enumerate() {
                let xr = &x[r * b..(r + 1) * b];
                for (d, &xt) in dist.iter_mut().zip(xr) {
                    *d += (xt - pr).abs();
                }
            }
            let worst = dist.iter().cloned().fold(0.0, f64::max);
            let slack = add_up(mul_up(self.dist_gamma, add_up(mass, self.pi_l1)), acc_err);
            let bound = add_up(mul_up(worst, 1.0 + 4.0 * crate::sparse::U), slack);
            bounds.push(bound);
            if k >= min_len && bound <= 0.5 {
                break;
            }
        }
        BlockRun { bounds }
    }
}

/// Certifies the smallest `N <= cap` with `sup_i ‖P^N e_i − π‖₁ <= ½`, which gives
/// `‖P^N v‖₁ <= ½‖v‖₁` on zero-mass vectors since extreme points of that unit ball are `(e_i − e_j)/2`.
pub fn contraction_time(p: &SparseTransitionMatrix, pi: &StepDensity1D, cap: usize) -> Result<ContractionProfile> {
    let n = p.n_cols;
    if pi.n() != n {
        return Err(Error::Inconsistent(format!("reference density has {} cells, matrix {n}", pi.n())));
    }
    let colabs = p.max_col_abs_sum();
    let g = gamma(p.max_row_count() + 1);
    let pi_drift = residual(p, pi).hi();
    let width = (1usize << 24).div_euclid(n).clamp(1, 256);
    let ctx = BlockCtx {
        p,
        pi: &pi.masses,
        pi_l1: pi.total_mass().hi(),
        growth: mul_up(colabs, 1.0 + g),
        step_err: add_up(mul_up(g, colabs), p.max_col_radius_sum()),
        dist_gamma: gamma(n + 1),
        cap,
        width,
    };
    let starts: Vec<usize> = (0..n).step_by(width).collect();
    let mut runs: Vec<BlockRun> = starts.par_iter().map(|&c0| ctx.run(c0, 1)).collect();
    loop {
        let mut nn = 0;
        for r in &runs {
            let last = r.bounds.len() - 1;
            if r.bounds[last] > 0.5 {
                return Err(Error::ContractionCapExceeded { cap, last: r.bounds[last] });
            }
            nn = nn.max(last);
        }
        let stale: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].at(nn, pi_drift) > 0.5).collect();
        if stale.is_empty() {
            let bounds = (0..=nn).map(|k| runs.iter().map(|r| r.at(k, pi_drift)).fold(0.0, f64::max)).collect();
            return Ok(ContractionProfile { n_contraction: nn, bounds, pi_drift });
        }
        let redo: Vec<BlockRun> = stale.par_iter().map(|&i| ctx.run(starts[i], nn)).collect();
        for (i, r) in stale.into_iter().zip(redo) {
            runs[i] = r;
        }
    }
}

/// Rigorous L¹ distance between the invariant density of the map and the computed step density.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixedPointCertificate1D {
    pub n_contraction: usize,
    pub contraction_coefficients: Vec<f64>,
    /// `Σ_{i<N} C_i`, the factor multiplying every per-step error.
    pub matrix_error_propagation_count: f64,
    /// Bound on `‖L_δ f − f‖₁` for the invariant density `f`.
    pub epsilon_approx: Interval,
    /// Largest per-entry radius.
    pub matrix_entry_error: f64,
    /// Largest column radius sum, a bound on `‖P − P̂‖₁`.
    pub matrix_column_error: f64,
    pub discretization_term: Interval,
    pub solver_term: Interval,
    pub normalization_term: Interval,
    pub total_l1_bound: Interval,
}

/// Bounds `‖f − f̃‖₁` for the computed density `f̃`:
/// `2εΣC_i` for the discretization plus `2ΣC_i·‖P f̃′ − f̃′‖₁` for the solver and `|mass − 1|`.
pub fn certify_fixed_point(
    p: &SparseTransitionMatrix,
    pi: &StepDensity1D,
    residual: Interval,
    ly: &LYCoefficients,
    profile: &ContractionProfile,
) -> Result<FixedPointCertificate1D> {
    if !(ly.lambda1.hi() < 1.0) {
        return Err(Error::NoContraction { lambda1: ly.lambda1.hi() });
    }
    if pi.n() != p.n_cols {
        return Err(Error::Inconsistent("density and matrix sizes differ".into()));
    }
    let delta = Interval::point(1.0 / p.n_cols as f64);
    let coeffs = profile.coefficients();
    let sum_c = coeffs.iter().fold(0.0, |a, &c| add_up(a, c));
    let two_c = Interval::point(2.0) * Interval::new(sum_c, sum_c)?;
    let eps = delta * ly.b;
    let mass = pi.total_mass();
    let discretization_term = two_c * eps;
    let solver_term = two_c * residual.checked_div(&mass)?;
    let normalization_term = (mass - Interval::point(1.0)).abs();
    let total = discretization_term + solver_term + normalization_term;
    Ok(FixedPointCertificate1D {
        n_contraction: profile.n_contraction,
        contraction_coefficients: coeffs,
        matrix_error_propagation_count: sum_c,
        epsilon_approx: eps,
        matrix_entry_error: p.max_radius(),
        matrix_column_error: p.max_col_radius_sum(),
        discretization_term,
        solver_term,
        normalization_term,
        total_l1_bound: Interval::new(0.0, total.hi())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map1d::{branch_partition, doubling, tent};

    fn ulam(map: crate::map1d::PiecewiseMap1D, n: usize) -> SparseTransitionMatrix {
        let it = branch_partition(&map, 1).unwrap();
        assemble_ulam_1d(&it, Partition1D::new(n).unwrap(), 1e-12).unwrap()
    }

    #[test]
    fn doubling_two_cells() {
        let m = ulam(doubling(), 2);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(m.entry(r, c), Some((0.5, 0.0)));
            }
        }
    }

    #[test]
    fn doubling_and_tent_exact() {
        let n = 1024;
        for (name, m) in [("doubling", ulam(doubling(), n)), ("tent", ulam(tent(), n))] {
            assert_eq!(m.nnz(), 2 * n, "{name}");
            for c in 0..n {
                let rows: Vec<_> = m.column(c).collect();
                let expect = if name == "doubling" || c < n / 2 {
                    [(2 * c) % n, (2 * c) % n + 1]
                } else {
                    [2 * (n - 1 - c), 2 * (n - 1 - c) + 1]
                };
                assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), expect, "{name} col {c}");
                assert!(rows.iter().all(|r| r.1 == 0.5 && r.2 == 0.0));
            }
            let (f, res) = fixed_point(&m, 1e-13, 100).unwrap();
            assert!(res.hi() <= 1e-12);
            assert!(f.masses.iter().all(|&x| (x * n as f64 - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn doubling_contraction_time() {
        let m = ulam(doubling(), 1024);
        let pi = StepDensity1D::uniform(1024);
        let prof = contraction_time(&m, &pi, 64).unwrap();
        // exact distances are 2(1 − 2^k/1024), first <= ½ at k = 10
        assert_eq!(prof.n_contraction, 10);
        for k in 1..10 {
            let exact = 2.0 * (1.0 - (1u64 << k) as f64 / 1024.0);
            assert!(prof.bounds[k] >= exact && prof.bounds[k] < exact + 1e-9);
        }
    }

    #[test]
    fn rank_one_contracts_in_one_step() {
        let n = 8;
        let col = [0.1, 0.2, 0.05, 0.05, 0.15, 0.15, 0.2, 0.1];
        let entries = (0..n)
            .flat_map(|c| col.iter().enumerate().map(move |(r, &v)| (c as u32, r as u32, Interval::point(v))))
            .collect();
        let m = SparseTransitionMatrix::from_entries(n, n, entries, 1e-12);
        let (pi, _) = fixed_point(&m, 1e-14, 10).unwrap();
        assert_eq!(contraction_time(&m, &pi, 8).unwrap().n_contraction, 1);
    }

    #[test]
    fn identity_exceeds_cap() {
        let entries = (0..4u32).map(|c| (c, c, Interval::point(1.0))).collect();
        let m = SparseTransitionMatrix::from_entries(4, 4, entries, 1e-12);
        let pi = StepDensity1D::uniform(4);
        assert!(matches!(contraction_time(&m, &pi, 5), Err(Error::ContractionCapExceeded { .. })));
    }

    #[test]
    fn bv_and_coarsen_examples() {
        assert_eq!(bv_norm(&StepDensity1D::uniform(16)).hi(), 2.0);
        let mut spike = vec![0.0; 16];
        spike[5] = 1.0;
        let s = StepDensity1D::new(spike).unwrap();
        assert_eq!(s.variation().hi(), 32.0);
        assert_eq!(bv_norm(&s).hi(), 34.0);
        // density 2 on [0,½), 0 elsewhere
        let f = StepDensity1D::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let (g, loss) = coarsen(&f, Partition1D::new(2).unwrap()).unwrap();
        assert_eq!(g.masses, vec![1.0, 0.0]);
        assert_eq!(g.density(0), 2.0);
        assert_eq!(f.variation().hi(), g.variation().hi());
        assert!(loss.hi() >= bv_norm(&f).hi() * 0.5);
        let (u, _) = coarsen(&StepDensity1D::uniform(64), Partition1D::new(8).unwrap()).unwrap();
        assert_eq!(u, StepDensity1D::uniform(8));
        assert!(coarsen(&u, Partition1D::new(16).unwrap()).is_err());
    }
}
