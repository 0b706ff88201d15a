//! Local dimension of the physical measure of the Lorenz-like family, and the correlation
//! dimension of a long orbit as a non-rigorous control.
//!
//! For `T′ = θα|x − ½|^{α−1}` and `∂_y G = |x − ½|^β` the two Lyapunov integrals reduce to
//! `J = ∫ log|x − ½| f dx`, so `d = 1 + (log θα + (α − 1)J)/(−βJ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{Interval, Rational};
use crate::map2d::SkewProductMap;
use crate::ulam1d::StepDensity1D;

fn pt(x: f64) -> Interval {
    Interval::point(x)
}

/// `∫_a^b log u du` for `0 <= a <= b`, from `u log u − u`.
fn log_integral(a: f64, b: f64) -> Result<Interval> {
    let h = |u: f64| -> Result<Interval> {
        if u == 0.0 {
            return Ok(pt(0.0));
        }
        let u = pt(u);
        Ok(u * u.ln()? - u)
    };
    let v = h(b)? - h(a)?;
    // the integrand is negative on (0, 1)
    Ok(if b <= 1.0 { v.min(&pt(0.0)) } else { v })
}

/// `∫_a^b log|x − ½| dx` for `a <= b`.
fn cell_log_integral(a: f64, b: f64) -> Result<Interval> {
    // a - ½ and b - ½ are exact for a, b in [0, 1]
    let (u, v) = (a - 0.5, b - 0.5);
    if u >= 0.0 {
        log_integral(u, v)
    } else if v <= 0.0 {
        log_integral(-v, -u)
    } else {
        Ok(log_integral(0.0, -u)? + log_integral(0.0, v)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogIntegralBound {
    /// Encloses `∫ log|x − ½| f dx` for the true density `f`.
    pub j: Interval,
    pub eps1: f64,
    pub eps2: f64,
    /// Bound on `‖f‖_∞`.
    pub b_sup: Interval,
    /// `∫ψ̃₁ f_δ` (log clamped at `log ε₁` near ½) and `∫ψ̃₂ f_δ` (zero near ½).
    pub psi1_integral: Interval,
    pub psi2_integral: Interval,
}

/// Pieces of `∫ log|x − ½| f_δ` shared by every window.
struct Cells<'a> {
    f: &'a StepDensity1D,
    n: usize,
    total: Interval,
}

impl<'a> Cells<'a> {
    fn new(f: &'a StepDensity1D) -> Result<Self> {
        let n = f.n();
        let parts: Vec<Result<Interval>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let c = f.partition().cell(i);
                Ok(pt(f.density(i)) * cell_log_integral(c.lo(), c.hi())?)
            })
            .collect();
        let mut total = pt(0.0);
        for p in parts {
            total = total + p?;
        }
        Ok(Cells { f, n, total })
    }

    /// `(∫_W log|x − ½| f_δ, ∫_W f_δ)` over the window `W = (½ − ε, ½ + ε)`.
    fn window(&self, eps: f64) -> Result<(Interval, Interval)> {
        let (lo, hi) = (0.5 - eps, 0.5 + eps);
        let nf = self.n as f64;
        let first = ((lo * nf).floor().max(0.0) as usize).min(self.n - 1);
        let last = ((hi * nf).ceil() as usize).min(self.n);
        let (mut log_part, mut mass) = (pt(0.0), pt(0.0));
        for i in first..last {
            let c = self.f.partition().cell(i);
            let (a, b) = (c.lo().max(lo), c.hi().min(hi));
            if b <= a {
                continue;
            }
            let rho = pt(self.f.density(i));
            log_part = log_part + rho * cell_log_integral(a, b)?;
            mass = mass + rho * (pt(b) - pt(a));
        }
        Ok((log_part, mass))
    }

    /// `∫ψ̃₁ f_δ` and the resulting upper bound on `J`.
    fn upper(&self, eps1: f64, eps_density: Interval) -> Result<(Interval, f64)> {
        let (w_log, w_mass) = self.window(eps1)?;
        let log_eps = pt(eps1).ln()?;
        let psi1 = self.total - w_log + log_eps * w_mass;
        let bound = psi1 + log_eps.abs() * eps_density;
        Ok((psi1, bound.hi()))
    }

    /// `∫ψ̃₂ f_δ` and the resulting lower bound on `J`.
    fn lower(&self, eps2: f64, eps_density: Interval, b_sup: Interval) -> Result<(Interval, f64)> {
        let (w_log, _) = self.window(eps2)?;
        let psi2 = self.total - w_log;
        let log_eps = pt(eps2).ln()?;
        let inner = pt(2.0) * b_sup * pt(eps2) * (log_eps - pt(1.0)).abs();
        let bound = psi2 - log_eps.abs() * eps_density - inner;
        Ok((psi2, bound.lo()))
    }
}

/// Encloses `J = ∫ log|x − ½| f dx` given `‖f − f_δ‖₁ <= eps_density` and `‖f‖_∞ <= b_sup`:
/// `J <= ∫ψ̃₁ f_δ + |log ε₁| ε` and `J >= ∫ψ̃₂ f_δ − |log ε₂| ε − 2 b_sup ε₂ |log ε₂ − 1|`.
///
/// A window radius of `None` is chosen among powers of two to give the tightest side.
pub fn bound_log_integral(
    f_delta: &StepDensity1D,
    eps_density: Interval,
    b_sup: Interval,
    eps1: Option<f64>,
    eps2: Option<f64>,
) -> Result<LogIntegralBound> {
    let check = |e: f64| {
        if e > 0.0 && e < 0.5 {
            Ok(e)
        } else {
            Err(Error::Inconsistent(format!("window radius {e} outside (0, 1/2)")))
        }
    };
    let cells = Cells::new(f_delta)?;
    let candidates: Vec<f64> = (2..=60).map(|k| 2f64.powi(-k)).collect();
    let (eps1, (psi1, up)) = match eps1 {
        Some(e) => (check(e)?, cells.upper(check(e)?, eps_density)?),
        None => {
            let mut best: Option<(f64, (Interval, f64))> = None;
            for &e in &candidates {
                let r = cells.upper(e, eps_density)?;
                if best.as_ref().is_none_or(|b| r.1 < b.1 .1) {
                    best = Some((e, r));
                }
            }
            best.unwrap()
        }
    };
    let (eps2, (psi2, down)) = match eps2 {
        Some(e) => (check(e)?, cells.lower(check(e)?, eps_density, b_sup)?),
        None => {
            let mut best: Option<(f64, (Interval, f64))> = None;
            for &e in &candidates {
                let r = cells.lower(e, eps_density, b_sup)?;
                if best.as_ref().is_none_or(|b| r.1 > b.1 .1) {
                    best = Some((e, r));
                }
            }
            best.unwrap()
        }
    };
    Ok(LogIntegralBound { j: Interval::new(down, up)?, eps1, eps2, b_sup, psi1_integral: psi1, psi2_integral: psi2 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimensionCertificate {
    pub psi_integral: Interval,
    pub phi_integral: Interval,
    pub dimension: Interval,
}

/// `∫ψ = log θ + log α + (α − 1)J`, `∫φ = −βJ` and `d = 1 + ∫ψ/∫φ`, per step of `F`.
pub fn dimension_interval(j: &LogIntegralBound, alpha: &Rational, theta: &Rational, beta: &Rational) -> Result<DimensionCertificate> {
    let (a, t, b) = (alpha.enclosure(), theta.enclosure(), beta.enclosure());
    let psi = t.ln()? + a.ln()? + (a - pt(1.0)) * j.j;
    let phi = -(b * j.j);
    if !(psi.lo() > 0.0) {
        return Err(Error::Inconsistent(format!("expansion integral {psi} is not positive")));
    }
    if !(phi.lo() > 0.0) {
        return Err(Error::Inconsistent(format!("contraction integral {phi} is not positive")));
    }
    let dimension = pt(1.0) + psi.checked_div(&phi)?;
    Ok(DimensionCertificate { psi_integral: psi, phi_integral: phi, dimension })
}

/// Orbit of one step of `F` from `seed` after `burn_in` steps.
pub fn orbit(f: &SkewProductMap, seed: (f64, f64), burn_in: usize, n: usize) -> Result<Vec<(f64, f64)>> {
    let mut p = seed;
    let mut out = Vec::with_capacity(n);
    for k in 0..burn_in + n {
        p = f.step_f64(p.0, p.1);
        if !(0.0..=1.0).contains(&p.0) || !(0.0..=1.0).contains(&p.1) {
            return Err(Error::Inconsistent(format!("orbit left the square at step {k}: {p:?}")));
        }
        if k >= burn_in {
            out.push(p);
        }
    }
    Ok(out)
}

/// `C(ε_k)` for `ε_k = 2^{−k₀−k}`, `k < count`: the fraction of pairs at sup-distance below `ε_k`.
pub fn correlation_sums(points: &[(f64, f64)], k0: i32, count: usize) -> Vec<(f64, f64)> {
    let n = points.len();
    let side = 2f64.powi(-k0);
    let key = |p: &(f64, f64)| ((p.0 / side).floor() as i64, (p.1 / side).floor() as i64);
    let mut sorted: Vec<((i64, i64), (f64, f64))> = points.iter().map(|p| (key(p), *p)).collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let bucket = |k: (i64, i64)| -> &[((i64, i64), (f64, f64))] {
        let start = sorted.partition_point(|e| e.0 < k);
        let end = start + sorted[start..].partition_point(|e| e.0 == k);
        &sorted[start..end]
    };
    // hist[k] counts pairs whose smallest admissible threshold index is k
    let hist = sorted
        .par_iter()
        .enumerate()
        .fold(
            || vec![0u64; count],
            |mut h, (idx, (k, p))| {
                let mut visit = |q: &(f64, f64)| {
                    let d = (p.0 - q.0).abs().max((p.1 - q.1).abs());
                    if d < side {
                        // largest k with 2^{−k₀−k} > d
                        let e = if d == 0.0 { i32::MIN / 2 } else { d.log2().floor() as i32 };
                        let kmax = (-k0 - 1 - e).min(count as i32 - 1);
                        if kmax >= 0 {
                            h[kmax as usize] += 1;
                        }
                    }
                };
                // the rest of the own bucket, then four forward neighbours, so each pair once
                for e in sorted[idx + 1..].iter().take_while(|e| e.0 == *k) {
                    visit(&e.1);
                }
                for (dx, dy) in [(1, -1), (1, 0), (1, 1), (0, 1)] {
                    for e in bucket((k.0 + dx, k.1 + dy)) {
                        visit(&e.1);
                    }
                }
                h
            },
        )
        .reduce(|| vec![0u64; count], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    let mut acc = 0u64;
    let mut out = vec![(0.0, 0.0); count];
    for k in (0..count).rev() {
        acc += hist[k];
        out[k] = (2f64.powi(-k0 - k as i32), acc as f64 / pairs);
    }
    out
}

/// Least-squares slope of `log C` against `log ε` over the points with `C > 0`.
pub fn fit_slope(sums: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = sums.iter().filter(|s| s.1 > 0.0).map(|s| (s.0.ln(), s.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub slope: f64,
    /// `(ε_k, C(ε_k))`.
    pub sums: Vec<(f64, f64)>,
}

/// Correlation dimension of an orbit of length `n` (non-rigorous).
pub fn correlation_dimension(f: &SkewProductMap, n: usize, k0: i32, count: usize, seed: (f64, f64), burn_in: usize) -> Result<CorrelationEstimate> {
    let pts = orbit(f, seed, burn_in, n)?;
    let sums = correlation_sums(&pts, k0, count);
    let slope = fit_slope(&sums).ok_or_else(|| Error::Inconsistent("fewer than two nonzero correlation sums".into()))?;
    Ok(CorrelationEstimate { slope, sums })
}
