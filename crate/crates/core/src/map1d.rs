//! Piecewise monotone interval maps, their iterates, and Lasota-Yorke coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Compiled, Expr, Var};
use crate::interval::{add_up, div_down, div_up, mul_up, sub_down, Interval, Rational};

/// One monotone branch of a piecewise map.
#[derive(Clone, Debug)]
pub struct Branch {
    pub lo_end: Interval,
    pub hi_end: Interval,
    pub map: Compiled,
    pub deriv: Compiled,
    /// 1/T'
    pub inv_deriv: Compiled,
    /// T''/(T')^2, signed
    pub ratio: Compiled,
    pub increasing: bool,
    at_lo: Interval,
    at_hi: Interval,
}

impl Branch {
    /// Branch with derivatives obtained symbolically.
    pub fn from_expr(lo: &Rational, hi: &Rational, map: Expr) -> Result<Branch> {
        let d = map.diff(Var::X);
        let dd = d.diff(Var::X);
        let inv = Expr::div(Expr::int(1), d.clone());
        let ratio = Expr::div(dd, Expr::pow(d.clone(), Rational::from_integer(2)));
        Branch::with_derivatives(lo, hi, map, d, inv, ratio)
    }

    /// Branch with hand-simplified derivative expressions, useful when the symbolic ones
    /// evaluate to `inf/inf` near a singular endpoint.
    pub fn with_derivatives(
        lo: &Rational,
        hi: &Rational,
        map: Expr,
        deriv: Expr,
        inv_deriv: Expr,
        ratio: Expr,
    ) -> Result<Branch> {
        let lo_end = lo.enclosure();
        let hi_end = hi.enclosure();
        if !(lo_end.hi() < hi_end.lo()) {
            return Err(Error::BadTiling(format!("empty branch domain [{lo}, {hi}]")));
        }
        let map = map.compile()?;
        let at_lo = map.eval_x(lo_end)?;
        let at_hi = map.eval_x(hi_end)?;
        let increasing = if at_lo.hi() < at_hi.lo() {
            true
        } else if at_lo.lo() > at_hi.hi() {
            false
        } else {
            return Err(Error::NotMonotone(0));
        };
        let b = Branch {
            lo_end,
            hi_end,
            map,
            deriv: deriv.compile()?,
            inv_deriv: inv_deriv.compile()?,
            ratio: ratio.compile()?,
            increasing,
            at_lo,
            at_hi,
        };
        b.check_monotone()?;
        Ok(b)
    }

    fn check_monotone(&self) -> Result<()> {
        let d = self.domain();
        let n = 64;
        for i in 0..n {
            let a = d.lo() + (d.hi() - d.lo()) * i as f64 / n as f64;
            let b = d.lo() + (d.hi() - d.lo()) * (i + 1) as f64 / n as f64;
            let x = Interval::new(a, b.max(a))?.clamp_to(&d);
            let Ok(v) = self.deriv.eval_x(x) else { continue };
            let wrong = if self.increasing { v.hi() < 0.0 } else { v.lo() > 0.0 };
            if wrong {
                return Err(Error::NotMonotone(0));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Interval {
        Interval::new(self.lo_end.lo(), self.hi_end.hi()).unwrap()
    }

    /// Hull of the image.
    pub fn image(&self) -> Interval {
        self.at_lo.hull(&self.at_hi)
    }

    /// Image enclosures at the left and right domain endpoints.
    pub fn endpoint_images(&self) -> (Interval, Interval) {
        (self.at_lo, self.at_hi)
    }

    #[inline]
    pub fn eval(&self, x: Interval) -> Result<Interval> {
        self.map.eval_x(x.clamp_to(&self.domain()))
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.map.eval_f64(x.clamp(self.lo_end.lo(), self.hi_end.hi()), 0.0)
    }
}

/// Enclosure of `{x in dom(b) : b(x) in y}`. Uses a double-precision bisection as a guess,
/// then certifies both ends with interval evaluations.
pub fn invert_branch(b: &Branch, y: Interval) -> Result<Interval> {
    let img = b.image();
    if y.hi() < img.lo() || y.lo() > img.hi() {
        return Err(Error::PreimageOutside { y: y.to_string(), image: img.to_string() });
    }
    invert_monotone(
        |x| b.eval(Interval::point(x)),
        |x| b.eval_f64(x),
        b.domain(),
        b.increasing,
        y,
        (b.at_lo, b.at_hi),
    )
}

pub(crate) fn invert_monotone(
    f: impl Fn(f64) -> Result<Interval>,
    g: impl Fn(f64) -> f64,
    dom: Interval,
    increasing: bool,
    y: Interval,
    ends: (Interval, Interval),
) -> Result<Interval> {
    let left_of = |x: f64| -> Result<bool> {
        let v = f(x)?;
        Ok(if increasing { v.hi() < y.lo() } else { v.lo() > y.hi() })
    };
    let right_of = |x: f64| -> Result<bool> {
        let v = f(x)?;
        Ok(if increasing { v.lo() > y.hi() } else { v.hi() < y.lo() })
    };
    let guess = |c: f64| -> f64 {
        let (mut a, mut b) = (dom.lo(), dom.hi());
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if (g(m) < c) == increasing {
                a = m;
            } else {
                b = m;
            }
        }
        a
    };
    // `ends` enclose the images of dom.lo() and dom.hi()
    let (lo_left, hi_right) = if increasing {
        (ends.0.hi() < y.lo(), ends.1.lo() > y.hi())
    } else {
        (ends.0.lo() > y.hi(), ends.1.hi() < y.lo())
    };
    let (c_left, c_right) = if increasing { (y.lo(), y.hi()) } else { (y.hi(), y.lo()) };
    let lo = if lo_left { last_true(&left_of, dom.lo(), dom.hi(), guess(c_left))?.0 } else { dom.lo() };
    let hi = if hi_right {
        let not_right = |x: f64| right_of(x).map(|r| !r);
        last_true(&not_right, dom.lo(), dom.hi(), guess(c_right))?.1
    } else {
        dom.hi()
    };
    if y.is_point() && lo < hi {
        // an exactly representable preimage is worth one extra evaluation
        let mut c = lo.next_up();
        for _ in 0..8 {
            if c > hi {
                break;
            }
            if g(c) == y.lo() && f(c)? == y {
                return Ok(Interval::point(c));
            }
            c = c.next_up();
        }
    }
    Interval::new(lo, hi.max(lo))
}

/// Floats `a <= b` in `[lo, hi]` near `g` with `pred(a)` and either `!pred(b)` or `a == b == hi`,
/// assuming `pred(lo)` and that `pred` is true on an initial segment.
fn last_true(pred: &impl Fn(f64) -> Result<bool>, lo: f64, hi: f64, g: f64) -> Result<(f64, f64)> {
    let t0 = g.clamp(lo, hi);
    let s0 = (t0.abs() * 2f64.powi(-51)).max(2f64.powi(-1000));
    let mut s = s0;
    let (mut a, mut b);
    if pred(t0)? {
        a = t0;
        loop {
            let u = (a + s).min(hi);
            if !pred(u)? {
                b = u;
                break;
            }
            if u >= hi {
                return Ok((hi, hi));
            }
            a = u;
            s *= 16.0;
        }
    } else {
        b = t0;
        loop {
            let u = (b - s).max(lo);
            if pred(u)? {
                a = u;
                break;
            }
            if u <= lo {
                return Ok((lo, b));
            }
            b = u;
            s *= 16.0;
        }
    }
    while b - a > s0 && a.next_up() < b {
        let mut m = a + 0.5 * (b - a);
        if m <= a || m >= b {
            m = a.next_up();
        }
        if pred(m)? {
            a = m;
        } else {
            b = m;
        }
    }
    Ok((a, b))
}

/// A map of `[0, 1]` given by monotone branches on consecutive domains.
#[derive(Clone, Debug)]
pub struct PiecewiseMap1D {
    pub branches: Vec<Branch>,
}

impl PiecewiseMap1D {
    pub fn new(branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::BadTiling("no branches".into()));
        }
        if !branches[0].lo_end.contains(0.0) || !branches.last().unwrap().hi_end.contains(1.0) {
            return Err(Error::BadTiling("domains must start at 0 and end at 1".into()));
        }
        for w in branches.windows(2) {
            if !w[0].hi_end.overlaps(&w[1].lo_end) {
                return Err(Error::BadTiling(format!(
                    "gap between {} and {}",
                    w[0].hi_end, w[1].lo_end
                )));
            }
        }
        Ok(PiecewiseMap1D { branches })
    }

    pub fn branch_at(&self, x: f64) -> usize {
        self.branches.partition_point(|b| b.hi_end.hi() <= x).min(self.branches.len() - 1)
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.branches[self.branch_at(x)].eval_f64(x)
    }
}

/// `T(x) = θ(1/2 - x)^α` on `[0, 1/2]` and `1 - θ(x - 1/2)^α` on `[1/2, 1]`.
pub fn lorenz_1d(alpha: &Rational, theta: &Rational) -> Result<PiecewiseMap1D> {
    let half = Rational::new(1, 2);
    let one = Rational::one();
    let at = alpha * theta;
    let inv_at = one.checked_div(&at).ok_or_else(|| Error::Inconsistent("αθ = 0".into()))?;
    let k = &(&one - alpha) * &inv_at;
    let c = |r: &Rational| Expr::constant(r.clone());
    let mut out = Vec::new();
    for right in [false, true] {
        let u = if right {
            Expr::sub(Expr::X, c(&half))
        } else {
            Expr::sub(c(&half), Expr::X)
        };
        let ua = Expr::pow(u.clone(), alpha.clone());
        let map = if right {
            Expr::sub(Expr::int(1), Expr::mul(c(theta), ua))
        } else {
            Expr::mul(c(theta), ua)
        };
        let deriv = Expr::neg(Expr::mul(c(&at), Expr::pow(u.clone(), alpha - &one)));
        let inv = Expr::neg(Expr::mul(c(&inv_at), Expr::pow(u.clone(), &one - alpha)));
        let rho = Expr::mul(c(&k), Expr::pow(u, -alpha.clone()));
        let ratio = if right { rho } else { Expr::neg(rho) };
        let (lo, hi) = if right { (half.clone(), one.clone()) } else { (Rational::zero(), half.clone()) };
        out.push(Branch::with_derivatives(&lo, &hi, map, deriv, inv, ratio)?);
    }
    PiecewiseMap1D::new(out)
}

pub fn doubling() -> PiecewiseMap1D {
    let h = Rational::new(1, 2);
    PiecewiseMap1D::new(vec![
        Branch::from_expr(&Rational::zero(), &h, "2*x".parse().unwrap()).unwrap(),
        Branch::from_expr(&h, &Rational::one(), "2*x - 1".parse().unwrap()).unwrap(),
    ])
    .unwrap()
}

pub fn tent() -> PiecewiseMap1D {
    let h = Rational::new(1, 2);
    PiecewiseMap1D::new(vec![
        Branch::from_expr(&Rational::zero(), &h, "2*x".parse().unwrap()).unwrap(),
        Branch::from_expr(&h, &Rational::one(), "2 - 2*x".parse().unwrap()).unwrap(),
    ])
    .unwrap()
}

/// A monotone branch of `T^m`, described by the sequence of base branches it visits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterateBranch {
    pub path: Vec<usize>,
    pub lo_end: Interval,
    pub hi_end: Interval,
    pub increasing: bool,
    pub at_lo: Interval,
    pub at_hi: Interval,
}

impl IterateBranch {
    pub fn domain(&self) -> Interval {
        Interval::new(self.lo_end.lo(), self.hi_end.hi()).unwrap()
    }

    pub fn image(&self) -> Interval {
        self.at_lo.hull(&self.at_hi)
    }
}

/// Value, 1/derivative and T''/T'^2 of an iterate on an interval.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub value: Interval,
    pub inv_deriv: Interval,
    pub ratio: Interval,
}

/// `T^m` with its monotone branches.
#[derive(Clone, Debug)]
pub struct IteratedMap {
    pub base: PiecewiseMap1D,
    pub m: usize,
    pub branches: Vec<IterateBranch>,
}

impl IteratedMap {
    pub fn eval(&self, k: usize, x: Interval) -> Result<Interval> {
        let br = &self.branches[k];
        let mut x = x.clamp_to(&br.domain());
        for &b in &br.path {
            x = self.base.branches[b].eval(x)?;
        }
        Ok(x)
    }

    pub fn eval_f64(&self, k: usize, x: f64) -> f64 {
        let br = &self.branches[k];
        let mut x = x.clamp(br.lo_end.lo(), br.hi_end.hi());
        for &b in &br.path {
            x = self.base.branches[b].eval_f64(x);
        }
        x
    }

    pub fn jet(&self, k: usize, x: Interval) -> Result<Jet> {
        let br = &self.branches[k];
        let mut x = x.clamp_to(&br.domain());
        let mut inv = Interval::point(1.0);
        let mut rho = Interval::point(0.0);
        for &b in &br.path {
            let base = &self.base.branches[b];
            x = x.clamp_to(&base.domain());
            let id = base.inv_deriv.eval_x(x)?;
            rho = base.ratio.eval_x(x)? + rho * id;
            inv = inv * id;
            x = base.map.eval_x(x)?;
        }
        Ok(Jet { value: x, inv_deriv: inv, ratio: rho })
    }

    pub fn inv_deriv(&self, k: usize, x: Interval) -> Result<Interval> {
        let br = &self.branches[k];
        let mut x = x.clamp_to(&br.domain());
        let mut inv = Interval::point(1.0);
        for &b in &br.path {
            let base = &self.base.branches[b];
            x = x.clamp_to(&base.domain());
            inv = inv * base.inv_deriv.eval_x(x)?;
            x = base.map.eval_x(x)?;
        }
        Ok(inv)
    }

    /// Derivative of the iterate, as a product of base derivatives.
    pub fn deriv(&self, k: usize, x: Interval) -> Result<Interval> {
        let br = &self.branches[k];
        let mut x = x.clamp_to(&br.domain());
        let mut d = Interval::point(1.0);
        for &b in &br.path {
            let base = &self.base.branches[b];
            x = x.clamp_to(&base.domain());
            d = d * base.deriv.eval_x(x)?;
            x = base.map.eval_x(x)?;
        }
        Ok(d)
    }

    /// Enclosure of the preimage of `y` under branch `k`, by successive base inversions.
    pub fn invert(&self, k: usize, y: Interval) -> Result<Interval> {
        let br = &self.branches[k];
        let img = br.image();
        let Some(mut z) = y.intersect(&img) else {
            return Err(Error::PreimageOutside { y: y.to_string(), image: img.to_string() });
        };
        for &b in br.path.iter().rev() {
            let base = &self.base.branches[b];
            z = z.clamp_to(&base.image());
            z = invert_branch(base, z)?;
        }
        Ok(z.clamp_to(&br.domain()))
    }

    /// Index of the branch whose domain contains `x` (for simulation).
    pub fn branch_at(&self, x: f64) -> usize {
        self.branches.partition_point(|b| b.hi_end.hi() <= x).min(self.branches.len() - 1)
    }
}

fn interval_max(a: Interval, b: Interval) -> Interval {
    a.max(&b)
}

fn interval_min(a: Interval, b: Interval) -> Interval {
    a.min(&b)
}

/// Monotone branches of `T^m` with endpoint enclosures, ordered left to right.
pub fn branch_partition(map: &PiecewiseMap1D, m: usize) -> Result<IteratedMap> {
    if m == 0 {
        return Err(Error::Inconsistent("iterate must be at least 1".into()));
    }
    let nb = map.branches.len();
    let mut out = Vec::new();
    let total = nb.pow(m as u32);
    for code in 0..total {
        let mut path = Vec::with_capacity(m);
        let mut c = code;
        for _ in 0..m {
            path.push(c % nb);
            c /= nb;
        }
        path.reverse();
        if let Some((lo, hi)) = pullback(map, &path)? {
            out.push((path, lo, hi));
        }
    }
    let mut branches = Vec::with_capacity(out.len());
    for (path, lo_end, hi_end) in out {
        if !(lo_end.hi() < hi_end.lo()) {
            return Err(Error::EndpointSeparation(lo_end.mid()));
        }
        let increasing = path.iter().filter(|&&b| !map.branches[b].increasing).count() % 2 == 0;
        let mut br = IterateBranch {
            path,
            lo_end,
            hi_end,
            increasing,
            at_lo: Interval::point(0.0),
            at_hi: Interval::point(0.0),
        };
        let tmp = IteratedMap { base: map.clone(), m, branches: vec![br.clone()] };
        br.at_lo = tmp.eval(0, lo_end)?;
        br.at_hi = tmp.eval(0, hi_end)?;
        branches.push(br);
    }
    branches.sort_by(|a, b| a.lo_end.mid().total_cmp(&b.lo_end.mid()));
    for w in branches.windows(2) {
        if !w[0].hi_end.overlaps(&w[1].lo_end) {
            return Err(Error::BadTiling(format!(
                "iterate branches leave a gap near {}",
                w[0].hi_end
            )));
        }
        if !(w[0].lo_end.hi() < w[1].lo_end.lo()) {
            return Err(Error::EndpointSeparation(w[1].lo_end.mid()));
        }
    }
    Ok(IteratedMap { base: map.clone(), m, branches })
}

fn pullback(map: &PiecewiseMap1D, path: &[usize]) -> Result<Option<(Interval, Interval)>> {
    let last = &map.branches[*path.last().unwrap()];
    let (mut lo, mut hi) = (last.lo_end, last.hi_end);
    for &b in path[..path.len() - 1].iter().rev() {
        let br = &map.branches[b];
        let img = br.image();
        let (imin, imax) = if br.increasing {
            (br.endpoint_images().0, br.endpoint_images().1)
        } else {
            (br.endpoint_images().1, br.endpoint_images().0)
        };
        debug_assert!(img.contains(imin.mid()));
        let nlo = interval_max(lo, imin);
        let nhi = interval_min(hi, imax);
        if nlo.lo() >= nhi.hi() {
            return Ok(None);
        }
        if nlo.hi() >= nhi.lo() {
            return Err(Error::EndpointSeparation(nlo.mid()));
        }
        let xa = invert_branch(br, nlo)?;
        let xb = invert_branch(br, nhi)?;
        (lo, hi) = if br.increasing { (xa, xb) } else { (xb, xa) };
    }
    Ok(Some((lo, hi)))
}

/// Lasota-Yorke data for `T^m`: `Var(Lf) <= λ₁ Var(f) + B' ||f||₁` and `B = B'/(1-λ₁)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LYCoefficients {
    pub l: f64,
    /// 2 / (shortest branch length)
    pub gap_term: Interval,
    /// sup |1/(T^m)'|
    pub sup_inv_deriv: Interval,
    /// (1/2) ∫ over {|T''/T'^2| >= l} of |T''/T'^2|
    pub half_integral: Interval,
    pub lambda1: Interval,
    pub b_prime: Interval,
    pub b: Interval,
}

/// Computes the coefficients with `λ₁ = ½∫_{I_l}|T''/T'^2| + 2 sup|1/T'|` and
/// `B' = 2/min|branch| + l`. `tol` is the relative precision of the searches. Fails when
/// `λ₁ >= 1`.
pub fn ly_coefficients(map: &IteratedMap, l: f64, tol: f64) -> Result<LYCoefficients> {
    let mut min_len = f64::INFINITY;
    let mut max_len: f64 = 0.0;
    for br in &map.branches {
        min_len = min_len.min(sub_down(br.hi_end.lo(), br.lo_end.hi()));
        max_len = max_len.max(br.hi_end.hi() - br.lo_end.lo());
    }
    let gap_hi = div_up(2.0, min_len);
    let gap_lo = div_down(2.0, (min_len + (max_len - min_len).min(4.0 * f64::EPSILON)).max(min_len));
    let gap_term = Interval::new(gap_lo.min(gap_hi), gap_hi)?;

    let mut sup_lo: f64 = 0.0;
    let mut sup_hi: f64 = 0.0;
    let mut integral_hi = 0.0;
    let mut integral_lo = 0.0;
    for k in 0..map.branches.len() {
        let (lo, hi) = sup_abs(|x| inv_deriv_centered(map, k, x), map.branches[k].domain(), tol)?;
        sup_lo = sup_lo.max(lo);
        sup_hi = sup_hi.max(hi);
        let (ilo, ihi) = ratio_integral(map, k, l, tol)?;
        integral_hi = add_up(integral_hi, ihi);
        integral_lo += ilo;
    }
    let half_integral = Interval::new(0.5 * integral_lo.min(integral_hi), 0.5 * integral_hi)?;
    let sup_inv_deriv = Interval::new(sup_lo, sup_hi)?;
    let lambda1 = half_integral + Interval::point(2.0) * sup_inv_deriv;
    if !(lambda1.hi() < 1.0) {
        return Err(Error::NoContraction { lambda1: lambda1.hi() });
    }
    let b_prime = gap_term + Interval::point(l);
    let b = b_prime.checked_div(&(Interval::point(1.0) - lambda1))?;
    Ok(LYCoefficients { l, gap_term, sup_inv_deriv, half_integral, lambda1, b_prime, b })
}

/// `1/g'` on `x`, intersected with its mean-value form `1/g'(m) - ρ(x)(x - m)`, using
/// `(1/g')' = -g''/g'^2`.
fn inv_deriv_centered(map: &IteratedMap, k: usize, x: Interval) -> Result<Interval> {
    let jet = map.jet(k, x)?;
    if x.is_point() {
        return Ok(jet.inv_deriv);
    }
    let m = Interval::point(x.mid());
    let fm = map.inv_deriv(k, m)?;
    let cf = fm - jet.ratio * (x - m);
    Ok(jet.inv_deriv.intersect(&cf).unwrap_or(jet.inv_deriv))
}

/// Branch-and-bound bracket `(lower, upper)` of `sup |f|` over `dom`, to relative
/// precision `tol`.
pub(crate) fn sup_abs(
    f: impl Fn(Interval) -> Result<Interval>,
    dom: Interval,
    tol: f64,
) -> Result<(f64, f64)> {
    const SEED: usize = 64;
    let mut best: f64 = 0.0;
    let mut stack = Vec::new();
    let w = dom.hi() - dom.lo();
    for i in 0..SEED {
        let a = dom.lo() + w * i as f64 / SEED as f64;
        let b = if i + 1 == SEED { dom.hi() } else { dom.lo() + w * (i + 1) as f64 / SEED as f64 };
        let x = Interval::new(a, b)?;
        best = best.max(f(Interval::point(x.mid()))?.mig());
        stack.push((x, f(x)?.mag()));
    }
    let mut upper: f64 = 0.0;
    let mut evals = 0usize;
    while let Some((x, ub)) = stack.pop() {
        if ub <= best * (1.0 + tol) || x.width() < 1e-14 || evals > 2_000_000 {
            upper = upper.max(ub);
            continue;
        }
        let m = x.mid();
        for part in [Interval::new(x.lo(), m)?, Interval::new(m, x.hi())?] {
            evals += 1;
            best = best.max(f(Interval::point(part.mid()))?.mig());
            stack.push((part, f(part)?.mag()));
        }
    }
    Ok((best, upper.max(best)))
}

/// Bracket of `∫ |ρ|` over a set containing `{x in dom_k : |ρ(x)| >= l}`, `ρ = T''/T'^2`.
/// On pieces where ρ has constant sign, `∫|ρ| = |1/T'(b) - 1/T'(a)|`, which stays finite up
/// to singular endpoints.
fn ratio_integral(map: &IteratedMap, k: usize, l: f64, tol: f64) -> Result<(f64, f64)> {
    let dom = map.branches[k].domain();
    let wmin = (tol * 1e-4).max(1e-15);
    let mut stack = Vec::new();
    let seed = 64;
    let w = dom.hi() - dom.lo();
    for i in 0..seed {
        let a = dom.lo() + w * i as f64 / seed as f64;
        let b = if i + 1 == seed { dom.hi() } else { dom.lo() + w * (i + 1) as f64 / seed as f64 };
        stack.push(Interval::new(a, b)?);
    }
    let mut hi_sum = 0.0;
    let mut lo_sum = 0.0;
    while let Some(x) = stack.pop() {
        let jet = map.jet(k, x)?;
        let r = jet.ratio;
        let a = r.abs();
        if a.hi() < l {
            continue;
        }
        if a.lo() >= l || x.width() <= wmin {
            let contrib = if r.lo() > 0.0 || r.hi() < 0.0 {
                let ga = map.inv_deriv(k, Interval::point(x.lo()))?;
                let gb = map.inv_deriv(k, Interval::point(x.hi()))?;
                let d = gb - ga;
                if a.lo() >= l {
                    lo_sum += d.mig();
                }
                d.mag()
            } else {
                mul_up(x.width(), a.hi())
            };
            hi_sum = add_up(hi_sum, contrib);
            continue;
        }
        let m = x.mid();
        stack.push(Interval::new(x.lo(), m)?);
        stack.push(Interval::new(m, x.hi())?);
    }
    Ok((lo_sum, hi_sum))
}
