//! Closed intervals with outward rounding, and exact rationals for configuration.
//!
//! Endpoints are rounded with error-free transformations (TwoSum, TwoProduct residuals), so an
//! operation whose exact result is a double returns it exactly. `ln` and `exp` use argument
//! reduction and a truncated series evaluated in doubles, with rounding and truncation errors
//! bounded explicitly, so they do not depend on the platform libm.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

// Below this magnitude an FMA residual may itself be rounded; step out instead.
const TINY: f64 = f64::from_bits(((1023 - 900) as u64) << 52);

// ln 2 lies strictly between these consecutive doubles.
// Cody-Waite split: k * LN2_CW_HI is exact for |k| < 2^21.
const LN2_CW_HI: f64 = f64::from_bits(0x3FE6_2E42_FEE0_0000);
const LN2_CW_LO: f64 = f64::from_bits(0x3DEA_39EF_3579_3C76);

#[inline]
fn two_sum_err(a: f64, b: f64, s: f64) -> f64 {
    let bb = s - a;
    (a - (s - bb)) + (b - bb)
}

// Above this magnitude Dekker splitting may overflow.
const HUGE: f64 = f64::from_bits(((1023 + 995) as u64) << 52);

/// Exact `a·b − p` for `p = fl(a·b)`, when `|a|, |b| <= HUGE` and `|p| >= TINY`.
#[inline]
fn two_prod_err(a: f64, b: f64, p: f64) -> f64 {
    #[cfg(target_feature = "fma")]
    {
        a.mul_add(b, -p)
    }
    #[cfg(not(target_feature = "fma"))]
    {
        const SPLIT: f64 = 134_217_729.0;
        let split = |x: f64| {
            let c = SPLIT * x;
            let h = c - (c - x);
            (h, x - h)
        };
        let (ah, al) = split(a);
        let (bh, bl) = split(b);
        ((ah * bh - p) + ah * bl + al * bh) + al * bl
    }
}

#[inline]
pub(crate) fn add_down(a: f64, b: f64) -> f64 {
    let s = a + b;
    if !s.is_finite() {
        return if s == f64::INFINITY && a.is_finite() && b.is_finite() {
            f64::MAX
        } else {
            s
        };
    }
    if two_sum_err(a, b, s) < 0.0 {
        s.next_down()
    } else {
        s
    }
}

#[inline]
pub(crate) fn add_up(a: f64, b: f64) -> f64 {
    let s = a + b;
    if !s.is_finite() {
        return if s == f64::NEG_INFINITY && a.is_finite() && b.is_finite() {
            -f64::MAX
        } else {
            s
        };
    }
    if two_sum_err(a, b, s) > 0.0 {
        s.next_up()
    } else {
        s
    }
}

#[inline]
pub(crate) fn sub_down(a: f64, b: f64) -> f64 {
    add_down(a, -b)
}

#[inline]
pub(crate) fn sub_up(a: f64, b: f64) -> f64 {
    add_up(a, -b)
}

#[inline]
pub(crate) fn mul_down(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if p.is_infinite() {
        return if p > 0.0 && a.is_finite() && b.is_finite() {
            f64::MAX
        } else {
            p
        };
    }
    if p.abs() < TINY || a.abs() > HUGE || b.abs() > HUGE {
        return p.next_down();
    }
    if two_prod_err(a, b, p) < 0.0 {
        p.next_down()
    } else {
        p
    }
}

#[inline]
pub(crate) fn mul_up(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if p.is_infinite() {
        return if p < 0.0 && a.is_finite() && b.is_finite() {
            -f64::MAX
        } else {
            p
        };
    }
    if p.abs() < TINY || a.abs() > HUGE || b.abs() > HUGE {
        return p.next_up();
    }
    if two_prod_err(a, b, p) > 0.0 {
        p.next_up()
    } else {
        p
    }
}

// Sign of (a/b − q) for q = fl(a/b); the remainder a − q·b is exact away from over/underflow,
// and None means it could not be certified.
#[inline]
fn div_residual_sign(a: f64, b: f64, q: f64) -> Option<f64> {
    if b.abs() > HUGE || q.abs() > HUGE || b.abs() < TINY {
        return None;
    }
    let p = q * b;
    if p.abs() < TINY {
        return None;
    }
    let r = (a - p) - two_prod_err(q, b, p);
    Some(if r == 0.0 {
        0.0
    } else if (r > 0.0) == (b > 0.0) {
        1.0
    } else {
        -1.0
    })
}

#[inline]
pub(crate) fn div_down(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let q = a / b;
    if q.is_infinite() {
        return if q > 0.0 && a.is_finite() { f64::MAX } else { q };
    }
    if b.is_infinite() {
        return 0.0;
    }
    if q.abs() < TINY {
        return q.next_down();
    }
    match div_residual_sign(a, b, q) {
        Some(s) if s >= 0.0 => q,
        _ => q.next_down(),
    }
}

#[inline]
pub(crate) fn div_up(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let q = a / b;
    if q.is_infinite() {
        return if q < 0.0 && a.is_finite() { -f64::MAX } else { q };
    }
    if b.is_infinite() {
        return 0.0;
    }
    if q.abs() < TINY {
        return q.next_up();
    }
    match div_residual_sign(a, b, q) {
        Some(s) if s <= 0.0 => q,
        _ => q.next_up(),
    }
}

fn pow_nonneg_down(a: f64, n: u32) -> f64 {
    let (mut base, mut e, mut acc) = (a, n, 1.0);
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_down(acc, base);
        }
        e >>= 1;
        if e > 0 {
            base = mul_down(base, base);
        }
    }
    acc
}

fn pow_nonneg_up(a: f64, n: u32) -> f64 {
    let (mut base, mut e, mut acc) = (a, n, 1.0);
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_up(acc, base);
        }
        e >>= 1;
        if e > 0 {
            base = mul_up(base, base);
        }
    }
    acc
}

/// A closed interval `[lo, hi]` of reals. Endpoints may be infinite but never NaN, and
/// `lo < +inf`, `hi > -inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
        {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    #[inline]
    pub(crate) fn raw(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "bad interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    #[inline]
    pub fn point(x: f64) -> Self {
        assert!(x.is_finite(), "point interval needs a finite value, got {x}");
        Interval { lo: x, hi: x }
    }

    pub fn entire() -> Self {
        Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn unit() -> Self {
        Interval { lo: 0.0, hi: 1.0 }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn mid(&self) -> f64 {
        if self.lo == f64::NEG_INFINITY {
            if self.hi == f64::INFINITY {
                0.0
            } else {
                -f64::MAX
            }
        } else if self.hi == f64::INFINITY {
            f64::MAX
        } else {
            let m = 0.5 * self.lo + 0.5 * self.hi;
            m.clamp(self.lo, self.hi)
        }
    }

    /// Upper bound on `hi - lo`.
    pub fn width(&self) -> f64 {
        sub_up(self.hi, self.lo)
    }

    /// Upper bound on the distance from `mid()` to either endpoint.
    pub fn rad(&self) -> f64 {
        let m = self.mid();
        sub_up(self.hi, m).max(sub_up(m, self.lo))
    }

    /// Largest absolute value.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Smallest absolute value.
    pub fn mig(&self) -> f64 {
        if self.lo > 0.0 {
            self.lo
        } else if self.hi < 0.0 {
            -self.hi
        } else {
            0.0
        }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// True when every point of `self` is strictly below every point of `other`.
    pub fn certainly_lt(&self, other: &Interval) -> bool {
        self.hi < other.lo
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Some(Interval { lo, hi })
        } else {
            None
        }
    }

    /// Intersection, or the endpoint of `other` nearest to `self` when they are disjoint.
    pub fn clamp_to(&self, other: &Interval) -> Interval {
        match self.intersect(other) {
            Some(i) => i,
            None if self.hi < other.lo => Interval::raw(other.lo, other.lo),
            None => Interval::raw(other.hi, other.hi),
        }
    }

    pub fn max(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.max(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn min(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.min(other.hi) }
    }

    pub fn abs(&self) -> Interval {
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            Interval { lo: -self.hi, hi: -self.lo }
        } else {
            Interval { lo: 0.0, hi: (-self.lo).max(self.hi) }
        }
    }

    /// Enclosure of the sign function, with sign(0) = 0.
    pub fn sign(&self) -> Interval {
        let lo = if self.lo > 0.0 {
            1.0
        } else if self.lo == 0.0 {
            0.0
        } else {
            -1.0
        };
        let hi = if self.hi < 0.0 {
            -1.0
        } else if self.hi == 0.0 {
            0.0
        } else {
            1.0
        };
        Interval { lo, hi }
    }

    pub fn sqr(&self) -> Interval {
        let m = self.abs();
        Interval { lo: mul_down(m.lo, m.lo), hi: mul_up(m.hi, m.hi) }
    }

    pub fn powi(&self, n: i32) -> Result<Interval> {
        if n == 0 {
            return Ok(Interval::point(1.0));
        }
        if n < 0 {
            return Interval::point(1.0).checked_div(&self.powi(-n)?);
        }
        let n = n as u32;
        if n % 2 == 0 {
            let m = self.abs();
            Ok(Interval { lo: pow_nonneg_down(m.lo, n), hi: pow_nonneg_up(m.hi, n) })
        } else {
            let down = |a: f64| {
                if a >= 0.0 {
                    pow_nonneg_down(a, n)
                } else {
                    -pow_nonneg_up(-a, n)
                }
            };
            let up = |a: f64| {
                if a >= 0.0 {
                    pow_nonneg_up(a, n)
                } else {
                    -pow_nonneg_down(-a, n)
                }
            };
            Ok(Interval { lo: down(self.lo), hi: up(self.hi) })
        }
    }

    pub fn checked_div(&self, o: &Interval) -> Result<Interval> {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return Err(Error::DivisionByZero(o.to_string()));
        }
        if o.hi < 0.0 {
            return (-*self).checked_div(&-*o);
        }
        let lo = if self.lo >= 0.0 { div_down(self.lo, o.hi) } else { div_down(self.lo, o.lo) };
        let hi = if self.hi >= 0.0 { div_up(self.hi, o.lo) } else { div_up(self.hi, o.hi) };
        Ok(Interval { lo, hi })
    }

    pub fn recip(&self) -> Result<Interval> {
        Interval::point(1.0).checked_div(self)
    }

    pub fn ln(&self) -> Result<Interval> {
        if self.lo < 0.0 || self.hi <= 0.0 {
            return Err(Error::Domain { op: "ln", arg: self.to_string() });
        }
        let lo = if self.lo == 0.0 { f64::NEG_INFINITY } else { ln_point(self.lo).lo };
        let hi = ln_point(self.hi).hi;
        Ok(Interval { lo, hi })
    }

    pub fn exp(&self) -> Interval {
        Interval { lo: exp_point(self.lo).lo, hi: exp_point(self.hi).hi }
    }

    /// `self^p` for rational `p`. A non-integer exponent needs a nonnegative base.
    pub fn pow_rational(&self, p: &Rational) -> Result<Interval> {
        if let Some(n) = p.to_i32() {
            return self.powi(n);
        }
        if self.lo < 0.0 {
            return Err(Error::Domain { op: "pow", arg: self.to_string() });
        }
        Ok(self.pow_nonneg(&p.enclosure(), p.is_positive()))
    }

    /// `x^p` for a non-integer exponent enclosed by `p`, on `self ∩ [0, inf)`.
    pub(crate) fn pow_nonneg(&self, p: &Interval, positive: bool) -> Interval {
        let lo = self.lo.max(0.0);
        let hi = self.hi.max(0.0);
        let at = |a: f64| (*p * ln_point(a)).exp();
        if lo == hi && lo > 0.0 && hi < f64::INFINITY {
            return at(lo);
        }
        if positive {
            let l = if lo == 0.0 { 0.0 } else { at(lo).lo };
            let h = if hi == f64::INFINITY {
                f64::INFINITY
            } else if hi == 0.0 {
                0.0
            } else {
                at(hi).hi
            };
            Interval { lo: l, hi: h }
        } else {
            let l = if hi == f64::INFINITY {
                0.0
            } else if hi == 0.0 {
                f64::INFINITY
            } else {
                at(hi).lo
            };
            let h = if lo == 0.0 { f64::INFINITY } else { at(lo).hi };
            if l == f64::INFINITY {
                return Interval { lo: f64::MAX, hi: f64::INFINITY };
            }
            Interval { lo: l, hi: h }
        }
    }
}

fn decompose(a: f64) -> (f64, i32) {
    let bits = a.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i32;
    if e == 0 {
        let (m, k) = decompose(a * f64::from_bits((1023 + 54) << 52));
        return (m, k - 54);
    }
    let m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1023 << 52));
    (m, e - 1023)
}

/// Exact `(s, e)` with `s + e = a + b`.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, two_sum_err(a, b, s))
}

const LN2_LO: f64 = f64::from_bits(0x3FE6_2E42_FEFA_39EF);
const LN2_HI: f64 = f64::from_bits(0x3FE6_2E42_FEFA_39F0);
// |ln 2 − (LN2_CW_HI + LN2_CW_LO)| is below 1.17e-26.
const LN2_CW_ERR: f64 = 1.2e-26;
const U: f64 = f64::EPSILON / 2.0;

/// Enclosure of ln(a) for a > 0.
///
/// Plain double evaluation with an explicit error bound: `ln m = 2 atanh s` with
/// `s = (m−1)/(m+1)` carried as `s + ds`, and `k ln 2` in Cody-Waite form.
fn ln_point(a: f64) -> Interval {
    const K: usize = 12;
    debug_assert!(a > 0.0);
    if a == f64::INFINITY {
        return Interval { lo: f64::MAX, hi: f64::INFINITY };
    }
    if a == 1.0 {
        return Interval::point(0.0);
    }
    let (mut m, mut k) = decompose(a);
    if m > std::f64::consts::SQRT_2 {
        m *= 0.5;
        k += 1;
    }
    let kf = k as f64;
    if m == 1.0 {
        return Interval { lo: LN2_LO, hi: LN2_HI } * Interval::point(kf);
    }
    // m − 1 is exact for m in [1/2, 2]; m + 1 = d_hi + d_lo exactly
    let num = m - 1.0;
    let (d_hi, d_lo) = two_sum(m, 1.0);
    let s = num / d_hi;
    let p = s * d_hi;
    let r = (num - p) - two_prod_err(s, d_hi, p);
    let ds = (r - s * d_lo) / d_hi;
    // atanh s = s + s t Q(t), t = s², Q(t) = Σ_{j>=1} t^(j−1)/(2j+1)
    let t = s * s;
    let mut q = 1.0 / (2 * K + 1) as f64;
    for j in (1..K).rev() {
        q = q * t + 1.0 / (2 * j + 1) as f64;
    }
    let corr = 2.0 * s * t * q;
    let tail = 2.0 * s.abs() * t.powi(K as i32) / ((2 * K + 3) as f64 * (1.0 - t));
    let (big, e1) = two_sum(kf * LN2_CW_HI, 2.0 * s);
    let k_lo = kf * LN2_CW_LO;
    let small = e1 + k_lo + 2.0 * ds + corr;
    let v = big + small;
    let err = U * v.abs()
        + 4.0 * U * (e1.abs() + k_lo.abs() + 2.0 * ds.abs() + corr.abs())
        + 64.0 * U * corr.abs()
        + 16.0 * U * ds.abs()
        + tail
        + kf.abs() * LN2_CW_ERR;
    let err = err * (1.0 + 16.0 * U) + f64::from_bits(1);
    Interval { lo: sub_down(v, err), hi: add_up(v, err) }
}

fn scale2(x: Interval, k: i32) -> Interval {
    let k1 = k / 2;
    let k2 = k - k1;
    let f1 = f64::from_bits(((1023 + k1) as u64) << 52);
    let f2 = f64::from_bits(((1023 + k2) as u64) << 52);
    Interval {
        lo: mul_down(mul_down(x.lo, f1), f2),
        hi: mul_up(mul_up(x.hi, f1), f2),
    }
}

/// Enclosure of exp(a): `a = k ln 2 + r` with `|r| <= 0.35`, then a Taylor sum in doubles with
/// its rounding and truncation errors bounded explicitly.
fn exp_point(a: f64) -> Interval {
    const N: usize = 13;
    if a == f64::NEG_INFINITY {
        return Interval::point(0.0);
    }
    if a > 709.78 {
        return Interval { lo: f64::MAX, hi: f64::INFINITY };
    }
    if a < -745.2 {
        return Interval { lo: 0.0, hi: f64::from_bits(1) };
    }
    if a == 0.0 {
        return Interval::point(1.0);
    }
    let k = (a * std::f64::consts::LOG2_E).round();
    let (r1, e_r1) = two_sum(a, -(k * LN2_CW_HI));
    let p2 = k * LN2_CW_LO;
    let c = e_r1 - p2;
    let r = r1 + c;
    let dr = U * (p2.abs() + c.abs() + r.abs()) + k.abs() * LN2_CW_ERR;
    // e^r = 1 + r + r² S(r), S(r) = Σ_{i>=0} r^i/(i+2)!
    // factorials up to 15! are exact doubles
    const fn factorials() -> [f64; N + 3] {
        let mut f = [1.0f64; N + 3];
        let mut i = 1;
        while i < N + 3 {
            f[i] = f[i - 1] * i as f64;
            i += 1;
        }
        f
    }
    const FACT: [f64; N + 3] = factorials();
    let fact = &FACT;
    let mut sr = 1.0 / fact[N + 2];
    for i in (0..N).rev() {
        sr = sr * r + 1.0 / fact[i + 2];
    }
    let r2 = r * r;
    let q = r2 * sr;
    let p = r + q;
    let y = 1.0 + p;
    let ra = r.abs();
    // S(|r|) < 0.6 for |r| <= 0.35; remainder <= |r|^(N+1) e^|r| / (N+3)!
    let tail = r2 * ra.powi(N as i32 + 1) * 1.5 / fact[N + 2] / (N + 3) as f64;
    let err = U * y.abs() + U * p.abs() + r2 * (2 * N + 8) as f64 * U * 0.6 + tail + y.abs() * dr * 1.01;
    let err = err * (1.0 + 16.0 * U) + f64::from_bits(1);
    scale2(Interval { lo: sub_down(y, err), hi: add_up(y, err) }, k as i32)
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}, {:?}]", self.lo, self.hi)
    }
}

impl Add for Interval {
    type Output = Interval;
    #[inline]
    fn add(self, o: Interval) -> Interval {
        Interval { lo: add_down(self.lo, o.lo), hi: add_up(self.hi, o.hi) }
    }
}

impl Sub for Interval {
    type Output = Interval;
    #[inline]
    fn sub(self, o: Interval) -> Interval {
        Interval { lo: sub_down(self.lo, o.hi), hi: sub_up(self.hi, o.lo) }
    }
}

impl Neg for Interval {
    type Output = Interval;
    #[inline]
    fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;
    #[inline]
    fn mul(self, o: Interval) -> Interval {
        let (a, b, c, d) = (self.lo, self.hi, o.lo, o.hi);
        let (lo, hi) = if a >= 0.0 {
            if c >= 0.0 {
                (mul_down(a, c), mul_up(b, d))
            } else if d <= 0.0 {
                (mul_down(b, c), mul_up(a, d))
            } else {
                (mul_down(b, c), mul_up(b, d))
            }
        } else if b <= 0.0 {
            if c >= 0.0 {
                (mul_down(a, d), mul_up(b, c))
            } else if d <= 0.0 {
                (mul_down(b, d), mul_up(a, c))
            } else {
                (mul_down(a, d), mul_up(a, c))
            }
        } else if c >= 0.0 {
            (mul_down(a, d), mul_up(b, d))
        } else if d <= 0.0 {
            (mul_down(b, c), mul_up(a, c))
        } else {
            (mul_down(a, d).min(mul_down(b, c)), mul_up(a, c).max(mul_up(b, d)))
        };
        Interval { lo, hi }
    }
}

/// Panics when the divisor contains zero; use [`Interval::checked_div`] otherwise.
impl Div for Interval {
    type Output = Interval;
    fn div(self, o: Interval) -> Interval {
        self.checked_div(&o).expect("interval division by zero")
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.lo, self.hi].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [lo, hi] = <[f64; 2]>::deserialize(d)?;
        Interval::new(lo, hi).map_err(serde::de::Error::custom)
    }
}

/// Exact rational number, used for map parameters and configuration.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

impl Rational {
    pub fn new(n: i64, d: i64) -> Self {
        assert!(d != 0, "zero denominator");
        Rational(BigRational::new(n.into(), d.into()))
    }

    pub fn from_integer(n: i64) -> Self {
        Rational(BigRational::from_integer(n.into()))
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    /// Exact value of a finite double.
    pub fn from_f64(x: f64) -> Option<Self> {
        BigRational::from_float(x).map(Rational)
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn to_i32(&self) -> Option<i32> {
        if self.is_integer() {
            self.0.numer().to_i32()
        } else {
            None
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// Nearest double (not rigorous).
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn checked_div(&self, o: &Rational) -> Option<Rational> {
        if o.is_zero() {
            None
        } else {
            Some(Rational(&self.0 / &o.0))
        }
    }

    /// Tightest double enclosure: a point when the value is representable.
    pub fn enclosure(&self) -> Interval {
        let f = self.to_f64();
        if !f.is_finite() {
            return if self.is_positive() {
                Interval { lo: f64::MAX, hi: f64::INFINITY }
            } else {
                Interval { lo: f64::NEG_INFINITY, hi: -f64::MAX }
            };
        }
        let cmp = |x: f64| Rational::from_f64(x).map(|r| r.cmp(self));
        let mut lo = f;
        while cmp(lo) == Some(Ordering::Greater) {
            lo = lo.next_down();
        }
        if cmp(lo) == Some(Ordering::Equal) {
            return Interval::point(lo);
        }
        let mut hi = f;
        while cmp(hi) != Some(Ordering::Greater) {
            hi = hi.next_up();
        }
        while cmp(hi.next_down()) == Some(Ordering::Greater) {
            hi = hi.next_down();
        }
        while cmp(lo.next_up()) == Some(Ordering::Less) {
            lo = lo.next_up();
        }
        Interval::raw(lo, hi)
    }

    pub fn abs(&self) -> Rational {
        Rational(self.0.abs())
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Rational {
    type Err = Error;

    /// Accepts `a/b`, integers and plain decimals such as `0.25`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("not a rational: {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            return Ok(Rational(BigRational::new(n, d)));
        }
        if let Some((ip, fp)) = s.split_once('.') {
            if fp.is_empty() || !fp.chars().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            let neg = ip.starts_with('-');
            let digits = format!("{}{}", ip.trim_start_matches(['-', '+']), fp);
            let n: BigInt = digits.parse().map_err(|_| bad())?;
            let d = num_traits::pow(BigInt::from(10), fp.len());
            let r = BigRational::new(n, d);
            return Ok(Rational(if neg { -r } else { r }));
        }
        let n: BigInt = s.parse().map_err(|_| bad())?;
        Ok(Rational(BigRational::from_integer(n)))
    }
}

macro_rules! rat_binop {
    ($tr:ident, $f:ident) => {
        impl $tr for Rational {
            type Output = Rational;
            fn $f(self, o: Rational) -> Rational {
                Rational(self.0.$f(o.0))
            }
        }
        impl<'a> $tr<&'a Rational> for &'a Rational {
            type Output = Rational;
            fn $f(self, o: &Rational) -> Rational {
                Rational((&self.0).$f(&o.0))
            }
        }
    };
}
rat_binop!(Add, add);
rat_binop!(Sub, sub);
rat_binop!(Mul, mul);

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    #[test]
    fn exact_sums_and_products_stay_exact() {
        assert_eq!(iv(1.0, 2.0) + iv(3.0, 4.0), iv(4.0, 6.0));
        assert_eq!(iv(-1.0, 2.0) * iv(3.0, 4.0), iv(-4.0, 8.0));
        assert_eq!(iv(1.0, 2.0) - iv(0.5, 0.75), iv(0.25, 1.5));
    }

    #[test]
    fn inexact_sum_is_widened() {
        let s = Interval::point(0.1) + Interval::point(0.2);
        assert!(s.lo() < s.hi());
        assert!(s.hi() - s.lo() <= 2.0 * f64::EPSILON);
    }

    #[test]
    fn division_rejects_zero() {
        let e = iv(1.0, 2.0).checked_div(&iv(-1.0, 1.0));
        assert!(matches!(e, Err(Error::DivisionByZero(_))));
        let q = iv(1.0, 2.0).checked_div(&iv(4.0, 8.0)).unwrap();
        assert_eq!(q, iv(0.125, 0.5));
        let third = Interval::point(1.0).checked_div(&Interval::point(3.0)).unwrap();
        assert_eq!(third.hi(), third.lo().next_up());
    }

    #[test]
    fn pow_rational_of_half() {
        let a = Rational::new(51, 64);
        let r = Interval::point(0.5).pow_rational(&a).unwrap();
        let exact = 0.5f64.powf(51.0 / 64.0);
        assert!(r.contains(exact));
        assert!(r.width() < 4.0 * f64::EPSILON);
        assert_eq!(Interval::point(0.0).pow_rational(&a).unwrap(), Interval::point(0.0));
        assert_eq!(iv(2.0, 3.0).pow_rational(&Rational::from_integer(2)).unwrap(), iv(4.0, 9.0));
    }

    #[test]
    fn infinite_endpoints() {
        let x = iv(1.0, f64::INFINITY);
        assert_eq!(x.recip().unwrap(), iv(0.0, 1.0));
        assert_eq!(iv(0.0, 0.0) * x, iv(0.0, 0.0));
        let p = iv(0.0, 1.0).pow_rational(&Rational::new(-1, 2)).unwrap();
        assert_eq!(p.lo(), 1.0);
        assert_eq!(p.hi(), f64::INFINITY);
    }

    #[test]
    fn rational_parse_and_enclose() {
        let r: Rational = "51/64".parse().unwrap();
        assert_eq!(r.enclosure(), Interval::point(0.796875));
        let t: Rational = "1/3".parse().unwrap();
        let e = t.enclosure();
        assert_eq!(e.hi(), e.lo().next_up());
        assert!(e.contains(1.0 / 3.0));
        let d: Rational = "-0.25".parse().unwrap();
        assert_eq!(d, Rational::new(-1, 4));
        assert!("1/0".parse::<Rational>().is_err());
        assert!("abc".parse::<Rational>().is_err());
    }

    #[test]
    fn ln_and_exp_basics() {
        assert_eq!(Interval::point(1.0).ln().unwrap(), Interval::point(0.0));
        let l2 = Interval::point(2.0).ln().unwrap();
        assert!(l2.contains(std::f64::consts::LN_2));
        assert!(l2.width() <= 4.0 * f64::EPSILON);
        let e = Interval::point(1.0).exp();
        assert!(e.contains(std::f64::consts::E));
        assert!(Interval::point(-1.0).ln().is_err());
        assert_eq!(iv(0.0, 1.0).ln().unwrap().lo(), f64::NEG_INFINITY);
    }
}
