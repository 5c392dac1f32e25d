use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Closed real interval `[lo, hi]`.
///
/// Every arithmetic operation rounds its result outward by at least one ULP so
/// the returned enclosure contains the exact real range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Option<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            None
        } else {
            Some(Self { lo, hi })
        }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    fn outward(lo: f64, hi: f64) -> Interval {
        Interval {
            lo: lo.next_down(),
            hi: hi.next_up(),
        }
    }

    /// Outward rounding by `ulps` steps; used for library transcendentals
    /// that are not correctly rounded.
    fn outward_by(lo: f64, hi: f64, ulps: u32) -> Interval {
        let (mut l, mut h) = (lo, hi);
        for _ in 0..ulps {
            l = l.next_down();
            h = h.next_up();
        }
        Interval { lo: l, hi: h }
    }

    pub fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn add(self, rhs: Interval) -> Interval {
        Self::outward(self.lo + rhs.lo, self.hi + rhs.hi)
    }

    pub fn sub(self, rhs: Interval) -> Interval {
        Self::outward(self.lo - rhs.hi, self.hi - rhs.lo)
    }

    pub fn mul(self, rhs: Interval) -> Interval {
        let products = [
            mul_zero_safe(self.lo, rhs.lo),
            mul_zero_safe(self.lo, rhs.hi),
            mul_zero_safe(self.hi, rhs.lo),
            mul_zero_safe(self.hi, rhs.hi),
        ];
        let lo = products.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::outward(lo, hi)
    }

    /// Division; `None` when the divisor contains zero.
    pub fn div(self, rhs: Interval) -> Option<Interval> {
        if rhs.contains_zero() {
            return None;
        }
        let quotients = [
            self.lo / rhs.lo,
            self.lo / rhs.hi,
            self.hi / rhs.lo,
            self.hi / rhs.hi,
        ];
        let lo = quotients.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = quotients.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self::outward(lo, hi))
    }

    /// Integer power. Even powers of a zero-straddling interval use the
    /// `[0, max]` rule. Negative exponents require a zero-free base.
    pub fn powi(self, n: i32) -> Option<Interval> {
        if n == 0 {
            return Some(Interval::point(1.0));
        }
        if n < 0 {
            let pos = self.powi(-n)?;
            return Interval::point(1.0).div(pos);
        }
        // powi may be off by a few ULPs for large n
        let slack = 2 + (n as u32).min(64);
        let (a, b) = (self.lo.powi(n), self.hi.powi(n));
        if n % 2 == 1 {
            return Some(Self::outward_by(a, b, slack));
        }
        if self.lo >= 0.0 {
            Some(Self::outward_by(a, b, slack))
        } else if self.hi <= 0.0 {
            Some(Self::outward_by(b, a, slack))
        } else {
            let top = Self::outward_by(0.0, a.max(b), slack);
            Some(Interval { lo: 0.0, hi: top.hi })
        }
    }

    pub fn exp(self) -> Interval {
        let r = Self::outward_by(self.lo.exp(), self.hi.exp(), 2);
        Interval {
            lo: r.lo.max(0.0),
            hi: r.hi,
        }
    }

    /// Natural log; `None` unless `lo > 0`.
    pub fn ln(self) -> Option<Interval> {
        if self.lo <= 0.0 {
            return None;
        }
        Some(Self::outward_by(self.lo.ln(), self.hi.ln(), 2))
    }

    pub fn tanh(self) -> Interval {
        let r = Self::outward_by(self.lo.tanh(), self.hi.tanh(), 2);
        Interval {
            lo: r.lo.max(-1.0),
            hi: r.hi.min(1.0),
        }
    }

    pub fn sin(self) -> Interval {
        periodic_range(self, f64::sin, FRAC_PI_2, -FRAC_PI_2)
    }

    pub fn cos(self) -> Interval {
        periodic_range(self, f64::cos, 0.0, PI)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

// 0 * inf is taken as 0 for interval products.
fn mul_zero_safe(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// Range of a 2π-periodic function with maxima at `argmax + 2kπ` and minima
/// at `argmin + 2kπ`. Critical-point detection errs toward inclusion.
fn periodic_range(x: Interval, f: fn(f64) -> f64, argmax: f64, argmin: f64) -> Interval {
    if !x.lo.is_finite() || !x.hi.is_finite() || x.width() >= TAU {
        return Interval { lo: -1.0, hi: 1.0 };
    }
    let hits = |c: f64| {
        let k = ((x.lo - c) / TAU).ceil();
        let slack = 1e-12 * (1.0 + x.lo.abs().max(x.hi.abs()));
        // also check the previous period in case `ceil` rounded past a boundary
        [k - 1.0, k].iter().any(|k| {
            let p = c + k * TAU;
            p >= x.lo - slack && p <= x.hi + slack
        })
    };
    let (a, b) = (f(x.lo), f(x.hi));
    let r = Interval::outward_by(a.min(b), a.max(b), 2);
    let hi = if hits(argmax) { 1.0 } else { r.hi.min(1.0) };
    let lo = if hits(argmin) { -1.0 } else { r.lo.max(-1.0) };
    Interval { lo, hi }
}
