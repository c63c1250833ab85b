//! Outward-rounded interval arithmetic.
//!
//! No rounding-mode control: every endpoint is pushed one ulp outward after
//! each operation (two for the transcendental functions, whose libm results
//! are not correctly rounded).

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntervalError {
    #[error("division by an interval containing zero")]
    DivisionByZero,
    #[error("square root of an interval reaching below zero")]
    NegativeSqrt,
    #[error("interval overflowed")]
    Unbounded,
    #[error("variable x{0} is missing from the box")]
    MissingVariable(usize),
}

fn down(x: f64) -> f64 {
    x.next_down()
}

fn up(x: f64) -> f64 {
    x.next_up()
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Largest absolute value over the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    fn outward(lo: f64, hi: f64) -> Self {
        Self {
            lo: down(lo),
            hi: up(hi),
        }
    }

    fn outward2(lo: f64, hi: f64) -> Self {
        Self {
            lo: down(down(lo)),
            hi: up(up(hi)),
        }
    }

    pub fn checked_div(self, rhs: Interval) -> Result<Interval, IntervalError> {
        if rhs.lo <= 0.0 && rhs.hi >= 0.0 {
            return Err(IntervalError::DivisionByZero);
        }
        let c = [
            self.lo / rhs.lo,
            self.lo / rhs.hi,
            self.hi / rhs.lo,
            self.hi / rhs.hi,
        ];
        let r = Self::outward(min4(c), max4(c));
        if r.is_finite() {
            Ok(r)
        } else {
            Err(IntervalError::Unbounded)
        }
    }

    pub fn powi(self, k: u32) -> Interval {
        match k {
            0 => Interval::point(1.0),
            1 => self,
            _ => {
                let a = self.lo.powi(k as i32);
                let b = self.hi.powi(k as i32);
                if k % 2 == 1 {
                    Self::outward2(a, b)
                } else if self.lo >= 0.0 {
                    Self::outward2(a, b)
                } else if self.hi <= 0.0 {
                    Self::outward2(b, a)
                } else {
                    Interval {
                        lo: 0.0,
                        hi: up(up(a.max(b))),
                    }
                }
            }
        }
    }

    /// Exact range of sine (up to rounding), using the critical points at pi/2 + k*pi.
    pub fn sin(self) -> Interval {
        if self.width() >= 2.0 * PI {
            return Interval::new(-1.0, 1.0);
        }
        let (sa, sb) = (self.lo.sin(), self.hi.sin());
        let mut lo = sa.min(sb);
        let mut hi = sa.max(sb);
        if contains_phase(self, FRAC_PI_2) {
            hi = 1.0;
        }
        if contains_phase(self, -FRAC_PI_2) {
            lo = -1.0;
        }
        clamp_unit(Self::outward2(lo, hi))
    }

    /// Exact range of cosine, critical points at k*pi.
    pub fn cos(self) -> Interval {
        if self.width() >= 2.0 * PI {
            return Interval::new(-1.0, 1.0);
        }
        let (ca, cb) = (self.lo.cos(), self.hi.cos());
        let mut lo = ca.min(cb);
        let mut hi = ca.max(cb);
        if contains_phase(self, 0.0) {
            hi = 1.0;
        }
        if contains_phase(self, PI) {
            lo = -1.0;
        }
        clamp_unit(Self::outward2(lo, hi))
    }

    pub fn exp(self) -> Result<Interval, IntervalError> {
        let r = Self::outward2(self.lo.exp(), self.hi.exp());
        if r.hi.is_finite() {
            Ok(Interval {
                lo: r.lo.max(0.0),
                hi: r.hi,
            })
        } else {
            Err(IntervalError::Unbounded)
        }
    }

    pub fn tanh(self) -> Interval {
        clamp_unit(Self::outward2(self.lo.tanh(), self.hi.tanh()))
    }

    pub fn sqrt(self) -> Result<Interval, IntervalError> {
        if self.lo < 0.0 {
            return Err(IntervalError::NegativeSqrt);
        }
        let r = Self::outward(self.lo.sqrt(), self.hi.sqrt());
        Ok(Interval {
            lo: r.lo.max(0.0),
            hi: r.hi,
        })
    }

    pub fn abs(self) -> Interval {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            -self
        } else {
            Interval {
                lo: 0.0,
                hi: self.mag(),
            }
        }
    }
}

/// Whether `[a, b]` contains some `phase + 2*pi*k`.
fn contains_phase(x: Interval, phase: f64) -> bool {
    // widen the test slightly so rounding in the reduction never hides a critical point
    let slack = 1e-12 * (1.0 + x.mag());
    let k = ((x.lo - phase - slack) / (2.0 * PI)).ceil();
    phase + 2.0 * PI * k <= x.hi + slack
}

fn clamp_unit(x: Interval) -> Interval {
    Interval {
        lo: x.lo.max(-1.0),
        hi: x.hi.min(1.0),
    }
}

fn min4(c: [f64; 4]) -> f64 {
    c.into_iter().fold(f64::INFINITY, f64::min)
}

fn max4(c: [f64; 4]) -> f64 {
    c.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::outward(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::outward(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let c = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        Interval::outward(min4(c), max4(c))
    }
}
