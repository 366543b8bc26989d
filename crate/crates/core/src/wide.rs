//! Double-double arithmetic (about 106 significant bits).
//!
//! Only what the finite-difference reference loss needs: the four basic
//! operations, `exp` and `ln`. Accuracy is a few units in 1e-32 relative.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Wide {
    hi: f64,
    lo: f64,
}

const LN2: Wide = Wide {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Wide {
    pub const ZERO: Wide = Wide { hi: 0.0, lo: 0.0 };
    pub const ONE: Wide = Wide { hi: 1.0, lo: 0.0 };

    pub fn new(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    fn norm(a: f64, b: f64) -> Self {
        let (hi, lo) = quick_two_sum(a, b);
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    /// Accurate for arguments up to about 700; returns zero below -700.
    pub fn exp(self) -> Self {
        if self.hi < -700.0 {
            return Self::ZERO;
        }
        assert!(self.hi <= 700.0, "Wide::exp overflow for {}", self.hi);
        let k = (self.hi / LN2.hi).round();
        // |r| <= ln2/2, then scaled down by 2^10 so the series converges fast.
        let r = (self - LN2 * Wide::new(k)).scale_pow2(-10);
        let mut term = r;
        let mut s = r;
        for n in 2..=10 {
            term = term * r / Wide::new(n as f64);
            s = s + term;
        }
        // expm1(2x) = 2 expm1(x) + expm1(x)^2
        for _ in 0..10 {
            s = s * Wide::new(2.0) + s * s;
        }
        (s + Wide::ONE).scale_pow2(k as i32)
    }

    /// Natural logarithm of a positive value.
    pub fn ln(self) -> Self {
        assert!(self.hi > 0.0, "Wide::ln of non-positive {}", self.hi);
        let mut y = Wide::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Wide::ONE;
        }
        y
    }

    pub fn sigmoid(self) -> Self {
        if self.hi >= 0.0 {
            Wide::ONE / (Wide::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Wide::ONE + e)
        }
    }

    pub fn tanh(self) -> Self {
        let neg = self.hi < 0.0;
        let a = if neg { -self } else { self };
        let e = (a * Wide::new(-2.0)).exp();
        let t = (Wide::ONE - e) / (Wide::ONE + e);
        if neg {
            -t
        } else {
            t
        }
    }
}

impl From<f64> for Wide {
    fn from(v: f64) -> Self {
        Self::new(v)
    }
}

impl Neg for Wide {
    type Output = Wide;
    fn neg(self) -> Wide {
        Wide {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Wide {
    type Output = Wide;
    fn add(self, b: Wide) -> Wide {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Wide::norm(s, e + f)
    }
}

impl Sub for Wide {
    type Output = Wide;
    fn sub(self, b: Wide) -> Wide {
        self + (-b)
    }
}

impl Mul for Wide {
    type Output = Wide;
    fn mul(self, b: Wide) -> Wide {
        let (p, e) = two_prod(self.hi, b.hi);
        Wide::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Wide {
    type Output = Wide;
    fn div(self, b: Wide) -> Wide {
        let q1 = self.hi / b.hi;
        let r = self - b * Wide::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Wide::new(q2);
        let q3 = r.hi / b.hi;
        Wide::norm(q1, q2) + Wide::new(q3)
    }
}

impl std::iter::Sum for Wide {
    fn sum<I: Iterator<Item = Wide>>(iter: I) -> Wide {
        iter.fold(Wide::ZERO, |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Wide, hi: f64, lo: f64, tol: f64) {
        let d = (a - Wide { hi, lo }).to_f64().abs();
        assert!(d <= tol * hi.abs(), "{a:?} vs ({hi:e}, {lo:e}): {d:e}");
    }

    // Reference pairs computed at 60 digits and split into two f64s.
    #[test]
    fn exp_reference_values() {
        close(Wide::ONE.exp(), std::f64::consts::E, 1.4456468917292502e-16, 1e-30);
        close(
            Wide::new(-1.0).exp(),
            0.36787944117144233,
            -1.2428753672788363e-17,
            1e-30,
        );
        close(
            Wide::new(-20.5).exp(),
            1.2501528663867426e-9,
            6.448235878237776e-26,
            1e-30,
        );
        close(Wide::new(0.3).exp(), 1.3498588075760032, -9.447314673432387e-17, 1e-30);
    }

    #[test]
    fn ln_reference_values() {
        close(Wide::new(2.0).ln(), LN2.hi, LN2.lo, 1e-30);
        close(Wide::new(0.1).ln(), -2.3025850929940455, -1.7150243628057985e-16, 1e-30);
    }

    #[test]
    fn exp_ln_inverse() {
        for i in 0..200 {
            let x = Wide::new(-6.0 + 0.061 * i as f64);
            let back = x.exp().ln();
            assert!((back - x).to_f64().abs() < 1e-30, "{x:?}");
        }
    }

    #[test]
    fn sigmoid_and_tanh_agree_with_f64() {
        for i in 0..100 {
            let z = -8.0 + 0.163 * i as f64;
            assert!((Wide::new(z).sigmoid().to_f64() - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
            assert!((Wide::new(z).tanh().to_f64() - z.tanh()).abs() < 1e-15);
        }
        let s = Wide::new(0.7).sigmoid();
        let t = (Wide::new(0.35)).tanh();
        // sigmoid(x) = (1 + tanh(x/2)) / 2
        assert!((s - (Wide::ONE + t) / Wide::new(2.0)).to_f64().abs() < 1e-31);
    }

    #[test]
    fn division_round_trip() {
        let a = Wide::new(1.0) / Wide::new(3.0);
        assert!((a * Wide::new(3.0) - Wide::ONE).to_f64().abs() < 1e-31);
    }
}
