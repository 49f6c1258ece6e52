use std::cmp::Ordering;
use std::fmt;
use std::ops::Mul;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Exact non-negative rational, always stored reduced with `denom >= 1`.
///
/// Parameter-count ratios are compared exactly in tests and reports, so they
/// never go through floating point.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    numer: u64,
    denom: u64,
}

impl Rational {
    pub const ONE: Rational = Rational { numer: 1, denom: 1 };

    /// Reduced fraction `numer / denom`. Panics on a zero denominator.
    pub fn new(numer: u64, denom: u64) -> Self {
        assert!(denom != 0, "rational with zero denominator");
        if numer == 0 {
            return Rational { numer: 0, denom: 1 };
        }
        let g = gcd(numer, denom);
        Rational {
            numer: numer / g,
            denom: denom / g,
        }
    }

    pub fn numer(&self) -> u64 {
        self.numer
    }

    pub fn denom(&self) -> u64 {
        self.denom
    }

    pub fn is_integer(&self) -> bool {
        self.denom == 1
    }

    pub fn to_f64(&self) -> f64 {
        self.numer as f64 / self.denom as f64
    }
}

impl From<u64> for Rational {
    fn from(n: u64) -> Self {
        Rational { numer: n, denom: 1 }
    }
}

impl Mul for Rational {
    type Output = Rational;

    fn mul(self, rhs: Rational) -> Rational {
        // Cross-reduce before multiplying so intermediate products stay small.
        let g1 = gcd(self.numer.max(1), rhs.denom);
        let g2 = gcd(rhs.numer.max(1), self.denom);
        Rational::new(
            (self.numer / g1) * (rhs.numer / g2),
            (self.denom / g2) * (rhs.denom / g1),
        )
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.numer as u128 * other.denom as u128;
        let rhs = other.numer as u128 * self.denom as u128;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Rational {
    /// Always renders with an explicit denominator, e.g. `9/1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer, self.denom)
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer, self.denom)
    }
}
