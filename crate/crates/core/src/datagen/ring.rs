use std::fmt;

use rand::Rng;

/// Number of stored coefficients: the ring is truncated at `X⁵`.
pub const DEGREE: usize = 5;
/// Coefficient modulus.
pub const P: u8 = 7;

/// Element of `F₇[X]/(X⁵)`; `coeffs[i]` is the coefficient of `Xⁱ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RingElem {
    pub coeffs: [u8; DEGREE],
}

impl RingElem {
    pub const ZERO: RingElem = RingElem { coeffs: [0; DEGREE] };
    pub const ONE: RingElem = RingElem { coeffs: [1, 0, 0, 0, 0] };
    pub const X: RingElem = RingElem { coeffs: [0, 1, 0, 0, 0] };

    /// Reduces arbitrary integer coefficients into `[0, 7)`.
    pub fn new(coeffs: [i64; DEGREE]) -> Self {
        let mut c = [0u8; DEGREE];
        for (dst, src) in c.iter_mut().zip(coeffs) {
            *dst = src.rem_euclid(P as i64) as u8;
        }
        Self { coeffs: c }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let mut c = [0u8; DEGREE];
        for v in &mut c {
            *v = rng.random_range(0..P);
        }
        Self { coeffs: c }
    }
}

impl fmt::Display for RingElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.coeffs {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

pub fn ring_neg(a: RingElem) -> RingElem {
    let mut c = a.coeffs;
    for v in &mut c {
        *v = (P - *v) % P;
    }
    RingElem { coeffs: c }
}

pub fn ring_add(a: RingElem, b: RingElem) -> RingElem {
    let mut c = [0u8; DEGREE];
    for i in 0..DEGREE {
        c[i] = (a.coeffs[i] + b.coeffs[i]) % P;
    }
    RingElem { coeffs: c }
}

/// Product with every term of degree ≥ 5 dropped.
pub fn ring_mul(a: RingElem, b: RingElem) -> RingElem {
    let mut acc = [0u32; DEGREE];
    for i in 0..DEGREE {
        for j in 0..DEGREE - i {
            acc[i + j] += a.coeffs[i] as u32 * b.coeffs[j] as u32;
        }
    }
    RingElem {
        coeffs: acc.map(|v| (v % P as u32) as u8),
    }
}

/// `p(q(X))`, evaluated by Horner's rule with truncated products.
pub fn ring_compose(p: RingElem, q: RingElem) -> RingElem {
    let mut acc = RingElem::ZERO;
    for &c in p.coeffs.iter().rev() {
        acc = ring_mul(acc, q);
        acc.coeffs[0] = (acc.coeffs[0] + c) % P;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(c: [i64; 5]) -> RingElem {
        RingElem::new(c)
    }

    #[test]
    fn worked_examples() {
        assert_eq!(ring_neg(r([1, 2, 3, 0, 0])), r([6, 5, 4, 0, 0]));
        assert_eq!(ring_mul(r([1, 1, 0, 0, 0]), r([1, 1, 0, 0, 0])), r([1, 2, 1, 0, 0]));
        assert_eq!(ring_mul(r([0, 0, 0, 1, 0]), r([0, 0, 0, 1, 0])), RingElem::ZERO);
        assert_eq!(ring_compose(r([0, 0, 1, 0, 0]), r([1, 1, 0, 0, 0])), r([1, 2, 1, 0, 0]));
    }

    #[test]
    fn reduction_of_negative_coefficients() {
        assert_eq!(r([-1, -7, 8, 14, -15]), r([6, 0, 1, 0, 6]));
    }
}
