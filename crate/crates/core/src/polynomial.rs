//! Sparse multivariate polynomials with exact symbolic differentiation.

use serde::{Deserialize, Serialize};

/// One term `coef * x_1^pow[0] * ... * x_n^pow[n-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub pow: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial {
            dim,
            terms: Vec::new(),
        }
    }

    /// Builds a polynomial, merging like terms. Panics if a power vector has the wrong length;
    /// callers validate user input before getting here.
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Self {
        for t in &terms {
            assert_eq!(t.pow.len(), dim, "monomial dimension mismatch");
        }
        let mut p = Polynomial { dim, terms };
        p.normalize();
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.pow.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    fn normalize(&mut self) {
        self.terms.sort_by(|a, b| a.pow.cmp(&b.pow));
        let mut merged: Vec<Monomial> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.pow == t.pow => last.coef += t.coef,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coef != 0.0);
        self.terms = merged;
    }

    pub fn derivative(&self, axis: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.pow[axis] > 0)
            .map(|t| {
                let mut pow = t.pow.clone();
                let e = pow[axis];
                pow[axis] -= 1;
                Monomial {
                    coef: t.coef * e as f64,
                    pow,
                }
            })
            .collect();
        Polynomial::new(self.dim, terms)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Polynomial::new(self.dim, terms)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coef;
            for (xi, &e) in x.iter().zip(&t.pow) {
                if e > 0 {
                    v *= xi.powi(e as i32);
                }
            }
            acc += v;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mono(coef: f64, pow: &[u32]) -> Monomial {
        Monomial {
            coef,
            pow: pow.to_vec(),
        }
    }

    #[test]
    fn merges_like_terms_and_drops_zeros() {
        let p = Polynomial::new(
            2,
            vec![mono(1.0, &[1, 0]), mono(-1.0, &[1, 0]), mono(2.0, &[0, 2])],
        );
        assert_eq!(p.terms().len(), 1);
        assert_eq!(p.degree(), 2);
    }

    #[test]
    fn derivative_of_quartic() {
        // x^4/4 - x^2/2 + 1/4
        let p = Polynomial::new(
            1,
            vec![mono(0.25, &[4]), mono(-0.5, &[2]), mono(0.25, &[0])],
        );
        let d = p.derivative(0);
        assert!((d.eval(&[1.5]) - (1.5f64.powi(3) - 1.5)).abs() < 1e-15);
        let dd = d.derivative(0);
        assert!((dd.eval(&[1.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mixed_partials_commute() {
        let p = Polynomial::new(2, vec![mono(3.0, &[2, 3]), mono(-1.0, &[1, 1])]);
        let a = p.derivative(0).derivative(1);
        let b = p.derivative(1).derivative(0);
        assert_eq!(a, b);
    }
}
