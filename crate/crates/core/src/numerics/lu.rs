//! LU with partial pivoting: solves, inverses, determinants.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::C64;
#[allow(unused_imports)]
use num_traits::Float;

pub struct Lu {
    lu: ComplexMatrix,
    piv: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &ComplexMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "LU of a {}x{} matrix",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[(i, k)].norm().partial_cmp(&lu[(j, k)].norm()).unwrap())
                .unwrap_or(k);
            if lu[(p, k)].norm() == 0.0 {
                return Err(Error::RankDeficient {
                    context: format!("LU pivot {} of {}", k, n),
                    ratio: 0.0,
                });
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                piv.swap(k, p);
                sign = -sign;
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                lu[(i, k)] /= d;
            }
            for j in k + 1..n {
                let ukj = lu[(k, j)];
                if ukj == C64::new(0.0, 0.0) {
                    continue;
                }
                for i in k + 1..n {
                    let lik = lu[(i, k)];
                    lu[(i, j)] -= lik * ukj;
                }
            }
        }
        Ok(Lu { lu, piv, sign })
    }

    pub fn det(&self) -> C64 {
        let n = self.lu.rows();
        (0..n).fold(C64::new(self.sign, 0.0), |acc, i| acc * self.lu[(i, i)])
    }

    pub fn solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "solve with {} rows against order {}",
                b.rows(),
                n
            )));
        }
        let mut x = b.select_rows(&self.piv);
        for c in 0..x.cols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for j in 0..i {
                    s -= self.lu[(i, j)] * x[(j, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for j in i + 1..n {
                    s -= self.lu[(i, j)] * x[(j, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        if !x.is_finite() {
            return Err(Error::RankDeficient {
                context: "LU solve overflow".into(),
                ratio: 0.0,
            });
        }
        Ok(x)
    }
}

pub fn solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    Lu::new(a)?.solve(b)
}

pub fn inverse(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    Lu::new(a)?.solve(&ComplexMatrix::identity(a.rows()))
}

/// Determinant; zero for exactly singular input.
pub fn det(a: &ComplexMatrix) -> Result<C64> {
    match Lu::new(a) {
        Ok(lu) => Ok(lu.det()),
        Err(Error::RankDeficient { .. }) => Ok(C64::new(0.0, 0.0)),
        Err(e) => Err(e),
    }
}
