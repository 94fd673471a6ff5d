//! Minimal dense complex matrix support: just enough for 4x4 state-update
//! propagators and the truncated joint qubit-resonator Liouvillian.

use num_complex::Complex64;

pub type C64 = Complex64;

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub n: usize,
    pub data: Vec<C64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                let row = &other.data[k * n..(k + 1) * n];
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * row[j];
                }
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &CMat, s: C64) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn dagger(&self) -> CMat {
        let n = self.n;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &CMat) -> CMat {
        let (n, m) = (self.n, other.n);
        let mut out = CMat::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self.data[i * n + j];
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        out[(i * m + k, j * m + l)] = a * other.data[k * m + l];
                    }
                }
            }
        }
        out
    }

    pub fn one_norm(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|j| (0..n).map(|i| self.data[i * n + j].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Matrix exponential via scaling-and-squaring with a Taylor core.
    pub fn expm(&self) -> CMat {
        let norm = self.one_norm();
        let s = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let scaled = self.scale(C64::new(1.0 / f64::from(2u32.pow(s)), 0.0));
        let mut result = CMat::eye(self.n);
        let mut term = CMat::eye(self.n);
        for k in 1..=20 {
            term = term.matmul(&scaled).scale(C64::new(1.0 / k as f64, 0.0));
            let tn = term.one_norm();
            result.add_scaled(&term, C64::new(1.0, 0.0));
            if tn < 1e-18 {
                break;
            }
        }
        for _ in 0..s {
            result = result.matmul(&result);
        }
        result
    }

    /// Apply to a vector.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        assert_eq!(v.len(), n);
        (0..n)
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                row.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_matches_scalar_exponential() {
        // diag(a, b) exponentiates elementwise
        let mut m = CMat::zeros(2);
        m[(0, 0)] = c(0.3, -0.2);
        m[(1, 1)] = c(-1.1, 0.7);
        let e = m.expm();
        assert!((e[(0, 0)] - c(0.3, -0.2).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - c(-1.1, 0.7).exp()).norm() < 1e-14);
        assert!(e[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn expm_rotation_block() {
        // exp([[0, -t], [t, 0]]) is a rotation by t
        let t = 1.234;
        let mut m = CMat::zeros(2);
        m[(0, 1)] = c(-t, 0.0);
        m[(1, 0)] = c(t, 0.0);
        let e = m.expm();
        assert!((e[(0, 0)].re - t.cos()).abs() < 1e-13);
        assert!((e[(1, 0)].re - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn kron_dimensions_and_values() {
        let a = CMat::from_rows(&[&[c(1.0, 0.0), c(2.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)]]);
        let b = CMat::eye(3);
        let k = a.kron(&b);
        assert_eq!(k.n, 6);
        assert_eq!(k[(0, 3)], c(2.0, 0.0));
        assert_eq!(k[(1, 4)], c(2.0, 0.0));
        assert_eq!(k[(3, 0)], c(0.0, 0.0));
    }
}
