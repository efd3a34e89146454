//! Banded complex matrices and an LU factorization with partial pivoting.
//!
//! Storage is row-major: row `r` keeps the columns `r - kl ..= r + ku + kl`,
//! the extra `kl` slots hold fill-in created by row interchanges.

use num_complex::Complex64 as C64;

use crate::error::{FgrError, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![C64::new(0.0, 0.0); n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.kl
    }

    pub fn upper(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> Option<usize> {
        if c + self.kl < r || c > r + self.ku + self.kl {
            return None;
        }
        Some(r * self.width + (c + self.kl - r))
    }

    /// Entry lookup; zero outside the stored band.
    pub fn get(&self, r: usize, c: usize) -> C64 {
        match self.slot(r, c) {
            Some(k) if c <= r + self.ku => self.data[k],
            _ => C64::new(0.0, 0.0),
        }
    }

    /// Adds `v` to entry `(r, c)`. Panics if the entry lies outside the band.
    pub fn add(&mut self, r: usize, c: usize, v: C64) {
        assert!(c + self.kl >= r && c <= r + self.ku, "entry ({r},{c}) outside band");
        let k = self.slot(r, c).unwrap();
        self.data[k] += v;
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![C64::new(0.0, 0.0); self.n];
        for (r, yr) in y.iter_mut().enumerate() {
            let lo = r.saturating_sub(self.kl);
            let hi = (r + self.ku).min(self.n - 1);
            let mut acc = C64::new(0.0, 0.0);
            for c in lo..=hi {
                acc += self.data[r * self.width + (c + self.kl - r)] * x[c];
            }
            *yr = acc;
        }
        y
    }

    /// Conjugate transpose, same band layout with `kl` and `ku` swapped.
    pub fn adjoint(&self) -> BandMatrix {
        let mut out = BandMatrix::zeros(self.n, self.ku, self.kl);
        for r in 0..self.n {
            let lo = r.saturating_sub(self.kl);
            let hi = (r + self.ku).min(self.n - 1);
            for c in lo..=hi {
                out.add(c, r, self.get(r, c).conj());
            }
        }
        out
    }

    /// Largest absolute asymmetry `|a_rc - a_cr|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for r in 0..self.n {
            let lo = r.saturating_sub(self.kl);
            let hi = (r + self.ku).min(self.n - 1);
            for c in lo..=hi {
                let a = self.get(r, c);
                scale = scale.max(a.norm());
                worst = worst.max((a - self.get(c, r)).norm());
            }
        }
        if scale == 0.0 { 0.0 } else { worst / scale }
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut scale: f64 = 0.0;
        for v in &self.data {
            scale = scale.max(v.norm());
        }
        let tiny = scale * 1e-300_f64.max(f64::EPSILON * 1e-6);
        for i in 0..n {
            let last = (i + kl).min(n - 1);
            let mut p = i;
            let mut best = self.data[self.slot(i, i).unwrap()].norm();
            for r in i + 1..=last {
                let v = self.data[self.slot(r, i).unwrap()].norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= tiny {
                return Err(FgrError::Singular(format!("zero pivot at row {i} of {n}")));
            }
            piv[i] = p;
            let cmax = (i + kl + ku).min(n - 1);
            if p != i {
                for c in i..=cmax {
                    let a = self.slot(i, c).unwrap();
                    let b = self.slot(p, c).unwrap();
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.slot(i, i).unwrap()];
            for r in i + 1..=last {
                let kr = self.slot(r, i).unwrap();
                let m = self.data[kr] / d;
                self.data[kr] = m;
                if m == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in i + 1..=cmax {
                    let src = self.data[self.slot(i, c).unwrap()];
                    let k = self.slot(r, c).unwrap();
                    self.data[k] -= m * src;
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    pub fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        let m = &self.m;
        let n = m.n;
        assert_eq!(rhs.len(), n);
        let mut b = rhs.to_vec();
        for i in 0..n {
            let p = self.piv[i];
            if p != i {
                b.swap(i, p);
            }
            let bi = b[i];
            if bi == C64::new(0.0, 0.0) {
                continue;
            }
            for r in i + 1..=(i + m.kl).min(n - 1) {
                b[r] -= m.data[m.slot(r, i).unwrap()] * bi;
            }
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for c in i + 1..=(i + m.kl + m.ku).min(n - 1) {
                acc -= m.data[m.slot(i, c).unwrap()] * b[c];
            }
            b[i] = acc / m.data[m.slot(i, i).unwrap()];
        }
        b
    }

    pub fn solve_real(&self, rhs: &[f64]) -> Vec<f64> {
        let c: Vec<C64> = rhs.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.solve(&c).into_iter().map(|v| v.re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for r in 0..n {
            for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                a.add(r, c, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            }
        }
        a
    }

    #[test]
    fn solve_recovers_known_vector() {
        let a = random_band(200, 5, 5, 7);
        let x: Vec<C64> = (0..200).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let b = a.matvec(&x);
        let y = a.factor().unwrap().solve(&b);
        let err = x.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // antidiagonal-ish tridiagonal with zero diagonal
        let n = 50;
        let mut a = BandMatrix::zeros(n, 1, 1);
        for r in 0..n {
            if r > 0 {
                a.add(r, r - 1, C64::new(1.0, 0.0));
            }
            if r + 1 < n {
                a.add(r, r + 1, C64::new(2.0, 0.0));
            }
        }
        let x: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let b = a.matvec(&x);
        let y = a.factor().unwrap().solve(&b);
        let err = x.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = BandMatrix::zeros(10, 1, 1);
        assert!(matches!(a.factor(), Err(FgrError::Singular(_))));
    }

    #[test]
    fn adjoint_transposes_band() {
        let a = random_band(30, 2, 3, 3);
        let h = a.adjoint();
        for r in 0..30 {
            for c in 0..30 {
                assert_eq!(a.get(r, c).conj(), h.get(c, r));
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn factor_then_solve_inverts_diagonally_dominant(n in 3usize..60, kl in 0usize..4, ku in 0usize..4, seed in 0u64..1000) {
            let mut a = random_band(n, kl, ku, seed);
            for r in 0..n {
                a.add(r, r, C64::new(2.0 * (kl + ku + 1) as f64, 0.0));
            }
            let x: Vec<C64> = (0..n).map(|i| C64::new((i as f64 + seed as f64).cos(), 1.0 / (1.0 + i as f64))).collect();
            let y = a.clone().factor().unwrap().solve(&a.matvec(&x));
            let err = x.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            proptest::prop_assert!(err < 1e-10, "err {}", err);
        }
    }
}
