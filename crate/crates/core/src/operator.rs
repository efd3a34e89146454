//! Banded Schrödinger-type matrices `-d²/dx² + q(x)` and parity folding.
//!
//! The matrices use the centered fourth-order stencil with zero extension
//! beyond the last node, so they stay exactly symmetric. `lattice::second_derivative`
//! differs from them only on the two outermost nodes at each end.

use num_complex::Complex64 as C64;

use crate::band::{BandLu, BandMatrix};
use crate::error::Result;
use crate::lattice::Grid;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Stencil weights of `-d²/dx²` at offsets 0, 1, 2 (times `1/dx²`).
pub fn neg_laplacian_weights(dx: f64) -> [f64; 3] {
    let s = 1.0 / (12.0 * dx * dx);
    [30.0 * s, -16.0 * s, s]
}

pub fn schrodinger_band(grid: Grid, diag: &[C64]) -> BandMatrix {
    let n = grid.len();
    assert_eq!(diag.len(), n);
    let w = neg_laplacian_weights(grid.spacing());
    let mut a = BandMatrix::zeros(n, 2, 2);
    for r in 0..n {
        a.add(r, r, C64::new(w[0], 0.0) + diag[r]);
        for d in 1..=2 {
            if r >= d {
                a.add(r, r - d, C64::new(w[d], 0.0));
            }
            if r + d < n {
                a.add(r, r + d, C64::new(w[d], 0.0));
            }
        }
    }
    a
}

pub fn schrodinger_band_real(grid: Grid, diag: &[f64]) -> BandMatrix {
    let d: Vec<C64> = diag.iter().map(|&v| C64::new(v, 0.0)).collect();
    schrodinger_band(grid, &d)
}

/// `(-d²/dx² + q) u` with zero extension, symmetric-pair summation.
pub fn apply_schrodinger<T>(dx: f64, diag: &[T], u: &[C64]) -> Vec<C64>
where
    T: Copy + Into<C64>,
{
    let n = u.len();
    let w = neg_laplacian_weights(dx);
    let at = |i: isize| -> C64 { if i < 0 || i as usize >= n { ZERO } else { u[i as usize] } };
    (0..n)
        .map(|i| {
            let k = i as isize;
            w[0] * u[i] + w[1] * (at(k - 1) + at(k + 1)) + w[2] * (at(k - 2) + at(k + 2)) + diag[i].into() * u[i]
        })
        .collect()
}

pub fn apply_schrodinger_real(dx: f64, diag: &[f64], u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let w = neg_laplacian_weights(dx);
    let at = |i: isize| -> f64 { if i < 0 || i as usize >= n { 0.0 } else { u[i as usize] } };
    (0..n)
        .map(|i| {
            let k = i as isize;
            w[0] * u[i] + w[1] * (at(k - 1) + at(k + 1)) + w[2] * (at(k - 2) + at(k + 2)) + diag[i] * u[i]
        })
        .collect()
}

/// Parity sector used when folding a matrix onto the half line `x >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn offset(self) -> usize {
        match self {
            Parity::Even => 0,
            Parity::Odd => 1,
        }
    }

    /// Number of half-line unknowns for a grid of `n` nodes.
    pub fn half_len(self, n: usize) -> usize {
        (n - 1) / 2 + 1 - self.offset()
    }
}

/// Restriction of a parity-preserving banded matrix to one parity sector.
/// Unknowns are the nodes `x >= 0` (even) or `x > 0` (odd).
pub fn fold(a: &BandMatrix, parity: Parity) -> BandMatrix {
    let n = a.dim();
    let c = (n - 1) / 2;
    let off = parity.offset();
    let m = parity.half_len(n);
    let (kl, ku) = (a.lower(), a.upper());
    let bw = kl.max(ku);
    let mut out = BandMatrix::zeros(m, bw, bw);
    for r in (c + off)..n {
        let lo = r.saturating_sub(kl);
        let hi = (r + ku).min(n - 1);
        for col in lo..=hi {
            let v = a.get(r, col);
            if v == ZERO {
                continue;
            }
            let (target, sign) = if col >= c { (col, 1.0) } else { (n - 1 - col, if parity == Parity::Odd { -1.0 } else { 1.0 }) };
            if parity == Parity::Odd && target == c {
                continue;
            }
            out.add(r - c - off, target - c - off, sign * v);
        }
    }
    out
}

pub fn to_half(u: &[C64], parity: Parity) -> Vec<C64> {
    let c = (u.len() - 1) / 2;
    u[c + parity.offset()..].to_vec()
}

pub fn from_half(h: &[C64], n: usize, parity: Parity) -> Vec<C64> {
    let c = (n - 1) / 2;
    let off = parity.offset();
    let mut out = vec![ZERO; n];
    for (j, &v) in h.iter().enumerate() {
        let i = c + off + j;
        out[i] = v;
        let m = n - 1 - i;
        out[m] = if parity == Parity::Odd { -v } else { v };
    }
    if parity == Parity::Odd {
        out[c] = ZERO;
    }
    out
}

/// Factorization of a parity-preserving matrix restricted to one sector.
pub struct SectorSolver {
    lu: BandLu,
    n: usize,
    parity: Parity,
}

impl SectorSolver {
    pub fn new(a: &BandMatrix, parity: Parity) -> Result<Self> {
        Ok(Self { lu: fold(a, parity).factor()?, n: a.dim(), parity })
    }

    /// Solves `A x = b` for `b` of the sector's parity; the other component of `b` is ignored.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        from_half(&self.lu.solve(&to_half(b, self.parity)), self.n, self.parity)
    }

    pub fn solve_real(&self, b: &[f64]) -> Vec<f64> {
        let c: Vec<C64> = b.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.solve(&c).into_iter().map(|v| v.re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_grid() -> Grid {
        Grid::new(6.0, 61).unwrap()
    }

    #[test]
    fn band_and_apply_agree() {
        let g = sample_grid();
        let q: Vec<C64> = g.nodes().iter().map(|x| C64::new(1.0 + x * x * 0.1, 0.3 * x)).collect();
        let a = schrodinger_band(g, &q);
        let u: Vec<C64> = g.nodes().iter().map(|x| C64::new((x * 0.7).sin(), (-x * x).exp())).collect();
        let y1 = a.matvec(&u);
        let y2 = apply_schrodinger(g.spacing(), &q, &u);
        for (p, q) in y1.iter().zip(&y2) {
            assert!((p - q).norm() < 1e-10 * (1.0 + p.norm()));
        }
    }

    #[test]
    fn folded_solve_matches_full_solve() {
        let g = sample_grid();
        let q: Vec<C64> = g.nodes().iter().map(|x| C64::new(1.0 - (-x * x).exp(), 0.0)).collect();
        let a = schrodinger_band(g, &q);
        for parity in [Parity::Even, Parity::Odd] {
            let b: Vec<C64> = g
                .nodes()
                .iter()
                .map(|&x| {
                    let v = (-(x * x) / 3.0).exp();
                    C64::new(if parity == Parity::Even { v } else { x * v }, 0.0)
                })
                .collect();
            let x1 = SectorSolver::new(&a, parity).unwrap().solve(&b);
            let x2 = a.clone().factor().unwrap().solve(&b);
            for (p, q) in x1.iter().zip(&x2) {
                assert!((p - q).norm() < 1e-10);
            }
        }
    }
}
