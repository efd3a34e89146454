//! Uniform symmetric 1D lattice, fields on it, quadrature and stencils.
//!
//! Quadrature is the trapezoid rule summed in mirror pairs around the
//! central node, so integrals of exactly odd samples cancel exactly.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{FgrError, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    half_width: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(FgrError::Precondition(format!("half width must be positive, got {half_width}")));
        }
        if n_points < 5 || n_points % 2 == 0 {
            return Err(FgrError::Precondition(format!("n_points must be odd and >= 5, got {n_points}")));
        }
        Ok(Self { half_width, n_points })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n_points - 1) as f64
    }

    pub fn center(&self) -> usize {
        (self.n_points - 1) / 2
    }

    /// Node coordinate; `(i - center) * dx` keeps the mirror symmetry exact.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - self.center() as f64) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    #[inline]
    pub fn mirror(&self, i: usize) -> usize {
        self.n_points - 1 - i
    }

    /// Same spacing, `extra` nodes appended on each side.
    pub fn extended(&self, extra: usize) -> Grid {
        let n = self.n_points + 2 * extra;
        Grid { half_width: self.spacing() * ((n - 1) / 2) as f64, n_points: n }
    }

    /// Trapezoid integral of raw samples, summed in mirror pairs.
    pub fn integrate(&self, values: &[C64]) -> C64 {
        debug_assert_eq!(values.len(), self.n_points);
        let c = self.center();
        let mut acc = values[c];
        for j in 1..c {
            acc += values[c + j] + values[c - j];
        }
        acc += 0.5 * (values[0] + values[self.n_points - 1]);
        acc * self.spacing()
    }

    pub fn integrate_real(&self, values: &[f64]) -> f64 {
        let c = self.center();
        let mut acc = values[c];
        for j in 1..c {
            acc += values[c + j] + values[c - j];
        }
        acc += 0.5 * (values[0] + values[self.n_points - 1]);
        acc * self.spacing()
    }
}

/// Complex samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<C64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![ZERO; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FgrError::Shape(format!("{} samples for {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn from_real(grid: Grid, values: &[f64]) -> Result<Self> {
        Self::from_values(grid, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> C64) -> Self {
        Self { grid, values: (0..grid.len()).map(|i| f(grid.x(i))).collect() }
    }

    pub fn from_real_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn map_with_x(&self, f: impl Fn(f64, C64) -> C64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().enumerate().map(|(i, &v)| f(self.grid.x(i), v)).collect(),
        }
    }

    pub fn conj(&self) -> Field {
        self.map(|v| v.conj())
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    pub fn scale(&self, c: C64) -> Field {
        self.map(|v| c * v)
    }

    pub fn powi(&self, k: i32) -> Field {
        self.map(|v| v.powi(k))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_real(&self) -> f64 {
        self.values.iter().map(|v| v.re.abs()).fold(0.0, f64::max)
    }

    /// `∫ a` without conjugation.
    pub fn integral(&self) -> C64 {
        self.grid.integrate(&self.values)
    }

    pub fn norm(&self) -> f64 {
        inner_unchecked(self, self).re.max(0.0).sqrt()
    }

    /// Restricts to `|x| <= half_width` of a smaller centered grid with the same spacing.
    pub fn restrict(&self, target: Grid) -> Result<Field> {
        let off = check_nested(target, self.grid)?;
        Ok(Field { grid: target, values: self.values[off..off + target.len()].to_vec() })
    }

    /// Zero-pads onto a larger centered grid with the same spacing.
    pub fn embed(&self, target: Grid) -> Result<Field> {
        let off = check_nested(self.grid, target)?;
        let mut values = vec![ZERO; target.len()];
        values[off..off + self.len()].copy_from_slice(&self.values);
        Ok(Field { grid: target, values })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,re,im\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{:.17e},{:.17e},{:.17e}", self.grid.x(i), v.re, v.im);
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "field",
            "half_width": self.grid.half_width(),
            "n_points": self.grid.len(),
            "spacing": self.grid.spacing(),
            "re": self.re(),
            "im": self.im(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Field> {
        let grid = grid_from_json(v)?;
        let re = f64_array(v, "re")?;
        let im = f64_array(v, "im")?;
        if re.len() != im.len() {
            return Err(FgrError::Shape("re/im length mismatch".into()));
        }
        Field::from_values(grid, re.into_iter().zip(im).map(|(a, b)| C64::new(a, b)).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn check_nested(small: Grid, big: Grid) -> Result<usize> {
    if (small.spacing() - big.spacing()).abs() > 1e-12 * big.spacing() || small.len() > big.len() {
        return Err(FgrError::Shape("grids are not nested with equal spacing".into()));
    }
    Ok(big.center() - small.center())
}

fn grid_from_json(v: &serde_json::Value) -> Result<Grid> {
    let hw = v["half_width"].as_f64().ok_or_else(|| FgrError::Shape("missing half_width".into()))?;
    let n = v["n_points"].as_u64().ok_or_else(|| FgrError::Shape("missing n_points".into()))? as usize;
    Grid::new(hw, n)
}

fn f64_array(v: &serde_json::Value, key: &str) -> Result<Vec<f64>> {
    v[key]
        .as_array()
        .ok_or_else(|| FgrError::Shape(format!("missing array {key}")))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| FgrError::Shape(format!("non-numeric entry in {key}"))))
        .collect()
}

fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(FgrError::Shape(format!("grid {a:?} vs {b:?}")));
    }
    Ok(())
}

fn inner_unchecked(a: &Field, b: &Field) -> C64 {
    let prod: Vec<C64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y.conj()).collect();
    a.grid.integrate(&prod)
}

/// `∫ a conj(b) dx` by the trapezoid rule.
pub fn inner(a: &Field, b: &Field) -> Result<C64> {
    same_grid(&a.grid, &b.grid)?;
    Ok(inner_unchecked(a, b))
}

/// `∫ a b dx`, no conjugation.
pub fn bilinear(a: &Field, b: &Field) -> Result<C64> {
    same_grid(&a.grid, &b.grid)?;
    let prod: Vec<C64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    Ok(a.grid.integrate(&prod))
}

/// Fourth-order second derivative: centered in the interior, one-sided
/// six-point closures on the two outermost nodes at each end.
pub fn second_derivative(a: &Field) -> Field {
    let n = a.len();
    let h2 = a.grid.spacing().powi(2);
    let v = &a.values;
    let mut out = vec![ZERO; n];
    for i in 2..n - 2 {
        out[i] = (16.0 * (v[i - 1] + v[i + 1]) - (v[i - 2] + v[i + 2]) - 30.0 * v[i]) / (12.0 * h2);
    }
    let edge0 = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
    let edge1 = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];
    let dot = |w: &[f64; 6], idx: &dyn Fn(usize) -> usize| -> C64 {
        w.iter().enumerate().map(|(k, &c)| c * v[idx(k)]).sum::<C64>() / (12.0 * h2)
    };
    out[0] = dot(&edge0, &|k| k);
    out[1] = dot(&edge1, &|k| k);
    out[n - 1] = dot(&edge0, &|k| n - 1 - k);
    out[n - 2] = dot(&edge1, &|k| n - 1 - k);
    Field { grid: a.grid, values: out }
}

/// Fourth-order first derivative with one-sided five-point closures.
pub fn first_derivative(a: &Field) -> Field {
    let n = a.len();
    let h = a.grid.spacing();
    let v = &a.values;
    let mut out = vec![ZERO; n];
    for i in 2..n - 2 {
        out[i] = (8.0 * (v[i + 1] - v[i - 1]) - (v[i + 2] - v[i - 2])) / (12.0 * h);
    }
    out[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
    out[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h);
    out[n - 1] = -(-25.0 * v[n - 1] + 48.0 * v[n - 2] - 36.0 * v[n - 3] + 16.0 * v[n - 4] - 3.0 * v[n - 5]) / (12.0 * h);
    out[n - 2] = -(-3.0 * v[n - 1] - 10.0 * v[n - 2] + 18.0 * v[n - 3] - 6.0 * v[n - 4] + v[n - 5]) / (12.0 * h);
    Field { grid: a.grid, values: out }
}

/// Splits into even and odd parts; `even + odd` reproduces the input.
pub fn parity_split(a: &Field) -> (Field, Field) {
    let g = a.grid;
    let mut even = vec![ZERO; g.len()];
    let mut odd = vec![ZERO; g.len()];
    for i in 0..g.len() {
        let m = g.mirror(i);
        even[i] = 0.5 * (a.values[i] + a.values[m]);
        odd[i] = a.values[i] - even[i];
    }
    (Field { grid: g, values: even }, Field { grid: g, values: odd })
}

/// Largest odd (or even) component relative to the field's max modulus.
pub fn parity_defect(a: &Field, want_even: bool) -> f64 {
    let scale = a.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    let (e, o) = parity_split(a);
    if want_even { o.max_abs() / scale } else { e.max_abs() / scale }
}

/// `‖⟨x⟩^ν a‖₂`.
pub fn weighted_norm(a: &Field, nu: f64) -> f64 {
    let g = a.grid;
    let w: Vec<C64> = a
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| C64::new((1.0 + g.x(i).powi(2)).powf(nu) * v.norm_sqr(), 0.0))
        .collect();
    g.integrate(&w).re.max(0.0).sqrt()
}

macro_rules! field_binop {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr<&Field> for &Field {
            type Output = Field;
            fn $m(self, rhs: &Field) -> Field {
                assert_eq!(self.grid, rhs.grid, "field grids differ");
                Field {
                    grid: self.grid,
                    values: self.values.iter().zip(&rhs.values).map(|(a, b)| a $op b).collect(),
                }
            }
        }
        impl $tr<Field> for Field {
            type Output = Field;
            fn $m(self, rhs: Field) -> Field {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Field> for Field {
            type Output = Field;
            fn $m(self, rhs: &Field) -> Field {
                (&self).$m(rhs)
            }
        }
        impl $tr<Field> for &Field {
            type Output = Field;
            fn $m(self, rhs: Field) -> Field {
                self.$m(&rhs)
            }
        }
    };
}

field_binop!(Add, add, +);
field_binop!(Sub, sub, -);
field_binop!(Mul, mul, *);

impl Mul<&Field> for C64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scale(self)
    }
}

impl Mul<Field> for C64 {
    type Output = Field;
    fn mul(self, rhs: Field) -> Field {
        rhs.scale(self)
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.map(|v| self * v)
    }
}

impl Mul<Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: Field) -> Field {
        rhs.map(|v| self * v)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

impl Neg for Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

impl AddAssign<&Field> for Field {
    fn add_assign(&mut self, rhs: &Field) {
        assert_eq!(self.grid, rhs.grid, "field grids differ");
        for (a, b) in self.values.iter_mut().zip(&rhs.values) {
            *a += b;
        }
    }
}

/// Two-component field `(u₁, u₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairField {
    pub u1: Field,
    pub u2: Field,
}

impl PairField {
    pub fn new(u1: Field, u2: Field) -> Result<Self> {
        same_grid(&u1.grid, &u2.grid)?;
        Ok(Self { u1, u2 })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { u1: Field::zeros(grid), u2: Field::zeros(grid) }
    }

    pub fn grid(&self) -> Grid {
        self.u1.grid
    }

    pub fn scale(&self, c: C64) -> PairField {
        PairField { u1: self.u1.scale(c), u2: self.u2.scale(c) }
    }

    pub fn conj(&self) -> PairField {
        PairField { u1: self.u1.conj(), u2: self.u2.conj() }
    }

    /// `σ₁(u₁, u₂) = (−u₂, u₁)`.
    pub fn sigma1(&self) -> PairField {
        PairField { u1: -&self.u2, u2: self.u1.clone() }
    }

    pub fn norm(&self) -> f64 {
        (self.u1.norm().powi(2) + self.u2.norm().powi(2)).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.u1.max_abs().max(self.u2.max_abs())
    }

    /// Interleaved `[u1_0, u2_0, u1_1, ...]` layout used by block solves.
    pub fn interleave(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(2 * self.u1.len());
        for (a, b) in self.u1.values.iter().zip(&self.u2.values) {
            out.push(*a);
            out.push(*b);
        }
        out
    }

    pub fn deinterleave(grid: Grid, v: &[C64]) -> PairField {
        let u1 = v.iter().step_by(2).copied().collect();
        let u2 = v.iter().skip(1).step_by(2).copied().collect();
        PairField { u1: Field { grid, values: u1 }, u2: Field { grid, values: u2 } }
    }

    pub fn restrict(&self, target: Grid) -> Result<PairField> {
        Ok(PairField { u1: self.u1.restrict(target)?, u2: self.u2.restrict(target)? })
    }

    pub fn embed(&self, target: Grid) -> Result<PairField> {
        Ok(PairField { u1: self.u1.embed(target)?, u2: self.u2.embed(target)? })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,re1,im1,re2,im2\n");
        let g = self.grid();
        for i in 0..g.len() {
            let (a, b) = (self.u1.values[i], self.u2.values[i]);
            let _ = writeln!(s, "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", g.x(i), a.re, a.im, b.re, b.im);
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let g = self.grid();
        serde_json::json!({
            "kind": "pair_field",
            "half_width": g.half_width(),
            "n_points": g.len(),
            "spacing": g.spacing(),
            "re1": self.u1.re(), "im1": self.u1.im(),
            "re2": self.u2.re(), "im2": self.u2.im(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<PairField> {
        let grid = grid_from_json(v)?;
        let comp = |re: &str, im: &str| -> Result<Field> {
            let r = f64_array(v, re)?;
            let i = f64_array(v, im)?;
            Field::from_values(grid, r.into_iter().zip(i).map(|(a, b)| C64::new(a, b)).collect())
        };
        PairField::new(comp("re1", "im1")?, comp("re2", "im2")?)
    }
}

/// Sum over both components of `∫ a_k conj(b_k)`.
pub fn inner_pair(a: &PairField, b: &PairField) -> Result<C64> {
    Ok(inner(&a.u1, &b.u1)? + inner(&a.u2, &b.u2)?)
}

macro_rules! pair_binop {
    ($tr:ident, $m:ident) => {
        impl $tr<&PairField> for &PairField {
            type Output = PairField;
            fn $m(self, rhs: &PairField) -> PairField {
                PairField { u1: (&self.u1).$m(&rhs.u1), u2: (&self.u2).$m(&rhs.u2) }
            }
        }
        impl $tr<PairField> for PairField {
            type Output = PairField;
            fn $m(self, rhs: PairField) -> PairField {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&PairField> for PairField {
            type Output = PairField;
            fn $m(self, rhs: &PairField) -> PairField {
                (&self).$m(rhs)
            }
        }
    };
}

pair_binop!(Add, add);
pair_binop!(Sub, sub);

impl Neg for &PairField {
    type Output = PairField;
    fn neg(self) -> PairField {
        PairField { u1: -&self.u1, u2: -&self.u2 }
    }
}

impl Neg for PairField {
    type Output = PairField;
    fn neg(self) -> PairField {
        -&self
    }
}

impl Mul<&PairField> for C64 {
    type Output = PairField;
    fn mul(self, rhs: &PairField) -> PairField {
        rhs.scale(self)
    }
}

impl Mul<PairField> for C64 {
    type Output = PairField;
    fn mul(self, rhs: PairField) -> PairField {
        rhs.scale(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sech(x: f64) -> f64 {
        1.0 / x.cosh()
    }

    #[test]
    fn grid_is_symmetric_with_center_node() {
        let g = Grid::new(10.0, 2001).unwrap();
        assert_eq!(g.x(g.center()), 0.0);
        for i in 0..g.len() {
            assert_eq!(g.x(i), -g.x(g.mirror(i)));
        }
        assert!((g.x(0) + 10.0).abs() < 1e-12);
        assert!(Grid::new(10.0, 2000).is_err());
        assert!(Grid::new(-1.0, 11).is_err());
    }

    #[test]
    fn constant_integrates_to_length() {
        let g = Grid::new(10.0, 4001).unwrap();
        let one = Field::from_real_fn(g, |_| 1.0);
        let v = inner(&one, &one).unwrap();
        assert!((v.re - 20.0).abs() < 1e-12);
    }

    #[test]
    fn sech_squared_integrates_to_two() {
        let g = Grid::new(20.0, 4001).unwrap();
        let s = Field::from_real_fn(g, sech);
        assert!((inner(&s, &s).unwrap().re - 2.0).abs() < 1e-8);
    }

    #[test]
    fn odd_even_pairing_vanishes() {
        let g = Grid::new(10.0, 1001).unwrap();
        let odd = Field::from_real_fn(g, |x| x * sech(x));
        let even = Field::from_real_fn(g, |x| sech(x).powi(2) + 0.3);
        assert_eq!(inner(&odd, &even).unwrap().norm(), 0.0);
        assert!(odd.integral().norm() <= 1e-14 * odd.norm());
    }

    #[test]
    fn mismatched_grids_error() {
        let a = Field::zeros(Grid::new(10.0, 11).unwrap());
        let b = Field::zeros(Grid::new(10.0, 13).unwrap());
        assert!(matches!(inner(&a, &b), Err(FgrError::Shape(_))));
    }

    #[test]
    fn second_derivative_exact_on_quadratics() {
        let g = Grid::new(5.0, 101).unwrap();
        let q = Field::from_real_fn(g, |x| x * x - 3.0 * x + 1.0);
        let d = second_derivative(&q);
        for v in &d.values {
            assert!((v.re - 2.0).abs() < 1e-8, "{v}");
        }
        let z = second_derivative(&Field::zeros(g));
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn second_derivative_of_sine_is_fourth_order() {
        let errs: Vec<f64> = [201usize, 401]
            .iter()
            .map(|&n| {
                let g = Grid::new(3.0, n).unwrap();
                let s = Field::from_real_fn(g, f64::sin);
                let d = second_derivative(&s);
                (2..n - 2).map(|i| (d.values[i].re + g.x(i).sin()).abs()).fold(0.0, f64::max)
            })
            .collect();
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.7, "observed order {order}");
    }

    #[test]
    fn derivatives_preserve_parity() {
        let g = Grid::new(8.0, 801).unwrap();
        let even = Field::from_real_fn(g, |x| sech(x) + (-x * x).exp());
        let odd = Field::from_real_fn(g, |x| x * sech(x));
        assert!(parity_defect(&second_derivative(&even), true) <= 1e-13);
        assert!(parity_defect(&second_derivative(&odd), false) <= 1e-13);
        assert!(parity_defect(&first_derivative(&even), false) <= 1e-13);
    }

    #[test]
    fn parity_split_examples() {
        let g = Grid::new(10.0, 1001).unwrap();
        let e = Field::from_real_fn(g, sech);
        let o = Field::from_real_fn(g, |x| x * sech(x));
        let (e1, o1) = parity_split(&o);
        assert_eq!(e1.max_abs(), 0.0);
        assert_eq!((&o1 - &o).max_abs(), 0.0);
        let (_, o2) = parity_split(&e);
        assert_eq!(o2.max_abs(), 0.0);
        let (e3, o3) = parity_split(&(&e + &o));
        assert!((&e3 - &e).max_abs() < 1e-15);
        assert!((&o3 - &o).max_abs() < 1e-15);
        let v = inner(&e3, &o3).unwrap().norm();
        assert!(v <= 1e-13 * e3.norm() * o3.norm());
    }

    #[test]
    fn weighted_norm_examples() {
        let g = Grid::new(20.0, 2001).unwrap();
        let s = Field::from_real_fn(g, sech);
        assert!((weighted_norm(&s, 0.0) - s.norm()).abs() < 1e-14);
        assert!(weighted_norm(&s, -1.0) <= s.norm());
        assert_eq!(weighted_norm(&Field::zeros(g), 2.0), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let g = Grid::new(4.0, 41).unwrap();
        let f = Field::from_fn(g, |x| C64::new(x.sin(), x.cos()));
        let back = Field::from_json(&f.to_json()).unwrap();
        assert_eq!(f, back);
        let p = PairField::new(f.clone(), f.conj()).unwrap();
        assert_eq!(PairField::from_json(&p.to_json()).unwrap(), p);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn parity_parts_add_up_and_inner_is_hermitian(a in -2.0f64..2.0, b in -2.0f64..2.0, c in 0.1f64..3.0, s in -1.0f64..1.0) {
            let g = Grid::new(10.0, 201).unwrap();
            let u = Field::from_fn(g, |x| C64::new(a * (-(x - s).powi(2) / c).exp(), b * x * (-x * x / c).exp()));
            let v = Field::from_fn(g, |x| C64::new((x * b).sin() * (-x * x).exp(), a / (1.0 + x * x)));
            let (e, o) = parity_split(&u);
            let back: Vec<C64> = e.values.iter().zip(&o.values).map(|(p, q)| p + q).collect();
            let err = back.iter().zip(&u.values).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            proptest::prop_assert!(err <= 1e-14);
            proptest::prop_assert!(parity_defect(&e, true) <= 1e-14 && parity_defect(&o, false) <= 1e-14);
            let uv = inner(&u, &v).unwrap();
            let vu = inner(&v, &u).unwrap();
            proptest::prop_assert!((uv - vu.conj()).norm() <= 1e-13 * (1.0 + uv.norm()));
        }

        #[test]
        fn second_derivative_exact_on_random_quadratics(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
            let g = Grid::new(4.0, 81).unwrap();
            let u = Field::from_real_fn(g, |x| a * x * x + b * x + c);
            let d = second_derivative(&u);
            // interior stencils only
            for i in 3..g.len() - 3 {
                proptest::prop_assert!((d.values[i].re - 2.0 * a).abs() <= 1e-9 * (1.0 + a.abs() + b.abs() + c.abs()));
            }
        }
    }
}
