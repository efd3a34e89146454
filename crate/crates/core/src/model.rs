//! Nonlinearity and trapping potential, and the frequency window N.

use serde::{Deserialize, Serialize};

use crate::error::{FgrError, Result};
use crate::lattice::{Field, Grid};

/// Relative distance to a threshold `N eps = lambda` below which a point is flagged.
pub const EDGE_TOLERANCE: f64 = 1e-3;

/// Nonlinearity `f(s)` entering `i psi_t = -psi'' + V psi - f(|psi|^2) psi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Nonlinearity {
    /// `f(s) = s`.
    Cubic,
    /// `f(s) = s^p`, `p > 0`.
    Power { p: f64 },
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::Cubic
    }
}

impl Nonlinearity {
    pub fn from_name(name: &str) -> Result<Self> {
        let name = name.trim().to_ascii_lowercase();
        if name == "cubic" {
            return Ok(Nonlinearity::Cubic);
        }
        if let Some(rest) = name.strip_prefix("power:") {
            let p: f64 = rest
                .parse()
                .map_err(|_| FgrError::Precondition(format!("bad power exponent '{rest}'")))?;
            if !(p > 0.0) {
                return Err(FgrError::Precondition(format!("power exponent must be positive, got {p}")));
            }
            return Ok(Nonlinearity::Power { p });
        }
        Err(FgrError::Precondition(format!("unknown nonlinearity '{name}' (expected cubic or power:<p>)")))
    }

    pub fn name(&self) -> String {
        match self {
            Nonlinearity::Cubic => "cubic".into(),
            Nonlinearity::Power { p } => format!("power:{p}"),
        }
    }

    pub fn is_cubic(&self) -> bool {
        matches!(self, Nonlinearity::Cubic) || matches!(self, Nonlinearity::Power { p } if *p == 1.0)
    }

    pub fn f(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::Cubic => s,
            Nonlinearity::Power { p } => s.max(0.0).powf(p),
        }
    }

    pub fn df(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::Cubic => 1.0,
            Nonlinearity::Power { p } => {
                if s <= 0.0 {
                    if p == 1.0 { 1.0 } else { 0.0 }
                } else {
                    p * s.powf(p - 1.0)
                }
            }
        }
    }

    pub fn d2f(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::Cubic => 0.0,
            Nonlinearity::Power { p } => {
                if s <= 0.0 {
                    if p == 2.0 { 2.0 } else { 0.0 }
                } else {
                    p * (p - 1.0) * s.powf(p - 2.0)
                }
            }
        }
    }

    /// Checks `|f(s)| <= c (1 + s^beta)` on `[0, s_max]` with the given `beta`, returning the smallest `c`.
    pub fn growth_constant(&self, beta: f64, s_max: f64) -> f64 {
        (0..=200)
            .map(|k| {
                let s = s_max * k as f64 / 200.0;
                self.f(s).abs() / (1.0 + s.powf(beta))
            })
            .fold(0.0, f64::max)
    }
}

/// Gaussian well `V(x) = -depth * exp(-(h x)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub depth: f64,
    pub h: f64,
}

impl PotentialSpec {
    pub fn new(depth: f64, h: f64) -> Result<Self> {
        if !(depth > 0.0) {
            return Err(FgrError::Precondition(format!("potential depth must be positive, got {depth}")));
        }
        if !(h >= 0.0) {
            return Err(FgrError::Precondition(format!("h must be non-negative, got {h}")));
        }
        Ok(Self { depth, h })
    }

    /// Unscaled profile `V(y)`.
    pub fn profile(&self, y: f64) -> f64 {
        -self.depth * (-y * y).exp()
    }

    pub fn at(&self, x: f64) -> f64 {
        self.profile(self.h * x)
    }

    /// `V(0)`.
    pub fn v0(&self) -> f64 {
        -self.depth
    }

    /// `e = V''(0)` of the unscaled profile.
    pub fn curvature(&self) -> f64 {
        2.0 * self.depth
    }

    /// Same depth, different scale.
    pub fn with_h(&self, h: f64) -> Self {
        Self { depth: self.depth, h }
    }
}

pub fn evaluate_potential(spec: &PotentialSpec, grid: Grid) -> Result<Field> {
    if !(spec.h > 0.0) {
        return Err(FgrError::Precondition(format!("h must be positive, got {}", spec.h)));
    }
    Ok(sample_potential(spec, grid))
}

/// Samples `V(h x)`; `h = 0` gives the constant `V(0)`.
pub fn sample_potential(spec: &PotentialSpec, grid: Grid) -> Field {
    let mut f = Field::from_real_fn(grid, |x| spec.at(x));
    // exact evenness regardless of rounding in x(i)
    let n = grid.len();
    for i in 0..grid.center() {
        let v = f.values[i];
        f.values[n - 1 - i] = v;
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub lambda: f64,
    pub epsilon: f64,
    pub n: usize,
    /// `(N+1) eps - lambda`.
    pub upper_margin: f64,
    /// `lambda - N eps`.
    pub lower_margin: f64,
    /// Some threshold `k eps = lambda` lies within `EDGE_TOLERANCE * lambda`.
    pub edge: bool,
}

impl WindowReport {
    pub fn is_valid(&self) -> bool {
        self.n > 0 && !self.edge && self.upper_margin > 0.0 && self.lower_margin >= 0.0
    }
}

pub fn select_window(lambda: f64, epsilon: f64) -> Result<WindowReport> {
    if !(lambda > 0.0) || !(epsilon > 0.0) {
        return Err(FgrError::Precondition(format!(
            "lambda and epsilon must be positive, got {lambda}, {epsilon}"
        )));
    }
    if epsilon >= lambda {
        return Err(FgrError::Window(format!(
            "eps = {epsilon} >= lambda = {lambda}: no internal mode inside the gap"
        )));
    }
    let mut n = (lambda / epsilon).floor() as usize;
    while (n + 1) as f64 * epsilon <= lambda {
        n += 1;
    }
    while n > 1 && n as f64 * epsilon > lambda {
        n -= 1;
    }
    let upper_margin = (n + 1) as f64 * epsilon - lambda;
    let lower_margin = lambda - n as f64 * epsilon;
    let tol = EDGE_TOLERANCE * lambda;
    let edge = upper_margin.abs() < tol || lower_margin.abs() < tol;
    Ok(WindowReport { lambda, epsilon, n, upper_margin, lower_margin, edge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::parity_defect;

    #[test]
    fn window_examples() {
        let w = select_window(1.0, 0.4).unwrap();
        assert_eq!(w.n, 2);
        assert!(!w.edge);
        let w = select_window(1.0, 0.3).unwrap();
        assert_eq!(w.n, 3);
        let w = select_window(1.0, 0.5).unwrap();
        assert!(w.edge);
        assert!(!w.is_valid());
        assert!(matches!(select_window(1.0, 1.0), Err(FgrError::Window(_))));
        assert!(select_window(-1.0, 0.3).is_err());
    }

    #[test]
    fn window_bracket_holds() {
        for k in 1..400 {
            let eps = 0.01 + k as f64 * 0.0024;
            if eps >= 1.0 {
                break;
            }
            let w = select_window(1.0, eps).unwrap();
            assert!((w.n + 1) as f64 * eps > 1.0);
            assert!(1.0 >= w.n as f64 * eps);
        }
    }

    #[test]
    fn gaussian_potential() {
        let g = Grid::new(10.0, 201).unwrap();
        let spec = PotentialSpec::new(1.5, 0.3).unwrap();
        let v = evaluate_potential(&spec, g).unwrap();
        assert_eq!(v.values[g.center()].re, -1.5);
        assert!(parity_defect(&v, true) <= 1e-15);
        assert_eq!(spec.curvature(), 3.0);
        // finite-difference check of V''(0) on the unscaled profile
        let d = 1e-4;
        let num = (spec.profile(d) - 2.0 * spec.profile(0.0) + spec.profile(-d)) / (d * d);
        assert!((num - spec.curvature()).abs() < 1e-6);
        assert!(evaluate_potential(&spec.with_h(0.0), g).is_err());
    }

    #[test]
    fn nonlinearity_derivatives() {
        let c = Nonlinearity::Cubic;
        assert_eq!(c.f(0.0), 0.0);
        assert_eq!(c.df(0.7), 1.0);
        let p = Nonlinearity::from_name("power:2").unwrap();
        let s = 0.8;
        let d = 1e-6;
        assert!(((p.f(s + d) - p.f(s - d)) / (2.0 * d) - p.df(s)).abs() < 1e-8);
        assert!(((p.df(s + d) - p.df(s - d)) / (2.0 * d) - p.d2f(s)).abs() < 1e-8);
        assert_eq!(p.f(0.0), 0.0);
        assert!(Nonlinearity::from_name("quintic").is_err());
        assert_eq!(Nonlinearity::from_name(&p.name()).unwrap(), p);
        assert!(c.growth_constant(1.0, 10.0) <= 1.0);
    }

    proptest::proptest! {
        #[test]
        fn window_brackets_lambda(lambda in 0.1f64..10.0, frac in 0.01f64..0.99) {
            let eps = frac * lambda;
            let w = select_window(lambda, eps).unwrap();
            proptest::prop_assert!((w.n + 1) as f64 * eps > lambda);
            proptest::prop_assert!(w.n as f64 * eps <= lambda);
        }

        #[test]
        fn window_is_non_increasing_in_epsilon(lambda in 0.1f64..10.0, f1 in 0.01f64..0.99, f2 in 0.01f64..0.99) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let a = select_window(lambda, lo * lambda).unwrap();
            let b = select_window(lambda, hi * lambda).unwrap();
            proptest::prop_assert!(b.n <= a.n);
        }
    }
}
