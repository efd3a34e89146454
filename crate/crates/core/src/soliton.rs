//! Ground states of `-φ'' + (λ + V_h) φ - f(φ²) φ = 0` and their λ-derivative.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{FgrError, Result};
use crate::lattice::{Field, Grid};
use crate::linearization::LinearizedSystem;
use crate::model::{sample_potential, Nonlinearity, PotentialSpec};
use crate::operator::{apply_schrodinger_real, schrodinger_band_real, Parity, SectorSolver};

const MAX_NEWTON: usize = 50;

#[derive(Debug, Clone, Serialize)]
pub struct Soliton {
    pub lambda: f64,
    pub h: f64,
    /// Well depth; 0 for the free equation.
    pub depth: f64,
    pub nonlinearity: Nonlinearity,
    #[serde(skip)]
    pub profile: Field,
    #[serde(skip)]
    pub d_lambda: Field,
    /// `‖F(φ)‖ / (‖φ''‖ + ‖(λ+V)φ‖ + ‖f(φ²)φ‖)`.
    pub residual_norm: f64,
    pub mass: f64,
    pub delta_prime: f64,
}

impl Soliton {
    pub fn grid(&self) -> Grid {
        self.profile.grid
    }

    pub fn spec(&self) -> Option<PotentialSpec> {
        (self.depth > 0.0).then_some(PotentialSpec { depth: self.depth, h: self.h })
    }

    /// Samples of `V_h` on the soliton grid (zero for the free equation).
    pub fn potential(&self) -> Vec<f64> {
        potential_samples(self.spec(), self.grid())
    }

    pub fn phi(&self) -> Vec<f64> {
        self.profile.re()
    }

    pub fn phi_lambda(&self) -> Vec<f64> {
        self.d_lambda.re()
    }

    pub fn mass_formula_check(&self) -> f64 {
        self.profile.norm().powi(2)
    }
}

fn potential_samples(spec: Option<PotentialSpec>, grid: Grid) -> Vec<f64> {
    match spec {
        Some(s) => sample_potential(&s, grid).re(),
        None => vec![0.0; grid.len()],
    }
}

/// Exact free ground state of `f(s) = s^p` (cubic for `p = 1`).
pub fn closed_form_free(lambda: f64, f: Nonlinearity, x: f64) -> f64 {
    let p = match f {
        Nonlinearity::Cubic => 1.0,
        Nonlinearity::Power { p } => p,
    };
    let s = lambda.sqrt();
    ((p + 1.0) * lambda).powf(0.5 / p) * (1.0 / (p * s * x).cosh()).powf(1.0 / p)
}

fn residual(grid: Grid, lambda: f64, v: &[f64], f: Nonlinearity, phi: &[f64]) -> (Vec<f64>, f64) {
    let q: Vec<f64> = v.iter().zip(phi).map(|(vi, p)| lambda + vi - f.f(p * p)).collect();
    let r = apply_schrodinger_real(grid.spacing(), &q, phi);
    let zero = vec![0.0; phi.len()];
    let kin = apply_schrodinger_real(grid.spacing(), &zero, phi);
    let lin: Vec<f64> = v.iter().zip(phi).map(|(vi, p)| (lambda + vi) * p).collect();
    let non: Vec<f64> = phi.iter().map(|p| f.f(p * p) * p).collect();
    let nrm = |a: &[f64]| grid.integrate_real(&a.iter().map(|t| t * t).collect::<Vec<_>>()).sqrt();
    let scale = nrm(&kin) + nrm(&lin) + nrm(&non);
    let rel = if scale == 0.0 { 0.0 } else { nrm(&r) / scale };
    (r, rel)
}

fn l_plus_diag(lambda: f64, v: &[f64], f: Nonlinearity, phi: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(phi)
        .map(|(vi, p)| {
            let s = p * p;
            lambda + vi - f.f(s) - 2.0 * f.df(s) * s
        })
        .collect()
}

fn symmetrize_even(u: &mut [f64]) {
    let n = u.len();
    for i in 0..n / 2 {
        let m = 0.5 * (u[i] + u[n - 1 - i]);
        u[i] = m;
        u[n - 1 - i] = m;
    }
}

/// Damped Newton on the even sector. Returns the profile and its relative residual.
fn newton(grid: Grid, lambda: f64, v: &[f64], f: Nonlinearity, seed: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let mut phi = seed;
    symmetrize_even(&mut phi);
    let (mut r, mut rel) = residual(grid, lambda, v, f, &phi);
    let mut history = vec![rel];
    for _ in 0..MAX_NEWTON {
        let jac = schrodinger_band_real(grid, &l_plus_diag(lambda, v, f, &phi));
        let solver = SectorSolver::new(&jac, Parity::Even)?;
        let step = solver.solve_real(&r);
        let peak = phi.iter().cloned().fold(0.0, f64::max);
        let step_size = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial: Vec<f64> = phi.iter().zip(&step).map(|(p, s)| p - t * s).collect();
            symmetrize_even(&mut trial);
            let tpeak = trial.iter().cloned().fold(0.0, f64::max);
            let sign_change = trial.iter().any(|&p| p < -1e-10 * tpeak);
            if !sign_change {
                let (tr, trel) = residual(grid, lambda, v, f, &trial);
                if trel <= rel * (1.0 - 1e-4 * t) || trel < 1e-13 || step_size * t <= 1e-14 * peak {
                    phi = trial;
                    r = tr;
                    rel = trel;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        history.push(rel);
        if !accepted || step_size * t <= 1e-13 * peak {
            break;
        }
    }
    if rel > 1e-9 {
        return Err(FgrError::NoConvergence { iterations: history.len() - 1, history });
    }
    Ok((phi, rel))
}

fn finish(
    grid: Grid,
    lambda: f64,
    spec: Option<PotentialSpec>,
    f: Nonlinearity,
    phi: Vec<f64>,
    rel: f64,
) -> Result<Soliton> {
    let v = potential_samples(spec, grid);
    let dl = solve_phi_lambda(grid, lambda, &v, f, &phi)?;
    let delta_prime = grid.integrate_real(&phi.iter().zip(&dl).map(|(a, b)| a * b).collect::<Vec<_>>());
    let mass = grid.integrate_real(&phi.iter().map(|a| a * a).collect::<Vec<_>>());
    Ok(Soliton {
        lambda,
        h: spec.map_or(0.0, |s| s.h),
        depth: spec.map_or(0.0, |s| s.depth),
        nonlinearity: f,
        profile: Field::from_real(grid, &phi)?,
        d_lambda: Field::from_real(grid, &dl)?,
        residual_norm: rel,
        mass,
        delta_prime,
    })
}

fn solve_phi_lambda(grid: Grid, lambda: f64, v: &[f64], f: Nonlinearity, phi: &[f64]) -> Result<Vec<f64>> {
    let lp = schrodinger_band_real(grid, &l_plus_diag(lambda, v, f, phi));
    let solver = SectorSolver::new(&lp, Parity::Even)
        .map_err(|e| FgrError::Singular(format!("L+ on the even sector (zero mode of L+ near phi): {e}")))?;
    let rhs: Vec<f64> = phi.iter().map(|p| -p).collect();
    Ok(solver.solve_real(&rhs))
}

pub fn solve_free(lambda: f64, grid: Grid, f: Nonlinearity) -> Result<Soliton> {
    if !(lambda > 0.0) {
        return Err(FgrError::Precondition(format!("lambda must be positive, got {lambda}")));
    }
    let seed: Vec<f64> = grid.nodes().iter().map(|&x| closed_form_free(lambda, f, x)).collect();
    let v = vec![0.0; grid.len()];
    let (phi, rel) = newton(grid, lambda, &v, f, seed)?;
    finish(grid, lambda, None, f, phi, rel)
}

/// Continuation in `h` from the free soliton at `λ + V(0)`.
pub fn solve_trapped(lambda: f64, spec: &PotentialSpec, grid: Grid, f: Nonlinearity) -> Result<Soliton> {
    let mu = lambda + spec.v0();
    if !(mu > 0.0) {
        return Err(FgrError::Precondition(format!("lambda + V(0) = {mu} must be positive")));
    }
    let base = solve_free(mu, grid, f)?;
    let mut phi = base.phi();
    let mut rel = base.residual_norm;
    let target = spec.h;
    let mut h = 0.0;
    let mut step = (target / 4.0).max(1e-3).min(target);
    while h < target {
        let next = (h + step).min(target);
        let v = sample_potential(&spec.with_h(next), grid).re();
        match newton(grid, lambda, &v, f, phi.clone()) {
            Ok((p, r)) => {
                phi = p;
                rel = r;
                h = next;
                step *= 1.5;
            }
            Err(e) => {
                step *= 0.5;
                if step < 1e-6 * target.max(1e-3) {
                    return Err(FgrError::Continuation { h: next, reason: format!("step collapsed ({e})") });
                }
            }
        }
    }
    finish(grid, lambda, Some(spec.with_h(target)), f, phi, rel)
}

/// Recomputes `φ_λ` from the assembled `L_+`: `L_+ φ_λ = -φ`.
pub fn lambda_derivative(s: &Soliton, sys: &LinearizedSystem) -> Result<Field> {
    let solver = SectorSolver::new(&sys.l_plus, Parity::Even)
        .map_err(|e| FgrError::Singular(format!("L+ singular on the even sector: {e}")))?;
    let rhs: Vec<C64> = s.profile.values.iter().map(|p| -p).collect();
    let out: Vec<C64> = solver.solve(&rhs).into_iter().map(|v| C64::new(v.re, 0.0)).collect();
    Field::from_values(s.grid(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{first_derivative, parity_defect};
    use crate::operator::apply_schrodinger_real;

    fn sech(x: f64) -> f64 {
        1.0 / x.cosh()
    }

    #[test]
    fn free_cubic_matches_closed_form() {
        let g = Grid::new(25.0, 20001).unwrap();
        let s = solve_free(1.0, g, Nonlinearity::Cubic).unwrap();
        let err = g
            .nodes()
            .iter()
            .zip(s.phi())
            .map(|(&x, p)| (p - 2f64.sqrt() * sech(x)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-9, "pointwise error {err}");
        assert!((s.mass - 4.0).abs() <= 1e-8, "mass {}", s.mass);
    }

    #[test]
    fn free_cubic_scaling_and_delta_prime() {
        let g = Grid::new(20.0, 8001).unwrap();
        let s = solve_free(4.0, g, Nonlinearity::Cubic).unwrap();
        let err = g
            .nodes()
            .iter()
            .zip(s.phi())
            .map(|(&x, p)| (p - 8f64.sqrt() * sech(2.0 * x)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-7, "err {err}");
        // mass 4 sqrt(lambda), delta = mass / 2
        assert!((s.delta_prime - 0.5).abs() < 1e-6, "delta' {}", s.delta_prime);
        // analytic d/dlambda of sqrt(2 lambda) sech(sqrt(lambda) x)
        let lam: f64 = 4.0;
        let dl_err = g
            .nodes()
            .iter()
            .zip(s.phi_lambda())
            .map(|(&x, d)| {
                let r = lam.sqrt();
                let exact = sech(r * x) / (2.0 * lam).sqrt() - (2.0 * lam).sqrt() * sech(r * x) * (r * x).tanh() * x / (2.0 * r);
                (d - exact).abs()
            })
            .fold(0.0, f64::max);
        assert!(dl_err < 1e-7, "phi_lambda err {dl_err}");
    }

    #[test]
    fn power_nonlinearity_closed_form() {
        let g = Grid::new(20.0, 4001).unwrap();
        let f = Nonlinearity::Power { p: 2.0 };
        let s = solve_free(1.0, g, f).unwrap();
        let err = g
            .nodes()
            .iter()
            .zip(s.phi())
            .map(|(&x, p)| (p - closed_form_free(1.0, f, x)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "err {err}");
        assert!(s.residual_norm < 1e-10);
    }

    #[test]
    fn trapped_soliton_invariants() {
        let g = Grid::new(40.0, 4001).unwrap();
        let spec = PotentialSpec::new(1.0, 0.5).unwrap();
        let s = solve_trapped(2.0, &spec, g, Nonlinearity::Cubic).unwrap();
        assert!(s.residual_norm <= 1e-10, "residual {}", s.residual_norm);
        assert!(s.phi().iter().all(|&p| p > 0.0));
        assert!(parity_defect(&s.profile, true) <= 1e-12);
        assert!(s.delta_prime > 0.0);
        // gauge mode: L_- phi = 0
        let v = s.potential();
        let phi = s.phi();
        let q: Vec<f64> = v.iter().zip(&phi).map(|(vi, p)| 2.0 + vi - p * p).collect();
        let lm = apply_schrodinger_real(g.spacing(), &q, &phi);
        let nrm = |a: &[f64]| g.integrate_real(&a.iter().map(|t| t * t).collect::<Vec<_>>()).sqrt();
        assert!(nrm(&lm) <= 1e-10 * nrm(&phi) * 10.0);
        // decays monotonically beyond the peak at 0
        let c = g.center();
        assert!(phi[c..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn trapped_at_zero_h_is_free_shifted() {
        let g = Grid::new(30.0, 3001).unwrap();
        let spec = PotentialSpec::new(1.0, 0.0).unwrap();
        let s = solve_trapped(2.0, &spec, g, Nonlinearity::Cubic).unwrap();
        let f = solve_free(1.0, g, Nonlinearity::Cubic).unwrap();
        let d = s.phi().iter().zip(f.phi()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn translation_mode_of_free_soliton() {
        let g = Grid::new(30.0, 6001).unwrap();
        let s = solve_free(1.0, g, Nonlinearity::Cubic).unwrap();
        let dphi = first_derivative(&s.profile).re();
        let phi = s.phi();
        let q: Vec<f64> = phi.iter().map(|p| 1.0 - 3.0 * p * p).collect();
        let r = apply_schrodinger_real(g.spacing(), &q, &dphi);
        let nrm = |a: &[f64]| g.integrate_real(&a.iter().map(|t| t * t).collect::<Vec<_>>()).sqrt();
        assert!(nrm(&r) <= 1e-8 * nrm(&dphi) * 10.0, "{}", nrm(&r) / nrm(&dphi));
    }

    #[test]
    fn deviation_from_free_profile_shrinks_with_h() {
        let g = Grid::new(40.0, 4001).unwrap();
        let base = solve_free(1.0, g, Nonlinearity::Cubic).unwrap();
        let hs = [0.02, 0.05, 0.1, 0.2];
        let devs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let s = solve_trapped(2.0, &PotentialSpec::new(1.0, h).unwrap(), g, Nonlinearity::Cubic).unwrap();
                let d: Vec<f64> = s.phi().iter().zip(base.phi()).map(|(a, b)| (a - b) * (a - b)).collect();
                g.integrate_real(&d).sqrt()
            })
            .collect();
        let slope = (devs[3] / devs[0]).ln() / (hs[3] / hs[0]).ln();
        // the h^{3/2} bound holds; a Gaussian well gives the quadratic rate
        assert!(slope >= 1.2, "slope {slope}");
        assert!(devs.windows(2).all(|w| w[1] > w[0]));
    }
}
