//! The block operator `L(λ) = [[0, L₋], [−L₊, 0]]`, its discrete modes and
//! the biorthogonal projection onto the continuous spectrum.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::band::BandMatrix;
use crate::error::{FgrError, Result};
use crate::lattice::{first_derivative, Field, Grid, PairField};
use crate::model::{sample_potential, Nonlinearity, PotentialSpec};
use crate::operator::{apply_schrodinger, schrodinger_band_real, Parity, SectorSolver};
use crate::soliton::{solve_free, Soliton};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub lambda: f64,
    pub h: f64,
    /// Trapping well, `None` for the free equation.
    pub well: Option<PotentialSpec>,
    pub grid: Grid,
    pub potential: Vec<f64>,
    pub phi: Vec<f64>,
    /// Diagonal of `L₋` beyond the kinetic part: `λ + V − f(φ²)`.
    pub q_minus: Vec<f64>,
    /// `λ + V − f(φ²) − 2f'(φ²)φ²`.
    pub q_plus: Vec<f64>,
    pub l_plus: BandMatrix,
    pub l_minus: BandMatrix,
    /// Essential spectrum `±i[λ, ∞)`; the gap is `(−λ, λ)`.
    pub ess_gap: [f64; 2],
}

pub fn assemble(s: &Soliton, spec: Option<&PotentialSpec>, f: Nonlinearity, grid: Grid) -> Result<LinearizedSystem> {
    if s.grid() != grid {
        return Err(FgrError::Shape("soliton and system grids differ".into()));
    }
    Ok(LinearizedSystem::from_parts(s.lambda, spec.copied(), grid, s.phi(), f))
}

impl LinearizedSystem {
    pub fn from_parts(lambda: f64, well: Option<PotentialSpec>, grid: Grid, phi: Vec<f64>, f: Nonlinearity) -> Self {
        let potential = match &well {
            Some(p) => sample_potential(p, grid).re(),
            None => vec![0.0; grid.len()],
        };
        let q_minus: Vec<f64> = potential.iter().zip(&phi).map(|(v, p)| lambda + v - f.f(p * p)).collect();
        let q_plus: Vec<f64> = potential
            .iter()
            .zip(&phi)
            .map(|(v, p)| {
                let s = p * p;
                lambda + v - f.f(s) - 2.0 * f.df(s) * s
            })
            .collect();
        let l_plus = schrodinger_band_real(grid, &q_plus);
        let l_minus = schrodinger_band_real(grid, &q_minus);
        let h = well.map_or(0.0, |w| w.h);
        Self { lambda, h, well, grid, potential, phi, q_minus, q_plus, l_plus, l_minus, ess_gap: [-lambda, lambda] }
    }

    /// Built straight from a soliton, using its own potential and nonlinearity.
    pub fn for_soliton(s: &Soliton) -> Self {
        Self::from_parts(s.lambda, s.spec(), s.grid(), s.phi(), s.nonlinearity)
    }

    /// Same operator on a grid padded by `extra` nodes per side, where `φ = 0`
    /// and `V` keeps its true profile.
    pub fn padded(&self, extra: usize) -> LinearizedSystem {
        let g = self.grid.extended(extra);
        let n = g.len();
        let mut potential = vec![0.0; n];
        let mut phi = vec![0.0; n];
        for i in 0..n {
            if i >= extra && i < extra + self.grid.len() {
                potential[i] = self.potential[i - extra];
                phi[i] = self.phi[i - extra];
            } else {
                potential[i] = self.well.map_or(0.0, |w| w.at(g.x(i)));
            }
        }
        // padding has phi = 0, so the nonlinearity enters only through the copied core
        let q_minus: Vec<f64> = (0..n)
            .map(|i| if i >= extra && i < extra + self.grid.len() { self.q_minus[i - extra] } else { self.lambda + potential[i] })
            .collect();
        let q_plus: Vec<f64> = (0..n)
            .map(|i| if i >= extra && i < extra + self.grid.len() { self.q_plus[i - extra] } else { self.lambda + potential[i] })
            .collect();
        let l_plus = schrodinger_band_real(g, &q_plus);
        let l_minus = schrodinger_band_real(g, &q_minus);
        LinearizedSystem { lambda: self.lambda, h: self.h, well: self.well, grid: g, potential, phi, q_minus, q_plus, l_plus, l_minus, ess_gap: self.ess_gap }
    }

    pub fn apply_l_minus(&self, u: &[C64]) -> Vec<C64> {
        apply_schrodinger(self.grid.spacing(), &self.q_minus, u)
    }

    pub fn apply_l_plus(&self, u: &[C64]) -> Vec<C64> {
        apply_schrodinger(self.grid.spacing(), &self.q_plus, u)
    }

    /// `L(u₁, u₂) = (L₋u₂, −L₊u₁)`.
    pub fn apply(&self, u: &PairField) -> PairField {
        let a = self.apply_l_minus(&u.u2.values);
        let b: Vec<C64> = self.apply_l_plus(&u.u1.values).into_iter().map(|v| -v).collect();
        PairField { u1: Field { grid: self.grid, values: a }, u2: Field { grid: self.grid, values: b } }
    }

    /// Interleaved band matrix of `L + shift + diag(extra)`, `extra` acting on both components.
    pub fn block_band(&self, shift: C64, extra: Option<&[C64]>) -> BandMatrix {
        let n = self.grid.len();
        let mut a = BandMatrix::zeros(2 * n, 5, 5);
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 2).min(n - 1) {
                let lm = self.l_minus.get(i, j);
                let lp = self.l_plus.get(i, j);
                a.add(2 * i, 2 * j + 1, lm);
                a.add(2 * i + 1, 2 * j, -lp);
            }
            let d = shift + extra.map_or(ZERO, |e| e[i]);
            a.add(2 * i, 2 * i, d);
            a.add(2 * i + 1, 2 * i + 1, d);
        }
        a
    }

    /// Largest relative asymmetry of `L₊` and `L₋`.
    pub fn asymmetry(&self) -> f64 {
        self.l_plus.asymmetry().max(self.l_minus.asymmetry())
    }

    /// `max |σ₁ L* σ₁ u − L u| / max |L u|` over a few random vectors, using the
    /// adjoint of the assembled block matrix.
    pub fn sigma_conjugation_defect(&self, seed: u64) -> f64 {
        let b = self.block_band(ZERO, None);
        let bh = b.adjoint();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.grid.len();
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let u: Vec<C64> = (0..2 * n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let su = sigma1_interleaved(&u);
            let t = sigma1_interleaved(&bh.matvec(&su));
            let lu = b.matvec(&u);
            let scale = lu.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let d = t.iter().zip(&lu).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            worst = worst.max(d / scale);
        }
        worst
    }

    /// Far-field diagonal of `L±`, which tends to `λ` as `V, φ → 0`.
    pub fn far_field_symbol(&self) -> f64 {
        self.q_minus[0].min(self.q_minus[self.grid.len() - 1])
    }
}

fn sigma1_interleaved(u: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; u.len()];
    for i in 0..u.len() / 2 {
        out[2 * i] = -u[2 * i + 1];
        out[2 * i + 1] = u[2 * i];
    }
    out
}

/// `max(|Im u₁|, |Re u₂|) / max |u|`; zero for admissible fields.
pub fn admissibility_defect(u: &PairField) -> f64 {
    let scale = u.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    u.u1.max_abs_imag().max(u.u2.max_abs_real()) / scale
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteModes {
    pub epsilon: f64,
    #[serde(skip)]
    pub xi: Vec<f64>,
    #[serde(skip)]
    pub eta: Vec<f64>,
    #[serde(skip)]
    pub phi: Vec<f64>,
    #[serde(skip)]
    pub phi_lambda: Vec<f64>,
    #[serde(skip)]
    pub grid: Grid,
    /// `⟨ξ, η⟩`.
    pub pairing: f64,
    /// `⟨φ, φ_λ⟩`.
    pub delta_prime: f64,
    /// `ε²` from `L₊L₋` on the odd sector, for the chain-consistency check.
    pub epsilon_sq_transposed: f64,
    /// Square root of the next odd eigenvalue of `L₋L₊`, if it lies below `λ²`.
    pub second_odd: Option<f64>,
    /// `‖L₋η − εξ‖ / ‖εξ‖`.
    pub chain_residual: f64,
}

fn nrm(g: Grid, a: &[f64]) -> f64 {
    g.integrate_real(&a.iter().map(|t| t * t).collect::<Vec<_>>()).sqrt()
}

fn dot(g: Grid, a: &[f64], b: &[f64]) -> f64 {
    g.integrate_real(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
}

fn to_c(a: &[f64]) -> Vec<C64> {
    a.iter().map(|&v| C64::new(v, 0.0)).collect()
}

/// Lowest eigenvalue of `A B` on the odd sector by inverse iteration, with an
/// optional deflation of a known right/left pair.
fn inverse_iteration(
    g: Grid,
    a: &SectorSolver,
    b: &SectorSolver,
    apply_a: &dyn Fn(&[f64]) -> Vec<f64>,
    apply_b: &dyn Fn(&[f64]) -> Vec<f64>,
    deflate: Option<(&[f64], &[f64])>,
) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..g.len()).map(|i| {
        let x = g.x(i);
        x * (-x * x / 8.0).exp()
    }).collect();
    let project = |v: &mut Vec<f64>| {
        if let Some((right, left)) = deflate {
            let c = dot(g, left, v) / dot(g, left, right);
            for (vi, r) in v.iter_mut().zip(right) {
                *vi -= c * r;
            }
        }
    };
    project(&mut v);
    let mut mu = 0.0;
    for _ in 0..500 {
        let n0 = nrm(g, &v);
        v.iter_mut().for_each(|t| *t /= n0);
        // (A B)^{-1} v = B^{-1} A^{-1} v
        let mut w = b.solve_real(&a.solve_real(&v));
        project(&mut w);
        let av = apply_a(&apply_b(&w));
        let new_mu = dot(g, &w, &av) / dot(g, &w, &w);
        let wn = nrm(g, &w);
        let change = w.iter().zip(&v).map(|(a, b)| (a / wn - b).abs()).fold(0.0, f64::max);
        let done = (new_mu - mu).abs() <= 1e-14 * new_mu.abs() && change <= 1e-13;
        mu = new_mu;
        v = w;
        if done {
            break;
        }
    }
    let n0 = nrm(g, &v);
    v.iter_mut().for_each(|t| *t /= n0);
    (mu, v)
}

/// Norm of `√2 ∂ₓφ₀` for the free soliton at `μ`.
fn reference_norm(s: &Soliton, mu: f64) -> Result<f64> {
    if s.nonlinearity.is_cubic() {
        return Ok((8.0 / 3.0 * mu.powf(1.5)).sqrt());
    }
    let free = solve_free(mu, s.grid(), s.nonlinearity)?;
    Ok(2f64.sqrt() * first_derivative(&free.profile).norm())
}

pub fn discrete_modes(sys: &LinearizedSystem, s: &Soliton) -> Result<DiscreteModes> {
    let g = sys.grid;
    let lm = SectorSolver::new(&sys.l_minus, Parity::Odd)?;
    let lp = SectorSolver::new(&sys.l_plus, Parity::Odd)?;
    let dx = g.spacing();
    let qm = sys.q_minus.clone();
    let qp = sys.q_plus.clone();
    let apply_m = move |u: &[f64]| crate::operator::apply_schrodinger_real(dx, &qm, u);
    let apply_p = move |u: &[f64]| crate::operator::apply_schrodinger_real(dx, &qp, u);
    let (e2, mut xi) = inverse_iteration(g, &lm, &lp, &apply_m, &apply_p, None);
    if !(e2 > 0.0) || e2.sqrt() >= sys.lambda {
        return Err(FgrError::SpectralA(format!("no odd eigenvalue in (0, lambda): eps^2 = {e2:e}")));
    }
    let eps = e2.sqrt();
    let dphi = first_derivative(&s.profile).re();
    if dot(g, &xi, &dphi) < 0.0 {
        xi.iter_mut().for_each(|t| *t = -*t);
    }
    let mu = sys.lambda - s.depth;
    let target = reference_norm(s, mu)?;
    let scale = target / nrm(g, &xi);
    xi.iter_mut().for_each(|t| *t *= scale);
    // eta = L+ xi / eps, evaluated as eps L-^{-1} xi to avoid stacking two stencils
    let eta: Vec<f64> = lm.solve_real(&xi).into_iter().map(|t| t * eps).collect();
    let lm_eta = apply_m(&eta);
    let chain: Vec<f64> = lm_eta.iter().zip(&xi).map(|(a, b)| a - eps * b).collect();
    let chain_residual = nrm(g, &chain) / (eps * nrm(g, &xi));
    let pairing = dot(g, &xi, &eta);
    if pairing.abs() < 1e-10 {
        return Err(FgrError::Degenerate(format!("<xi, eta> = {pairing:e}")));
    }
    let (e2t, _) = inverse_iteration(g, &lp, &lm, &apply_p, &apply_m, None);
    let (e2b, _) = inverse_iteration(g, &lm, &lp, &apply_m, &apply_p, Some((&xi, &eta)));
    let second_odd = (e2b < sys.lambda * sys.lambda).then(|| e2b.max(0.0).sqrt());
    let phi = s.phi();
    let phi_lambda = s.phi_lambda();
    let delta_prime = dot(g, &phi, &phi_lambda);
    Ok(DiscreteModes {
        epsilon: eps,
        xi,
        eta,
        phi,
        phi_lambda,
        grid: g,
        pairing,
        delta_prime,
        epsilon_sq_transposed: e2t,
        second_odd,
        chain_residual,
    })
}

impl DiscreteModes {
    /// Spectral condition on the odd sector: exactly one eigenvalue of `L₋L₊` below `λ²`.
    pub fn sa_ok(&self) -> bool {
        self.second_odd.is_none()
    }

    pub fn xi_field(&self) -> Field {
        Field { grid: self.grid, values: to_c(&self.xi) }
    }

    pub fn eta_field(&self) -> Field {
        Field { grid: self.grid, values: to_c(&self.eta) }
    }

    pub fn phi_field(&self) -> Field {
        Field { grid: self.grid, values: to_c(&self.phi) }
    }

    pub fn phi_lambda_field(&self) -> Field {
        Field { grid: self.grid, values: to_c(&self.phi_lambda) }
    }

    /// `(ξ, iη)`, the eigenvector of `L` at `−iε`.
    pub fn mode_vector(&self) -> PairField {
        PairField { u1: self.xi_field(), u2: Field { grid: self.grid, values: self.eta.iter().map(|&v| C64::new(0.0, v)).collect() } }
    }

    /// Copy with `(ξ, η)` rescaled by `c`.
    pub fn rescaled(&self, c: f64) -> DiscreteModes {
        let mut out = self.clone();
        out.xi.iter_mut().for_each(|t| *t *= c);
        out.eta.iter_mut().for_each(|t| *t *= c);
        out.pairing *= c * c;
        out
    }

    /// Copy with every profile zeroed except `φ`, `φ_λ` (synthetic degenerate input).
    pub fn with_zero_modes(&self) -> DiscreteModes {
        let mut out = self.clone();
        out.xi.iter_mut().for_each(|t| *t = 0.0);
        out.eta.iter_mut().for_each(|t| *t = 0.0);
        out.pairing = 0.0;
        out
    }

    /// Bilinear `∫ a b` against a real profile.
    fn pair(&self, a: &[C64], b: &[f64]) -> C64 {
        let prod: Vec<C64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        self.grid.integrate(&prod)
    }

    fn check_pairing(&self) -> Result<()> {
        if self.pairing.abs() < 1e-10 {
            return Err(FgrError::Degenerate(format!("<xi, eta> = {:e}", self.pairing)));
        }
        if self.delta_prime.abs() < 1e-10 {
            return Err(FgrError::Degenerate(format!("<phi, phi_lambda> = {:e}", self.delta_prime)));
        }
        Ok(())
    }

    /// Removes the components along `ξ, φ_λ` (first slot) and `η, φ` (second slot)
    /// using the biorthogonal dual pairing.
    pub fn project(&self, u: &PairField) -> Result<PairField> {
        self.check_pairing()?;
        let g = self.grid;
        let xe = self.pairing;
        let pe = dot(g, &self.phi_lambda, &self.eta);
        let xp = dot(g, &self.xi, &self.phi);
        let pp = self.delta_prime;
        // first slot: u1 - a xi - d phi_lambda with dual functions eta, phi
        let (r1, r2) = (self.pair(&u.u1.values, &self.eta), self.pair(&u.u1.values, &self.phi));
        let det1 = xe * pp - pe * xp;
        let a = (r1 * pp - r2 * pe) / det1;
        let d = (xe * r2 - xp * r1) / det1;
        // second slot: u2 - b eta - c phi with dual functions xi, phi_lambda
        let ex = xe;
        let fx = dot(g, &self.phi, &self.xi);
        let el = dot(g, &self.eta, &self.phi_lambda);
        let fl = pp;
        let (s1, s2) = (self.pair(&u.u2.values, &self.xi), self.pair(&u.u2.values, &self.phi_lambda));
        let det2 = ex * fl - fx * el;
        let b = (s1 * fl - s2 * fx) / det2;
        let c = (ex * s2 - el * s1) / det2;
        let u1: Vec<C64> = u.u1.values.iter().zip(self.xi.iter().zip(&self.phi_lambda)).map(|(v, (x, p))| v - a * x - d * p).collect();
        let u2: Vec<C64> = u.u2.values.iter().zip(self.eta.iter().zip(&self.phi)).map(|(v, (e, p))| v - b * e - c * p).collect();
        Ok(PairField { u1: Field { grid: g, values: u1 }, u2: Field { grid: g, values: u2 } })
    }

    /// The four discrete-mode coordinates `(α, δ, β, γ)` removed by `project`.
    pub fn components(&self, u: &PairField) -> Result<[C64; 4]> {
        let p = self.project(u)?;
        let d1: Vec<C64> = u.u1.values.iter().zip(&p.u1.values).map(|(a, b)| a - b).collect();
        let d2: Vec<C64> = u.u2.values.iter().zip(&p.u2.values).map(|(a, b)| a - b).collect();
        let xe = self.pairing;
        Ok([self.pair(&d1, &self.eta) / xe, self.pair(&d1, &self.phi), self.pair(&d2, &self.xi) / xe, self.pair(&d2, &self.phi_lambda)])
    }
}

pub fn project_continuous(modes: &DiscreteModes, u: &PairField) -> Result<PairField> {
    modes.project(u)
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonanceReport {
    pub shifts: Vec<f64>,
    /// Smallest singular value of `W⁻¹(L − iλ + η₀)W⁻¹`, `W = ⟨x⟩^{−ν}`, per shift.
    pub sigma_min: Vec<f64>,
    /// `sigma_min` at the smallest shift over that at the largest.
    pub ratio: f64,
    /// Fitted slope of `log sigma_min` against `log η₀`: about 0 generically, 1/2 at a threshold resonance.
    pub slope: f64,
    pub nu: f64,
}

impl ResonanceReport {
    pub fn resonant(&self) -> bool {
        self.ratio < 0.1
    }
}

/// Threshold resonance diagnostic at `+iλ`.
///
/// The weighted resolvent `⟨x⟩^{−ν}(L − iλ + η₀)^{−1}⟨x⟩^{−ν}` stays bounded as
/// `η₀ → 0` unless a resonance sits at the threshold, where it grows like `η₀^{−1/2}`.
/// Its norm is estimated by power iteration on a grid padded far enough that
/// the damped outgoing waves have decayed before reaching the boundary.
pub fn resonance_diagnostic(sys: &LinearizedSystem, nu: f64) -> Result<ResonanceReport> {
    let lam = sys.lambda;
    let shifts: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|s| s * lam).collect();
    let mut sigma = Vec::new();
    for &eta0 in &shifts {
        // decay rate of the slow branch is about sqrt(eta0 / 2)
        let decay = (eta0 / 2.0).sqrt();
        let pad_len = 20.0 / decay;
        let pad = (pad_len / sys.grid.spacing()).ceil() as usize;
        let big = sys.padded(pad);
        let g = big.grid;
        let n = g.len();
        let w: Vec<f64> = (0..n).map(|i| (1.0 + g.x(i).powi(2)).powf(-nu / 2.0)).collect();
        let a = big.block_band(C64::new(eta0, -lam), None);
        let ah = a.adjoint();
        let lu = a.factor()?;
        let luh = ah.factor()?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v: Vec<C64> = (0..2 * n).map(|i| C64::new(rng.gen_range(-1.0..1.0), 0.0) * w[i / 2]).collect();
        let mut est = 0.0;
        for _ in 0..400 {
            let vn = v.iter().map(|t| t.norm_sqr()).sum::<f64>().sqrt();
            v.iter_mut().for_each(|t| *t /= vn);
            // K = W A^{-1} W, K* K v
            let t1: Vec<C64> = v.iter().enumerate().map(|(i, t)| t * w[i / 2]).collect();
            let t2 = lu.solve(&t1);
            let t3: Vec<C64> = t2.iter().enumerate().map(|(i, t)| t * w[i / 2] * w[i / 2]).collect();
            let t4 = luh.solve(&t3);
            let t5: Vec<C64> = t4.iter().enumerate().map(|(i, t)| t * w[i / 2]).collect();
            let new_est = t5.iter().map(|t| t.norm_sqr()).sum::<f64>().sqrt();
            let done = (new_est - est).abs() <= 1e-10 * new_est;
            est = new_est;
            v = t5;
            if done {
                break;
            }
        }
        sigma.push(1.0 / est.sqrt());
    }
    let k = shifts.len() - 1;
    let ratio = sigma[k] / sigma[0];
    let slope = (sigma[k] / sigma[0]).ln() / (shifts[k] / shifts[0]).ln();
    Ok(ResonanceReport { shifts, sigma_min: sigma, ratio, slope, nu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{inner_pair, parity_defect};
    use crate::soliton::{solve_free, solve_trapped};

    fn to_r(a: &[C64]) -> Vec<f64> {
        a.iter().map(|v| v.re).collect()
    }

    fn default_point() -> (Soliton, LinearizedSystem, DiscreteModes) {
        let g = Grid::new(40.0, 4001).unwrap();
        let spec = PotentialSpec::new(1.0, 0.5).unwrap();
        let s = solve_trapped(2.0, &spec, g, Nonlinearity::Cubic).unwrap();
        let sys = assemble(&s, Some(&spec), Nonlinearity::Cubic, g).unwrap();
        let m = discrete_modes(&sys, &s).unwrap();
        (s, sys, m)
    }

    #[test]
    fn structural_identities_at_default_point() {
        let (s, sys, m) = default_point();
        let g = sys.grid;
        assert!(sys.asymmetry() <= 1e-13);
        assert!(sys.sigma_conjugation_defect(1) <= 1e-12);
        let phi = to_c(&s.phi());
        let lm = sys.apply_l_minus(&phi);
        assert!(nrm(g, &to_r(&lm)) <= 1e-10 * nrm(g, &s.phi()));
        let lpl = sys.apply_l_plus(&to_c(&s.phi_lambda()));
        let res: Vec<f64> = lpl.iter().zip(s.phi()).map(|(a, p)| a.re + p).collect();
        assert!(nrm(g, &res) <= 1e-10 * nrm(g, &s.phi()));
        assert!(m.chain_residual <= 1e-9, "chain {}", m.chain_residual);
        let lp_xi = sys.apply_l_plus(&to_c(&m.xi));
        let r2: Vec<f64> = lp_xi.iter().zip(&m.eta).map(|(a, e)| a.re - m.epsilon * e).collect();
        assert!(nrm(g, &r2) <= 1e-9 * nrm(g, &m.eta) * m.epsilon);
        assert!(((m.epsilon_sq_transposed - m.epsilon.powi(2)) / m.epsilon.powi(2)).abs() <= 1e-10);
        assert!(m.pairing > 0.0);
        assert!(m.sa_ok());
        assert!((m.epsilon - 0.83708).abs() < 2e-5, "eps {}", m.epsilon);
        assert!((m.pairing - 1.16821).abs() < 2e-4, "pairing {}", m.pairing);
        assert!(parity_defect(&m.xi_field(), false) <= 1e-13);
        assert!((sys.far_field_symbol() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn projector_properties() {
        let (_, sys, m) = default_point();
        let g = sys.grid;
        let p = m.project(&m.mode_vector()).unwrap();
        assert!(p.max_abs() <= 1e-9 * m.mode_vector().max_abs());
        let zero_modes = PairField { u1: m.phi_lambda_field(), u2: m.phi_field().scale(C64::new(0.0, 1.0)) };
        assert!(m.project(&zero_modes).unwrap().max_abs() <= 1e-9 * zero_modes.max_abs());
        let u = PairField {
            u1: Field::from_fn(g, |x| C64::new((-(x - 1.0).powi(2)).exp(), 0.3 * x * (-x * x).exp())),
            u2: Field::from_fn(g, |x| C64::new((x * 0.5).sin() * (-x * x / 4.0).exp(), 1.0 / (1.0 + x * x))),
        };
        let p1 = m.project(&u).unwrap();
        let p2 = m.project(&p1).unwrap();
        assert!((&p2 - &p1).norm() <= 1e-11 * p1.norm());
        // commutes with L: P L P u = L P u
        let lp = sys.apply(&p1);
        let plp = m.project(&lp).unwrap();
        assert!((&plp - &lp).norm() <= 1e-8 * lp.norm(), "{}", (&plp - &lp).norm() / lp.norm());
        // far-field bump is left alone
        let bump = PairField {
            u1: Field::from_fn(g, |x| C64::new((-(x - 30.0).powi(2)).exp(), 0.0)),
            u2: Field::from_fn(g, |x| C64::new(0.0, (-(x + 30.0).powi(2)).exp())),
        };
        let pb = m.project(&bump).unwrap();
        assert!((&pb - &bump).norm() <= 1e-6 * bump.norm());
        // sigma1 L is self-adjoint: <sigma1 L u, v> = <u, sigma1 L v>
        let v = p2.conj();
        let lhs = inner_pair(&sys.apply(&u).sigma1(), &v).unwrap();
        let rhs = inner_pair(&u, &sys.apply(&v).sigma1()).unwrap();
        assert!((lhs - rhs).norm() <= 1e-11 * lhs.norm().max(1.0), "{lhs} {rhs}");
    }

    #[test]
    fn degenerate_pairing_is_rejected() {
        let (_, sys, m) = default_point();
        let z = m.with_zero_modes();
        assert!(matches!(z.project(&PairField::zeros(sys.grid)), Err(FgrError::Degenerate(_))));
    }

    #[test]
    fn free_soliton_has_threshold_resonance_trapped_does_not() {
        let g = Grid::new(20.0, 1001).unwrap();
        let free = solve_free(1.0, g, Nonlinearity::Cubic).unwrap();
        let sys = LinearizedSystem::for_soliton(&free);
        let r = resonance_diagnostic(&sys, 2.0).unwrap();
        assert!(r.resonant(), "free ratio {} slope {}", r.ratio, r.slope);
        assert!(r.sigma_min.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.sigma_min);
        let spec = PotentialSpec::new(1.0, 0.5).unwrap();
        let s = solve_trapped(2.0, &spec, g, Nonlinearity::Cubic).unwrap();
        let sys = LinearizedSystem::for_soliton(&s);
        let r = resonance_diagnostic(&sys, 2.0).unwrap();
        assert!(r.ratio >= 0.5, "trapped ratio {} slope {}", r.ratio, r.slope);
        assert!(r.slope.abs() < 0.1, "trapped slope {}", r.slope);
    }
}
