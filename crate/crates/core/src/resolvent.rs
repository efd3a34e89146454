//! `(L + ikε ± 0)⁻¹ P_c`, in the spectral gap and embedded in the continuum.
//!
//! The `+0` of an embedded shift is taken as the outgoing (causal) limit:
//! since the driving term oscillates like `e^{-ikεt}`, the physical solution
//! is `lim (L + ikε − sign(k)η)⁻¹` as `η → 0⁺`. Two independent evaluations
//! are made: a real-shift ladder extrapolated to `η = 0` (method A) and a
//! single solve with a complex absorbing potential in a padding layer (method B).

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FgrError, Result};
use crate::lattice::{inner_pair, parity_defect, parity_split, Field, Grid, PairField};
use crate::linearization::{DiscreteModes, LinearizedSystem};
use crate::model::EDGE_TOLERANCE;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    BelowThreshold,
    Embedded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapProfile {
    /// Width of the quartic ramp beyond the main grid.
    pub width: f64,
    pub strength: f64,
}

impl Default for CapProfile {
    fn default() -> Self {
        CapProfile { width: 200.0, strength: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventQuery {
    pub k: i32,
    pub eta_schedule: Vec<f64>,
    /// Padding length per side in units of the damped-wave decay length `2k₀/η`.
    pub pad_factor: f64,
    pub cap: CapProfile,
}

impl ResolventQuery {
    /// `η ∈ {ε/8, ε/16, ε/32, ε/64}`.
    pub fn new(k: i32, epsilon: f64) -> Self {
        ResolventQuery {
            k,
            eta_schedule: (0..4).map(|j| epsilon / 8.0 / 2f64.powi(j)).collect(),
            pad_factor: 12.0,
            cap: CapProfile::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta_schedule.len() < 3 {
            return Err(FgrError::Precondition("eta schedule needs at least three shifts".into()));
        }
        if self.eta_schedule.iter().any(|&e| !(e > 0.0)) || self.eta_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FgrError::Precondition(format!(
                "eta schedule must be positive and strictly decreasing: {:?}",
                self.eta_schedule
            )));
        }
        Ok(())
    }
}

pub fn regime(lambda: f64, epsilon: f64, k: i32) -> Regime {
    if (k.unsigned_abs() as f64) * epsilon < lambda {
        Regime::BelowThreshold
    } else {
        Regime::Embedded
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolventAnswer {
    pub k: i32,
    #[serde(skip)]
    pub value: PairField,
    /// Probe `Im⟨σ₁x, rhs⟩` of the extrapolated field.
    pub probe: f64,
    /// Difference between the two highest extrapolation orders, for the probe.
    pub extrapolation_error: f64,
    /// Same difference for the field, max norm relative to the field's max.
    pub field_extrapolation_error: f64,
    /// Probe from the absorbing-potential solve.
    pub probe_cap: f64,
    /// `|probe − probe_cap|`.
    pub method_agreement: f64,
    pub etas: Vec<f64>,
    pub eta_trace: Vec<f64>,
    /// Methods disagree beyond 100 × the extrapolation error.
    pub flagged: bool,
}

fn block_solve(sys: &LinearizedSystem, shift: C64, extra: Option<&[C64]>, rhs: &PairField) -> Result<PairField> {
    let a = sys.block_band(shift, extra);
    let lu = a.factor()?;
    let sector = definite_parity(rhs);
    let rhs = sector.map_or_else(|| rhs.clone(), |even| parity_part(rhs, even));
    let x = PairField::deinterleave(sys.grid, &lu.solve(&rhs.interleave()));
    Ok(sector.map_or(x.clone(), |even| parity_part(&x, even)))
}

/// The operators commute with `x -> -x`. A source whose wrong-parity part is at the
/// rounding level is solved in its sector so that elimination noise does not seed
/// the other one.
fn definite_parity(src: &PairField) -> Option<bool> {
    if src.max_abs() == 0.0 {
        return None;
    }
    [true, false].into_iter().find(|&even| parity_defect(&src.u1, even) <= 1e-8 && parity_defect(&src.u2, even) <= 1e-8)
}

fn parity_part(u: &PairField, even: bool) -> PairField {
    let part = |f: &Field| {
        let (e, o) = parity_split(f);
        if even { e } else { o }
    };
    PairField { u1: part(&u.u1), u2: part(&u.u2) }
}

/// `(L + ikε)⁻¹ P_c rhs`, re-projected. Only for `|k|ε` inside the gap.
pub fn solve_regular(sys: &LinearizedSystem, modes: &DiscreteModes, k: i32, rhs: &PairField) -> Result<PairField> {
    let kk = k as f64 * modes.epsilon;
    if kk.abs() > sys.lambda * (1.0 - EDGE_TOLERANCE) {
        return Err(FgrError::Precondition(format!(
            "|k eps| = {} is not below the threshold {} by the edge tolerance; use the embedded solver",
            kk.abs(),
            sys.lambda
        )));
    }
    let u = modes.project(rhs)?;
    if u.max_abs() == 0.0 {
        return Ok(u);
    }
    let x = block_solve(sys, C64::new(0.0, kk), None, &u)?;
    modes.project(&x)
}

/// `Im⟨σ₁x, w⟩`.
pub fn probe(x: &PairField, w: &PairField) -> f64 {
    inner_pair(&x.sigma1(), w).map(|v| v.im).unwrap_or(f64::NAN)
}

/// Neville evaluation at 0 of the polynomial through `(xs, ys)`.
pub fn neville_at_zero<T>(xs: &[f64], ys: &[T]) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let mut p: Vec<T> = ys.to_vec();
    let n = xs.len();
    for m in 1..n {
        for i in 0..n - m {
            let d = xs[i] - xs[i + m];
            p[i] = p[i] * (-xs[i + m] / d) + p[i + 1] * (xs[i] / d);
        }
    }
    p[0]
}

/// One damped solve on a padded grid: `(L + ikε + diag) x = u`, restricted to the main grid.
fn padded_solve(sys: &LinearizedSystem, k: i32, epsilon: f64, pad: usize, damp: &dyn Fn(f64) -> C64, u: &PairField) -> Result<PairField> {
    let big = sys.padded(pad);
    let g = big.grid;
    let extra: Vec<C64> = (0..g.len()).map(|i| damp(g.x(i))).collect();
    let ub = u.embed(g)?;
    let x = block_solve(&big, C64::new(0.0, k as f64 * epsilon), Some(&extra), &ub)?;
    x.restrict(sys.grid)
}


fn outgoing_wavenumber(sys: &LinearizedSystem, k: i32, epsilon: f64) -> f64 {
    ((k.unsigned_abs() as f64) * epsilon - sys.lambda).max(1e-3 * sys.lambda).sqrt()
}

/// Method A: real-shift ladder. Returns per-η fields.
fn shift_ladder(sys: &LinearizedSystem, modes: &DiscreteModes, q: &ResolventQuery, u: &PairField) -> Result<Vec<PairField>> {
    let k0 = outgoing_wavenumber(sys, q.k, modes.epsilon);
    let sign = -(q.k.signum() as f64);
    let dx = sys.grid.spacing();
    q.eta_schedule
        .par_iter()
        .map(|&eta| {
            let pad = (q.pad_factor * 2.0 * k0 / eta / dx).ceil() as usize;
            padded_solve(sys, q.k, modes.epsilon, pad, &|_| C64::new(sign * eta, 0.0), u)
        })
        .collect()
}

/// Method B: quartic absorbing ramp in a padding layer of width `cap.width`.
fn cap_solve(sys: &LinearizedSystem, modes: &DiscreteModes, q: &ResolventQuery, u: &PairField) -> Result<PairField> {
    let sign = -(q.k.signum() as f64);
    let l = sys.grid.half_width();
    let pad = (q.cap.width / sys.grid.spacing()).ceil() as usize;
    let (w, s) = (q.cap.width, q.cap.strength);
    padded_solve(sys, q.k, modes.epsilon, pad, &move |x: f64| {
        let r = ((x.abs() - l) / w).max(0.0);
        C64::new(sign * s * r.powi(4), 0.0)
    }, u)
}

fn extrapolate_fields(etas: &[f64], fields: &[PairField]) -> PairField {
    let g = fields[0].grid();
    let vs: Vec<Vec<C64>> = fields.iter().map(|f| f.interleave()).collect();
    let n = vs[0].len();
    let out: Vec<C64> = (0..n)
        .map(|i| {
            let ys: Vec<C64> = vs.iter().map(|v| v[i]).collect();
            neville_at_zero(etas, &ys)
        })
        .collect();
    PairField::deinterleave(g, &out)
}

/// Limiting-absorption solve for `|k|ε > λ`.
pub fn solve_embedded(sys: &LinearizedSystem, modes: &DiscreteModes, rhs: &PairField, q: &ResolventQuery) -> Result<ResolventAnswer> {
    q.validate()?;
    if regime(sys.lambda, modes.epsilon, q.k) != Regime::Embedded {
        return Err(FgrError::Precondition(format!("k = {} is below threshold; use the regular solver", q.k)));
    }
    let kk = (q.k.unsigned_abs() as f64) * modes.epsilon;
    if (kk - sys.lambda).abs() < EDGE_TOLERANCE * sys.lambda {
        return Err(FgrError::Window(format!("|k eps| = {kk} sits on the threshold {}", sys.lambda)));
    }
    let u = modes.project(rhs)?;
    if u.max_abs() == 0.0 {
        return Ok(ResolventAnswer {
            k: q.k,
            value: PairField::zeros(sys.grid),
            probe: 0.0,
            extrapolation_error: 0.0,
            field_extrapolation_error: 0.0,
            probe_cap: 0.0,
            method_agreement: 0.0,
            etas: q.eta_schedule.clone(),
            eta_trace: vec![0.0; q.eta_schedule.len()],
            flagged: false,
        });
    }
    let (ladder, cap) = rayon::join(|| shift_ladder(sys, modes, q, &u), || cap_solve(sys, modes, q, &u));
    let ladder = ladder?;
    let cap = cap?;
    let trace: Vec<f64> = ladder.iter().map(|x| probe(x, rhs)).collect();
    let diffs: Vec<f64> = trace.windows(2).map(|w| w[1] - w[0]).collect();
    let monotone = diffs.iter().all(|d| *d >= 0.0) || diffs.iter().all(|d| *d <= 0.0);
    if !monotone || trace.iter().any(|t| !t.is_finite()) {
        return Err(FgrError::Extrapolation { reason: "probe trace is not monotone in eta".into(), trace });
    }
    let m = q.eta_schedule.len();
    let full = neville_at_zero(&q.eta_schedule, &trace);
    let lower = neville_at_zero(&q.eta_schedule[..m - 1], &trace[..m - 1]);
    let extrapolation_error = (full - lower).abs();
    let value = extrapolate_fields(&q.eta_schedule, &ladder);
    let value_lower = extrapolate_fields(&q.eta_schedule[..m - 1], &ladder[..m - 1]);
    let field_extrapolation_error = (&value - &value_lower).max_abs() / value.max_abs();
    let probe_value = probe(&value, rhs);
    let probe_cap = probe(&cap, rhs);
    let method_agreement = (probe_value - probe_cap).abs();
    let flagged = method_agreement > 100.0 * extrapolation_error.max(1e-14 * probe_value.abs());
    Ok(ResolventAnswer {
        k: q.k,
        value,
        probe: probe_value,
        extrapolation_error,
        field_extrapolation_error,
        probe_cap,
        method_agreement,
        etas: q.eta_schedule.clone(),
        eta_trace: trace,
        flagged,
    })
}

/// Dispatches on the regime; the regular branch reports zero errors.
pub fn solve_any(sys: &LinearizedSystem, modes: &DiscreteModes, k: i32, rhs: &PairField) -> Result<ResolventAnswer> {
    match regime(sys.lambda, modes.epsilon, k) {
        Regime::BelowThreshold => {
            let x = solve_regular(sys, modes, k, rhs)?;
            let p = probe(&x, rhs);
            Ok(ResolventAnswer {
                k,
                value: x,
                probe: p,
                extrapolation_error: 0.0,
                field_extrapolation_error: 0.0,
                probe_cap: p,
                method_agreement: 0.0,
                etas: vec![],
                eta_trace: vec![],
                flagged: false,
            })
        }
        Regime::Embedded => solve_embedded(sys, modes, rhs, &ResolventQuery::new(k, modes.epsilon)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlipReport {
    /// `Im⟨σ₁(L + ikε + 0)⁻¹P_c N, N⟩` with the outgoing `+0`.
    pub forward: f64,
    /// `Im⟨σ₁(L − ikε − 0)⁻¹P_c N, N⟩`, the other sign of both `k` and the `0`.
    pub flipped: f64,
    /// `Im⟨σ₁(L − ikε − 0)⁻¹P_c N̄, N̄⟩`.
    pub flipped_conjugate: f64,
    /// `|forward − flipped| / |forward|`.
    pub discrepancy: f64,
    /// `|forward − flipped_conjugate| / |forward|`.
    pub conjugate_discrepancy: f64,
    /// Relative extrapolation error of `forward`.
    pub extrapolation_error: f64,
}

/// Compares the probe for `(k, N)` with the two sign-flipped readings.
pub fn conjugate_flip_check(sys: &LinearizedSystem, modes: &DiscreteModes, k: i32, rhs: &PairField) -> Result<FlipReport> {
    let fwd = solve_any(sys, modes, k, rhs)?;
    if fwd.probe == 0.0 && rhs.max_abs() == 0.0 {
        return Ok(FlipReport { forward: 0.0, flipped: 0.0, flipped_conjugate: 0.0, discrepancy: 0.0, conjugate_discrepancy: 0.0, extrapolation_error: 0.0 });
    }
    if regime(sys.lambda, modes.epsilon, k) == Regime::BelowThreshold {
        // no +0 in the gap: both orientations are the same regular solve
        return Ok(FlipReport {
            forward: fwd.probe,
            flipped: fwd.probe,
            flipped_conjugate: fwd.probe,
            discrepancy: 0.0,
            conjugate_discrepancy: 0.0,
            extrapolation_error: 0.0,
        });
    }
    let back = solve_any(sys, modes, -k, rhs)?;
    let conj_rhs = rhs.conj();
    let back_conj = solve_any(sys, modes, -k, &conj_rhs)?;
    let scale = fwd.probe.abs().max(f64::MIN_POSITIVE);
    Ok(FlipReport {
        forward: fwd.probe,
        flipped: back.probe,
        flipped_conjugate: back_conj.probe,
        discrepancy: (fwd.probe - back.probe).abs() / scale,
        conjugate_discrepancy: (fwd.probe - back_conj.probe).abs() / scale,
        extrapolation_error: (fwd.extrapolation_error + back.extrapolation_error) / scale,
    })
}

/// Field with the given samples on the main grid, zero elsewhere.
pub fn zero_pair(grid: Grid) -> PairField {
    PairField { u1: Field::zeros(grid), u2: Field { grid, values: vec![ZERO; grid.len()] } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearization::{admissibility_defect, assemble, discrete_modes};
    use crate::model::{Nonlinearity, PotentialSpec};
    use crate::soliton::solve_trapped;

    fn setup(l: f64, n: usize) -> (LinearizedSystem, DiscreteModes) {
        let g = Grid::new(l, n).unwrap();
        let spec = PotentialSpec::new(1.0, 0.5).unwrap();
        let s = solve_trapped(2.0, &spec, g, Nonlinearity::Cubic).unwrap();
        let sys = assemble(&s, Some(&spec), Nonlinearity::Cubic, g).unwrap();
        let m = discrete_modes(&sys, &s).unwrap();
        (sys, m)
    }

    #[test]
    fn neville_reproduces_polynomials() {
        let xs = [0.4, 0.2, 0.1, 0.05];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x + 0.5 * x * x * x).collect();
        assert!((neville_at_zero(&xs, &ys) - 3.0).abs() < 1e-13);
    }

    #[test]
    fn regular_solve_is_admissible_and_inverts() {
        let (sys, m) = setup(20.0, 2001);
        let g = sys.grid;
        let phi = m.phi_field();
        let xi = m.xi_field();
        let eta = m.eta_field();
        let n = PairField { u1: (&phi * &xi) * &xi, u2: ((&phi * &eta) * &xi).scale(C64::new(0.0, 1.0)) };
        let rhs = n.scale(C64::new(0.0, 1.0));
        let x = solve_regular(&sys, &m, 2, &rhs).unwrap();
        let lx = &sys.apply(&x) + &x.scale(C64::new(0.0, 2.0 * m.epsilon));
        let back = m.project(&lx).unwrap();
        let target = m.project(&rhs).unwrap();
        assert!((&back - &target).norm() <= 1e-10 * target.norm());
        // L + i mu maps admissible fields to i * admissible ones, so x is admissible
        assert!(admissibility_defect(&x) <= 1e-9, "{}", admissibility_defect(&x));
        assert_eq!(solve_regular(&sys, &m, 2, &zero_pair(g)).unwrap().max_abs(), 0.0);
        assert!(solve_regular(&sys, &m, 3, &rhs).is_err());
    }

    #[test]
    fn embedded_probe_is_nonpositive_and_methods_agree() {
        let (sys, m) = setup(20.0, 2001);
        let phi = m.phi_field();
        let xi = m.xi_field();
        let eta = m.eta_field();
        let rhs = PairField { u1: (&phi * &xi) * &xi, u2: ((&phi * &eta) * &eta).scale(C64::new(0.0, 1.0)) };
        let q = ResolventQuery::new(3, m.epsilon);
        let a = solve_embedded(&sys, &m, &rhs, &q).unwrap();
        assert!(a.probe <= a.extrapolation_error, "probe {}", a.probe);
        assert!(a.method_agreement <= 10.0 * a.extrapolation_error + 1e-7 * a.probe.abs(), "{a:?}");
        let z = solve_embedded(&sys, &m, &zero_pair(sys.grid), &q).unwrap();
        assert_eq!(z.probe, 0.0);
        assert_eq!(z.extrapolation_error, 0.0);
        let mut bad = q.clone();
        bad.eta_schedule = vec![0.1, 0.2, 0.05];
        assert!(solve_embedded(&sys, &m, &rhs, &bad).is_err());
    }

    #[test]
    fn flip_check_below_threshold_is_exact() {
        let (sys, m) = setup(20.0, 2001);
        let rhs = PairField { u1: &m.phi_field() * &m.xi_field(), u2: Field::zeros(sys.grid) };
        let f = conjugate_flip_check(&sys, &m, 1, &rhs).unwrap();
        assert_eq!(f.discrepancy, 0.0);
        let z = conjugate_flip_check(&sys, &m, 3, &zero_pair(sys.grid)).unwrap();
        assert_eq!(z.discrepancy, 0.0);
    }

    proptest::proptest! {
        #[test]
        fn neville_reproduces_random_polynomials(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, c2 in -5.0f64..5.0, c3 in -5.0f64..5.0, h in 0.01f64..0.5) {
            let xs: Vec<f64> = (0..4).map(|j| h / 2f64.powi(j)).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| c0 + c1 * x + c2 * x * x + c3 * x * x * x).collect();
            let v = neville_at_zero(&xs, &ys);
            proptest::prop_assert!((v - c0).abs() <= 1e-9 * (1.0 + c0.abs() + c1.abs() + c2.abs() + c3.abs()));
        }
    }
}
