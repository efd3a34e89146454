//! `Re Z_{N+1,N}` for N = 2 and N = 3, by the resolvent quadratic form (route A)
//! and by summing the chain terms (route B).

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{build_n2, build_n3, AuxBundleN2, AuxBundleN3, CoefficientTable, Junk, SourceConvention};
use crate::error::{FgrError, Result, ResultExt};
use crate::lattice::{Grid, PairField};
use crate::linearization::{assemble, discrete_modes, DiscreteModes, LinearizedSystem};
use crate::model::{select_window, Nonlinearity, PotentialSpec, WindowReport};
use crate::resolvent::{conjugate_flip_check, solve_any, FlipReport};
use crate::soliton::solve_trapped;

#[derive(Debug, Clone, Serialize)]
pub struct FgrReport {
    #[serde(rename = "N")]
    pub n: u8,
    pub lambda: f64,
    pub h: f64,
    pub epsilon: f64,
    pub pairing: f64,
    pub route_a: C64,
    pub route_b: C64,
    /// `Re route_A ≤ error_bar`.
    pub sign_ok: bool,
    /// Extrapolation error of the quadratic form plus the route discrepancy.
    pub error_bar: f64,
    pub relative_route_gap: f64,
    /// Probe error of the η-ladder and its gap to the absorbing-potential solve, in units of `Re Z`.
    pub extrapolation_error: f64,
    pub method_agreement: f64,
    pub methods_flagged: bool,
    pub flip: Option<FlipReport>,
    /// Named identity defects (N = 3 only).
    pub identities: Vec<(String, f64)>,
    pub window: WindowReport,
    pub scan_id: Option<String>,
    pub flagged: bool,
}

impl FgrReport {
    pub fn re_z(&self) -> f64 {
        self.route_b.re
    }
}

/// Largest accepted relative gap between forward and flipped probes, in units of the
/// extrapolation error.
pub const FLIP_FACTOR: f64 = 10.0;

fn require_window(modes: &DiscreteModes, lambda: f64, n: usize) -> Result<WindowReport> {
    let w = select_window(lambda, modes.epsilon)?;
    if w.n != n || !w.is_valid() {
        return Err(FgrError::Window(format!(
            "lambda = {lambda}, eps = {:.6} gives window N = {}{}; this evaluation needs N = {n}",
            modes.epsilon,
            w.n,
            if w.edge { " at a threshold" } else { "" }
        )));
    }
    Ok(w)
}

fn flip_flag(flip: &Option<FlipReport>) -> bool {
    flip.as_ref().is_some_and(|f| f.discrepancy > FLIP_FACTOR * f.extrapolation_error.max(1e-12))
}

/// Route A: `(6/⟨ξ,η⟩) Im⟨σ₁(L + 3iε + 0)⁻¹P_c N₃₀, N₃₀⟩`; route B: `Σ Re D_n / ⟨ξ,η⟩`.
pub fn fgr_n2(sys: &LinearizedSystem, modes: &DiscreteModes, table: &CoefficientTable, bundle: &AuxBundleN2, with_flip: bool) -> Result<FgrReport> {
    let window = require_window(modes, sys.lambda, 2)?;
    let xe = modes.pairing;
    let ans = &bundle.r30_answer;
    let route_a = C64::new(6.0 / xe * ans.probe, 0.0);
    let route_b = C64::new(bundle.x32.re / xe, 0.0);
    let flip = if with_flip {
        let n30 = table.nvec.get(&(3, 0)).ok_or_else(|| FgrError::Precondition("N_30 missing from the table".into()))?;
        Some(conjugate_flip_check(sys, modes, 3, n30).context("flip check at k = 3")?)
    } else {
        None
    };
    Ok(assemble_report(2, sys, modes, window, route_a, route_b, 6.0 / xe, ans.extrapolation_error, ans.method_agreement, ans.flagged, flip, vec![]))
}

/// Route A: `(8/⟨ξ,η⟩) Im⟨σ₁(L + 4iε + 0)⁻¹P_c N₄₀, N₄₀⟩`; route B: `−Re(E₁+E₂+E₃)/⟨ξ,η⟩`.
pub fn fgr_n3(sys: &LinearizedSystem, modes: &DiscreteModes, table: &CoefficientTable, bundle: &AuxBundleN3, with_flip: bool) -> Result<FgrReport> {
    let window = require_window(modes, sys.lambda, 3)?;
    let defects = bundle.identities.defects();
    let bad: Vec<String> = defects.iter().filter(|d| d.1 > 1e-6).map(|(n, d)| format!("{n}: relative defect {d:.3e}")).collect();
    if !bad.is_empty() {
        return Err(FgrError::Transcription(format!(
            "order-4 identities violated: {}; values {:?}",
            bad.join("; "),
            bundle.identities
        )));
    }
    let xe = modes.pairing;
    let ans = &bundle.r40_answer;
    let route_a = C64::new(8.0 / xe * ans.probe, 0.0);
    let route_b = C64::new(-(bundle.e[0] + bundle.e[1] + bundle.e[2]).re / xe, 0.0);
    let flip = if with_flip {
        let n40 = table.nvec.get(&(4, 0)).ok_or_else(|| FgrError::Precondition("N_40 missing from the table".into()))?;
        Some(conjugate_flip_check(sys, modes, 4, n40).context("flip check at k = 4")?)
    } else {
        None
    };
    let ids = defects.into_iter().map(|(n, d)| (n.to_string(), d)).collect();
    Ok(assemble_report(3, sys, modes, window, route_a, route_b, 8.0 / xe, ans.extrapolation_error, ans.method_agreement, ans.flagged, flip, ids))
}

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    n: u8,
    sys: &LinearizedSystem,
    modes: &DiscreteModes,
    window: WindowReport,
    route_a: C64,
    route_b: C64,
    factor: f64,
    probe_err: f64,
    agreement: f64,
    methods_flagged: bool,
    flip: Option<FlipReport>,
    identities: Vec<(String, f64)>,
) -> FgrReport {
    let gap = (route_a - route_b).norm();
    let error_bar = factor.abs() * probe_err + gap;
    let flagged = methods_flagged || flip_flag(&flip);
    FgrReport {
        n,
        lambda: sys.lambda,
        h: sys.h,
        epsilon: modes.epsilon,
        pairing: modes.pairing,
        route_a,
        route_b,
        sign_ok: route_a.re <= error_bar,
        error_bar,
        relative_route_gap: if route_b.norm() > 0.0 { gap / route_b.norm() } else { gap },
        extrapolation_error: factor.abs() * probe_err,
        method_agreement: factor.abs() * agreement,
        methods_flagged,
        flip,
        identities,
        window,
        scan_id: None,
        flagged,
    }
}

/// Route A alone for an arbitrary source: `(c/⟨ξ,η⟩) Im⟨σ₁(L + ikε + 0)⁻¹P_c N, N⟩`.
pub fn quadratic_form(sys: &LinearizedSystem, modes: &DiscreteModes, k: i32, source: &PairField) -> Result<f64> {
    let ans = solve_any(sys, modes, k, source)?;
    Ok(2.0 * k as f64 / modes.pairing * ans.probe)
}

/// Everything needed to evaluate one parameter point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PointSpec {
    pub lambda: f64,
    pub depth: f64,
    pub h: f64,
    pub half_width: f64,
    pub n_points: usize,
    pub convention: SourceConvention,
}

pub struct PointSetup {
    pub sys: LinearizedSystem,
    pub modes: DiscreteModes,
}

pub fn setup_point(p: &PointSpec) -> Result<PointSetup> {
    let grid = Grid::new(p.half_width, p.n_points)?;
    let spec = PotentialSpec::new(p.depth, p.h)?;
    let f = Nonlinearity::Cubic;
    let s = solve_trapped(p.lambda, &spec, grid, f).context("ground state")?;
    let sys = assemble(&s, Some(&spec), f, grid)?;
    let modes = discrete_modes(&sys, &s).context("internal mode")?;
    Ok(PointSetup { sys, modes })
}

/// Full evaluation at one point for whichever of N = 2, 3 the window selects.
pub fn evaluate_point(p: &PointSpec, with_flip: bool) -> Result<(FgrReport, CoefficientTable)> {
    let PointSetup { sys, modes } = setup_point(p)?;
    if !modes.sa_ok() {
        return Err(FgrError::SpectralA(format!("a second odd eigenvalue below the threshold at h = {}", p.h)));
    }
    let w = select_window(p.lambda, modes.epsilon)?;
    match w.n {
        2 => {
            let (t, b) = build_n2(&sys, &modes, p.convention, &mut Junk::none(), None)?;
            Ok((fgr_n2(&sys, &modes, &t, &b, with_flip)?, t))
        }
        3 => {
            let (t, b) = build_n3(&sys, &modes, p.convention, &mut Junk::none(), None)?;
            Ok((fgr_n3(&sys, &modes, &t, &b, with_flip)?, t))
        }
        n => Err(FgrError::Window(format!("window N = {n} is outside the evaluated cases N = 2, 3"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub h: f64,
    pub window_n: Option<usize>,
    pub report: Option<FgrReport>,
    pub excluded: Option<String>,
}

/// Evaluates every `(λ, h)` pair; failures are recorded per point.
pub fn scan(lambdas: &[f64], hs: &[f64], depth: f64, half_width: f64, n_points: usize, convention: SourceConvention) -> Vec<ScanPoint> {
    let pts: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| hs.iter().map(move |&h| (l, h))).collect();
    pts.par_iter()
        .enumerate()
        .map(|(i, &(lambda, h))| {
            let p = PointSpec { lambda, depth, h, half_width, n_points, convention };
            let window_n = setup_point(&p).ok().and_then(|s| select_window(lambda, s.modes.epsilon).ok()).map(|w| w.n);
            match evaluate_point(&p, false) {
                Ok((mut r, _)) => {
                    r.scan_id = Some(format!("scan-{i:04}"));
                    ScanPoint { lambda, h, window_n, report: Some(r), excluded: None }
                }
                Err(e) => ScanPoint { lambda, h, window_n, report: None, excluded: Some(e.to_string()) },
            }
        })
        .collect()
}

pub fn scan_csv(points: &[ScanPoint]) -> String {
    let mut s = String::from("lambda,h,N,epsilon,re_z_route_a,re_z_route_b,error_bar,sign_ok,flagged,excluded\n");
    for p in points {
        let n = p.window_n.map(|n| n.to_string()).unwrap_or_default();
        match &p.report {
            Some(r) => s.push_str(&format!(
                "{},{},{},{:.12e},{:.12e},{:.12e},{:.3e},{},{},\n",
                p.lambda, p.h, n, r.epsilon, r.route_a.re, r.route_b.re, r.error_bar, r.sign_ok, r.flagged
            )),
            None => s.push_str(&format!("{},{},{},,,,,,,\"{}\"\n", p.lambda, p.h, n, p.excluded.clone().unwrap_or_default().replace('"', "'"))),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_n2() -> PointSpec {
        PointSpec { lambda: 2.0, depth: 1.0, h: 0.5, half_width: 20.0, n_points: 2001, convention: SourceConvention::Physical }
    }

    #[test]
    fn n2_report_is_negative_and_routes_agree() {
        let (r, _) = evaluate_point(&default_n2(), false).unwrap();
        assert_eq!(r.n, 2);
        assert!(r.relative_route_gap <= 1e-6, "{r:?}");
        assert!(r.sign_ok && r.route_b.re < -r.error_bar, "{r:?}");
        assert!((r.route_b.re + 0.0321062).abs() < 1e-5);
    }

    #[test]
    fn zero_source_gives_zero_form() {
        let s = setup_point(&default_n2()).unwrap();
        let z = PairField::zeros(s.sys.grid);
        assert_eq!(quadratic_form(&s.sys, &s.modes, 3, &z).unwrap(), 0.0);
        assert_eq!(quadratic_form(&s.sys, &s.modes, 4, &z).unwrap(), 0.0);
    }

    #[test]
    fn wrong_window_is_rejected() {
        let s = setup_point(&default_n2()).unwrap();
        assert!(matches!(require_window(&s.modes, 2.0, 3), Err(FgrError::Window(_))));
        assert!(require_window(&s.modes, 2.0, 2).is_ok());
    }

    #[test]
    fn empty_scan() {
        assert!(scan(&[], &[0.5], 1.0, 20.0, 2001, SourceConvention::Physical).is_empty());
        assert!(scan(&[2.0], &[], 1.0, 20.0, 2001, SourceConvention::Physical).is_empty());
    }
}
