use std::fmt::Write as _;

use fgrlab::coefficients::{build_n2, build_n3, Junk};
use fgrlab::error::FgrError;
use fgrlab::fgr::{fgr_n2, fgr_n3, scan, scan_csv, setup_point, FgrReport, PointSetup};
use fgrlab::lattice::{Grid, PairField};
use fgrlab::linearization::{assemble, discrete_modes, resonance_diagnostic};
use fgrlab::model::{select_window, Nonlinearity, PotentialSpec};
use fgrlab::resolvent::{regime, solve_any};
use fgrlab::soliton::{solve_free, solve_trapped};
use fgrlab::verify::{run_suite, QUICK};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::manifest::Bundle;
use crate::{CliError, Cmd, Common, PointArgs};

fn load(common: &Common, point: Option<&PointArgs>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(p) = point {
        if let Some(l) = p.lambda {
            cfg.lambda = l;
        }
        if let Some(h) = p.h {
            cfg.potential.h = h;
        }
    }
    Ok(cfg.resolve())
}

pub fn run(cmd: Cmd, args: &[String]) -> Result<(), CliError> {
    match cmd {
        Cmd::Soliton { point, free, common } => soliton(&load(&common, Some(&point))?, free, &common, args),
        Cmd::Spectrum { point, nu, common } => spectrum(&load(&common, Some(&point))?, nu, &common, args),
        Cmd::Resolvent { k, rhs, point, common } => resolvent(&load(&common, Some(&point))?, k, &rhs, &common, args),
        Cmd::Coefficients { n, point, emit_source, common } => coefficients(&load(&common, Some(&point))?, n, emit_source, &common, args),
        Cmd::Fgr { n, point, flip, common } => fgr(&load(&common, Some(&point))?, n, flip, &common, args),
        Cmd::FgrScan { common } => fgr_scan(&load(&common, None)?, &common, args),
        Cmd::Evolve { common } => evolve(&load(&common, None)?, &common, args),
        Cmd::Verify { quick, common } => verify(&load(&common, None)?, quick, &common, args),
    }
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn soliton(cfg: &RunConfig, free: bool, common: &Common, args: &[String]) -> Result<(), CliError> {
    let f = Nonlinearity::from_name(&cfg.nonlinearity.name)?;
    let grid = Grid::new(cfg.grid.half_width, cfg.grid.n_points)?;
    let s = if free {
        solve_free(cfg.lambda, grid, f)?
    } else {
        solve_trapped(cfg.lambda, &PotentialSpec::new(cfg.potential.depth, cfg.potential.h)?, grid, f)?
    };
    let mut b = Bundle::open(&common.out, "soliton", args, cfg)?;
    let mut csv = String::from("x,phi,dphi_dlambda\n");
    for (i, (p, d)) in s.phi().iter().zip(s.d_lambda.re()).enumerate() {
        let _ = writeln!(csv, "{:.17e},{:.17e},{:.17e}", grid.x(i), p, d);
    }
    b.csv("soliton.csv", &csv)?;
    let meta = json!({
        "lambda": s.lambda,
        "h": if free { 0.0 } else { s.h },
        "depth": s.depth,
        "free": free,
        "nonlinearity": f.name(),
        "mass": s.mass,
        "delta_prime": s.delta_prime,
        "residual": s.residual_norm,
    });
    b.json("soliton.json", &meta)?;
    b.plot("soliton.gp", "set xlabel 'x'\nplot 'soliton.csv' using 1:2 with lines, '' using 1:3 with lines\n")?;
    b.finish()?;
    print(&meta);
    Ok(())
}

fn spectrum(cfg: &RunConfig, nu: f64, common: &Common, args: &[String]) -> Result<(), CliError> {
    let f = Nonlinearity::from_name(&cfg.nonlinearity.name)?;
    let grid = Grid::new(cfg.grid.half_width, cfg.grid.n_points)?;
    let spec = PotentialSpec::new(cfg.potential.depth, cfg.potential.h)?;
    let s = solve_trapped(cfg.lambda, &spec, grid, f)?;
    let sys = assemble(&s, Some(&spec), f, grid)?;
    let m = discrete_modes(&sys, &s)?;
    let sb = resonance_diagnostic(&sys, nu)?;
    let window = select_window(cfg.lambda, m.epsilon).ok();
    let mut b = Bundle::open(&common.out, "spectrum", args, cfg)?;
    let mut csv = String::from("x,xi,eta,phi\n");
    for i in 0..grid.len() {
        let _ = writeln!(csv, "{:.17e},{:.17e},{:.17e},{:.17e}", grid.x(i), m.xi[i], m.eta[i], m.phi[i]);
    }
    b.csv("modes.csv", &csv)?;
    let out = json!({
        "lambda": cfg.lambda,
        "h": cfg.potential.h,
        "epsilon": m.epsilon,
        "pairing": m.pairing,
        "delta_prime": m.delta_prime,
        "chain_residual": m.chain_residual,
        "sa_check": { "ok": m.sa_ok(), "second_odd": m.second_odd },
        "sb_diagnostic": { "resonant": sb.resonant(), "report": sb },
        "window": window,
    });
    b.json("spectrum.json", &out)?;
    b.plot("spectrum.gp", "set xlabel 'x'\nplot 'modes.csv' using 1:2 with lines, '' using 1:3 with lines\n")?;
    b.finish()?;
    print(&out);
    Ok(())
}

fn resolvent(cfg: &RunConfig, k: i32, rhs: &std::path::Path, common: &Common, args: &[String]) -> Result<(), CliError> {
    let text = std::fs::read_to_string(rhs).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", rhs.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    let src = PairField::from_json(&v)?;
    let PointSetup { sys, modes } = setup_point(&cfg.point())?;
    if src.grid() != sys.grid {
        return Err(FgrError::Shape(format!(
            "rhs lives on L = {}, n = {}; the system on L = {}, n = {}",
            src.grid().half_width(),
            src.grid().len(),
            sys.grid.half_width(),
            sys.grid.len()
        ))
        .into());
    }
    let ans = solve_any(&sys, &modes, k, &src)?;
    let mut b = Bundle::open(&common.out, "resolvent", args, cfg)?;
    let out = json!({
        "k": k,
        "epsilon": modes.epsilon,
        "regime": regime(sys.lambda, modes.epsilon, k),
        "answer": ans,
        "quadratic_form": 2.0 * k as f64 / modes.pairing * ans.probe,
    });
    let mut trace = String::from("eta,probe\n");
    for (e, p) in ans.etas.iter().zip(&ans.eta_trace) {
        let _ = writeln!(trace, "{e:.17e},{p:.17e}");
    }
    b.json("resolvent.json", &out)?;
    b.csv("resolvent_trace.csv", &trace)?;
    b.csv("resolvent_field.csv", &ans.value.to_csv())?;
    b.plot("resolvent.gp", "set xlabel 'eta'\nplot 'resolvent_trace.csv' using 1:2 with linespoints\n")?;
    b.finish()?;
    print(&out);
    Ok(())
}

fn require_window(lambda: f64, epsilon: f64, n: u8) -> Result<(), CliError> {
    let w = select_window(lambda, epsilon)?;
    if w.n != n as usize || !w.is_valid() {
        return Err(FgrError::Window(format!(
            "lambda = {lambda} with eps = {epsilon:.6} selects N = {}{}, requested N = {n}",
            w.n,
            if w.edge { " at a threshold" } else { "" }
        ))
        .into());
    }
    Ok(())
}

fn cubic_only(cfg: &RunConfig) -> Result<(), CliError> {
    if !Nonlinearity::from_name(&cfg.nonlinearity.name)?.is_cubic() {
        return Err(FgrError::Precondition(format!("the coefficient chains are cubic only, got {}", cfg.nonlinearity.name)).into());
    }
    Ok(())
}

fn coefficients(cfg: &RunConfig, n: u8, emit_source: bool, common: &Common, args: &[String]) -> Result<(), CliError> {
    cubic_only(cfg)?;
    let PointSetup { sys, modes } = setup_point(&cfg.point())?;
    require_window(cfg.lambda, modes.epsilon, n)?;
    let conv = cfg.chain.convention;
    let table = if n == 2 { build_n2(&sys, &modes, conv, &mut Junk::none(), None)?.0 } else { build_n3(&sys, &modes, conv, &mut Junk::none(), None)?.0 };
    let inv = table.invariants(n);
    let mut b = Bundle::open(&common.out, "coefficients", args, cfg)?;
    let mut csv = String::from("k,m,n,re,im,provenance\n");
    for e in table.entries() {
        let _ = writeln!(csv, "{},{},{},{:.17e},{:.17e},\"{}\"", e.k, e.m, e.n, e.re, e.im, e.provenance);
    }
    b.csv("coefficients.csv", &csv)?;
    let out = json!({ "N": n, "epsilon": modes.epsilon, "table": table.to_json(), "invariants": inv, "invariants_pass": inv.passes() });
    b.json("coefficients.json", &out)?;
    if emit_source {
        let key = (n + 1, 0);
        let src = table.nvec.get(&key).ok_or_else(|| FgrError::Precondition(format!("N_{}0 missing from the table", n + 1)))?;
        b.json("source.json", &src.to_json())?;
    }
    b.finish()?;
    print(&json!({ "N": n, "invariants": inv, "z": table.to_json()["z"] }));
    if !inv.passes() {
        return Err(CliError::Failed(format!("coefficient invariants violated: {inv:?}")));
    }
    Ok(())
}

fn fgr(cfg: &RunConfig, n: u8, flip: bool, common: &Common, args: &[String]) -> Result<(), CliError> {
    cubic_only(cfg)?;
    let PointSetup { sys, modes } = setup_point(&cfg.point())?;
    require_window(cfg.lambda, modes.epsilon, n)?;
    let conv = cfg.chain.convention;
    let report: FgrReport = if n == 2 {
        let (t, bd) = build_n2(&sys, &modes, conv, &mut Junk::none(), None)?;
        fgr_n2(&sys, &modes, &t, &bd, flip)?
    } else {
        let (t, bd) = build_n3(&sys, &modes, conv, &mut Junk::none(), None)?;
        fgr_n3(&sys, &modes, &t, &bd, flip)?
    };
    let mut b = Bundle::open(&common.out, "fgr", args, cfg)?;
    let mut out = serde_json::to_value(&report)?;
    out["convention"] = json!(conv);
    out["re_z"] = json!(report.re_z());
    b.json("fgr.json", &out)?;
    b.finish()?;
    print(&out);
    if !report.sign_ok {
        return Err(CliError::Failed(format!("Re Z = {} exceeds its error bar {}", report.re_z(), report.error_bar)));
    }
    Ok(())
}

fn fgr_scan(cfg: &RunConfig, common: &Common, args: &[String]) -> Result<(), CliError> {
    cubic_only(cfg)?;
    let pts = scan(&cfg.scan.lambdas, &cfg.scan.hs, cfg.potential.depth, cfg.grid.half_width, cfg.grid.n_points, cfg.chain.convention);
    let evaluated: Vec<&FgrReport> = pts.iter().filter_map(|p| p.report.as_ref()).collect();
    let bad: Vec<String> = evaluated.iter().filter(|r| !r.sign_ok).map(|r| format!("lambda = {}, h = {}", r.lambda, r.h)).collect();
    let mut b = Bundle::open(&common.out, "fgr-scan", args, cfg)?;
    b.csv("scan.csv", &scan_csv(&pts))?;
    let summary = json!({
        "points": pts.len(),
        "evaluated": evaluated.len(),
        "excluded": pts.len() - evaluated.len(),
        "sign_ok_everywhere": bad.is_empty(),
        "sign_violations": bad,
        "scan": pts,
    });
    b.json("scan.json", &summary)?;
    if cfg.scan.plot {
        b.plot(
            "scan.gp",
            "set xlabel 'h'\nset ylabel 'Re Z'\nplot 'scan.csv' using 2:6:7 with yerrorbars title 'route B', '' using 2:5 with points title 'route A'\n",
        )?;
    }
    b.finish()?;
    print(&json!({ "points": pts.len(), "evaluated": evaluated.len(), "sign_ok_everywhere": bad.is_empty() }));
    if !bad.is_empty() {
        return Err(CliError::Failed(format!("sign law violated at {}", bad.join("; "))));
    }
    Ok(())
}

fn evolve(cfg: &RunConfig, common: &Common, args: &[String]) -> Result<(), CliError> {
    let out = cfg.evolve.run()?;
    let rec = &out.record;
    let mut b = Bundle::open(&common.out, "evolve", args, cfg)?;
    b.csv("trajectory.csv", &rec.to_csv())?;
    let z0 = (out.config.z0[0].powi(2) + out.config.z0[1].powi(2)).sqrt();
    let fit = json!({
        "point": out.point,
        "re_z": out.re_z,
        "epsilon": out.epsilon,
        "fit": rec.fit,
        "lambda_infinity": rec.lambda_infinity,
        "overlay": rec.overlay,
        "lambda_envelope_ok": rec.lambda_envelope_ok,
        "envelope_nonincreasing": rec.envelope_nonincreasing,
        "mass_drift": rec.mass_drift,
        "energy_drift": rec.energy_drift,
        "max_frame_residual": rec.frame_residual.iter().cloned().fold(0.0, f64::max),
    });
    b.json("fit.json", &fit)?;
    let script = format!(
        "set logscale xy\nset xlabel 'T0 + t'\nset ylabel '|z|'\nT0 = {t0}\nz0 = {z0}\nrz = {rz}\n\
         ode(t) = (z0**-4 - 4*rz*t)**-0.25\n\
         plot 'trajectory.csv' using (T0+$1):(sqrt($2**2+$3**2)) with lines title 'PDE', \
         '' using (T0+$1):(ode($1)) with lines title 'reduced law'\n",
        t0 = rec.fit.t0,
        rz = out.re_z,
    );
    b.plot("evolve.gp", &script)?;
    b.finish()?;
    print(&fit);
    Ok(())
}

fn verify(cfg: &RunConfig, quick: bool, common: &Common, args: &[String]) -> Result<(), CliError> {
    let ids: Vec<u8> = if quick { QUICK.to_vec() } else { (1..=11).collect() };
    let outcomes = run_suite(&cfg.tolerances, cfg.chain.convention, &ids);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    let mut b = Bundle::open(&common.out, "verify", args, cfg)?;
    b.json("verify.json", &json!({ "quick": quick, "all_pass": failed.is_empty(), "failed": failed, "criteria": outcomes }))?;
    b.finish()?;
    if failed.is_empty() {
        println!("all {} criteria pass", outcomes.len());
        Ok(())
    } else {
        Err(CliError::Failed(format!("criteria {failed:?} failed")))
    }
}
