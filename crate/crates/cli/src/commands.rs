use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Value};

use preview_gain::lifting::{certificate, BlockCache, PreviewCertificate};
use preview_gain::model::{
    check_assumptions, unicycle_model, AssumptionTolerances, UnicycleParams, Window,
};
use preview_gain::riccati::{solve_periodic, PeriodicOptions, RiccatiSolution};
use preview_gain::sim::{
    disturbance_ensemble, empirical_gain, simulate, simulate_many, GainReport, PowerOptions,
};
use preview_gain::spd::riemannian_distance;
use preview_gain::synthesis::{
    approximant_with, baseline_gains, gain_schedule, GainSchedule, PreviewBuffer, ScheduleConfig,
    StreamingController,
};
use preview_gain::{ModelProvider, ModelSource};

use crate::output::{num, opt_num, sha256_hex, RunConfig, Sink, Table};
use crate::{
    BoundArgs, CheckArgs, CliError, Command, ExampleArgs, ExampleName, ModelArgs, Policy, SimArgs,
    SweepArgs, SynthArgs, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE, EXIT_OK,
};

pub fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Check(a) => check(&a),
        Command::Bound(a) => bound(&a),
        Command::Synthesize(a) => synthesize(&a),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::SweepDelta(a) => sweep_delta(&a),
        Command::Example(a) => example(&a),
    }
}

/// Model, its canonical-JSON hash and the resolved window.
struct Loaded {
    model: ModelProvider,
    hash: String,
    window: Window,
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn load(args: &ModelArgs) -> Result<Loaded, CliError> {
    if !(args.gamma > 0.0 && args.gamma.is_finite()) {
        return Err(input(format!(
            "--gamma must be positive and finite (got {})",
            args.gamma
        )));
    }
    let model = match args.model.strip_prefix("example:") {
        Some("unicycle") => unicycle_model(&UnicycleParams::default()),
        Some(other) => return Err(input(format!("unknown example model {other:?}"))),
        None => ModelProvider::load(&args.model),
    }
    .map_err(|e| input(format!("model {}: {e}", args.model)))?;
    let hash = sha256_hex(
        model
            .to_json()
            .map_err(|e| input(e.to_string()))?
            .as_bytes(),
    );
    let window = Window::resolve(&model, args.window.map(|w| Window::finite(w.start, w.len)))
        .map_err(|e| input(e.to_string()))?;
    Ok(Loaded {
        model,
        hash,
        window,
    })
}

fn check_d(d: usize) -> Result<(), CliError> {
    if d == 0 {
        return Err(input("--d must be at least 1"));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<(), CliError> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(input(format!("--beta must be finite and ≥ 0 (got {beta})")));
    }
    Ok(())
}

fn sink(
    command: &'static str,
    common: &ModelArgs,
    loaded: &Loaded,
    args: &impl serde::Serialize,
) -> Result<Sink, CliError> {
    let mut s = Sink::new(
        common.out.clone(),
        common.json,
        RunConfig::new(command, Some(loaded.hash.clone()), args),
    )?;
    let w = loaded.window;
    s.note(format!(
        "window: start={} len={} exact={} ({})",
        w.start,
        w.len,
        w.exact,
        if w.exact {
            "covers a full period"
        } else {
            "finite-window estimate of sup/inf over t"
        }
    ));
    Ok(s)
}

/// Print the summary as JSON or text, followed by the written files.
fn finish(sink: &Sink, summary: Value, lines: Vec<String>) {
    if sink.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
    } else {
        for l in lines {
            println!("{l}");
        }
        for p in &sink.written {
            println!("wrote {}", p.display());
        }
    }
}

fn check(args: &CheckArgs) -> Result<u8, CliError> {
    let loaded = load(&args.common)?;
    args.d.iter().try_for_each(|d| check_d(*d))?;
    let mut sink = sink("check", &args.common, &loaded, args)?;
    let mut table = Table::new([
        "d",
        "assumptions_pass",
        "c_obs",
        "c_ctr",
        "part2_pass",
        "r_sv_min",
        "s_min",
        "q_min",
        "failures",
    ]);
    let mut reports = Vec::new();
    let mut lines = Vec::new();
    let mut all = true;
    for &d in &args.d {
        let rep = check_assumptions(
            &loaded.model,
            d,
            loaded.window,
            &AssumptionTolerances::default(),
        )?;
        let part2 = certificate(
            &loaded.model,
            d,
            args.common.gamma,
            0.0,
            Some(loaded.window),
        )?
        .part2;
        let pass = rep.pass && part2.pass;
        all &= pass;
        let failures = rep.failures.len() + part2.failures.len();
        table.push(vec![
            json!(d),
            json!(rep.pass),
            num(rep.c_obs),
            num(rep.c_ctr),
            json!(part2.pass),
            num(part2.r_sv_min),
            num(part2.s_min),
            num(part2.q_min),
            json!(failures),
        ]);
        lines.push(format!(
            "d={d}: assumptions {} (c_obs {:.3e}, c_ctr {:.3e}), part 2 {} (λmin Q̃ {:.3e}, λmin S {:.3e})",
            verdict(rep.pass),
            rep.c_obs,
            rep.c_ctr,
            verdict(part2.pass),
            part2.q_min,
            part2.s_min
        ));
        for f in rep
            .failures
            .iter()
            .map(ToString::to_string)
            .chain(part2.failures.iter().cloned())
            .take(5)
        {
            lines.push(format!("  {f}"));
        }
        reports.push(json!({ "d": d, "gramian": rep, "part2": part2 }));
    }
    sink.table("check", &table)?;
    sink.stamped("check_report.json", "reports", &reports)?;
    lines.push(format!("overall: {}", verdict(all)));
    finish(&sink, json!({ "pass": all, "reports": reports }), lines);
    Ok(if all { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn verdict(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

fn bound(args: &BoundArgs) -> Result<u8, CliError> {
    let loaded = load(&args.common)?;
    args.d.iter().try_for_each(|d| check_d(*d))?;
    args.beta.iter().try_for_each(|b| check_beta(*b))?;
    let mut sink = sink("bound", &args.common, &loaded, args)?;
    let mut table = Table::new([
        "d",
        "beta",
        "kappa_lo",
        "delta_up",
        "rho_up",
        "eta",
        "alpha_lo",
        "t_bar",
        "t_chosen",
        "preview_steps",
        "feasible",
    ]);
    let mut certs: Vec<PreviewCertificate> = Vec::new();
    let mut lines = Vec::new();
    for &d in &args.d {
        let base = certificate(
            &loaded.model,
            d,
            args.common.gamma,
            args.beta[0],
            Some(loaded.window),
        )?;
        for &beta in &args.beta {
            let c = base.with_beta(beta)?;
            table.push(vec![
                json!(d),
                num(beta),
                num(c.kappa_lo),
                num(c.delta_up),
                num(c.rho_up),
                num(c.eta),
                num(c.alpha_lo),
                num(c.t_bar),
                json!(c.t_chosen),
                json!(c.preview_steps),
                json!(c.feasible),
            ]);
            lines.push(format!(
                "d={d} β={beta}: κ̲={:.4e} δ̄={:.4} ρ̄={:.6} T̄={:.2} preview steps {}{}",
                c.kappa_lo,
                c.delta_up,
                c.rho_up,
                c.t_bar,
                c.preview_steps.map_or("-".into(), |s| s.to_string()),
                if c.feasible {
                    String::new()
                } else {
                    format!(" (infeasible: {})", c.reasons.join("; "))
                }
            ));
            certs.push(c);
        }
    }
    sink.table("bound", &table)?;
    sink.stamped("certificates.json", "certificates", &certs)?;
    let all = certs.iter().all(|c| c.feasible);
    finish(
        &sink,
        json!({ "feasible": all, "certificates": certs }),
        lines,
    );
    Ok(if all { EXIT_OK } else { EXIT_INFEASIBLE })
}

/// Certificate and the preview horizon to use: `--T` or the certified one.
fn plan(
    args: &SynthArgs,
    loaded: &Loaded,
) -> Result<(PreviewCertificate, ScheduleConfig), CliError> {
    check_d(args.d)?;
    check_beta(args.beta)?;
    let cert = certificate(
        &loaded.model,
        args.d,
        args.common.gamma,
        args.beta,
        Some(loaded.window),
    )?;
    let horizon = match (args.horizon, cert.t_chosen) {
        (Some(h), _) => h,
        (None, Some(h)) => h,
        (None, None) => {
            return Err(CliError::Infeasible(format!(
                "no certified preview horizon and no --T given: {}",
                cert.reasons.join("; ")
            )))
        }
    };
    let mut cfg = ScheduleConfig::new(args.d, horizon, args.common.gamma, args.beta);
    cfg.t_chosen = cert.t_chosen;
    Ok((cert, cfg))
}

fn baseline(model: &ModelProvider, gamma: f64) -> Result<Option<RiccatiSolution>, CliError> {
    if model.period().is_none() {
        return Ok(None);
    }
    Ok(Some(solve_periodic(
        model,
        gamma,
        &PeriodicOptions::default(),
    )?))
}

fn schedule_table(model: &ModelProvider, sched: &GainSchedule) -> Table {
    let (n, m) = model.dims();
    let mut cols: Vec<String> = vec!["t".into()];
    cols.extend((0..m).flat_map(|i| (0..n).map(move |j| format!("k_{i}_{j}"))));
    cols.extend(["lambda_min_x", "margin", "delta_to_baseline"].map(String::from));
    let mut table = Table::new(cols);
    for r in &sched.rows {
        let mut row = vec![json!(r.t)];
        row.extend((0..m).flat_map(|i| (0..n).map(move |j| num(r.gain[(i, j)]))));
        row.extend([
            num(r.lambda_min_x),
            num(r.margin),
            opt_num(r.delta_to_baseline),
        ]);
        table.push(row);
    }
    table
}

fn synthesize(args: &SynthArgs) -> Result<u8, CliError> {
    let loaded = load(&args.common)?;
    let (cert, cfg) = plan(args, &loaded)?;
    let mut sink = sink("synthesize", &args.common, &loaded, args)?;
    let base = baseline(&loaded.model, cfg.gamma)?;
    let cache = BlockCache::new();
    let sched = gain_schedule(
        &loaded.model,
        loaded.window.iter(),
        &cfg,
        base.as_ref(),
        Some(&cache),
    )?;
    sink.note(format!(
        "T={} certified_T={:?} advisory={}",
        cfg.horizon, cfg.t_chosen, sched.advisory
    ));
    sink.table("schedule", &schedule_table(&loaded.model, &sched))?;
    let last = loaded.window.start + loaded.window.len - 1;
    let buffer = PreviewBuffer::from_source(&loaded.model, last, cfg.d, cfg.horizon)?;
    let state = StreamingController::new(cfg, buffer)?.state().clone();
    sink.document("controller_state.json", &state)?;
    sink.stamped("certificate.json", "certificate", &cert)?;

    let holds = sched.sufficient_condition_holds();
    let mut lines = vec![format!(
        "schedule over t ∈ [{}, {}) with d={}, T={} (certified T {}), α = γ+β = {}",
        loaded.window.start,
        last + 1,
        cfg.d,
        cfg.horizon,
        cfg.t_chosen.map_or("none".into(), |t| t.to_string()),
        cfg.alpha()
    )];
    if sched.advisory {
        lines.push(
            "advisory: T is below the certified horizon; the γ+β bound is not guaranteed".into(),
        );
    }
    if let (Some(max), Some(thr)) = (sched.max_delta, sched.delta_threshold) {
        lines.push(format!(
            "max δ(X, P) = {max:.4e}, threshold log(ηλ̲+1) = {thr:.4e}: {}",
            verdict(max <= thr)
        ));
    }
    let summary = json!({
        "horizon": cfg.horizon,
        "t_chosen": cfg.t_chosen,
        "advisory": sched.advisory,
        "max_delta": sched.max_delta,
        "delta_threshold": sched.delta_threshold,
        "sufficient_condition": holds,
        "min_margin": sched.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min),
    });
    finish(&sink, summary, lines);
    Ok(if !sched.advisory && holds == Some(false) {
        EXIT_INFEASIBLE
    } else {
        EXIT_OK
    })
}

fn tile(gains: Vec<DMatrix<f64>>, len: usize) -> Vec<DMatrix<f64>> {
    (0..len).map(|t| gains[t % gains.len()].clone()).collect()
}

fn simulate_cmd(args: &SimArgs) -> Result<u8, CliError> {
    let s = &args.synth;
    let loaded = load(&s.common)?;
    if !(args.w_scale > 0.0 && args.w_scale.is_finite()) {
        return Err(input(format!(
            "--w-scale must be positive (got {})",
            args.w_scale
        )));
    }
    if !(args.taper > 0.0 && args.taper <= 1.0) {
        return Err(input(format!(
            "--taper must lie in (0, 1] (got {})",
            args.taper
        )));
    }
    let period = loaded.model.period();
    let steps = args
        .steps
        .unwrap_or(period.map_or(loaded.window.len, |p| 3 * p));
    if steps == 0 {
        return Err(input("--steps must be positive"));
    }
    let mut sink = sink("simulate", &s.common, &loaded, args)?;
    let (gains, certified, advisory) = match args.policy {
        Policy::Baseline => {
            let sol = baseline(&loaded.model, s.common.gamma)?
                .ok_or_else(|| input("the baseline policy needs a periodic model"))?;
            (
                baseline_gains(&loaded.model, &sol, 0..steps)?,
                s.common.gamma,
                false,
            )
        }
        Policy::Preview => {
            let (_, cfg) = plan(s, &loaded)?;
            let span = period.map_or(steps, |p| p.min(steps));
            let sched =
                gain_schedule(&loaded.model, 0..span, &cfg, None, Some(&BlockCache::new()))?;
            (tile(sched.gains(), steps), cfg.alpha(), sched.advisory)
        }
    };
    sink.note(format!(
        "policy={:?} N={steps} alpha={certified} advisory={advisory} w in model units",
        args.policy
    ));

    let (n, m) = loaded.model.dims();
    let w = disturbance_ensemble(args.seed, 1, steps, n, args.taper).remove(0);
    let trace = simulate(&loaded.model, &gains, &w, certified)?;
    let mut cols: Vec<String> = vec!["t".into()];
    cols.extend((0..n).map(|i| format!("x_{i}")));
    cols.extend((0..m).map(|i| format!("u_{i}")));
    cols.extend((0..n).map(|i| format!("w_{i}")));
    cols.extend(["z_norm2", "running_J"].map(String::from));
    let mut table = Table::new(cols);
    for t in 0..steps {
        let mut row = vec![json!(t)];
        row.extend(trace.x[t].iter().map(|v| num(*v)));
        row.extend(trace.u[t].iter().map(|v| num(*v)));
        row.extend(trace.w[t].iter().map(|v| num(*v)));
        row.extend([num(trace.z[t].norm_squared()), num(trace.j[t])]);
        table.push(row);
    }
    sink.table("trace", &table)?;

    let est = empirical_gain(
        &loaded.model,
        &gains,
        steps,
        &PowerOptions {
            seed: args.seed,
            ..Default::default()
        },
    )?;
    let units = if args.w_scale == 1.0 {
        "model".to_string()
    } else {
        format!("unscaled w (model disturbance = {}·w)", args.w_scale)
    };
    let report = GainReport::new(&est, certified, args.w_scale, units);
    sink.document("gain_report.json", &report)?;

    let mut lines = vec![format!(
        "empirical gain {:.6} vs certified {:.6} ({}), N={}, {} iterations, converged {}",
        report.empirical,
        report.certified,
        report.units,
        report.n,
        report.iterations,
        report.converged
    )];
    if advisory {
        lines
            .push("advisory: T is below the certified horizon; the bound is not guaranteed".into());
    }
    let mut ensemble_ok = true;
    let mut ensemble_summary = Value::Null;
    if args.ensemble > 0 {
        let ws = disturbance_ensemble(args.seed, args.ensemble, steps, n, args.taper);
        let traces = simulate_many(&loaded.model, &gains, &ws, certified)?;
        let mut t = Table::new([
            "run",
            "j_final",
            "max_partial_j",
            "partial_sums_nonpositive",
        ]);
        for (i, tr) in traces.iter().enumerate() {
            t.push(vec![
                json!(i),
                num(tr.j_alpha()),
                num(tr.max_partial_j()),
                json!(tr.partial_sums_nonpositive()),
            ]);
        }
        sink.table("ensemble", &t)?;
        ensemble_ok = traces.iter().all(|t| t.partial_sums_nonpositive());
        let worst = traces
            .iter()
            .map(|t| t.max_partial_j())
            .fold(f64::NEG_INFINITY, f64::max);
        lines.push(format!(
            "ensemble of {}: max partial J_α {worst:.4e}, all ≤ 0: {ensemble_ok}",
            args.ensemble
        ));
        ensemble_summary = json!({ "runs": args.ensemble, "max_partial_j": worst, "all_nonpositive": ensemble_ok });
    }
    finish(
        &sink,
        json!({ "gain_report": report, "advisory": advisory, "ensemble": ensemble_summary }),
        lines,
    );
    if !report.converged {
        return Ok(EXIT_NONCONVERGENCE);
    }
    let violated = !ensemble_ok || !report.within_certified(1e-9 * report.certified);
    Ok(if violated && !advisory {
        EXIT_INFEASIBLE
    } else {
        EXIT_OK
    })
}

fn sweep_delta(args: &SweepArgs) -> Result<u8, CliError> {
    let loaded = load(&args.common)?;
    args.d.iter().try_for_each(|d| check_d(*d))?;
    let sol = baseline(&loaded.model, args.common.gamma)?
        .ok_or_else(|| input("sweep-delta needs a periodic model for the baseline"))?;
    let mut sink = sink("sweep-delta", &args.common, &loaded, args)?;
    let mut table = Table::new(["d", "T", "t", "delta"]);
    let mut pairs = Vec::new();
    let mut lines = Vec::new();
    for &d in &args.d {
        let cache = BlockCache::new();
        for &horizon in &args.horizon {
            let deltas = loaded
                .window
                .iter()
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|t| {
                    let ap = approximant_with(
                        &loaded.model,
                        Some(&cache),
                        t,
                        d,
                        horizon,
                        args.common.gamma,
                        false,
                    )?;
                    riemannian_distance(&ap.x, sol.at(t + 1))
                })
                .collect::<preview_gain::Result<Vec<f64>>>()?;
            let (argmax, max) =
                deltas
                    .iter()
                    .enumerate()
                    .fold((loaded.window.start, 0.0), |acc, (i, v)| {
                        if *v > acc.1 {
                            (loaded.window.start + i, *v)
                        } else {
                            acc
                        }
                    });
            for (t, v) in loaded.window.iter().zip(&deltas) {
                table.push(vec![json!(d), json!(horizon), json!(t), num(*v)]);
            }
            lines.push(format!(
                "d={d} T={horizon}: max δ(X_{{t+1}}, P_{{t+1}}) = {max:.4e} at t={argmax}"
            ));
            pairs.push(json!({ "d": d, "T": horizon, "max_delta": max, "argmax": argmax }));
        }
    }
    sink.table("sweep_delta", &table)?;
    finish(&sink, json!({ "pairs": pairs }), lines);
    Ok(EXIT_OK)
}

fn example(args: &ExampleArgs) -> Result<u8, CliError> {
    let model = match args.name {
        ExampleName::Unicycle => unicycle_model(&UnicycleParams {
            a: args.a,
            period: args.period,
            h: args.h,
            ..Default::default()
        })
        .map_err(|e| input(e.to_string()))?,
    };
    let text = model.to_json().map_err(|e| input(e.to_string()))?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, text + "\n")
                .map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
            eprintln!("wrote {} (disturbance enters as h·w with h={}; gains in unscaled w are model gains × h)", path.display(), args.h);
        }
        None => println!("{text}"),
    }
    Ok(EXIT_OK)
}
