use std::time::Instant;

use serde_json::json;

use super::pca::principal_components;
use super::{Check, ExperimentConfig, ExperimentId, Metric, MetricPoint, Outcome};
use crate::collapse::{self, CollapseReport, InitKind};
use crate::compression::{self, CompletionProblem, CompletionRun, CompletionSchedule};
use crate::error::{Error, Result};
use crate::network::{self, Activation, Network, Objective, TrainConfig, TrainTrace};
use crate::parsimony::{self, Case, ParsimonyFrame};
use crate::tensor::io::fmt_f64;
use crate::tensor::{self, Matrix, Seed};

pub(super) fn dispatch(cfg: &ExperimentConfig) -> Result<Outcome> {
    use ExperimentId::*;
    match cfg.id {
        Thm1Case1 | MomentumAblation => lowrank_parsimony(cfg),
        Thm1Case2 => wide_parsimony(cfg),
        NonwhitenedAblation => nonwhitened(cfg),
        MatfacEquiv => matfac_equiv(cfg),
        MatcompGamma => matcomp_gamma(cfg),
        DepthVsWidth => depth_vs_width(cfg),
        CompressedVsNarrow => compressed_vs_narrow(cfg),
        CollapseGrid => collapse_grid(cfg),
        CollapseEps => collapse_eps(cfg),
        CollapseInitType => collapse_init_type(cfg),
        Thm2Bound => collapse_bound(cfg),
    }
}

fn outcome() -> Outcome {
    Outcome {
        files: Vec::new(),
        summary: json!({}),
        metrics: Vec::new(),
        checks: Vec::new(),
    }
}

fn train_config(cfg: &ExperimentConfig) -> Result<TrainConfig> {
    let get_or = |key: &str, default: f64| if cfg.params.contains_key(key) { cfg.real(key) } else { Ok(default) };
    Ok(TrainConfig {
        eta: cfg.real("eta")?,
        lambda: get_or("lambda", 0.0)?,
        mu: get_or("mu", 0.0)?,
        max_iters: cfg.int("max_iters")?,
        loss_tol: cfg.real("loss_tol")?,
        snapshot_every: if cfg.params.contains_key("snapshot_every") {
            cfg.int("snapshot_every")?
        } else {
            cfg.int("max_iters")?
        },
    })
}

fn schedule(cfg: &ExperimentConfig, keep_iterates: bool) -> Result<CompletionSchedule> {
    Ok(CompletionSchedule {
        eta: cfg.real("eta")?,
        max_iters: cfg.int("max_iters")?,
        loss_tol: cfg.real("loss_tol")?,
        log_every: cfg.int("log_every")?,
        keep_iterates,
    })
}

/// Widths of a square depth-`depth` network.
fn square(d: usize, depth: usize) -> Vec<usize> {
    vec![d; depth + 1]
}

fn singular_values_csv(snapshots: &[(usize, Network)]) -> Result<String> {
    let mut out = String::from("t,layer,index,sigma\n");
    for (t, net) in snapshots {
        for (l, w) in net.layers().iter().enumerate() {
            for (i, s) in tensor::svd(w)?.s.iter().enumerate() {
                out.push_str(&format!("{t},{},{},{}\n", l + 1, i + 1, fmt_f64(*s)));
            }
        }
    }
    Ok(out)
}

fn audit_outcome(trace: &TrainTrace, frames: &[ParsimonyFrame]) -> Result<Outcome> {
    let mut out = outcome();
    out.files.push(("parsimony_frames.csv".into(), parsimony::frames_to_csv(frames)));
    out.files.push(("singular_values.csv".into(), singular_values_csv(&trace.snapshots)?));
    out.files.push(("loss.csv".into(), trace.to_csv(1)));
    Ok(out)
}

fn audit_summary_json(summary: &parsimony::AuditSummary, trace: &TrainTrace) -> serde_json::Value {
    json!({
        "audit": summary,
        "max_drift": summary.max_drift(),
        "final_loss": trace.final_loss(),
        "iterations": trace.iterates.last().map(|p| p.iter),
        "wall_time_seconds": trace.wall_time_seconds,
    })
}

fn lowrank_parsimony(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seed();
    let (d, r, r_hat, depth) = (cfg.int("d")?, cfg.int("r")?, cfg.int("r_hat")?, cfg.int("L")?);
    let eps = cfg.real("eps")?;
    let tc = train_config(cfg)?;
    let phi = compression::generate_lowrank(d, r, seed.derive(0), cfg.real("scale")?)?;
    let x = tensor::random_orthogonal(d, d, 1.0, seed.derive(1))?;
    let y = &phi * &x;
    let net0 = Network::orthogonal(&square(d, depth), eps, Activation::Linear, seed.derive(2))?;
    let basis = parsimony::invariant_subspace(&net0, &phi, r_hat)?;
    let trace = network::train(&net0, &Objective::regression(x, y), &tc)?;
    let rho = parsimony::rho_sequence_momentum(Case::LowRank, eps, tc.eta, tc.lambda, depth, tc.mu, tc.max_iters)?;
    let frames = parsimony::audit_trajectory(&trace.snapshots, &basis, &rho)?;
    let s = parsimony::summarize(&frames);
    let lemmas = parsimony::lemma_residuals(&net0, &basis, &phi, eps)?;

    let mut out = audit_outcome(&trace, &frames)?;
    let mut summary = audit_summary_json(&s, &trace);
    summary["m"] = json!(basis.m);
    summary["initial_lemma_residuals"] = json!(lemmas);
    out.summary = summary;
    if tc.mu == 0.0 {
        out.checks.push(Check::new(
            "trailing_values",
            s.max_rho_residual <= 1e-8,
            format!("max |sigma - rho| = {:e} (tol 1e-8)", s.max_rho_residual),
        ));
        out.checks.push(Check::new(
            "subspace_drift",
            s.max_drift() <= 1e-6,
            format!("max drift = {:e} (tol 1e-6)", s.max_drift()),
        ));
        out.checks.push(Check::new(
            "off_diagonal_blocks",
            s.max_off_diag_norm <= 1e-8,
            format!("max off-diagonal norm = {:e} (tol 1e-8)", s.max_off_diag_norm),
        ));
    } else {
        out.checks.push(Check::new(
            "subspace_drift",
            s.max_drift() <= 1e-4,
            format!("max drift = {:e} (tol 1e-4)", s.max_drift()),
        ));
    }
    Ok(out)
}

/// Gaussian `rows × cols` target rescaled to Frobenius norm `scale · cols`.
fn wide_target(rows: usize, cols: usize, scale: f64, seed: Seed) -> Result<Matrix> {
    let mut phi = tensor::gaussian(rows, cols, &mut seed.rng());
    let n = phi.norm();
    if n == 0.0 {
        return Err(Error::DegenerateData("sampled target vanished".into()));
    }
    phi *= scale * cols as f64 / n;
    Ok(phi)
}

fn wide_dims(d: usize, d_y: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![d; depth];
    dims.push(d_y);
    dims
}

fn wide_parsimony(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seed();
    let (d, d_y, depth) = (cfg.int("d")?, cfg.int("d_y")?, cfg.int("L")?);
    let eps = cfg.real("eps")?;
    let tc = train_config(cfg)?;
    let phi = wide_target(d_y, d, cfg.real("scale")?, seed.derive(0))?;
    let x = tensor::random_orthogonal(d, d, 1.0, seed.derive(1))?;
    let y = &phi * &x;
    let net0 = Network::orthogonal(&wide_dims(d, d_y, depth), eps, Activation::Linear, seed.derive(2))?;
    let basis = parsimony::invariant_subspace(&net0, &phi, d_y)?;
    let trace = network::train(&net0, &Objective::regression(x, y), &tc)?;
    let rho = parsimony::rho_sequence_momentum(Case::Wide, eps, tc.eta, tc.lambda, depth, tc.mu, tc.max_iters)?;
    let frames = parsimony::audit_trajectory(&trace.snapshots, &basis, &rho)?;
    let s = parsimony::summarize(&frames);

    let mut out = audit_outcome(&trace, &frames)?;
    let mut summary = audit_summary_json(&s, &trace);
    summary["m"] = json!(basis.m);
    out.summary = summary;
    out.checks.push(Check::new(
        "trailing_values",
        s.max_rho_residual <= 1e-10,
        format!("max |sigma - eps(1 - eta lambda)^t| = {:e} (tol 1e-10)", s.max_rho_residual),
    ));
    out.checks.push(Check::new(
        "subspace_drift",
        s.max_drift() <= 1e-6,
        format!("max drift = {:e} (tol 1e-6)", s.max_drift()),
    ));
    Ok(out)
}

fn nonwhitened(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seed();
    let (d, d_y, n, depth) = (cfg.int("d")?, cfg.int("d_y")?, cfg.int("N")?, cfg.int("L")?);
    let eps = cfg.real("eps")?;
    let tc = train_config(cfg)?;
    let phi = wide_target(d_y, d, cfg.real("scale")?, seed.derive(0))?;
    let x = tensor::gaussian(d, n, &mut seed.derive(1).rng());
    let y = &phi * &x;
    let net0 = Network::orthogonal(&wide_dims(d, d_y, depth), eps, Activation::Linear, seed.derive(2))?;
    let gamma0 = (network::end_to_end(&net0)? * &x - &y) * x.transpose();
    let basis = parsimony::invariant_subspace_from_residual(&net0, &gamma0)?;
    let trace = network::train(&net0, &Objective::regression(x, y), &tc)?;
    let rho = parsimony::rho_sequence_momentum(Case::Wide, eps, tc.eta, tc.lambda, depth, tc.mu, tc.max_iters)?;
    let frames = parsimony::audit_trajectory(&trace.snapshots, &basis, &rho)?;
    let s = parsimony::summarize(&frames);
    let mut out = audit_outcome(&trace, &frames)?;
    out.summary = audit_summary_json(&s, &trace);
    Ok(out)
}

fn matfac_equiv(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seed();
    let (d, r, r_hat, depth) = (cfg.int("d")?, cfg.int("r")?, cfg.int("r_hat")?, cfg.int("L")?);
    let (eps, eta, gamma) = (cfg.real("eps")?, cfg.real("eta")?, cfg.real("gamma")?);
    let (max_iters, loss_tol, every) = (cfg.int("max_iters")?, cfg.real("loss_tol")?, cfg.int("snapshot_every")?);
    let prob = CompletionProblem::generate(d, r, 1.0, cfg.real("scale")?, seed.derive(0))?;
    let net0 = Network::orthogonal(&square(d, depth), eps, Activation::Linear, seed.derive(1))?;
    let cn0 = compression::build_compressed(&net0, &prob.observed(), r_hat, gamma)?;
    let m = d - 2 * r_hat;
    let rho = parsimony::rho_sequence(Case::LowRank, eps, eta, 0.0, depth, max_iters)?;
    let bound = eps.powi(depth as i32) * (m as f64).sqrt() * (1.0 + 1e-3);
    let objective = prob.objective();
    let step_cfg = TrainConfig {
        eta,
        ..TrainConfig::default()
    };

    let (mut net, mut cn) = (net0, cn0);
    let (mut conv_orig, mut conv_comp) = (None, None);
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_distance = 0.0f64;
    let mut csv = String::from("iter,distance,predicted,loss_original,loss_compressed\n");
    for t in 0..=max_iters {
        let (loss_o, grads) = objective.loss_and_gradient(&net)?;
        let (loss_c, next_c) = compression::compressed_loss_and_step(&cn, &prob, eta)?;
        for loss in [loss_o, loss_c] {
            if !loss.is_finite() || loss > network::DIVERGENCE_LOSS {
                return Err(Error::Divergence { iteration: t, loss });
            }
        }
        if conv_orig.is_none() && loss_o <= loss_tol {
            conv_orig = Some(t);
        }
        if conv_comp.is_none() && loss_c <= loss_tol {
            conv_comp = Some(t);
        }
        let done = (conv_orig.is_some() && conv_comp.is_some()) || t == max_iters;
        if t % every == 0 || done {
            let dist = (network::end_to_end(&net)? - compression::compressed_end_to_end(&cn)).norm();
            let predicted = rho.at(t).unwrap().powi(depth as i32) * (m as f64).sqrt();
            max_distance = max_distance.max(dist);
            max_excess = max_excess.max(dist - bound);
            csv.push_str(&format!(
                "{t},{},{},{},{}\n",
                fmt_f64(dist),
                fmt_f64(predicted),
                fmt_f64(loss_o),
                fmt_f64(loss_c)
            ));
        }
        if done {
            break;
        }
        net = network::gd_step(&net, &grads, &step_cfg, None)?.0;
        cn = next_c;
    }

    let mut out = outcome();
    out.files.push(("paired_trajectory.csv".into(), csv));
    out.summary = json!({
        "m": m,
        "distance_bound": bound,
        "max_distance": max_distance,
        "converged_original": conv_orig,
        "converged_compressed": conv_comp,
        "params_original": square(d, depth).windows(2).map(|w| w[0] * w[1]).sum::<usize>(),
        "params_compressed": cn.param_count(),
    });
    out.metrics.push((
        Metric::ItersToConverge,
        vec![
            MetricPoint { key: "original".into(), value: conv_orig.map(|v| v as f64) },
            MetricPoint { key: "compressed".into(), value: conv_comp.map(|v| v as f64) },
        ],
    ));
    out.checks.push(Check::new(
        "end_to_end_distance",
        max_excess <= 0.0,
        format!("max distance {max_distance:e} against bound {bound:e}"),
    ));
    let close = match (conv_orig, conv_comp) {
        (Some(a), Some(b)) => (a as f64 - b as f64).abs() <= 0.05 * a.max(b) as f64,
        _ => false,
    };
    out.checks.push(Check::new(
        "convergence_match",
        close,
        format!("original {conv_orig:?}, compressed {conv_comp:?} (within 5%)"),
    ));
    Ok(out)
}

fn run_metrics(runs: &[(String, &CompletionRun)]) -> Vec<(Metric, Vec<MetricPoint>)> {
    let point = |k: &String, v: Option<f64>| MetricPoint { key: k.clone(), value: v };
    vec![
        (
            Metric::ItersToConverge,
            runs.iter().map(|(k, r)| point(k, r.converged_at.map(|v| v as f64))).collect(),
        ),
        (
            Metric::TimeToConverge,
            runs.iter()
                .map(|(k, r)| point(k, r.converged_at.map(|_| r.wall_time_seconds)))
                .collect(),
        ),
        (
            Metric::FinalRecoveryError,
            runs.iter().map(|(k, r)| point(k, Some(r.final_recovery_error))).collect(),
        ),
    ]
}

fn run_json(r: &CompletionRun) -> serde_json::Value {
    json!({
        "converged_at": r.converged_at,
        "iterations": r.iterations,
        "wall_time_seconds": r.wall_time_seconds,
        "final_loss": r.final_loss,
        "final_recovery_error": r.final_recovery_error,
    })
}

fn matcomp_gamma(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seed();
    let (d, r, r_hat, depth) = (cfg.int("d")?, cfg.int("r")?, cfg.int("r_hat")?, cfg.int("L")?);
    let (eps, gamma) = (cfg.real("eps")?, cfg.real("gamma")?);
    let prob = CompletionProblem::generate(d, r, cfg.real("fraction")?, cfg.real("scale")?, seed.derive(0))?;
    let net0 = Network::orthogonal(&square(d, depth), eps, Activation::Linear, seed.derive(1))?;
    let sched = schedule(cfg, true)?;
    let observed = prob.observed();
    let original = compression::train_original(&net0, &prob, &sched)?;
    let cn = compression::build_compressed(&net0, &observed, r_hat, gamma)?;
    let compressed = compression::train_compressed(&cn, &prob, &sched)?;
    let cn0 = compression::build_compressed(&net0, &observed, r_hat, 0.0)?;
    let frozen = compression::train_compressed(&cn0, &prob, &CompletionSchedule { keep_iterates: false, ..sched })?;

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (name, run) in [("original", &original), ("compressed", &compressed)] {
        for (t, e) in &run.iterates {
            points.push(e.clone());
            labels.push((name, *t));
        }
    }
    let proj = principal_components(&points, 2)?;
    let mut pca = String::from("run,iter,pc1,pc2\n");
    for (i, (name, t)) in labels.iter().enumerate() {
        let pc2 = if proj.coords.ncols() > 1 { proj.coords[(i, 1)] } else { 0.0 };
        pca.push_str(&format!("{name},{t},{},{}\n", fmt_f64(proj.coords[(i, 0)]), fmt_f64(pc2)));
    }

    let mut out = outcome();
    out.files.push(("original.csv".into(), original.to_csv()));
    out.files.push(("compressed.csv".into(), compressed.to_csv()));
    out.files.push(("gamma0.csv".into(), frozen.to_csv()));
    out.files.push(("pca.csv".into(), pca));
    out.summary = json!({
        "original": run_json(&original),
        "compressed": run_json(&compressed),
        "gamma0": run_json(&frozen),
        "params_original": net0.param_count(),
        "params_compressed": cn.param_count(),
        "pca_explained": proj.explained,
    });
    out.metrics = run_metrics(&[
        ("original".into(), &original),
        ("compressed".into(), &compressed),
        ("gamma0".into(), &frozen),
    ]);
    let (eo, ec, e0) = (original.final_recovery_error, compressed.final_recovery_error, frozen.final_recovery_error);
    out.checks.push(Check::new(
        "compressed_converges",
        compressed.converged_at.is_some(),
        format!("converged at {:?}", compressed.converged_at),
    ));
    out.checks.push(Check::new(
        "recovery_vs_original",
        ec <= 2.0 * eo,
        format!("compressed {ec:e} vs original {eo:e} (at most 2x)"),
    ));
    out.checks.push(Check::new(
        "recovery_vs_frozen_factors",
        ec < e0,
        format!("compressed {ec:e} vs gamma = 0 {e0:e}"),
    ));
    let (to, tc) = (original.wall_time_seconds, compressed.wall_time_seconds);
    out.checks.push(Check::new(
        "wall_time",
        tc <= 0.5 * to,
        format!("compressed {tc:.2}s vs original {to:.2}s (at most half)"),
    ));
    Ok(out)
}

fn narrow_dims(d: usize, width: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![d];
    dims.extend(std::iter::repeat_n(width, depth - 1));
    dims.push(d);
    dims
}

fn depth_vs_width(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seed();
    let (d, r) = (cfg.int("d")?, cfg.int("r")?);
    let (widths, depths) = (cfg.ints("widths")?, cfg.ints("depths")?);
    let eps = cfg.real("eps")?;
    let prob = CompletionProblem::generate(d, r, cfg.real("fraction")?, cfg.real("scale")?, seed.derive(0))?;
    let sched = schedule(cfg, false)?;
    let mut out = outcome();
    let mut table = String::from("depth,width,iters_to_converge,final_loss,final_recovery_error,wall_time\n");
    let mut runs = Vec::new();
    for &depth in &depths {
        for &w in &widths {
            let net = Network::orthogonal(&narrow_dims(d, w, depth), eps, Activation::Linear, seed.derive(1))?;
            let run = compression::train_original(&net, &prob, &sched)?;
            table.push_str(&format!(
                "{depth},{w},{},{},{},{}\n",
                run.converged_at.map(|v| v.to_string()).unwrap_or_default(),
                fmt_f64(run.final_loss),
                fmt_f64(run.final_recovery_error),
                fmt_f64(run.wall_time_seconds)
            ));
            out.files.push((format!("trace_L{depth}_w{w}.csv"), run.to_csv()));
            runs.push((format!("L{depth}-w{w}"), depth, w, run));
        }
    }
    out.files.insert(0, ("depth_vs_width.csv".into(), table));
    let named: Vec<(String, &CompletionRun)> = runs.iter().map(|(k, _, _, r)| (k.clone(), r)).collect();
    out.metrics = run_metrics(&named);
    out.summary = json!(runs
        .iter()
        .map(|(k, _, _, r)| (k.clone(), run_json(r)))
        .collect::<serde_json::Map<_, _>>());

    let widest = *widths.iter().max().unwrap();
    let find = |depth: usize, w: usize| runs.iter().find(|(_, l, ww, _)| *l == depth && *ww == w).map(|x| &x.3);
    if let (Some(two), Some(three)) = (find(2, widest), find(3, widest)) {
        out.checks.push(Check::new(
            "depth_recovery",
            three.final_recovery_error <= two.final_recovery_error,
            format!(
                "width {widest}: L=3 {:e} vs L=2 {:e}",
                three.final_recovery_error, two.final_recovery_error
            ),
        ));
        let mut sorted = widths.clone();
        sorted.sort_unstable();
        let iters: Vec<Option<f64>> = sorted
            .iter()
            .map(|&w| find(3, w).and_then(|r| r.converged_at.map(|v| v as f64)))
            .collect();
        let inversions = iters
            .windows(2)
            .filter(|p| match (p[0], p[1]) {
                (Some(a), Some(b)) => b > a,
                _ => true,
            })
            .count();
        out.checks.push(Check::new(
            "width_speedup",
            iters.iter().all(Option::is_some) && inversions <= 1,
            format!("L=3 iterations {iters:?}, {inversions} inversions"),
        ));
    }
    Ok(out)
}

fn compressed_vs_narrow(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seed();
    let (d, r, depth) = (cfg.int("d")?, cfg.int("r")?, cfg.int("L")?);
    let (eps, gamma) = (cfg.real("eps")?, cfg.real("gamma")?);
    let prob = CompletionProblem::generate(d, r, cfg.real("fraction")?, cfg.real("scale")?, seed.derive(0))?;
    let net0 = Network::orthogonal(&square(d, depth), eps, Activation::Linear, seed.derive(1))?;
    let sched = schedule(cfg, false)?;
    let observed = prob.observed();
    let mut out = outcome();
    let mut table = String::from(
        "r_hat,compressed_iters,narrow_iters,compressed_recovery,narrow_recovery,compressed_time,narrow_time\n",
    );
    let mut runs = Vec::new();
    let iters = |r: &CompletionRun| r.converged_at.map(|v| v.to_string()).unwrap_or_default();
    for r_hat in cfg.ints("r_hats")? {
        let cn = compression::build_compressed(&net0, &observed, r_hat, gamma)?;
        let comp = compression::train_compressed(&cn, &prob, &sched)?;
        let narrow_net = Network::orthogonal(&narrow_dims(d, 2 * r_hat, depth), eps, Activation::Linear, seed.derive(2))?;
        let narrow = compression::train_original(&narrow_net, &prob, &sched)?;
        table.push_str(&format!(
            "{r_hat},{},{},{},{},{},{}\n",
            iters(&comp),
            iters(&narrow),
            fmt_f64(comp.final_recovery_error),
            fmt_f64(narrow.final_recovery_error),
            fmt_f64(comp.wall_time_seconds),
            fmt_f64(narrow.wall_time_seconds)
        ));
        runs.push((format!("compressed-r{r_hat}"), comp));
        runs.push((format!("narrow-r{r_hat}"), narrow));
    }
    out.files.push(("compressed_vs_narrow.csv".into(), table));
    let named: Vec<(String, &CompletionRun)> = runs.iter().map(|(k, r)| (k.clone(), r)).collect();
    out.metrics = run_metrics(&named);
    out.summary = json!(runs
        .iter()
        .map(|(k, r)| (k.clone(), run_json(r)))
        .collect::<serde_json::Map<_, _>>());
    Ok(out)
}

fn collapse_dims(d: usize, k: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![d; depth];
    dims.push(k);
    dims
}

struct CollapseRun {
    label: String,
    trace: TrainTrace,
    report: CollapseReport,
    seconds: f64,
}

fn train_collapse(net: &Network, data: &collapse::ClassificationData, cfg: &ExperimentConfig, label: String) -> Result<CollapseRun> {
    let start = Instant::now();
    let trace = network::train(net, &Objective::regression(data.x.clone(), data.y.clone()), &train_config(cfg)?)?;
    let report = CollapseReport::from_values(collapse::layerwise_separation(trace.final_network(), data)?);
    Ok(CollapseRun {
        label,
        trace,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn collapse_outcome(runs: &[CollapseRun]) -> Outcome {
    let mut out = outcome();
    let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut fits = String::from("run,converged_at,final_loss,decreasing,slope,r2,wall_time\n");
    let mut summary = serde_json::Map::new();
    for r in runs {
        out.files.push((format!("separation_{}.csv", r.label), r.report.to_csv()));
        fits.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.trace.converged_at.map(|v| v.to_string()).unwrap_or_default(),
            fmt_f64(r.trace.final_loss()),
            r.report.strictly_decreasing(),
            cell(r.report.fit_slope),
            cell(r.report.fit_r2),
            fmt_f64(r.seconds)
        ));
        summary.insert(
            r.label.clone(),
            json!({
                "converged_at": r.trace.converged_at,
                "final_loss": r.trace.final_loss(),
                "report": r.report,
            }),
        );
    }
    out.files.push(("fits.csv".into(), fits));
    out.summary = serde_json::Value::Object(summary);
    out
}

fn classification(cfg: &ExperimentConfig) -> Result<collapse::ClassificationData> {
    collapse::make_classification_data(cfg.int("K")?, cfg.int("n")?, cfg.int("d")?, cfg.seed().derive(0))
}

fn collapse_grid(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = classification(cfg)?;
    let (d, k, eps) = (cfg.int("d")?, cfg.int("K")?, cfg.real("eps")?);
    let mut runs = Vec::new();
    for act in cfg.words("activations")? {
        let act: Activation = act.parse()?;
        for depth in cfg.ints("depths")? {
            let net = Network::orthogonal(&collapse_dims(d, k, depth), eps, act, cfg.seed().derive(1))?;
            runs.push(train_collapse(&net, &data, cfg, format!("{}_L{depth}", act.as_str()))?);
        }
    }
    let mut out = collapse_outcome(&runs);
    for r in &runs {
        let r2 = r.report.fit_r2.unwrap_or(f64::NAN);
        out.checks.push(Check::new(
            &format!("progressive_collapse_{}", r.label),
            r.report.strictly_decreasing() && r2 >= 0.9,
            format!("decreasing = {}, R^2 = {r2:.4}", r.report.strictly_decreasing()),
        ));
    }
    let slopes: Vec<f64> = runs
        .iter()
        .filter(|r| r.label.starts_with("linear"))
        .map(|r| r.report.fit_slope.map(f64::abs).unwrap_or(f64::NAN))
        .collect();
    if slopes.len() > 1 {
        let (lo, hi) = slopes.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
        let spread = (hi - lo) / lo;
        out.checks.push(Check::new(
            "linear_slope_spread",
            spread <= 0.25,
            format!("|slope| in [{lo:.4}, {hi:.4}], relative spread {spread:.4} (tol 0.25)"),
        ));
    }
    Ok(out)
}

fn collapse_eps(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = classification(cfg)?;
    let (d, k, depth) = (cfg.int("d")?, cfg.int("K")?, cfg.int("L")?);
    let mut runs = Vec::new();
    for eps in cfg.reals("eps_list")? {
        let net = Network::orthogonal(&collapse_dims(d, k, depth), eps, Activation::Linear, cfg.seed().derive(1))?;
        let mut run = train_collapse(&net, &data, cfg, format!("eps{}", fmt_f64(eps)))?;
        run.report.bound = Some(collapse::ratio_bound(k, eps));
        runs.push(run);
    }
    Ok(collapse_outcome(&runs))
}

fn collapse_init_type(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = classification(cfg)?;
    let (d, k, depth, eps) = (cfg.int("d")?, cfg.int("K")?, cfg.int("L")?, cfg.real("eps")?);
    let mut runs = Vec::new();
    for kind in cfg.words("inits")? {
        let init: InitKind = kind.parse()?;
        let net = collapse::init_network(&collapse_dims(d, k, depth), init, eps, Activation::Linear, cfg.seed().derive(1))?;
        runs.push(train_collapse(&net, &data, cfg, kind)?);
    }
    Ok(collapse_outcome(&runs))
}

fn collapse_bound(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = classification(cfg)?;
    let (d, k, depth, eps) = (cfg.int("d")?, cfg.int("K")?, cfg.int("L")?, cfg.real("eps")?);
    let net0 = collapse::corollary_init(&collapse_dims(d, k, depth), k, eps, cfg.seed().derive(1))?;
    let trace = network::train(&net0, &Objective::regression(data.x.clone(), data.y.clone()), &train_config(cfg)?)?;
    let report = collapse::check_collapse_bound(trace.final_network(), &data, eps)?;
    let mut out = outcome();
    out.files.push(("separation.csv".into(), report.to_csv()));
    out.files.push(("loss.csv".into(), trace.to_csv(100)));
    out.summary = json!({
        "converged_at": trace.converged_at,
        "final_loss": trace.final_loss(),
        "report": report,
    });
    let cond = report
        .conditions
        .ok_or_else(|| Error::InvariantViolation {
            context: "thm2-bound".into(),
            detail: "report lacks the hypothesis residuals".into(),
        })?;
    out.checks.push(Check::new(
        "optimality",
        cond.optimal(),
        format!("residual {:e} (tol {:e})", cond.optimality_residual, collapse::OPTIMALITY_TOL),
    ));
    out.checks.push(Check::new(
        "balancedness",
        cond.balanced(),
        format!(
            "hidden {:e}, last {:e}, tolerance {:e}",
            cond.hidden_balance_residual, cond.last_balance_residual, cond.balance_tolerance
        ),
    ));
    out.checks.push(Check::new(
        "pinned_spectrum",
        cond.spectrum_pinned(),
        format!("{} of {} required singular values at eps", cond.min_pinned_values, cond.required_pinned_values),
    ));
    out.checks.push(Check::new(
        "ratio_bound",
        report.ratios_within_bound() == Some(true),
        format!(
            "max ratio {:?} vs bound {:?}",
            report.ratios.iter().flatten().copied().fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r)))),
            report.bound
        ),
    ));
    Ok(out)
}
