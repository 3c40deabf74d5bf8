//! Command implementations behind the `calerm` binary: parse one JSON config
//! (with overrides), run the requested computation, and write CSV into the
//! output directory. All files are UTF-8 with LF line endings; floats carry
//! 17 significant digits. stdout receives a single summary line per run,
//! everything else goes to stderr.

use std::fs;
use std::path::{Path, PathBuf};

use crate::complexity::{
    dvoretzky_dimension, r_m_total, r_zero_independent, set_width, solve_fixed_point,
    FixedPointConfig, FixedPointResult, FixedPointSpec,
};
use crate::config::Config;
use crate::experiments::{
    fit_once, loss_comparison, resolve_points, run_experiment, LossDirective, TrialRow,
};
use crate::geometry::ConstraintSet;
use crate::losses::{calibrate_huber, LossSpec};
use crate::smallball::{empirical_smallball_check, paley_zygmund_certificate, smallball_curve};
use crate::synthdata::{sample_dataset, NoiseKind, TargetSpec};
use crate::util::{derive_seed, dot, fmt_g17, norm2, rng_for};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Complexity,
    Smallball,
    Experiment,
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    pub plot: bool,
}

/// Run one command end to end; returns the summary line for stdout.
pub fn run(inv: &Invocation) -> Result<String> {
    let text = fs::read_to_string(&inv.config_path).map_err(|e| {
        Error::config(format!(
            "cannot read config {}: {e}",
            inv.config_path.display()
        ))
    })?;
    let cfg = crate::config::load_config(&text, &inv.overrides, inv.seed)?;
    fs::create_dir_all(&inv.out_dir)?;
    let echo = serde_json::to_string_pretty(&cfg)?;
    fs::write(inv.out_dir.join("config_echo.json"), echo + "\n")?;

    match inv.command {
        Command::Fit => cmd_fit(&cfg, &inv.out_dir),
        Command::Complexity => cmd_complexity(&cfg, &inv.out_dir),
        Command::Smallball => cmd_smallball(&cfg, &inv.out_dir),
        Command::Experiment => cmd_experiment(&cfg, &inv.out_dir, inv.plot),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_g17).unwrap_or_default()
}

fn cmd_fit(cfg: &Config, out: &Path) -> Result<String> {
    let points = resolve_points(&cfg.experiment)?;
    let point = &points[0];
    let (fitted, gamma) = fit_once(point)?;
    let mut header: Vec<String> = vec![
        "objective".into(),
        "iterations".into(),
        "converged".into(),
        "gamma".into(),
    ];
    for j in 0..point.dim {
        header.push(format!("t_hat_{j}"));
    }
    let mut row = vec![
        fmt_g17(fitted.objective),
        fitted.iterations.to_string(),
        fitted.converged.to_string(),
        opt_f(gamma),
    ];
    row.extend(fitted.t_hat.iter().map(|v| fmt_g17(*v)));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(&out.join("fit.csv"), &header_refs, vec![row])?;
    let err = norm2(&crate::util::sub(&fitted.t_hat, &point.t0));
    Ok(format!(
        "fit: objective={:.6e} iterations={} converged={} est_error_l2={:.6e} -> {}",
        fitted.objective,
        fitted.iterations,
        fitted.converged,
        err,
        out.join("fit.csv").display()
    ))
}

/// Monte Carlo L2 norm of the multiplier l'(xi) under the configured noise.
fn lprime_l2(loss: &LossSpec, noise: &NoiseKind, seed: u64) -> Result<f64> {
    if matches!(noise, NoiseKind::None) {
        return Ok(0.0);
    }
    let draws = 200_000;
    let target = TargetSpec {
        t0: vec![0.0],
        noise: *noise,
        dependent_sign_noise: false,
    };
    let s = sample_dataset(&crate::synthdata::DesignKind::GaussianIsotropic, &target, draws, seed)?;
    let mut acc = 0.0;
    for i in 0..draws {
        // residual of the reference point is -W
        let d = loss.deriv(-s.response(i))?;
        acc += d * d;
    }
    Ok((acc / draws as f64).sqrt())
}

fn fp_cols(res: &FixedPointResult) -> Vec<String> {
    vec![
        fmt_g17(res.r),
        fmt_g17(res.bracket_lo),
        fmt_g17(res.bracket_hi),
        fmt_g17(res.mc_std_error),
    ]
}

fn cmd_complexity(cfg: &Config, out: &Path) -> Result<String> {
    let ex = &cfg.experiment;
    let cx = &cfg.complexity;
    let set = &ex.set;
    let noise = ex.noise.to_noise_kind(None)?;
    let sigma = noise.moments().l2;
    let seed = ex.master_seed;

    let fp_cfg = FixedPointConfig {
        mc_budget: cx.mc_budget,
        rel_tol: 1e-3,
        full_space_cap: cx.cap,
        seed: derive_seed(seed, &[1]),
    };

    let r1q = solve_fixed_point(
        set,
        ex.n_samples,
        &FixedPointSpec::GaussianQ {
            zeta: cx.zeta1_value(),
        },
        &fp_cfg,
    )?;
    let r2q = solve_fixed_point(
        set,
        ex.n_samples,
        &FixedPointSpec::RademacherQ {
            design: ex.design,
            zeta: cx.zeta2_value(),
        },
        &fp_cfg,
    )?;
    let kbar = solve_fixed_point(
        set,
        ex.n_samples,
        &FixedPointSpec::ClassicalBaseline {
            design: ex.design,
            gamma: cx.zeta2_value(),
            lipschitz: cx.lipschitz,
        },
        &fp_cfg,
    )?;

    // resolve the loss for the multiplier criterion; auto-Huber calibrates
    // against the intrinsic radius just computed
    let loss = match ex.loss {
        LossDirective::Squared => LossSpec::Squared,
        LossDirective::Logistic => LossSpec::Logistic,
        LossDirective::Huber { gamma } => LossSpec::huber(gamma)?,
        LossDirective::HuberAuto { c0, .. } => {
            match calibrate_huber(sigma, r1q.r.max(r2q.r), c0) {
                Ok(spec) => spec,
                Err(Error::Calibration(_)) => LossSpec::huber(c0.max(1e-12))?,
                Err(e) => return Err(e),
            }
        }
    };
    let kappa = match cx.kappa {
        Some(k) => k,
        None => {
            let t2 = cx.t2_scale * sigma;
            let rho = loss.rho(0.0, t2)?;
            let theta = cx.eps * cx.kappa0 * cx.kappa0 * rho / 16.0;
            let k = theta / 16.0;
            if !(k > 0.0) {
                return Err(Error::config(format!(
                    "derived multiplier threshold kappa is zero (rho(0, {t2}) = {rho}); \
                     override complexity.kappa explicitly"
                )));
            }
            k
        }
    };
    let rm_prime = solve_fixed_point(
        set,
        ex.n_samples,
        &FixedPointSpec::MultiplierQuantile {
            design: ex.design,
            loss,
            noise,
            kappa,
            delta: cx.delta,
        },
        &fp_cfg,
    )?;
    let l2m = lprime_l2(&loss, &noise, derive_seed(seed, &[2]))?;
    let r0 = r_zero_independent(l2m, ex.n_samples, kappa)?;
    let rm = r_m_total(&rm_prime, r0);

    let k_f = if set.max_l2_norm().is_finite() {
        let w = set_width(set, cx.mc_budget.max(2), derive_seed(seed, &[3]))?;
        dvoretzky_dimension(&w, set.diameter())?
    } else {
        f64::INFINITY
    };

    let header = vec![
        "r1q", "r1q_lo", "r1q_hi", "r1q_se", "r2q", "r2q_lo", "r2q_hi", "r2q_se", "rm_prime",
        "rm_prime_lo", "rm_prime_hi", "rm_prime_se", "r0", "rm_total", "kbar_n", "kbar_n_lo",
        "kbar_n_hi", "kbar_n_se", "k_f",
    ];
    let mut row = Vec::new();
    row.extend(fp_cols(&r1q));
    row.extend(fp_cols(&r2q));
    row.extend(fp_cols(&rm_prime));
    row.push(fmt_g17(r0));
    row.push(fmt_g17(rm.r));
    row.extend(fp_cols(&kbar));
    row.push(fmt_g17(k_f));
    write_csv(&out.join("complexity.csv"), &header, vec![row])?;
    Ok(format!(
        "complexity: r1q={:.6e} r2q={:.6e} rm_prime={:.6e} r0={:.6e} rm_total={:.6e} kbar_n={:.6e} -> {}",
        r1q.r,
        r2q.r,
        rm_prime.r,
        r0,
        rm.r,
        kbar.r,
        out.join("complexity.csv").display()
    ))
}

fn cmd_smallball(cfg: &Config, out: &Path) -> Result<String> {
    let ex = &cfg.experiment;
    let sb = &cfg.smallball;
    let seed = ex.master_seed;

    // scalar marginal <u, X> of the design along a random unit direction
    let mut rng = rng_for(seed, &[11]);
    let mut u: Vec<f64> = (0..ex.dim)
        .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
        .collect();
    let un = norm2(&u).max(1e-300);
    for v in &mut u {
        *v /= un;
    }
    let probe_target = TargetSpec {
        t0: vec![0.0; ex.dim],
        noise: NoiseKind::None,
        dependent_sign_noise: false,
    };
    let marginal_sample = sample_dataset(&ex.design, &probe_target, sb.draws, derive_seed(seed, &[12]))?;
    let draws: Vec<f64> = (0..sb.draws)
        .map(|i| dot(&u, marginal_sample.row(i)))
        .collect();

    let grid = sb.kappa_grid();
    let probs = smallball_curve(&draws, &grid)?;
    let rows: Vec<Vec<String>> = grid
        .iter()
        .zip(&probs)
        .map(|(k, p)| vec![fmt_g17(*k), fmt_g17(*p)])
        .collect();
    write_csv(&out.join("smallball.csv"), &["kappa", "probability"], rows)?;

    // certificate from the empirical L4/L2 of the marginal
    let m2 = draws.iter().map(|z| z * z).sum::<f64>() / draws.len() as f64;
    let m4 = draws.iter().map(|z| z.powi(4)).sum::<f64>() / draws.len() as f64;
    let ratio = (m4.max(1e-300)).powf(0.25) / m2.max(1e-300).sqrt();
    let cert = paley_zygmund_certificate(ratio.max(1.0), sb.theta)?;

    let radius = sb.radius.unwrap_or_else(|| ex.set.max_l2_norm().min(1.0));
    let check_sample = sample_dataset(
        &ex.design,
        &TargetSpec {
            t0: vec![0.0; ex.dim],
            noise: NoiseKind::None,
            dependent_sign_noise: false,
        },
        ex.n_samples,
        derive_seed(seed, &[13]),
    )?;
    let check = empirical_smallball_check(
        &check_sample,
        &ex.set,
        radius,
        &cert,
        sb.num_directions,
        derive_seed(seed, &[14]),
    )?;

    Ok(format!(
        "smallball certificate: kappa0={:.6} eps={:.6} (l4/l2={:.4}, theta={}) directional_min={:.4e} pass={} -> {}",
        cert.kappa0,
        cert.eps,
        ratio,
        sb.theta,
        check.min_value,
        check.pass,
        out.join("smallball.csv").display()
    ))
}

pub const RESULTS_HEADER: [&str; 16] = [
    "experiment_id",
    "sweep_param",
    "sweep_value",
    "trial",
    "seed",
    "loss_kind",
    "gamma",
    "N",
    "n",
    "alpha",
    "sigma_l2",
    "noise_kind",
    "est_error_l2",
    "excess_risk",
    "converged",
    "runtime_ms",
];

fn result_row(r: &TrialRow) -> Vec<String> {
    vec![
        r.experiment_id.clone(),
        r.sweep_param.unwrap_or_default().to_string(),
        r.sweep_value.map(fmt_g17).unwrap_or_default(),
        r.trial.to_string(),
        r.seed.to_string(),
        r.loss_kind.to_string(),
        opt_f(r.gamma),
        r.n_samples.to_string(),
        r.dim.to_string(),
        opt_f(r.alpha),
        fmt_g17(r.sigma_l2),
        r.noise_kind.to_string(),
        fmt_g17(r.est_error_l2),
        fmt_g17(r.excess_risk),
        r.converged.to_string(),
        fmt_g17(r.runtime_ms),
    ]
}

fn cmd_experiment(cfg: &Config, out: &Path, plot: bool) -> Result<String> {
    let output = match &cfg.losses {
        Some(losses) => loss_comparison(&cfg.experiment, losses)?,
        None => run_experiment(&cfg.experiment)?,
    };
    let rows: Vec<Vec<String>> = output.rows.iter().map(result_row).collect();
    write_csv(&out.join("results.csv"), &RESULTS_HEADER, rows)?;
    if plot {
        let x_label = cfg
            .experiment
            .sweep
            .as_ref()
            .map(|s| s.parameter.name())
            .unwrap_or("sweep value");
        let svg = crate::plot::median_curves_svg(&output.summaries, x_label)?;
        fs::write(out.join("summary.svg"), svg)?;
    }
    let flagged: usize = output.summaries.iter().map(|s| s.flagged).sum();
    Ok(format!(
        "experiment: {} rows over {} sweep point(s), {} flagged -> {}",
        output.rows.len(),
        output.summaries.len(),
        flagged,
        out.join("results.csv").display()
    ))
}
