use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dfx::discretization::Family;
use dfx::geometry::Domain;
use dfx::io::{format_sci, read_field, write_field, write_pgm};
use dfx::operator::Expr;
use dfx::problems::{AdamState, HelmholtzProblem, LensProblem, Pml};
use dfx::solvers::{default_dt, integrate_explicit};
use dfx::{DType, Error, Tensor};

use crate::config::{Discr, Profile, RunConfig};

fn save(out: &Path, stem: &str, t: &Tensor) -> Result<()> {
    write_field(out.join(format!("{stem}.jdf")), t)
        .with_context(|| format!("writing {stem}.jdf"))?;
    write_pgm(out.join(format!("{stem}.pgm")), t).with_context(|| format!("writing {stem}.pgm"))?;
    Ok(())
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Adam on the lens parameters. Returns `false` when any solve missed its
/// tolerance.
pub fn lens_opt(cfg: &RunConfig) -> Result<bool> {
    cfg.validate()?;
    let n = cfg.grid;
    let mut problem = HelmholtzProblem::scaled(n)?;
    if cfg.spacing != 1.0 {
        let h = cfg.spacing;
        problem.domain = Domain::square(n, h)?;
        problem.pml = Pml {
            onset: problem.pml.onset * h,
            width: problem.pml.width * h,
        };
    }
    problem.lambda_tv = cfg.lambda_tv;
    problem.seed = cfg.seed;
    problem.gmres = cfg.gmres;
    let lens = LensProblem::new(problem)?;
    prepare_out(&cfg.out)?;

    let mut rho = lens.initial_params();
    let mut adam = AdamState::new(&lens.config.lens.shape(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut csv = String::from("step,loss,target_amplitude\n");
    let mut all_converged = true;
    for k in 0..=cfg.steps {
        let last = k == cfg.steps;
        let e = lens.evaluate(&rho, !last)?;
        if !e.loss.is_finite() {
            return Err(Error::NaNEncountered(format!("loss at optimization step {k}")).into());
        }
        if !e.converged() {
            all_converged = false;
            eprintln!(
                "warning: step {k}: solver did not reach tolerance (forward residual {})",
                format_sci(e.forward_relative_residual, 3)
            );
        }
        println!(
            "step {k:>4}  loss {}  amplitude {}",
            format_sci(e.loss, 6),
            format_sci(e.target_amplitude, 6)
        );
        writeln!(
            csv,
            "{k},{},{}",
            format_sci(e.loss, 12),
            format_sci(e.target_amplitude, 12)
        )?;
        if last {
            save(&cfg.out, "sound_speed", &e.c)?;
            save(&cfg.out, "wavefield_abs", &e.u.abs())?;
            save(&cfg.out, "tv_integrand", &lens.tv_field(&e.c)?)?;
            write_field(cfg.out.join("wavefield.jdf"), &e.u)?;
            write_field(cfg.out.join("lens_params.jdf"), &rho)?;
        } else {
            let g = e.grad.as_ref().expect("gradient requested");
            rho = adam.step(&rho, g)?;
        }
    }
    fs::write(cfg.out.join("loss.csv"), csv).context("writing loss.csv")?;
    Ok(all_converged)
}

fn heat_family(d: &Domain, discr: Discr) -> Result<Family> {
    Ok(match discr {
        Discr::Fourier => Family::real_fourier(d),
        Discr::Fd => Family::finite_differences(d, 2, 1, DType::Real)?,
    })
}

/// Centred Gaussian with standard deviation `sigma` and unit peak.
pub fn gaussian(d: &Domain, sigma: f64) -> Tensor {
    let x = d.grid_coordinates();
    let xs = x.as_real().expect("real coordinates");
    let dims = d.ndim();
    let mut shape = d.n().to_vec();
    shape.push(1);
    Tensor::from_fn_real(&shape, |i| {
        let r2: f64 = xs[i * dims..(i + 1) * dims].iter().map(|v| v * v).sum();
        (-r2 / (2.0 * sigma * sigma)).exp()
    })
}

fn load_initial(path: &Path, n: usize) -> Result<Tensor> {
    let t = read_field(path).with_context(|| format!("reading {}", path.display()))?;
    if t.dtype() != DType::Real {
        bail!("initial field must be real");
    }
    let t = match t.shape() {
        [a, b] if *a == n && *b == n => t.reshape(&[n, n, 1])?,
        [a, b, 1] if *a == n && *b == n => t,
        s => bail!("initial field has shape {s:?}, grid is {n}x{n}"),
    };
    Ok(t)
}

/// Indices of `count` evenly spaced snapshots among steps `0..=steps`.
pub fn snapshot_steps(steps: usize, count: usize) -> Vec<usize> {
    if count <= 1 {
        return vec![steps];
    }
    let mut v: Vec<usize> = (0..count)
        .map(|i| ((i * steps) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}

pub fn heat_sim(cfg: &RunConfig, init: Option<&Path>) -> Result<bool> {
    cfg.validate()?;
    let n = cfg.grid;
    let d = Domain::square(n, cfg.spacing)?;
    let family = heat_family(&d, cfg.discr)?;
    let op = Expr::field("u")
        .laplacian()
        .trace_families(&[("u", &family)])?;
    let u0 = match init {
        Some(p) => load_initial(p, n)?,
        None => gaussian(&d, 4.0 * cfg.spacing),
    };
    let dt0 = cfg.dt.unwrap_or_else(|| default_dt(&d));
    let steps = ((cfg.t_end / dt0) - 1e-9).ceil().max(1.0) as usize;
    let dt = cfg.t_end / steps as f64;
    let wanted = snapshot_steps(steps, cfg.snapshots);
    prepare_out(&cfg.out)?;
    println!(
        "{family}: {steps} steps of dt = {} to t = {}",
        format_sci(dt, 4),
        cfg.t_end
    );

    let mut times = String::from("index,step,time\n");
    let mut index = 0;
    let mut io_error = None;
    let result = integrate_explicit(&op, &u0, dt, steps, 1, |step, t, u| {
        if wanted.get(index) == Some(&step) {
            if let Err(e) = save(&cfg.out, &format!("snapshot_{index:03}"), u) {
                io_error = Some(e);
                return Err(Error::Io(std::io::Error::other("snapshot write failed")));
            }
            let _ = writeln!(times, "{index},{step},{}", format_sci(t, 12));
            println!(
                "snapshot {index}: step {step}, t = {}, max |u| = {}",
                format_sci(t, 4),
                format_sci(u.max_abs(), 4)
            );
            index += 1;
        }
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    match result {
        Ok(_) => {}
        Err(Error::NaNEncountered(at)) => bail!("blow-up: non-finite values at {at}; reduce --dt"),
        Err(e) => return Err(e.into()),
    }
    fs::write(cfg.out.join("times.csv"), times).context("writing times.csv")?;
    Ok(true)
}

pub struct SwapReport {
    pub discrepancy: f64,
    /// Least-squares ratio of the finite-difference to the spectral result
    /// (single-mode input only), with the modified-wavenumber prediction.
    pub mode_ratio: Option<(f64, f64)>,
}

/// Applies one Laplacian definition under second-order finite differences
/// and under the Fourier family and compares them away from the one-cell
/// boundary band, where the finite-difference stencil reads padding.
pub fn swap_compare(cfg: &RunConfig) -> Result<SwapReport> {
    let n = cfg.grid;
    let h = cfg.spacing;
    let d = Domain::square(n, h)?;
    let rhs = Expr::field("u").laplacian();
    let fd = rhs.trace_families(&[("u", &Family::finite_differences(&d, 2, 1, DType::Real)?)])?;
    let fourier = rhs.trace_families(&[("u", &Family::real_fourier(&d))])?;
    let k = 2.0 * std::f64::consts::PI * cfg.mode as f64 / d.length(0);
    let u = match cfg.profile {
        Profile::Gaussian => gaussian(&d, 8.0 * h),
        Profile::Constant => Tensor::full(&[n, n, 1], 1.0),
        Profile::Mode => {
            let x = d.grid_coordinates();
            let xs = x.as_real().expect("real coordinates").to_vec();
            Tensor::from_fn_real(&[n, n, 1], |i| (k * xs[2 * i]).cos())
        }
    };
    let bind = BTreeMap::from([("u".to_string(), u.clone())]);
    let a = fd.evaluate(&bind)?;
    let b = fourier.evaluate(&bind)?;
    let (av, bv, uv) = (
        a.as_real().expect("real"),
        b.as_real().expect("real"),
        u.as_real().expect("real"),
    );
    let (mut diff2, mut den2, mut u2, mut ab) = (0.0, 0.0, 0.0, 0.0);
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let p = i * n + j;
            diff2 += (av[p] - bv[p]).powi(2);
            den2 += bv[p] * bv[p];
            u2 += uv[p] * uv[p];
            ab += av[p] * bv[p];
        }
    }
    let (diff, den) = (diff2.sqrt(), den2.sqrt());
    // a spectral Laplacian at round-off level counts as zero
    let zero = den <= 1e-10 * u2.sqrt() / (h * h);
    let discrepancy = if zero { diff } else { diff / den };
    let mode_ratio = (cfg.profile == Profile::Mode && !zero).then(|| {
        let s = (k * h / 2.0).sin() / (k * h / 2.0);
        (ab / den2, s * s)
    });
    Ok(SwapReport {
        discrepancy,
        mode_ratio,
    })
}

pub fn swap_check(cfg: &RunConfig) -> Result<bool> {
    cfg.validate()?;
    let r = swap_compare(cfg)?;
    println!(
        "relative L2 discrepancy (fd vs fourier): {}",
        format_sci(r.discrepancy, 6)
    );
    if let Some((measured, predicted)) = r.mode_ratio {
        println!(
            "mode {}: fd/fourier ratio {} (modified wavenumber predicts {})",
            cfg.mode,
            format_sci(measured, 9),
            format_sci(predicted, 9)
        );
    }
    let ok = r.discrepancy < cfg.tol;
    println!(
        "{} (tolerance {})",
        if ok { "PASS" } else { "FAIL" },
        format_sci(cfg.tol, 2)
    );
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshots_are_evenly_spaced() {
        assert_eq!(snapshot_steps(20, 5), vec![0, 5, 10, 15, 20]);
        assert_eq!(snapshot_steps(20, 1), vec![20]);
        assert_eq!(snapshot_steps(3, 2), vec![0, 3]);
        assert_eq!(snapshot_steps(2, 5), vec![0, 1, 2]);
    }

    #[test]
    fn swap_profiles() {
        let mut cfg = RunConfig::swap_defaults();
        let g = swap_compare(&cfg).unwrap();
        assert!(g.discrepancy < 1e-2, "{}", g.discrepancy);

        cfg.profile = Profile::Constant;
        assert!(swap_compare(&cfg).unwrap().discrepancy < 1e-12);

        cfg.profile = Profile::Mode;
        cfg.mode = 8;
        let m = swap_compare(&cfg).unwrap();
        let (measured, predicted) = m.mode_ratio.unwrap();
        assert!(
            (measured - predicted).abs() < 1e-12,
            "{measured} vs {predicted}"
        );
        assert!((m.discrepancy - (1.0 - predicted)).abs() < 1e-10);
    }
}
