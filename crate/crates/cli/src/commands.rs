use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::{Array1, Array2, Axis};
use sbnn_core::calibration::{initial_psi, Calibrator, PILOT_STREAM};
use sbnn_core::diagnostics::{
    anchored_covariance, empirical_covariogram, exceedance_curve, kde_1d, score as score_draws, DEFAULT_PAIR_CAP,
};
use sbnn_core::inference::{predictive_field, sghmc_sample};
use sbnn_core::io::{
    anchored_csv, atomic_write, covariogram_csv, exceedance_csv, kde1_csv, load_checkpoint, load_dataset,
    load_realisations, parse_values, predictive_csv, save_checkpoint, save_realisations, scores_csv, trace_csv,
    Checkpoint, RealisationFile, RunConfig,
};
use sbnn_core::math::StreamCounter;
use sbnn_core::model::{sample_field, Inputs};
use sbnn_core::target::{simulate_target, TargetSource, TargetSpec};
use sbnn_core::{Error, Grid, Result};

use crate::Common;

fn load_config(c: &Common) -> Result<RunConfig> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("this command needs --config".into()))?;
    RunConfig::load(path)
}

fn out_dir(c: &Common, cfg: Option<&RunConfig>) -> Result<PathBuf> {
    let dir = c
        .out
        .clone()
        .or_else(|| cfg.map(|k| k.output.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes())?;
    info!("wrote {}", path.display());
    Ok(())
}

/// The stored mean field, provided it lives on `grid`.
fn mean_on<'a>(ckpt: &'a Checkpoint, grid: &Grid) -> Result<Option<&'a Array1<f64>>> {
    match &ckpt.mean_field {
        None => Ok(None),
        Some((g, m)) if g == grid => Ok(Some(m)),
        Some(_) => Err(Error::InvalidArgument(
            "the checkpoint's mean field lives on a different grid than the configured one".into(),
        )),
    }
}

fn check_arch(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<()> {
    if ckpt.arch != cfg.architecture()? {
        return Err(Error::InvalidArgument(
            "the checkpoint's architecture differs from the configured model".into(),
        ));
    }
    Ok(())
}

pub fn simulate(c: &Common, count: usize) -> Result<()> {
    let cfg = load_config(c)?;
    if matches!(cfg.target, TargetSpec::External { .. }) {
        return Err(Error::InvalidArgument("an external target cannot be simulated".into()));
    }
    let grid = cfg.grid()?;
    let seed = cfg.resolve_seed(c.seed, 0);
    let fields = simulate_target(&cfg.target, &grid, count, &mut StreamCounter::new(seed))?;
    let dir = out_dir(c, Some(&cfg))?;
    let path = dir.join("target.real");
    save_realisations(&path, &RealisationFile::new(grid.clone(), fields.clone())?)?;
    let mean = fields.mean_axis(Axis(0)).expect("count is positive");
    let var = if count > 1 { fields.var_axis(Axis(0), 1.0) } else { Array1::zeros(grid.len()) };
    println!(
        "{count} fields on {} locations; per-location mean in [{:.4}, {:.4}], variance in [{:.4}, {:.4}]",
        grid.len(),
        mean.fold(f64::INFINITY, |a, &b| a.min(b)),
        mean.fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        var.fold(f64::INFINITY, |a, &b| a.min(b)),
        var.fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
    );
    Ok(())
}

pub fn calibrate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let grid = cfg.grid()?;
    let arch = cfg.architecture()?;
    let inputs = Inputs::new(&arch, &grid.sites())?;
    let mut config = cfg.calibration.clone();
    config.seed = cfg.resolve_seed(c.seed, config.seed);
    let seed = config.seed;
    let mut pilot = StreamCounter::starting_at(seed, PILOT_STREAM);
    let (target, mean) = TargetSource::from_spec(&cfg.target, &grid, config.batch_size, &mut pilot)?;
    let psi0 = initial_psi(&arch, seed);
    let dir = out_dir(c, Some(&cfg))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml_string()?)?;

    let snapshot = |psi, step: usize| -> Result<Checkpoint> {
        let ck = Checkpoint::new(arch.clone(), psi, seed, step as u64)?;
        match &mean {
            Some(m) => ck.with_mean_field(grid.clone(), m.clone()),
            None => Ok(ck),
        }
    };
    let every = config.checkpoint_every;
    let mut cal = Calibrator::new(arch.clone(), inputs, target, psi0, config)?;
    cal.run(|cal| {
        let step = cal.trace().len();
        if let Some(row) = cal.trace().rows.last() {
            info!("outer step {step}: w1 {:.4}, grad norm {:.3}", row.w1, row.grad_norm_mean);
        }
        if every > 0 && step % every == 0 {
            save_checkpoint(&dir.join(format!("checkpoint_{step:06}.ckpt")), &snapshot(cal.psi().clone(), step)?)?;
        }
        Ok(())
    })?;
    let steps = cal.trace().len();
    let (psi, _, trace) = cal.into_parts();
    save_checkpoint(&dir.join("checkpoint.ckpt"), &snapshot(psi, steps)?)?;
    write_text(&dir.join("trace.csv"), &trace_csv(&trace))?;
    if let Some(avg) = trace.trailing_average() {
        println!("{steps} outer steps; trailing W1 average {avg:.4}");
    }
    Ok(())
}

pub fn sample_prior(c: &Common, checkpoint: &Path, count: usize) -> Result<()> {
    let cfg = load_config(c)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let grid = cfg.grid()?;
    let inputs = Inputs::new(&ckpt.arch, &grid.sites())?;
    let seed = cfg.resolve_seed(c.seed, ckpt.seed);
    let mut fields = sample_field(&ckpt.psi, &ckpt.arch, &inputs, count, &mut StreamCounter::new(seed))?;
    if let Some(m) = mean_on(&ckpt, &grid)? {
        fields += &m.view().insert_axis(Axis(0));
    }
    let dir = out_dir(c, Some(&cfg))?;
    save_realisations(&dir.join("prior.real"), &RealisationFile::new(grid, fields)?)
}

pub fn infer(c: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let inf = cfg
        .inference
        .clone()
        .ok_or_else(|| Error::InvalidArgument("config: infer needs an [inference] section".into()))?;
    let ckpt = load_checkpoint(checkpoint)?;
    check_arch(&ckpt, &cfg)?;
    let grid = cfg.grid()?;
    let data = load_dataset(&inf.dataset, grid.dim(), inf.noise_var, inf.transform)?;
    data.check_domain(&grid)?;
    let mut sampler = inf.sampler.clone();
    sampler.seed = cfg.resolve_seed(c.seed, sampler.seed);
    let mean = mean_on(&ckpt, &grid)?;
    let samples = sghmc_sample(&data, &ckpt.psi, &ckpt.arch, &sampler, mean.map(|m| (&grid, m)))?;
    let inputs = Inputs::new(&ckpt.arch, &grid.sites())?;
    let pred = predictive_field(&samples, &inputs, &ckpt.arch, mean)?;

    let dir = out_dir(c, Some(&cfg))?;
    let mut post = String::from("chain,draw");
    for j in 0..samples.chains.first().map_or(0, |ch| ch.ncols()) {
        let _ = write!(post, ",theta{j}");
    }
    post.push('\n');
    for (ci, chain) in samples.chains.iter().enumerate() {
        for (k, row) in chain.rows().into_iter().enumerate() {
            let _ = write!(post, "{ci},{k}");
            for v in row {
                let _ = write!(post, ",{v}");
            }
            post.push('\n');
        }
    }
    write_text(&dir.join("posterior.csv"), &post)?;
    write_text(&dir.join("predictive.csv"), &predictive_csv(&grid, &pred))?;
    save_realisations(&dir.join("predictive.real"), &RealisationFile::new(grid, pred.draws)?)?;
    println!("{} posterior draws from {} chains", samples.total_draws(), samples.chains.len());
    Ok(())
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("{what}: `{p}` is not a number")))
        })
        .collect()
}

fn default_anchors(grid: &Grid) -> Vec<Vec<f64>> {
    let ticks = |(lo, hi): (f64, f64)| -> Vec<f64> { (0..4).map(|i| lo + (hi - lo) * (2 * i + 1) as f64 / 8.0).collect() };
    match grid.bounds() {
        [x] => ticks(*x).into_iter().map(|a| vec![a]).collect(),
        [x, y] => {
            let (tx, ty) = (ticks(*x), ticks(*y));
            ty.iter().flat_map(|&b| tx.iter().map(move |&a| vec![a, b])).collect()
        }
        _ => Vec::new(),
    }
}

pub fn diagnose(
    c: &Common,
    input: &Path,
    bins: usize,
    anchors: Option<&str>,
    quantiles: Option<&str>,
    kde_at: Option<&str>,
) -> Result<()> {
    let cfg = c.config.as_ref().map(|_| load_config(c)).transpose()?;
    let file = load_realisations(input)?;
    let grid = &file.grid;
    let seed = c.seed.or(cfg.as_ref().and_then(|k| k.seed)).unwrap_or(0);
    let dir = out_dir(c, cfg.as_ref())?;

    let est = empirical_covariogram(&file.fields, grid, bins, DEFAULT_PAIR_CAP, seed)?;
    write_text(&dir.join("covariogram.csv"), &covariogram_csv(&est))?;

    let anchors = match anchors {
        Some(s) => s.split(';').map(|a| parse_floats(a, "anchor")).collect::<Result<Vec<_>>>()?,
        None => default_anchors(grid),
    };
    if !anchors.is_empty() {
        let maps = anchored_covariance(&file.fields, grid, &anchors)?;
        write_text(&dir.join("anchored.csv"), &anchored_csv(grid, &maps))?;
    }
    if let Some(q) = quantiles {
        let curve = exceedance_curve(&file.fields, grid, &parse_floats(q, "quantile")?, bins, DEFAULT_PAIR_CAP, seed)?;
        write_text(&dir.join("exceedance.csv"), &exceedance_csv(&curve))?;
    }
    if let Some(at) = kde_at {
        let point = parse_floats(at, "kde location")?;
        let col = grid
            .nearest(&point)
            .ok_or_else(|| Error::InvalidArgument(format!("kde location {point:?} lies outside the domain")))?;
        let values = file.fields.column(col).to_vec();
        write_text(&dir.join("kde.csv"), &kde1_csv(&kde_1d(&values, None)?))?;
    }
    Ok(())
}

pub fn score(c: &Common, draws: &Path, truth: &Path) -> Result<()> {
    let cfg = c.config.as_ref().map(|_| load_config(c)).transpose()?;
    let file = load_realisations(draws)?;
    let bytes = std::fs::read(truth).map_err(|source| Error::Io {
        path: truth.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format {
        context: "values file".into(),
        location: "file".into(),
        message: "not valid UTF-8".into(),
    })?;
    let values = parse_values(&text)?;
    let fields: Array2<f64> = file.fields;
    let report = score_draws(&fields, &values)?;
    let dir = out_dir(c, cfg.as_ref())?;
    write_text(&dir.join("scores.csv"), &scores_csv(&report))?;
    println!("mape {:.4}  rmspe {:.4}  crps {:.4}", report.mape, report.rmspe, report.crps);
    Ok(())
}
