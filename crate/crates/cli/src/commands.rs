use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use log::{info, warn};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use ttjac_core::harness::{
    criterion_values, sweep_tradeoff, thresholds_for_fractions, write_curve_csv,
};
use ttjac_core::jac::{draw_latents, stretched_tail_generator, Activation};
use ttjac_core::model::fit_score_model;
use ttjac_core::probe::{
    pairwise_matrix_from_samples, pairwise_matrix_from_tt, random_pairs, signal_spectrum, spectrum,
    suggest_rank, write_spectrum_csv,
};
use ttjac_core::{
    AlsConfig, FeatureMapSpec, FilterCriterion, GeneratorSpec, Grid1D, SampleSet, Scorer, Spectrum,
};

use crate::config::{Overrides, RankChoice, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
#[clap(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Identity,
    Affine,
    Mlp,
    StretchedTail,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
#[clap(rename_all = "lowercase")]
pub enum FeatureKind {
    Identity,
    Projection,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
#[clap(rename_all = "lowercase")]
pub enum ActivationArg {
    Tanh,
    Softplus,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
#[clap(rename_all = "snake_case")]
pub enum CriterionArg {
    TtScore,
    ExactScore,
    LatentNorm,
}

#[derive(Args, Debug)]
pub struct GeneratorArgs {
    /// generator family
    #[arg(long, value_enum)]
    kind: GeneratorKind,

    /// latent dimension d
    #[arg(long)]
    dim: usize,

    /// generator output dimension (affine, mlp; defaults to d)
    #[arg(long)]
    outputs: Option<usize>,

    /// hidden layer widths for mlp
    #[arg(long, value_delimiter(','), default_value = "16")]
    hidden: Vec<usize>,

    #[arg(long, value_enum, default_value_t = ActivationArg::Tanh)]
    activation: ActivationArg,

    /// stretched-tail: latent value where the stretch starts
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,

    /// stretched-tail: transition width
    #[arg(long, default_value_t = 0.05)]
    width: f64,

    /// stretched-tail: extra stretch factor beyond the threshold
    #[arg(long, default_value_t = 3.0)]
    stretch: f64,

    /// feature map applied to generator outputs
    #[arg(long, value_enum, default_value_t = FeatureKind::Identity)]
    features: FeatureKind,

    /// output dimension of the projection feature map
    #[arg(long)]
    feature_dim: Option<usize>,

    /// tag stored with samples and models
    #[arg(long)]
    tag: Option<String>,

    /// output JSON
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// generator JSON (see `ttjac generator`)
    #[arg(long, short)]
    generator: Option<PathBuf>,

    /// number of latent samples M
    #[arg(long, short = 'm')]
    count: Option<usize>,

    /// cells per latent component
    #[arg(long)]
    grid_size: Option<usize>,

    /// probability mass left outside the grid on each side
    #[arg(long)]
    tail_mass: Option<f64>,

    /// also write the samples as CSV
    #[arg(long)]
    csv: Option<PathBuf>,

    /// output sample file
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// sample file
    #[arg(long, short)]
    samples: PathBuf,

    /// ALS rank, or `auto` to take the rank probe's suggestion; ANOVA only when absent
    #[arg(long, short)]
    rank: Option<RankChoice>,

    #[arg(long)]
    sweeps: Option<usize>,

    /// ridge weight; 0 turns regularization off
    #[arg(long)]
    ridge: Option<f64>,

    /// slices with fewer samples are reported as underdetermined
    #[arg(long)]
    min_slice_samples: Option<usize>,

    /// share of samples held out for validation
    #[arg(long)]
    holdout: Option<f64>,

    /// fail when the holdout MSE exceeds this bound
    #[arg(long)]
    max_holdout_mse: Option<f64>,

    /// per-sweep CSV report
    #[arg(long)]
    report: Option<PathBuf>,

    /// output model file
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// model file
    #[arg(long)]
    model: PathBuf,

    /// CSV of latent rows, d columns, optional header
    #[arg(long)]
    latents: PathBuf,

    /// output CSV with one `score` column
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// estimate the pairwise matrices from a sample file
    #[arg(
        long,
        short,
        conflicts_with = "model",
        required_unless_present = "model"
    )]
    samples: Option<PathBuf>,

    /// compute the pairwise matrices exactly from a fitted model
    #[arg(long)]
    model: Option<PathBuf>,

    /// number of random component pairs
    #[arg(long)]
    pairs: Option<usize>,

    /// cumulative singular-value energy the suggested rank must reach
    #[arg(long)]
    energy: Option<f64>,

    /// output spectrum CSV
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TruncateArgs {
    /// sample file of the generated population
    #[arg(long, short)]
    samples: PathBuf,

    /// fitted model, needed for the tt_score criterion
    #[arg(long)]
    model: Option<PathBuf>,

    /// generator JSON of the generated population
    #[arg(long, short)]
    generator: Option<PathBuf>,

    /// generator JSON of the reference population
    #[arg(long)]
    reference_generator: PathBuf,

    /// sample file with the reference latents; drawn fresh when absent
    #[arg(long)]
    reference: Option<PathBuf>,

    /// reference size when drawing fresh latents (defaults to the sample count)
    #[arg(long)]
    reference_count: Option<usize>,

    /// kept fractions to sweep
    #[arg(long, value_delimiter(','))]
    fractions: Option<Vec<f64>>,

    /// filtering criteria
    #[arg(long, value_enum, value_delimiter(','))]
    criteria: Option<Vec<CriterionArg>>,

    /// neighbours for the k-NN manifolds
    #[arg(long, short)]
    k: Option<usize>,

    /// output curve CSV
    #[arg(long, short)]
    out: PathBuf,
}

impl SampleArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.generator = self.generator.clone();
        o.sample_count = self.count;
        o.grid_size = self.grid_size;
        o.tail_mass = self.tail_mass;
    }
}

impl FitArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.rank = self.rank;
        o.sweeps = self.sweeps;
        o.ridge = self.ridge;
        o.min_slice_samples = self.min_slice_samples;
        o.holdout_fraction = self.holdout;
        o.max_holdout_mse = self.max_holdout_mse;
    }
}

impl ProbeArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.pairs = self.pairs;
        o.energy = self.energy;
    }
}

impl TruncateArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.generator = self.generator.clone();
        o.fractions = self.fractions.clone();
        o.k = self.k;
    }
}

fn check_dim(cfg: &RunConfig, d: usize, what: &str) -> CliResult<()> {
    match cfg.d {
        Some(expected) if expected != d => Err(CliError::Config(format!(
            "{what} has latent dimension {d}, configuration says {expected}"
        ))),
        _ => Ok(()),
    }
}

fn generator_path(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.generator
        .as_deref()
        .ok_or_else(|| CliError::Config("no generator given (--generator or config key)".into()))
}

pub fn generator(args: &GeneratorArgs, cfg: &RunConfig) -> CliResult<()> {
    let d = args.dim;
    if d == 0 {
        return Err(CliError::Config("--dim must be at least 1".into()));
    }
    check_dim(cfg, d, "generator")?;
    let n_out = args.outputs.unwrap_or(d);
    let activation = match args.activation {
        ActivationArg::Tanh => Activation::Tanh,
        ActivationArg::Softplus => Activation::Softplus,
    };
    let seed = cfg.stage_seed("generator");
    let gen = match args.kind {
        GeneratorKind::Identity => GeneratorSpec::identity(d),
        GeneratorKind::Affine => GeneratorSpec::random_affine(d, n_out, seed),
        GeneratorKind::Mlp => GeneratorSpec::random_mlp(d, &args.hidden, n_out, activation, seed)?,
        GeneratorKind::StretchedTail => {
            stretched_tail_generator(d, args.threshold, args.width, args.stretch)?
        }
    };
    let features = match args.features {
        FeatureKind::Identity => FeatureMapSpec::Identity,
        FeatureKind::Projection => {
            let out = args.feature_dim.unwrap_or(gen.output_dim());
            FeatureMapSpec::random_projection(gen.output_dim(), out, cfg.stage_seed("features"))
        }
    };
    let tag = args
        .tag
        .clone()
        .unwrap_or_else(|| format!("{:?}-d{d}", args.kind).to_lowercase());
    let scorer = Scorer::new(gen, features)?.with_tag(tag);
    io::write_scorer(&args.out, &scorer)?;
    println!(
        "generator: d={d} outputs={} features={} tag={}",
        scorer.generator.output_dim(),
        scorer.feature_dim(),
        scorer.tag
    );
    Ok(())
}

pub fn sample(args: &SampleArgs, cfg: &RunConfig) -> CliResult<()> {
    let scorer = io::read_scorer(generator_path(cfg)?)?;
    let d = scorer.latent_dim();
    check_dim(cfg, d, "generator")?;
    let grid = Grid1D::equal_mass(cfg.grid_size, cfg.tail_mass)?;
    let samples = scorer.build_sample_set(&grid, cfg.sample_count, cfg.stage_seed("sample"))?;
    io::write_samples(&args.out, &samples)?;
    if let Some(path) = &args.csv {
        let mut w = io::create(path)?;
        samples.write_csv(&mut w)?;
        io::finish(path, w)?;
    }
    let (mean, std) = mean_std(samples.values());
    println!(
        "samples: M={} d={d} N={} score_mean={mean:.6} score_std={std:.6}",
        samples.len(),
        cfg.grid_size
    );
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pairs probed for a `d`-component tensor; `None` when there are fewer than two components.
fn probe_pairs(cfg: &RunConfig, d: usize) -> CliResult<Option<Vec<(usize, usize)>>> {
    if d < 2 {
        return Ok(None);
    }
    Ok(Some(random_pairs(d, cfg.pairs, cfg.stage_seed("probe"))?))
}

/// Full spectrum and the part above the sampling-noise edge, per pair.
type PairSpectra = Vec<((usize, usize), Spectrum, Spectrum)>;

fn sample_spectra(samples: &SampleSet, pairs: &[(usize, usize)]) -> CliResult<PairSpectra> {
    pairs
        .iter()
        .map(|&(k1, k2)| {
            let c = pairwise_matrix_from_samples(samples, k1, k2)?;
            let signal = signal_spectrum(&c)?;
            info!(
                "pair {k1}-{k2}: noise edge {:.3e}, {} of {} singular values above it",
                c.noise_level,
                signal.singular_values.len(),
                c.c.nrows()
            );
            Ok(((k1, k2), spectrum(&c)?, signal))
        })
        .collect()
}

pub fn fit(args: &FitArgs, cfg: &RunConfig) -> CliResult<()> {
    let samples = io::read_samples(&args.samples)?;
    check_dim(cfg, samples.dim(), "sample file")?;
    let n_holdout = (cfg.holdout_fraction * samples.len() as f64).round() as usize;
    if cfg.max_holdout_mse.is_some() && n_holdout == 0 {
        return Err(CliError::Config(
            "a holdout MSE bound needs a non-empty holdout set".into(),
        ));
    }
    if n_holdout >= samples.len() {
        return Err(CliError::Config(format!(
            "holdout of {n_holdout} leaves no training samples out of {}",
            samples.len()
        )));
    }
    let (train, holdout) = samples.split_at(samples.len() - n_holdout)?;

    let rank = match cfg.als.rank {
        None => None,
        Some(RankChoice::Fixed(r)) => Some(r),
        Some(RankChoice::Auto) => {
            let r = match probe_pairs(cfg, train.dim())? {
                None => 1,
                Some(pairs) => {
                    let spectra: Vec<Spectrum> = sample_spectra(&train, &pairs)?
                        .into_iter()
                        .map(|(_, _, signal)| signal)
                        .collect();
                    suggest_rank(&spectra, cfg.energy)?
                }
            };
            // an interior slice has r^2 unknowns and M/N samples on average
            let cap = ((train.len() / train.grid().n_cells()) as f64)
                .sqrt()
                .floor() as usize;
            let cap = cap.max(1);
            if r > cap {
                warn!(
                    "rank probe suggests rank {r} at energy {}; {} samples on {} cells support at most rank {cap}",
                    cfg.energy,
                    train.len(),
                    train.grid().n_cells()
                );
            } else {
                info!("rank probe suggests rank {r} at energy {}", cfg.energy);
            }
            Some(r.min(cap))
        }
    };
    let als_cfg = rank.map(|r| AlsConfig {
        rank: r,
        sweeps: cfg.als.sweeps,
        ridge: cfg.als.ridge,
        seed: cfg.stage_seed("als"),
        min_slice_samples: cfg.als.min_slice_samples,
        ..AlsConfig::default()
    });
    let outcome = fit_score_model(&train, als_cfg.as_ref(), cfg.fit_hash(rank))?;
    let model = outcome.model;

    let train_rmse = match &outcome.als {
        Some(report) => report.final_rmse(),
        None => model.holdout_mse(&train)?.sqrt(),
    };
    if let Some(report) = &outcome.als {
        if !report.underdetermined.is_empty() {
            let listed: Vec<String> = report
                .underdetermined
                .iter()
                .map(|(k, i, n)| format!("({k}, {i}): {n}"))
                .collect();
            warn!(
                "{} underdetermined slices held by the ridge term: {}",
                listed.len(),
                listed.join(", ")
            );
        }
    }
    if let Some(path) = &args.report {
        let mut w = io::create(path)?;
        let err = |e| CliError::io(path, e);
        use std::io::Write;
        writeln!(w, "sweep,rmse,underdetermined_slices").map_err(err)?;
        match &outcome.als {
            Some(report) => {
                for s in &report.sweeps {
                    writeln!(w, "{},{:e},{}", s.sweep, s.rmse, s.underdetermined_slices)
                        .map_err(err)?;
                }
            }
            None => writeln!(w, "0,{train_rmse:e},0").map_err(err)?,
        }
        io::finish(path, w)?;
    }

    let holdout_mse = if holdout.is_empty() {
        None
    } else {
        Some(model.holdout_mse(&holdout)?)
    };
    if let (Some(mse), Some(bound)) = (holdout_mse, cfg.max_holdout_mse) {
        if mse > bound {
            return Err(CliError::Numerical(format!(
                "holdout MSE {mse:e} exceeds the bound {bound:e}; model not written"
            )));
        }
    }
    io::write_model(&args.out, &model)?;
    let ranks = model.tensor().ranks();
    print!(
        "model: d={} N={} ranks={ranks:?} train_rmse={train_rmse:.6e}",
        model.dim(),
        model.grid().n_cells()
    );
    match holdout_mse {
        Some(mse) => println!(" holdout_mse={mse:.6e} (n={})", holdout.len()),
        None => println!(),
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let model = io::read_model(&args.model)?;
    let latents = io::read_latents_csv(&args.latents, model.dim())?;
    let scores = model.eval_latents(&latents)?;
    io::write_scores_csv(&args.out, &scores)?;
    info!("scored {} latent rows", scores.len());
    Ok(())
}

pub fn probe(args: &ProbeArgs, cfg: &RunConfig) -> CliResult<()> {
    let rows = if let Some(path) = &args.samples {
        let samples = io::read_samples(path)?;
        let pairs = probe_pairs(cfg, samples.dim())?.ok_or_else(|| {
            CliError::Config("rank probing needs at least 2 latent components".into())
        })?;
        sample_spectra(&samples, &pairs)?
    } else {
        let path = args.model.as_ref().expect("clap enforces one source");
        let model = io::read_model(path)?;
        let pairs = probe_pairs(cfg, model.dim())?.ok_or_else(|| {
            CliError::Config("rank probing needs at least 2 latent components".into())
        })?;
        pairs
            .iter()
            .map(|&(k1, k2)| {
                let s = spectrum(&pairwise_matrix_from_tt(model.tensor(), k1, k2)?)?;
                Ok(((k1, k2), s.clone(), s))
            })
            .collect::<CliResult<PairSpectra>>()?
    };
    let signal: Vec<Spectrum> = rows.iter().map(|(_, _, s)| s.clone()).collect();
    let rank = suggest_rank(&signal, cfg.energy)?;
    let full: Vec<_> = rows.into_iter().map(|(p, s, _)| (p, s)).collect();
    let mut w = io::create(&args.out)?;
    write_spectrum_csv(&mut w, &full).map_err(|e| CliError::io(&args.out, e))?;
    io::finish(&args.out, w)?;
    println!(
        "suggested rank: {rank} (energy {}, {} pairs)",
        cfg.energy,
        full.len()
    );
    Ok(())
}

fn embed_all(scorer: &Scorer, latents: &Array2<f64>) -> CliResult<Array2<f64>> {
    let rows: Vec<_> = latents
        .outer_iter()
        .into_par_iter()
        .map(|z| scorer.embed(z.as_slice().expect("row-major latents")))
        .collect();
    let dim = scorer.feature_dim();
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        flat.extend(r?);
    }
    Ok(Array2::from_shape_vec((latents.nrows(), dim), flat).expect("rows x feature dim"))
}

pub fn truncate(args: &TruncateArgs, cfg: &RunConfig) -> CliResult<()> {
    let samples = io::read_samples(&args.samples)?;
    let scorer = io::read_scorer(generator_path(cfg)?)?;
    if scorer.latent_dim() != samples.dim() {
        return Err(CliError::Config(format!(
            "generator has latent dimension {}, samples have {}",
            scorer.latent_dim(),
            samples.dim()
        )));
    }
    let reference = io::read_scorer(&args.reference_generator)?;
    let model = args.model.as_deref().map(io::read_model).transpose()?;

    let ref_latents = match &args.reference {
        Some(path) => io::read_samples(path)?.latents().clone(),
        None => {
            let m = args.reference_count.unwrap_or(samples.len());
            if m == 0 {
                return Err(CliError::Config(
                    "reference count must be at least 1".into(),
                ));
            }
            draw_latents(m, reference.latent_dim(), cfg.stage_seed("reference"))
        }
    };
    if ref_latents.ncols() != reference.latent_dim() {
        return Err(CliError::Config(format!(
            "reference latents have {} components, reference generator expects {}",
            ref_latents.ncols(),
            reference.latent_dim()
        )));
    }
    let gen_feats = embed_all(&scorer, samples.latents())?;
    let real_feats = embed_all(&reference, &ref_latents)?;
    if gen_feats.len_of(Axis(1)) != real_feats.len_of(Axis(1)) {
        return Err(CliError::Config(format!(
            "feature dimensions differ: generated {}, reference {}",
            gen_feats.ncols(),
            real_feats.ncols()
        )));
    }

    let criteria: Vec<CriterionArg> = match &args.criteria {
        Some(c) => c.clone(),
        None if model.is_some() => vec![
            CriterionArg::TtScore,
            CriterionArg::ExactScore,
            CriterionArg::LatentNorm,
        ],
        None => vec![CriterionArg::ExactScore, CriterionArg::LatentNorm],
    };
    let mut sweeps = Vec::with_capacity(criteria.len());
    for c in criteria {
        let criterion = match c {
            CriterionArg::TtScore => FilterCriterion::tt_score(),
            CriterionArg::ExactScore => FilterCriterion::exact_score(),
            CriterionArg::LatentNorm => FilterCriterion::latent_norm(),
        };
        let values = criterion_values(&samples, criterion, model.as_ref())?;
        let thresholds = thresholds_for_fractions(&values, criterion, &cfg.fractions)?;
        sweeps.push((criterion, thresholds));
    }
    let curves = sweep_tradeoff(
        &samples,
        &gen_feats,
        &real_feats,
        &sweeps,
        model.as_ref(),
        cfg.k,
    )?;
    let mut w = io::create(&args.out)?;
    write_curve_csv(&mut w, &curves).map_err(|e| CliError::io(&args.out, e))?;
    io::finish(&args.out, w)?;
    for c in &curves {
        if let Some(p) = c
            .points
            .iter()
            .min_by(|a, b| a.kept_fraction.total_cmp(&b.kept_fraction))
        {
            println!(
                "{}: {} points, at kept {:.3} precision={:.4} recall={:.4}",
                c.criterion.name(),
                c.points.len(),
                p.kept_fraction,
                p.precision,
                p.recall
            );
        }
    }
    Ok(())
}
