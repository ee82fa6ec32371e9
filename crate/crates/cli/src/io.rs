use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use ttjac_core::{SampleSet, ScoreModel, Scorer};

use crate::error::{CliError, CliResult};

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn finish(path: &Path, mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

// wraps a core error with the file it came from, keeping its class
fn with_path(path: &Path, e: ttjac_core::Error) -> CliError {
    match e.kind() {
        ttjac_core::ErrorKind::Data => CliError::Data(format!("{}: {e}", path.display())),
        _ => CliError::Core(e),
    }
}

pub fn read_samples(path: &Path) -> CliResult<SampleSet> {
    SampleSet::read_from(open(path)?).map_err(|e| with_path(path, e))
}

pub fn write_samples(path: &Path, samples: &SampleSet) -> CliResult<()> {
    let mut w = create(path)?;
    samples.write_to(&mut w)?;
    finish(path, w)
}

pub fn read_model(path: &Path) -> CliResult<ScoreModel> {
    ScoreModel::read_from(open(path)?).map_err(|e| with_path(path, e))
}

pub fn write_model(path: &Path, model: &ScoreModel) -> CliResult<()> {
    let mut w = create(path)?;
    model.write_to(&mut w)?;
    finish(path, w)
}

pub fn read_scorer(path: &Path) -> CliResult<Scorer> {
    let scorer: Scorer = serde_json::from_reader(open(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    scorer
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(scorer)
}

pub fn write_scorer(path: &Path, scorer: &Scorer) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, scorer).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(w).map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

/// Reads latent rows from CSV. A first row that does not parse as numbers is a header.
pub fn read_latents_csv(path: &Path, d: usize) -> CliResult<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut flat = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(CliError::Data(format!(
                    "{} line {}: {e}",
                    path.display(),
                    line + 1
                )))
            }
        };
        if values.len() != d {
            return Err(CliError::Data(format!(
                "{} line {}: {} components, model expects {d}",
                path.display(),
                line + 1,
                values.len()
            )));
        }
        flat.extend(values);
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, d), flat).expect("rows x d values"))
}

pub fn write_scores_csv(path: &Path, scores: &[f64]) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "score").map_err(io)?;
    for s in scores {
        writeln!(w, "{s:e}").map_err(io)?;
    }
    finish(path, w)
}
