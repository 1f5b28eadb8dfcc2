//! Runs every grid cell and writes its artifacts.
//!
//! Layout under `output_dir`:
//! `config.json`, `summary.csv`, and per cell `<NN>_<losses>/trace.csv` and
//! `<NN>_<losses>/report.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;
use vireid_lab::eval::{evaluate, RetrievalReport, Shot};
use vireid_lab::train::{generate_synthetic_dataset, train_run, write_trace_csv, LossKind, TrainOutput};
use vireid_lab::{Modality, Sample};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// A real serialized with exactly six decimals.
#[derive(Debug, Clone, Copy)]
pub struct Fixed6(pub f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom("non-finite number"));
        }
        RawValue::from_string(format!("{:.6}", self.0))
            .map_err(S::Error::custom)?
            .serialize(s)
    }
}

pub const REPORT_RANKS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone)]
pub struct CellResult {
    pub index: usize,
    pub name: String,
    pub losses: Vec<LossKind>,
    pub report: RetrievalReport,
}

impl CellResult {
    pub fn dir_name(&self) -> String {
        format!("{:02}_{}", self.index, self.name)
    }
}

#[derive(Serialize)]
struct ProtocolJson<'a> {
    shot: Shot,
    trials: usize,
    gallery_draw: &'a str,
    query_modality: Modality,
    gallery_modality: Modality,
}

#[derive(Serialize)]
struct CmcJson {
    rank1: Fixed6,
    rank5: Fixed6,
    rank10: Fixed6,
    rank20: Fixed6,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    cell: &'a str,
    losses: &'a [LossKind],
    protocol: ProtocolJson<'a>,
    cmc: CmcJson,
    map: Fixed6,
    trials: usize,
    seed: u64,
}

pub fn cell_name(losses: &[LossKind]) -> String {
    losses.iter().map(|l| l.as_str()).collect::<Vec<_>>().join("+")
}

/// Infrared rows as queries, visible rows as gallery.
pub fn split_by_modality(samples: &[Sample]) -> (Vec<Sample>, Vec<Sample>) {
    samples.iter().cloned().partition(|s| s.modality == Modality::Infrared)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable artifact");
    s.push('\n');
    s
}

pub fn report_json(cell: &CellResult, cfg: &ExperimentConfig) -> String {
    let r = &cell.report;
    to_json(&ReportJson {
        cell: &cell.name,
        losses: &cell.losses,
        protocol: ProtocolJson {
            shot: r.protocol.shot,
            trials: r.protocol.trials,
            gallery_draw: &r.protocol.gallery_draw,
            query_modality: Modality::Infrared,
            gallery_modality: Modality::Visible,
        },
        cmc: CmcJson {
            rank1: Fixed6(r.cmc_at(1)),
            rank5: Fixed6(r.cmc_at(5)),
            rank10: Fixed6(r.cmc_at(10)),
            rank20: Fixed6(r.cmc_at(20)),
        },
        map: Fixed6(r.map),
        trials: r.protocol.trials,
        seed: cfg.eval.seed,
    })
}

pub fn summary_csv(cells: &[CellResult]) -> String {
    let mut out = String::from("cell,losses,rank1,rank10,map\n");
    for c in cells {
        out += &format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            c.index,
            c.name,
            c.report.cmc_at(1),
            c.report.cmc_at(10),
            c.report.map
        );
    }
    out
}

/// Trains one cell and evaluates the trained table.
pub fn run_cell(
    cfg: &ExperimentConfig,
    dataset: &[Sample],
    losses: &[LossKind],
) -> vireid_lab::Result<(TrainOutput, RetrievalReport)> {
    let out = train_run(dataset, &cfg.cell_config(losses))?;
    let (queries, gallery) = split_by_modality(&out.table.samples(dataset));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let report = evaluate(&queries, &gallery, cfg.eval.shot, cfg.eval.trials, &mut rng)?;
    Ok((out, report))
}

/// Validates, runs all cells (concurrently) and writes every artifact.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CellResult>, CliError> {
    cfg.validate()?;
    let dataset = generate_synthetic_dataset(&cfg.synthetic).map_err(|source| CliError::Numeric {
        cell: "dataset".into(),
        source,
    })?;
    let cells = cfg.cells();
    let outcomes: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .map(|losses| scope.spawn(|| run_cell(cfg, &dataset, losses)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("cell worker panicked"))
            .collect()
    });

    let root = &cfg.output_dir;
    fs::create_dir_all(root).map_err(|source| CliError::Io {
        path: root.clone(),
        source,
    })?;
    let mut results = Vec::with_capacity(cells.len());
    for (index, (losses, outcome)) in cells.into_iter().zip(outcomes).enumerate() {
        let name = cell_name(&losses);
        let (train, report) = outcome.map_err(|source| CliError::Numeric {
            cell: name.clone(),
            source,
        })?;
        let cell = CellResult {
            index,
            name,
            losses,
            report,
        };
        let dir: PathBuf = root.join(cell.dir_name());
        fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut trace = Vec::new();
        write_trace_csv(&mut trace, &cell.losses, &train.trace).expect("in-memory write");
        write_file(&dir.join("trace.csv"), &trace)?;
        write_file(&dir.join("report.json"), report_json(&cell, cfg).as_bytes())?;
        results.push(cell);
    }
    write_file(&root.join("summary.csv"), summary_csv(&results).as_bytes())?;
    write_file(&root.join("config.json"), to_json(cfg).as_bytes())?;
    Ok(results)
}
