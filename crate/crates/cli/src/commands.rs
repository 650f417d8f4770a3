//! The five pipeline stages. Each reads its inputs from the output
//! directory, writes its artifacts there, and echoes the effective config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ccnf::conformal::{
    calibrate as calibrate_record, coverage_from_scores, conformity_score, threshold, CalibrationRecord, RecordFile,
};
use ccnf::data::{
    gen_bimodal, gen_particle, load_csv, parse_csv, split, write_csv, DatasetMetadata, DatasetSchema, Provenance,
    SeriesDataset, SplitIndices, Standardizer,
};
use ccnf::flow::{train_mle, FlowModel, ModelFile};
use ccnf::numerics::SeededRng;
use ccnf::regions::{
    bonferroni_box, export_region, grid_region, mc_region, BonferroniCalibration, ClusterOptions, GridSpec,
    PredictionRegion,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{DataSource, RegionModeConfig, RunConfig, Stage};
use crate::error::CliError;

pub const COVERAGE_FORMAT: &str = "ccnf-coverage";
pub const COVERAGE_VERSION: u32 = 1;

type Result<T> = std::result::Result<T, CliError>;

/// Artifact locations inside one output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub out: PathBuf,
}

impl Paths {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn dataset_csv(&self) -> PathBuf {
        self.out.join("dataset.csv")
    }

    pub fn dataset_meta(&self) -> PathBuf {
        self.out.join("dataset.json")
    }

    pub fn model(&self) -> PathBuf {
        self.out.join("model.json")
    }

    pub fn loss_trace(&self) -> PathBuf {
        self.out.join("loss_trace.csv")
    }

    pub fn calibration(&self) -> PathBuf {
        self.out.join("calibration.json")
    }

    pub fn region(&self) -> PathBuf {
        self.out.join("region.json")
    }

    pub fn region_points(&self) -> PathBuf {
        self.out.join("region_points.csv")
    }

    pub fn coverage_json(&self) -> PathBuf {
        self.out.join("coverage.json")
    }

    pub fn coverage_csv(&self) -> PathBuf {
        self.out.join("coverage.csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageRow {
    pub epsilon: f64,
    pub coverage: f64,
    pub hits: usize,
    pub total: usize,
    pub mean_score: f64,
    /// Mean sample-mode region volume over the first `volume_series` test
    /// series, raw label units.
    pub mean_region_volume: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageReport {
    pub format: String,
    pub version: u32,
    pub model_hash: String,
    pub config_hash: String,
    pub dataset: Provenance,
    pub rows: Vec<CoverageRow>,
    pub config: serde_json::Value,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| ccnf::Error::io(path, e).into())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ccnf::Error::io(dir, e).into())
}

fn provenance(cfg: &RunConfig, command: &str) -> serde_json::Value {
    json!({
        "command": command,
        "config_hash": cfg.config_hash(),
        "config": cfg.echo(),
    })
}

fn schema(cfg: &RunConfig) -> DatasetSchema {
    DatasetSchema {
        n: cfg.data.n,
        context_len: cfg.data.context_len,
        horizon: cfg.data.horizon,
        dim: cfg.data.dim,
    }
}

/// Builds the dataset described by the config, generating or ingesting it.
pub fn build_dataset(cfg: &RunConfig) -> Result<SeriesDataset> {
    let d = &cfg.data;
    let seed = cfg.stage_seed(Stage::Data);
    Ok(match d.source {
        DataSource::Particle => gen_particle(d.n, d.context_len, d.horizon, d.sigma, seed)?,
        DataSource::Bimodal => gen_bimodal(d.n, d.context_len, d.horizon, seed)?,
        DataSource::Csv => {
            let path = d.path.as_ref().expect("validated");
            load_csv(path, schema(cfg))?
        }
    })
}

/// Reads the dataset written by `simulate` and checks it matches the config.
pub fn load_dataset(cfg: &RunConfig, paths: &Paths) -> Result<SeriesDataset> {
    let meta_path = paths.dataset_meta();
    let text = fs::read_to_string(&meta_path).map_err(|e| ccnf::Error::io(&meta_path, e))?;
    let meta = DatasetMetadata::from_json_str(&text)?;
    if meta.schema() != schema(cfg) {
        return Err(ccnf::Error::Input(format!(
            "dataset in {} has shape {:?}, config expects {:?}; rerun simulate",
            paths.out.display(),
            meta.schema(),
            schema(cfg)
        ))
        .into());
    }
    if let Provenance::Generator { name, seed, .. } = &meta.provenance {
        let expected = match cfg.data.source {
            DataSource::Particle => Some("particle"),
            DataSource::Bimodal => Some("bimodal"),
            DataSource::Csv => None,
        };
        if expected != Some(name.as_str()) || *seed != cfg.stage_seed(Stage::Data) {
            return Err(ccnf::Error::Input(format!(
                "dataset in {} was generated by {name} with another seed; rerun simulate",
                paths.out.display()
            ))
            .into());
        }
    }
    let csv_path = paths.dataset_csv();
    let file = fs::File::open(&csv_path).map_err(|e| ccnf::Error::io(&csv_path, e))?;
    let mut ds = parse_csv(std::io::BufReader::new(file), meta.schema())?;
    ds.provenance = meta.provenance;
    Ok(ds)
}

fn split_for(cfg: &RunConfig, n: usize) -> Result<SplitIndices> {
    Ok(split(n, cfg.split.train, cfg.split.calibration, cfg.stage_seed(Stage::Split))?)
}

/// Loads the model and refuses it unless it was trained under this config.
pub fn load_model(cfg: &RunConfig, paths: &Paths) -> Result<FlowModel> {
    let file = ModelFile::load(&paths.model())?;
    let expected = cfg.config_hash();
    match &file.config_hash {
        Some(h) if *h == expected => Ok(file.model),
        other => Err(CliError::ConfigMismatch {
            artifact: paths.model().display().to_string(),
            expected,
            found: other.clone().unwrap_or_else(|| "none".into()),
            rerun: "train".into(),
        }),
    }
}

pub fn load_record(model: &FlowModel, paths: &Paths) -> Result<CalibrationRecord> {
    let file = RecordFile::load(&paths.calibration())?;
    file.record.check_model(model)?;
    Ok(file.record)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let paths = Paths::new(out);
    ensure_dir(out)?;
    let ds = build_dataset(cfg)?;
    let mut csv = Vec::new();
    write_csv(&ds, &mut csv)?;
    write_file(&paths.dataset_csv(), &csv)?;
    write_file(&paths.dataset_meta(), DatasetMetadata::for_dataset(&ds).to_json_string().as_bytes())?;
    eprintln!("simulate: {} series written to {}", ds.len(), paths.dataset_csv().display());
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let paths = Paths::new(out);
    let ds = load_dataset(cfg, &paths)?;
    let idx = split_for(cfg, ds.len())?;
    let stats = Standardizer::fit(&ds, &idx.train)?;
    let init = FlowModel::new(cfg.model, ds.schema(), stats, cfg.stage_seed(Stage::Init))?;
    let train_set = ds.subset(&idx.train);
    let mut rng = SeededRng::new(cfg.stage_seed(Stage::Train));
    let outcome = train_mle(&init, &train_set, &cfg.train, &mut rng)?;

    let mut trace = String::from("epoch,mean_nll\n");
    for (e, nll) in outcome.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{},{}\n", e + 1, nll));
    }
    write_file(&paths.loss_trace(), trace.as_bytes())?;

    let mut file = ModelFile::new(outcome.model, Some(cfg.train), Some(cfg.config_hash()));
    file.provenance = provenance(cfg, "train");
    file.provenance["dataset"] = serde_json::to_value(&ds.provenance).expect("provenance serialises");
    file.provenance["n_train"] = json!(idx.train.len());
    file.save(&paths.model())?;
    if let Some(last) = outcome.loss_trace.last() {
        eprintln!("train: {} epochs, final mean NLL {last:.6}", outcome.loss_trace.len());
    }
    Ok(())
}

pub fn calibrate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let paths = Paths::new(out);
    let model = load_model(cfg, &paths)?;
    let ds = load_dataset(cfg, &paths)?;
    let idx = split_for(cfg, ds.len())?;
    let record = calibrate_record(&model, &ds.subset(&idx.calibration))?;
    let mut file = RecordFile::new(record);
    file.provenance = provenance(cfg, "calibrate");
    file.save(&paths.calibration())?;
    eprintln!("calibrate: {} scores", file.record.len());
    Ok(())
}

/// Test-split position `series` resolved to a dataset index.
fn test_series(idx: &SplitIndices, series: usize) -> Result<usize> {
    idx.test.get(series).copied().ok_or_else(|| {
        ccnf::Error::Input(format!(
            "series {series} is out of range for a test split of {}",
            idx.test.len()
        ))
        .into()
    })
}

pub fn region(cfg: &RunConfig, out: &Path) -> Result<PredictionRegion> {
    let paths = Paths::new(out);
    let model = load_model(cfg, &paths)?;
    let record = load_record(&model, &paths)?;
    let ds = load_dataset(cfg, &paths)?;
    let idx = split_for(cfg, ds.len())?;
    let r = &cfg.region;
    let at = test_series(&idx, r.series)?;
    let context = ds.context(at);
    let cal_set = ds.subset(&idx.calibration);
    let mut rng = SeededRng::new(cfg.stage_seed(Stage::Region));

    let region = match r.mode {
        RegionModeConfig::Grid => {
            let grid = GridSpec::from_calibration(&cal_set, r.cells)?;
            grid_region(&model, context, &record, r.epsilon, &grid, &r.cluster)?
        }
        RegionModeConfig::Samples => {
            mc_region(&model, context, &record, r.epsilon, r.n_samples, &mut rng, &r.cluster)?
        }
    };

    let mut prov = provenance(cfg, "region");
    prov["series"] = json!(r.series);
    prov["dataset_index"] = json!(at);
    prov["truth"] = json!(ds.future_flat(at));
    if r.bonferroni {
        let bc = BonferroniCalibration::fit(&model, &cal_set, r.epsilon, r.median_samples, &mut rng)?;
        let b = bonferroni_box(&model, context, &bc, &mut rng)?;
        prov["bonferroni_box"] = serde_json::to_value(&b).expect("box serialises");
        if b.volume.is_finite() {
            prov["bonferroni_volume"] = json!(b.volume);
        }
    }
    export_region(&region, prov, &paths.region(), Some(&paths.region_points()))?;
    eprintln!(
        "region: {} points, {} component(s), volume {:.6}",
        region.points.len(),
        region.n_components,
        region.volume.value
    );
    Ok(region)
}

pub fn coverage(cfg: &RunConfig, out: &Path) -> Result<CoverageReport> {
    let paths = Paths::new(out);
    let model = load_model(cfg, &paths)?;
    let record = load_record(&model, &paths)?;
    let ds = load_dataset(cfg, &paths)?;
    let idx = split_for(cfg, ds.len())?;
    if idx.test.is_empty() {
        return Err(ccnf::Error::Input("test split is empty".into()).into());
    }
    let scores = idx
        .test
        .iter()
        .map(|&i| conformity_score(&model, &ds.series[i]).map(|s| s.0))
        .collect::<ccnf::Result<Vec<f64>>>()?;

    let cov = &cfg.coverage;
    let mut rows = Vec::with_capacity(cfg.conformal.epsilons.len());
    for &eps in &cfg.conformal.epsilons {
        let th = threshold(&record, eps)?;
        let c = coverage_from_scores(&th, &scores);
        let mean_region_volume = if cov.volume_series > 0 {
            let mut rng = SeededRng::new(cfg.stage_seed(Stage::Coverage));
            let k = cov.volume_series.min(idx.test.len());
            let mut total = 0.0;
            for &i in &idx.test[..k] {
                let r = mc_region(
                    &model,
                    ds.context(i),
                    &record,
                    eps,
                    cov.volume_samples,
                    &mut rng,
                    &ClusterOptions::default(),
                )?;
                total += r.volume.value;
            }
            Some(total / k as f64)
        } else {
            None
        };
        rows.push(CoverageRow {
            epsilon: eps,
            coverage: c.coverage,
            hits: c.hits,
            total: c.total,
            mean_score: c.mean_score,
            mean_region_volume,
        });
    }

    let report = CoverageReport {
        format: COVERAGE_FORMAT.into(),
        version: COVERAGE_VERSION,
        model_hash: model.hash(),
        config_hash: cfg.config_hash(),
        dataset: ds.provenance.clone(),
        rows,
        config: cfg.echo(),
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serialises");
    text.push('\n');
    write_file(&paths.coverage_json(), text.as_bytes())?;

    let mut csv = Vec::new();
    writeln!(csv, "epsilon,coverage,hits,total,mean_score,mean_region_volume").expect("in-memory write");
    for r in &report.rows {
        let vol = r.mean_region_volume.map(|v| v.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{},{},{}", r.epsilon, r.coverage, r.hits, r.total, r.mean_score, vol)
            .expect("in-memory write");
    }
    write_file(&paths.coverage_csv(), &csv)?;
    for r in &report.rows {
        eprintln!("coverage: eps {} -> {:.4} ({}/{})", r.epsilon, r.coverage, r.hits, r.total);
    }
    Ok(report)
}
