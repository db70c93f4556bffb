use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use regdgcnn_core::mesh::{
    merge_vertices, parse_stl, validate_feasibility, write_stl_binary, FeasibilityReport, TriangleMesh,
};
use regdgcnn_core::model::{count_parameters, RegDgcnn, RegDgcnnConfig};
use regdgcnn_core::pointcloud::{
    cache_file_name, diversity_score, normalize_unit_sphere, read_cache, sample_surface, write_cache,
    DiversityOptions, PointCloud,
};
use regdgcnn_core::synthetic::synthetic_designs;
use regdgcnn_core::training::{
    evaluate, scaling_study, split_dataset, Checkpoint, Dataset, EpochRecord, Metrics, SplitAssignment,
    TrainConfig, Trainer,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{load_manifest, stl_files, Manifest};
use crate::{
    Cli, Command, DataArgs, DiversityArgs, EvalArgs, HyperArgs, InfoArgs, PredictArgs, SampleArgs, ScalingArgs,
    SplitArgs, SynthArgs, TrainArgs, ValidateArgs,
};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Validate(a) => validate(&cfg, a),
        Command::Sample(a) => sample(&cfg, a),
        Command::Diversity(a) => diversity(&cfg, a),
        Command::Split(a) => split(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Predict(a) => predict(&cfg, a),
        Command::ScalingStudy(a) => scaling(&cfg, a),
        Command::Info(a) => info_cmd(&cfg, a),
        Command::Synth(a) => synth(a),
    }
}

fn existing(flag: &Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let path = flag
        .clone()
        .or_else(|| file.clone())
        .ok_or_else(|| CliError::Usage(format!("--{what} is required (flag or [paths] entry)")))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(path)
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<S: Serialize>(out: &Option<PathBuf>, value: &S) -> Result<(), CliError> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv<S: Serialize>(w: Box<dyn Write>, rows: &[S]) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

fn read_mesh(path: &Path) -> Result<TriangleMesh, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_stl(&bytes).map_err(|source| CliError::Mesh {
        path: path.display().to_string(),
        source,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct ValidationEntry {
    design_id: String,
    path: String,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    report: Option<FeasibilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl ValidationEntry {
    fn feasible(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.is_watertight)
    }
}

fn validate_file(path: &Path, eps: f64) -> ValidationEntry {
    let (report, error) = match read_mesh(path) {
        Ok(mesh) => (Some(validate_feasibility(&merge_vertices(&mesh, eps))), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ValidationEntry {
        design_id: stem(path),
        path: path.display().to_string(),
        report,
        error,
    }
}

fn validate(cfg: &RunConfig, a: ValidateArgs) -> Result<(), CliError> {
    if !(a.merge_epsilon >= 0.0) {
        return Err(CliError::Usage("--merge-epsilon must be non-negative".into()));
    }
    let failed = if let Some(path) = &a.stl {
        let path = existing(&Some(path.clone()), &None, "stl")?;
        let entry = validate_file(&path, a.merge_epsilon);
        write_json(&a.out.out, &entry)?;
        usize::from(!entry.feasible())
    } else {
        let dir = existing(&a.stl_dir, &cfg.paths.stl_dir, "stl-dir")?;
        let files: Vec<PathBuf> = stl_files(&dir).map_err(|e| CliError::io(&dir, e))?.into_values().collect();
        let entries: Vec<ValidationEntry> = files.par_iter().map(|p| validate_file(p, a.merge_epsilon)).collect();
        write_json(&a.out.out, &entries)?;
        entries.iter().filter(|e| !e.feasible()).count()
    };
    if failed > 0 {
        return Err(CliError::Infeasible(failed));
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleRow {
    design_id: String,
    points: usize,
    seed: u64,
    status: &'static str,
    cache_file: String,
}

fn sample_one(stl: &Path, cache: &Path, n: usize, seed: u64) -> Result<(), CliError> {
    let mesh = read_mesh(stl)?;
    let cloud = sample_surface(&mesh, n, seed)?;
    let (cloud, _) = normalize_unit_sphere(&cloud);
    write_cache(cache, &cloud.to_f32())?;
    Ok(())
}

fn sample(cfg: &RunConfig, a: SampleArgs) -> Result<(), CliError> {
    let stl_dir = existing(&a.stl_dir, &cfg.paths.stl_dir, "stl-dir")?;
    let cache_dir = a
        .cache_dir
        .clone()
        .or_else(|| cfg.paths.cache_dir.clone())
        .ok_or_else(|| CliError::Usage("--cache-dir is required".into()))?;
    fs::create_dir_all(&cache_dir).map_err(|e| CliError::io(&cache_dir, e))?;
    let n = a.points.unwrap_or(cfg.train.points_per_cloud);
    let seed = a.seed.unwrap_or(cfg.train.sample_seed);
    if n == 0 {
        return Err(CliError::Usage("--points must be positive".into()));
    }
    let designs: BTreeMap<String, PathBuf> = match a.manifest.clone().or_else(|| cfg.paths.manifest.clone()) {
        Some(m) => {
            let m = existing(&Some(m), &None, "manifest")?;
            load_manifest(&m, Some(&stl_dir), &a.aliases)?.stl_paths
        }
        None => stl_files(&stl_dir).map_err(|e| CliError::io(&stl_dir, e))?,
    };
    let results: Vec<(SampleRow, Option<String>)> = designs
        .par_iter()
        .map(|(id, stl)| {
            let name = cache_file_name(id, n, seed);
            let path = cache_dir.join(&name);
            let mut row = SampleRow {
                design_id: id.clone(),
                points: n,
                seed,
                status: "written",
                cache_file: name,
            };
            if path.is_file() && !a.force {
                row.status = "skipped";
                return (row, None);
            }
            match sample_one(stl, &path, n, seed) {
                Ok(()) => (row, None),
                Err(e) => {
                    row.status = "failed";
                    (row, Some(format!("{id}: {e}")))
                }
            }
        })
        .collect();
    let failures: Vec<String> = results.iter().filter_map(|r| r.1.clone()).collect();
    let rows: Vec<SampleRow> = results.into_iter().map(|r| r.0).collect();
    info!(
        "{} written, {} skipped, {} failed",
        rows.iter().filter(|r| r.status == "written").count(),
        rows.iter().filter(|r| r.status == "skipped").count(),
        failures.len()
    );
    write_csv(output(&a.out.out)?, &rows)?;
    if !failures.is_empty() {
        for f in &failures {
            warn!("{f}");
        }
        return Err(CliError::SampleFailed(failures.len()));
    }
    Ok(())
}

/// Cached design ids: from the manifest when given, else every cache file
/// matching the point count and seed.
fn cached_ids(cfg: &RunConfig, data: &DataArgs, cache_dir: &Path, n: usize, seed: u64) -> Result<Vec<String>, CliError> {
    if let Some(m) = data.manifest.clone().or_else(|| cfg.paths.manifest.clone()) {
        let m = existing(&Some(m), &None, "manifest")?;
        return Ok(load_manifest(&m, None, &data.aliases)?.ids());
    }
    let suffix = format!("_{n}_{seed}.dapc");
    let mut ids: Vec<String> = fs::read_dir(cache_dir)
        .map_err(|e| CliError::io(cache_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|f| f.strip_suffix(&suffix)).map(String::from))
        .collect();
    ids.sort();
    Ok(ids)
}

#[derive(Serialize)]
struct DiversityRow {
    n_clouds: usize,
    points_per_cloud: usize,
    score: f64,
}

fn diversity(cfg: &RunConfig, a: DiversityArgs) -> Result<(), CliError> {
    let cache_dir = existing(&a.data.cache_dir, &cfg.paths.cache_dir, "cache-dir")?;
    let n = a.data.points.unwrap_or(cfg.train.points_per_cloud);
    let seed = a.data.sample_seed.unwrap_or(cfg.train.sample_seed);
    let ids = cached_ids(cfg, &a.data, &cache_dir, n, seed)?;
    let clouds = ids
        .par_iter()
        .map(|id| {
            let pts = read_cache(&cache_dir.join(cache_file_name(id, n, seed)))?;
            let mut pc = PointCloud::new(pts.iter().map(|p| p.map(f64::from)).collect());
            pc.design_id = Some(id.clone());
            Ok(pc)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let opts = DiversityOptions {
        subsample: (!a.no_subsample).then_some(a.subsample),
        seed: a.seed,
    };
    let score = diversity_score(&clouds, opts)?;
    info!("diversity over {} clouds: {score:.6}", clouds.len());
    write_csv(
        output(&a.out.out)?,
        &[DiversityRow {
            n_clouds: clouds.len(),
            points_per_cloud: n,
            score,
        }],
    )
}

#[derive(Serialize, serde::Deserialize)]
struct SplitRow {
    design_id: String,
    split: String,
}

fn split_rows(s: &SplitAssignment) -> Vec<SplitRow> {
    let mut rows: Vec<SplitRow> = [("train", &s.train), ("validation", &s.validation), ("test", &s.test)]
        .into_iter()
        .flat_map(|(name, ids)| {
            ids.iter().map(move |id| SplitRow {
                design_id: id.clone(),
                split: name.to_string(),
            })
        })
        .collect();
    rows.sort_by(|a, b| a.design_id.cmp(&b.design_id));
    rows
}

fn read_split(path: &Path) -> Result<SplitAssignment, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut s = SplitAssignment {
        train: vec![],
        validation: vec![],
        test: vec![],
    };
    for row in reader.deserialize::<SplitRow>() {
        let row = row?;
        match row.split.as_str() {
            "train" => s.train.push(row.design_id),
            "validation" => s.validation.push(row.design_id),
            "test" => s.test.push(row.design_id),
            other => return Err(CliError::Usage(format!("unknown split {other:?} in {}", path.display()))),
        }
    }
    Ok(s)
}

fn load_manifest_arg(
    cfg: &RunConfig,
    manifest: &Option<PathBuf>,
    stl_dir: Option<&Path>,
    aliases: &[(String, String)],
) -> Result<Manifest, CliError> {
    let path = existing(manifest, &cfg.paths.manifest, "manifest")?;
    Ok(load_manifest(&path, stl_dir, aliases)?)
}

fn split(cfg: &RunConfig, a: SplitArgs) -> Result<(), CliError> {
    let stl_dir = match a.stl_dir.clone() {
        Some(d) => Some(existing(&Some(d), &None, "stl-dir")?),
        None => None,
    };
    let manifest = load_manifest_arg(cfg, &a.manifest, stl_dir.as_deref(), &a.aliases)?;
    let s = split_dataset(&manifest.ids(), a.seed.unwrap_or(cfg.train.seed))?;
    info!("split: {} / {} / {}", s.train.len(), s.validation.len(), s.test.len());
    write_csv(output(&a.out.out)?, &split_rows(&s))
}

fn resolve(cfg: &RunConfig, h: &HyperArgs, data: Option<&DataArgs>) -> (RegDgcnnConfig, TrainConfig) {
    let mut m = cfg.model.clone();
    let mut t = cfg.train.clone();
    if let Some(v) = h.k {
        m.k = v;
    }
    if let Some(v) = &h.edgeconv_channels {
        m.edgeconv_channels = v.clone();
    }
    if let Some(v) = h.embedding_dim {
        m.embedding_dim = v;
    }
    if let Some(v) = &h.fc_channels {
        m.fc_channels = v.clone();
    }
    if let Some(v) = h.dropout {
        m.dropout_p = v;
    }
    if h.no_batch_norm {
        m.use_batch_norm = false;
    }
    if let Some(v) = h.aggregation {
        m.aggregation = v.into();
    }
    if let Some(v) = h.epochs {
        t.epochs = v;
    }
    if let Some(v) = h.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = h.lr {
        t.learning_rate = v;
    }
    if let Some(v) = h.patience {
        t.scheduler_patience = v;
    }
    if let Some(v) = h.factor {
        t.scheduler_factor = v;
    }
    if let Some(v) = h.seed {
        t.seed = v;
    }
    if let Some(v) = h.train_fraction {
        t.train_fraction_of_train_split = v;
    }
    if let Some(d) = data {
        if let Some(v) = d.points {
            t.points_per_cloud = v;
        }
        if let Some(v) = d.sample_seed {
            t.sample_seed = v;
        }
    }
    m.input_points = t.points_per_cloud;
    (m, t)
}

fn check_configs(m: &RegDgcnnConfig, t: &TrainConfig) -> Result<(), CliError> {
    m.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    t.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if t.points_per_cloud < m.min_points() {
        return Err(CliError::Usage(format!(
            "{} points per cloud is too few for k = {}",
            t.points_per_cloud, m.k
        )));
    }
    Ok(())
}

fn load_dataset(cfg: &RunConfig, data: &DataArgs, n: usize, seed: u64) -> Result<(Manifest, Dataset), CliError> {
    let cache_dir = existing(&data.cache_dir, &cfg.paths.cache_dir, "cache-dir")?;
    let manifest = load_manifest_arg(cfg, &data.manifest, None, &data.aliases)?;
    let dataset = Dataset::from_cache(&cache_dir, &manifest.targets(), n, seed)?;
    info!("loaded {} cached clouds of {n} points", dataset.len());
    Ok((manifest, dataset))
}

#[derive(Serialize)]
struct MetricsRow {
    split: String,
    mse: f64,
    r2: f64,
    mean_rel_err_pct: f64,
}

impl MetricsRow {
    fn new(split: &str, m: Metrics) -> Self {
        Self {
            split: split.into(),
            mse: m.mse,
            r2: m.r2,
            mean_rel_err_pct: m.mean_rel_err_pct,
        }
    }
}

fn split_metrics(ckpt: &Checkpoint<f32>, dataset: &Dataset, s: &SplitAssignment) -> Result<Vec<MetricsRow>, CliError> {
    let model = ckpt.model()?;
    let mut rows = Vec::new();
    for (name, ids) in [("train", &s.train), ("validation", &s.validation), ("test", &s.test)] {
        if !ids.is_empty() {
            rows.push(MetricsRow::new(name, evaluate(&model, dataset, ids, ckpt.target_norm)?));
        }
    }
    Ok(rows)
}

fn append_history(path: &Path, records: &[EpochRecord], fresh: bool) -> Result<(), CliError> {
    let file = fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    if fresh && records.is_empty() {
        w.write_record(["epoch", "train_mse", "val_mse", "lr"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn train(cfg: &RunConfig, a: TrainArgs) -> Result<(), CliError> {
    let out_dir = a
        .out_dir
        .clone()
        .or_else(|| cfg.paths.output_dir.clone())
        .ok_or_else(|| CliError::Usage("--out-dir is required".into()))?;
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let last_path = out_dir.join("last.ckpt");
    let best_path = out_dir.join("best.ckpt");
    let history_path = out_dir.join("history.csv");

    let resumed = if a.resume {
        if !last_path.is_file() {
            return Err(CliError::Usage(format!("--resume: {} not found", last_path.display())));
        }
        let last = Checkpoint::<f32>::load(&last_path)?;
        let best = if best_path.is_file() {
            Some(Checkpoint::<f32>::load(&best_path)?)
        } else {
            None
        };
        Some((last, best))
    } else {
        None
    };
    let (model_cfg, mut train_cfg) = match &resumed {
        Some((last, _)) => (last.model_config.clone(), last.train_config.clone()),
        None => resolve(cfg, &a.hyper, Some(&a.data)),
    };
    if let (Some(_), Some(e)) = (&resumed, a.hyper.epochs) {
        train_cfg.epochs = e;
    }
    check_configs(&model_cfg, &train_cfg)?;
    let (manifest, dataset) = load_dataset(cfg, &a.data, train_cfg.points_per_cloud, train_cfg.sample_seed)?;
    let s = match &a.split {
        Some(p) => read_split(&existing(&Some(p.clone()), &None, "split")?)?,
        None => split_dataset(&manifest.ids(), train_cfg.seed)?,
    };
    write_csv(
        Box::new(fs::File::create(out_dir.join("split.csv")).map_err(|e| CliError::io(&out_dir, e))?),
        &split_rows(&s),
    )?;
    info!(
        "designs: {} train / {} validation / {} test",
        s.train.len(),
        s.validation.len(),
        s.test.len()
    );

    let mut trainer = match resumed {
        Some((last, best)) => {
            let mut t = Trainer::resume(last, best, &dataset, &s.train, &s.validation)?;
            t.set_epochs(train_cfg.epochs);
            t
        }
        None => {
            let model = RegDgcnn::<f32>::init(model_cfg.clone(), train_cfg.seed)?;
            info!("model with {} parameters", model.count_parameters());
            Trainer::new(model, &dataset, &s.train, &s.validation, train_cfg.clone())?
        }
    };
    if !a.resume {
        append_history(&history_path, &[], true)?;
    }
    while trainer.epoch() < train_cfg.epochs as u64 {
        let record = trainer.run_epoch()?;
        append_history(&history_path, &[record], false)?;
        trainer.checkpoint().save(&last_path)?;
        if let Some(best) = trainer.best() {
            if best.epoch == record.epoch {
                best.save(&best_path)?;
            }
        }
    }
    let best = match trainer.best() {
        Some(b) => b.clone(),
        None => {
            let c = trainer.checkpoint();
            c.save(&best_path)?;
            c
        }
    };
    info!("best epoch {} (val_mse {:.6e})", best.epoch, best.best_val_loss);
    let rows = split_metrics(&best, &dataset, &s)?;
    write_csv(
        Box::new(fs::File::create(out_dir.join("metrics.csv")).map_err(|e| CliError::io(&out_dir, e))?),
        &rows,
    )?;
    write_csv(output(&None)?, &rows)
}

fn eval(cfg: &RunConfig, a: EvalArgs) -> Result<(), CliError> {
    let path = existing(&Some(a.checkpoint.clone()), &None, "checkpoint")?;
    let ckpt = Checkpoint::<f32>::load(&path)?;
    let n = a.data.points.unwrap_or(ckpt.train_config.points_per_cloud);
    let seed = a.data.sample_seed.unwrap_or(ckpt.train_config.sample_seed);
    let (manifest, dataset) = load_dataset(cfg, &a.data, n, seed)?;
    let rows = match &a.split {
        Some(p) => split_metrics(&ckpt, &dataset, &read_split(&existing(&Some(p.clone()), &None, "split")?)?)?,
        None => {
            let model = ckpt.model()?;
            vec![MetricsRow::new(
                "all",
                evaluate(&model, &dataset, &manifest.ids(), ckpt.target_norm)?,
            )]
        }
    };
    write_csv(output(&a.out.out)?, &rows)
}

#[derive(Serialize)]
struct PredictionRow {
    design_id: String,
    cd_pred: f64,
}

fn predict(cfg: &RunConfig, a: PredictArgs) -> Result<(), CliError> {
    let path = existing(&Some(a.checkpoint.clone()), &None, "checkpoint")?;
    let ckpt = Checkpoint::<f32>::load(&path)?;
    let model = ckpt.model()?;
    let mut files: Vec<PathBuf> = Vec::new();
    for f in &a.stl {
        files.push(existing(&Some(f.clone()), &None, "stl")?);
    }
    if let Some(d) = &a.stl_dir {
        let d = existing(&Some(d.clone()), &cfg.paths.stl_dir, "stl-dir")?;
        files.extend(stl_files(&d).map_err(|e| CliError::io(&d, e))?.into_values());
    }
    let n = ckpt.train_config.points_per_cloud;
    let seed = a.sample_seed.unwrap_or(ckpt.train_config.sample_seed);
    let mut rows = files
        .par_iter()
        .map(|f| {
            let mesh = read_mesh(f)?;
            let (cloud, _) = normalize_unit_sphere(&sample_surface(&mesh, n, seed)?);
            let flat: Vec<f32> = cloud.to_f32().into_iter().flatten().collect();
            let z = model.predict_cloud(&flat)?;
            Ok(PredictionRow {
                design_id: stem(f),
                cd_pred: ckpt.target_norm.denormalize(f64::from(z)),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    rows.sort_by(|x, y| x.design_id.cmp(&y.design_id));
    write_csv(output(&a.out.out)?, &rows)
}

#[derive(Serialize)]
struct ScalingCsvRow {
    fraction: f64,
    n_train: usize,
    mean_rel_err_pct: f64,
}

#[derive(Serialize)]
struct SubsetCsvRow<'a> {
    fraction: f64,
    design_id: &'a str,
}

fn scaling(cfg: &RunConfig, a: ScalingArgs) -> Result<(), CliError> {
    let (model_cfg, train_cfg) = resolve(cfg, &a.hyper, Some(&a.data));
    check_configs(&model_cfg, &train_cfg)?;
    if a.fractions.is_empty() || a.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(CliError::Usage("--fractions must lie in (0, 1]".into()));
    }
    let (manifest, dataset) = load_dataset(cfg, &a.data, train_cfg.points_per_cloud, train_cfg.sample_seed)?;
    let s = split_dataset(&manifest.ids(), train_cfg.seed)?;
    let rows = scaling_study::<f32>(&model_cfg, &dataset, &s, &a.fractions, &train_cfg)?;
    if let Some(path) = &a.subsets {
        let members: Vec<SubsetCsvRow> = rows
            .iter()
            .flat_map(|r| {
                r.train_ids.iter().map(|id| SubsetCsvRow {
                    fraction: r.fraction,
                    design_id: id,
                })
            })
            .collect();
        write_csv(output(&Some(path.clone()))?, &members)?;
    }
    let rows: Vec<ScalingCsvRow> = rows
        .into_iter()
        .map(|r| {
            info!(
                "fraction {:.2}: {} designs, test mean relative error {:.3} %",
                r.fraction, r.n_train, r.mean_rel_err_pct
            );
            ScalingCsvRow {
                fraction: r.fraction,
                n_train: r.n_train,
                mean_rel_err_pct: r.mean_rel_err_pct,
            }
        })
        .collect();
    write_csv(output(&a.out.out)?, &rows)
}

#[derive(Serialize)]
struct InfoReport {
    parameters: usize,
    parameters_without_batch_norm: usize,
    float32_megabytes: f64,
    model: RegDgcnnConfig,
    train: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    epoch: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_val_loss: Option<f64>,
}

fn info_cmd(cfg: &RunConfig, a: InfoArgs) -> Result<(), CliError> {
    let (model, train, epoch, best) = match &a.checkpoint {
        Some(p) => {
            let c = Checkpoint::<f32>::load(&existing(&Some(p.clone()), &None, "checkpoint")?)?;
            (c.model_config, c.train_config, Some(c.epoch), Some(c.best_val_loss))
        }
        None => {
            let (m, t) = resolve(cfg, &a.hyper, None);
            m.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            (m, t, None, None)
        }
    };
    let parameters = count_parameters(&model);
    let without = count_parameters(&RegDgcnnConfig {
        use_batch_norm: false,
        ..model.clone()
    });
    write_json(
        &a.out.out,
        &InfoReport {
            parameters,
            parameters_without_batch_norm: without,
            float32_megabytes: parameters as f64 * 4.0 / 1e6,
            model,
            train,
            epoch,
            best_val_loss: best,
        },
    )
}

#[derive(Serialize)]
struct SynthRow {
    design_id: String,
    cd: f64,
    cl: Option<f64>,
    cl_f: Option<f64>,
    cl_r: Option<f64>,
    cm: Option<f64>,
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let stl_dir = a.out_dir.join("stl");
    fs::create_dir_all(&stl_dir).map_err(|e| CliError::io(&stl_dir, e))?;
    let designs = synthetic_designs(a.count, a.seed);
    let mut rows = Vec::with_capacity(designs.len());
    for d in &designs {
        let path = stl_dir.join(format!("{}.stl", d.id));
        fs::write(&path, write_stl_binary(&d.mesh, d.id.as_bytes())).map_err(|e| CliError::io(&path, e))?;
        rows.push(SynthRow {
            design_id: d.id.clone(),
            cd: d.cd,
            cl: None,
            cl_f: None,
            cl_r: None,
            cm: None,
        });
    }
    let manifest = a.out_dir.join("manifest.csv");
    write_csv(
        Box::new(fs::File::create(&manifest).map_err(|e| CliError::io(&manifest, e))?),
        &rows,
    )?;
    info!("wrote {} designs to {}", designs.len(), a.out_dir.display());
    Ok(())
}
