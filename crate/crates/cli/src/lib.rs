//! Batch commands behind the `msspeech` binary.
//!
//! Each `cmd_*` function reads its inputs, writes its primary output file and
//! returns a short summary. Reports are CSV or JSON.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use msspeech::annotation::{
    default_czech_class_map, parse_interval_csv, parse_textgrid, qc_check, AnnotationTier, PhonemeClassMap,
    Severity,
};
use msspeech::audio::read_wav;
use msspeech::features::{extract_all, ExtractionConfig, MODEL_VECTOR_COLUMNS, VALIDATED_FEATURES};
use msspeech::ml::{rank_reports, train_eval_suite, CVConfig, Dataset, ModelSpec};
use msspeech::stats::{ks_two_sample, logistic_glm, validate_features, BORDERLINE_P, SIGNIFICANT_P};
use msspeech::table::FeatureTable;
use msspeech::testkit::{read_manifest, synth_cohort, Cohort, CohortSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("every manifest row failed; see {0}")]
    AllRowsFailed(PathBuf),
    #[error("{0}")]
    Pipeline(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn pipeline(e: impl std::fmt::Display) -> CliError {
    CliError::Pipeline(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// A model given by name with default hyperparameters, or as a full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Name(String),
    Spec(ModelSpec),
}

impl ModelEntry {
    pub fn resolve(&self) -> Result<ModelSpec, CliError> {
        match self {
            ModelEntry::Name(n) => ModelSpec::from_name(n).map_err(|e| CliError::Config(e.to_string())),
            ModelEntry::Spec(s) => Ok(s.clone()),
        }
    }
}

/// Contents of the `--config` TOML file.
///
/// ```toml
/// seed = 7
/// format = "json"
/// classmap = "czech.json"
/// models = ["knn", { name = "random_forest", n_trees = 200 }]
///
/// [extraction.pitch]
/// floor_hz = 60.0
///
/// [cv]
/// n_folds = 5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub format: Format,
    /// JSON class map; relative paths resolve against the config file.
    pub classmap: Option<PathBuf>,
    pub extraction: ExtractionConfig,
    pub cv: CvSection,
    pub models: Vec<ModelEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub n_folds: usize,
    pub holdout_fraction: f64,
    pub stratified: bool,
}

impl Default for CvSection {
    fn default() -> Self {
        let d = CVConfig::default();
        Self {
            n_folds: d.n_folds,
            holdout_fraction: d.holdout_fraction,
            stratified: d.stratified,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            format: Format::Csv,
            classmap: None,
            extraction: ExtractionConfig::default(),
            cv: CvSection::default(),
            models: msspeech::ml::REQUIRED_MODELS
                .iter()
                .map(|n| ModelEntry::Name(n.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(cm), Some(dir)) = (&cfg.classmap, path.parent()) {
            if cm.is_relative() {
                cfg.classmap = Some(dir.join(cm));
            }
        }
        Ok(cfg)
    }

    pub fn class_map(&self) -> Result<PhonemeClassMap, CliError> {
        match &self.classmap {
            None => Ok(default_czech_class_map()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                PhonemeClassMap::from_json(&text).map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }

    pub fn cv_config(&self) -> CVConfig {
        CVConfig {
            seed: self.seed,
            n_folds: self.cv.n_folds,
            holdout_fraction: self.cv.holdout_fraction,
            stratified: self.cv.stratified,
        }
    }

    pub fn model_specs(&self) -> Result<Vec<ModelSpec>, CliError> {
        self.models.iter().map(ModelEntry::resolve).collect()
    }
}

/// Writes report rows as CSV (header from the row fields) or a JSON array.
pub fn write_report<T: Serialize>(rows: &[T], format: Format, out: &Path) -> Result<(), CliError> {
    let text = render_report(rows, format)?;
    fs::write(out, text).map_err(io_err(out))
}

pub fn render_report<T: Serialize>(rows: &[T], format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(rows).map_err(pipeline)?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(pipeline)?;
            }
            let bytes = w.into_inner().map_err(pipeline)?;
            String::from_utf8(bytes).map_err(pipeline)
        }
    }
}

fn read_table(path: &Path) -> Result<FeatureTable, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    FeatureTable::from_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_annotation(path: &Path) -> Result<AnnotationTier, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        return parse_interval_csv(&text).map_err(|e| e.to_string());
    }
    let mut tiers = parse_textgrid(&text).map_err(|e| e.to_string())?;
    if tiers.is_empty() {
        return Err("TextGrid has no interval tiers".into());
    }
    let pick = tiers.iter().position(|(n, _)| n == "phones").unwrap_or(0);
    Ok(tiers.swap_remove(pick).1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractSummary {
    pub n_rows: usize,
    pub n_extracted: usize,
    /// Subject id and reason for every row left out of the table.
    pub excluded: Vec<(String, String)>,
    pub qc_log: PathBuf,
}

enum RowOutcome {
    Ok(msspeech::features::FeatureSet, Vec<String>),
    Failed(String, Vec<String>),
}

/// Sidecar log path for an output file: `<out>.qc.log`.
pub fn qc_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".qc.log");
    PathBuf::from(s)
}

/// Extracts one feature row per manifest subject. Paths in the manifest
/// resolve against the manifest's directory.
pub fn cmd_extract(manifest: &Path, cfg: &RunConfig, out: &Path) -> Result<ExtractSummary, CliError> {
    use rayon::prelude::*;

    let rows = read_manifest(manifest).map_err(|e| CliError::Input(format!("{}: {e}", manifest.display())))?;
    let classmap = cfg.class_map()?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let outcomes: Vec<RowOutcome> = rows
        .par_iter()
        .map(|r| {
            let mut notes = Vec::new();
            let w = match read_wav(base.join(&r.wav_path)) {
                Ok(w) => w,
                Err(e) => return RowOutcome::Failed(format!("{}: {e}", r.wav_path), notes),
            };
            let tier = match load_annotation(&base.join(&r.annotation_path)) {
                Ok(t) => t,
                Err(e) => return RowOutcome::Failed(e, notes),
            };
            let qc = qc_check(&tier, &classmap, w.duration_s());
            for f in &qc.findings {
                let sev = match f.severity {
                    Severity::Warning => "WARNING",
                    Severity::Error => "ERROR",
                };
                notes.push(format!("{sev} {}", f.message));
            }
            if qc.has_errors() {
                return RowOutcome::Failed("QC error".into(), notes);
            }
            match extract_all(&w, &tier, &classmap, &cfg.extraction) {
                Ok(fs) => RowOutcome::Ok(fs, notes),
                Err(e) => RowOutcome::Failed(e.to_string(), notes),
            }
        })
        .collect();

    let mut table = FeatureTable::with_all_features();
    let mut log = String::new();
    let mut excluded = Vec::new();
    for (r, outcome) in rows.iter().zip(outcomes) {
        let notes = match outcome {
            RowOutcome::Ok(fs, notes) => {
                table.push_features(&r.subject_id, r.cohort, r.age_years, r.gender_code, &fs);
                notes
            }
            RowOutcome::Failed(reason, notes) => {
                log.push_str(&format!("{}\tEXCLUDED {reason}\n", r.subject_id));
                excluded.push((r.subject_id.clone(), reason));
                notes
            }
        };
        for n in notes {
            log.push_str(&format!("{}\t{n}\n", r.subject_id));
        }
    }
    let qc_log = qc_log_path(out);
    fs::write(&qc_log, log).map_err(io_err(&qc_log))?;
    if table.rows.is_empty() {
        return Err(CliError::AllRowsFailed(qc_log));
    }
    fs::write(out, table.to_csv()).map_err(io_err(out))?;
    Ok(ExtractSummary {
        n_rows: rows.len(),
        n_extracted: table.rows.len(),
        excluded,
        qc_log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRow {
    pub feature: String,
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
    pub significant: bool,
}

/// Correlates automatic against reference features over shared subjects.
pub fn cmd_validate(auto: &Path, reference: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<ValidateRow>, CliError> {
    let a = read_table(auto)?;
    let b = read_table(reference)?;
    let rows: Vec<ValidateRow> = validate_features(&a, &b)
        .map_err(|e| CliError::Input(e.to_string()))?
        .into_iter()
        .map(|(feature, c)| ValidateRow {
            feature,
            r: c.r,
            p_value: c.p_one_sided,
            n: c.n,
            significant: c.p_one_sided < SIGNIFICANT_P,
        })
        .collect();
    write_report(&rows, cfg.format, out)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub feature: String,
    pub d_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    pub borderline: bool,
}

fn split_cohorts(table: &FeatureTable, column: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut case, mut control) = (Vec::new(), Vec::new());
    for r in &table.rows {
        match r.cohort {
            Cohort::Case => case.push(r.values[column]),
            Cohort::Control => control.push(r.values[column]),
        }
    }
    (case, control)
}

fn require_both_cohorts(table: &FeatureTable) -> Result<(), CliError> {
    for c in [Cohort::Case, Cohort::Control] {
        if !table.rows.iter().any(|r| r.cohort == c) {
            return Err(CliError::Input(format!("table has no {} rows", c.as_str())));
        }
    }
    Ok(())
}

/// Case versus control two-sample K-S test for each validated feature.
pub fn cmd_ks(table_path: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<KsRow>, CliError> {
    let table = read_table(table_path)?;
    require_both_cohorts(&table)?;
    let mut rows = Vec::new();
    for name in VALIDATED_FEATURES {
        let idx = table
            .column_index(name)
            .ok_or_else(|| CliError::Input(format!("missing column '{name}'")))?;
        let (case, control) = split_cohorts(&table, idx);
        let ks = ks_two_sample(&case, &control).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        rows.push(KsRow {
            feature: name.to_string(),
            d_statistic: ks.d_statistic,
            p_value: ks.p_value,
            significant: ks.p_value < SIGNIFICANT_P,
            borderline: ks.p_value < BORDERLINE_P,
        });
    }
    write_report(&rows, cfg.format, out)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmRow {
    pub variable: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub significant: bool,
    pub borderline: bool,
    pub converged: bool,
}

/// Logistic regression of cohort on the nine model-vector columns.
pub fn cmd_glm(table_path: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<GlmRow>, CliError> {
    let table = read_table(table_path)?;
    require_both_cohorts(&table)?;
    if table.rows.len() <= 10 {
        return Err(CliError::Input(format!("need more than 10 subjects, got {}", table.rows.len())));
    }
    let ds = Dataset::from_table(&table).map_err(|e| CliError::Input(e.to_string()))?;
    let y: Vec<bool> = ds.labels().into_iter().map(|l| l == Cohort::Case).collect();
    let fit = logistic_glm(&ds.matrix(), &y, &MODEL_VECTOR_COLUMNS).map_err(pipeline)?;
    let rows: Vec<GlmRow> = fit
        .coefficients
        .iter()
        .map(|c| GlmRow {
            variable: c.name.clone(),
            coefficient: c.coefficient,
            std_error: c.std_error,
            z: c.z,
            p_value: c.p_two_sided,
            significant: c.p_two_sided < SIGNIFICANT_P,
            borderline: c.borderline(),
            converged: fit.converged,
        })
        .collect();
    write_report(&rows, cfg.format, out)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub model: String,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub mean_auc: f64,
    pub best: bool,
}

/// Evaluates the configured models; rows are ranked, the first is flagged best.
pub fn cmd_train(table_path: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<TrainRow>, CliError> {
    let table = read_table(table_path)?;
    let ds = Dataset::from_table(&table).map_err(|e| CliError::Input(e.to_string()))?;
    let cv = cfg.cv_config();
    cv.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let reports = train_eval_suite(&ds, &cv, &cfg.model_specs()?).map_err(pipeline)?;
    let rows: Vec<TrainRow> = rank_reports(reports)
        .into_iter()
        .enumerate()
        .map(|(i, r)| TrainRow {
            model: r.model,
            accuracy: r.accuracy,
            sensitivity: r.sensitivity,
            specificity: r.specificity,
            mean_auc: r.mean_auc,
            best: i == 0,
        })
        .collect();
    write_report(&rows, cfg.format, out)?;
    Ok(rows)
}

/// Reads a cohort spec from TOML or JSON (by extension). Missing keys take defaults.
pub fn load_cohort_spec(path: &Path) -> Result<CohortSpec, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Synthesizes a cohort into `out_dir`. `seed` overrides the spec's seed.
pub fn cmd_synth(spec_path: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Result<PathBuf, CliError> {
    let mut spec = match spec_path {
        Some(p) => load_cohort_spec(p)?,
        None => CohortSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    synth_cohort(&spec, out_dir).map_err(pipeline)
}
