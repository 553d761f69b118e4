use std::fs;
use std::path::Path;
use std::process::Command;

use msspeech::features::{FEATURE_COLUMNS, VALIDATED_FEATURES};
use msspeech::table::{FeatureRow, FeatureTable};
use msspeech::testkit::{read_manifest, write_manifest, Cohort};
use msspeech_cli::*;

/// Table with pseudo-random features; `shift` is added to case rows of the first column.
fn random_table(n_per: usize, seed: u64, shift: f64) -> FeatureTable {
    let mut t = FeatureTable::with_all_features();
    // splitmix-style generator kept local so the test does not depend on the library RNG
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..2 * n_per {
        let cohort = if i < n_per { Cohort::Case } else { Cohort::Control };
        let values = (0..FEATURE_COLUMNS.len())
            .map(|k| {
                let u: f64 = (0..12).map(|_| next()).sum::<f64>() - 6.0;
                u + 10.0 + if k == 0 && cohort == Cohort::Case { shift } else { 0.0 }
            })
            .collect();
        t.rows.push(FeatureRow {
            subject_id: format!("s{i:03}"),
            cohort,
            age_years: (30.0 + 20.0 * next()).round(),
            gender_code: (next() < 0.5) as u8,
            values,
        });
    }
    t
}

fn write_table(t: &FeatureTable, path: &Path) {
    fs::write(path, t.to_csv()).unwrap();
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn config_rejects_unknown_keys_and_resolves_models() {
    assert!(matches!(RunConfig::from_toml("sed = 3"), Err(CliError::Config(_))));
    assert!(RunConfig::from_toml("[extraction.pitch]\nfloor = 60.0").is_err());
    let cfg = RunConfig::from_toml(
        r#"
seed = 9
format = "json"
models = ["knn", { name = "random_forest", n_trees = 50 }]
[extraction.pitch]
floor_hz = 60.0
[cv]
n_folds = 4
"#,
    )
    .unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.format, Format::Json);
    assert_eq!(cfg.extraction.pitch.floor_hz, 60.0);
    assert_eq!(cfg.cv_config().n_folds, 4);
    let specs = cfg.model_specs().unwrap();
    assert_eq!(specs[1], msspeech::ml::ModelSpec::RandomForest { n_trees: 50 });
    let bad = RunConfig::from_toml(r#"models = ["svm"]"#).unwrap();
    assert!(bad.model_specs().is_err());
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

#[test]
fn extract_isolates_bad_rows_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "n_cases = 2\nn_controls = 2\n").unwrap();
    let manifest = cmd_synth(Some(&spec), Some(4), &cohort).unwrap();
    let rows = read_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), 4);

    let cfg = RunConfig::default();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let s = cmd_extract(&manifest, &cfg, &a).unwrap();
    assert_eq!((s.n_rows, s.n_extracted), (4, 4));
    cmd_extract(&manifest, &cfg, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let t = FeatureTable::from_csv(&fs::read_to_string(&a).unwrap()).unwrap();
    let ids: Vec<&str> = t.rows.iter().map(|r| r.subject_id.as_str()).collect();
    let want: Vec<&str> = rows.iter().map(|r| r.subject_id.as_str()).collect();
    assert_eq!(ids, want);

    fs::write(cohort.join(&rows[1].wav_path), b"RIFF\0\0\0\0WAVEjunk").unwrap();
    let s = cmd_extract(&manifest, &cfg, &a).unwrap();
    assert_eq!(s.n_extracted, 3);
    assert_eq!(s.excluded[0].0, rows[1].subject_id);
    let log = fs::read_to_string(&s.qc_log).unwrap();
    assert!(log.contains(&format!("{}\tEXCLUDED", rows[1].subject_id)));

    let broken = dir.path().join("broken.csv");
    let mut gone = rows.clone();
    for r in &mut gone {
        r.wav_path = "missing.wav".into();
    }
    write_manifest(&gone, &broken).unwrap();
    let out = dir.path().join("none.csv");
    assert!(matches!(cmd_extract(&broken, &cfg, &out), Err(CliError::AllRowsFailed(_))));
    assert!(!out.exists());
}

#[test]
fn extract_excludes_qc_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("c");
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"n_cases": 2, "n_controls": 2}"#).unwrap();
    let manifest = cmd_synth(Some(&spec), Some(2), &cohort).unwrap();
    let rows = read_manifest(&manifest).unwrap();
    // annotation runs a second past the audio
    let tg_path = cohort.join(&rows[0].annotation_path);
    let w = msspeech::audio::read_wav(cohort.join(&rows[0].wav_path)).unwrap();
    let tiers = msspeech::annotation::parse_textgrid(&fs::read_to_string(&tg_path).unwrap()).unwrap();
    let mut ivs = tiers[0].1.intervals().to_vec();
    let end = ivs.last().unwrap().t_end_s;
    ivs.push(msspeech::annotation::Interval::new("a", end, w.duration_s() + 1.0));
    let tier = msspeech::annotation::AnnotationTier::new(ivs).unwrap();
    let text = msspeech::annotation::emit_textgrid(&[("phones".into(), tier)], w.duration_s() + 1.0).unwrap();
    fs::write(&tg_path, text).unwrap();
    let out = dir.path().join("f.csv");
    let s = cmd_extract(&manifest, &RunConfig::default(), &out).unwrap();
    assert_eq!(s.n_extracted, 3);
    let log = fs::read_to_string(&s.qc_log).unwrap();
    assert!(log.contains(&format!("{}\tERROR", rows[0].subject_id)));
}

#[test]
fn ks_report_schema_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    write_table(&random_table(20, 1, 0.0), &p);
    let out = dir.path().join("ks.csv");
    let rows = cmd_ks(&p, &RunConfig::default(), &out).unwrap();
    assert_eq!(header(&out), "feature,d_statistic,p_value,significant,borderline");
    assert_eq!(rows.len(), 7);
    assert_eq!(rows.iter().map(|r| r.feature.as_str()).collect::<Vec<_>>(), VALIDATED_FEATURES);
    for r in &rows {
        assert_eq!(r.significant, r.p_value < 0.05);
        assert_eq!(r.borderline, r.p_value < 0.1);
    }

    let mut single = random_table(10, 2, 0.0);
    single.rows.retain(|r| r.cohort == Cohort::Case);
    write_table(&single, &p);
    assert!(matches!(cmd_ks(&p, &RunConfig::default(), &out), Err(CliError::Input(_))));

    let json = RunConfig {
        format: Format::Json,
        ..RunConfig::default()
    };
    write_table(&random_table(20, 1, 0.0), &p);
    let jout = dir.path().join("ks.json");
    cmd_ks(&p, &json, &jout).unwrap();
    let back: Vec<KsRow> = serde_json::from_str(&fs::read_to_string(&jout).unwrap()).unwrap();
    assert_eq!(back, rows);
}

#[test]
fn glm_report_and_separation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let out = dir.path().join("glm.csv");
    write_table(&random_table(15, 3, 0.0), &p);
    let rows = cmd_glm(&p, &RunConfig::default(), &out).unwrap();
    assert_eq!(header(&out), "variable,coefficient,std_error,z,p_value,significant,borderline,converged");
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0].variable, "(intercept)");
    assert!(rows.iter().all(|r| r.converged));

    write_table(&random_table(15, 3, 40.0), &p);
    let rows = cmd_glm(&p, &RunConfig::default(), &out).unwrap();
    assert!(rows.iter().all(|r| !r.converged));

    write_table(&random_table(5, 3, 0.0), &p);
    assert!(cmd_glm(&p, &RunConfig::default(), &out).is_err());
}

#[test]
fn glm_null_cohorts_are_calibrated() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let out = dir.path().join("glm.csv");
    let (mut small, mut total, mut clean) = (0, 0, 0);
    for seed in 0..20 {
        write_table(&random_table(40, 100 + seed, 0.0), &p);
        let rows = cmd_glm(&p, &RunConfig::default(), &out).unwrap();
        let vars = &rows[1..];
        total += vars.len();
        let hits = vars.iter().filter(|r| r.p_value < 0.1).count();
        small += hits;
        clean += (hits == 0) as usize;
    }
    let frac = small as f64 / total as f64;
    assert!((0.03..=0.2).contains(&frac), "{small}/{total}");
    assert!(clean >= 3, "{clean}");
}

#[test]
fn validate_flags_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let out = dir.path().join("v.csv");
    let t = random_table(10, 4, 0.0);
    write_table(&t, &a);
    let mut reference = FeatureTable::new(vec!["speech_duration_s".into(), "csi_f0_st_per_s".into()]);
    for r in &t.rows {
        reference.rows.push(FeatureRow {
            values: vec![r.values[0], 100.0 - 2.0 * r.values[4]],
            ..r.clone()
        });
    }
    write_table(&reference, &b);
    let rows = cmd_validate(&a, &b, &RunConfig::default(), &out).unwrap();
    assert_eq!(header(&out), "feature,r,p_value,n,significant");
    assert_eq!(rows.len(), 2);
    let sd = rows.iter().find(|r| r.feature == "speech_duration_s").unwrap();
    assert!((sd.r - 1.0).abs() < 1e-12 && sd.significant && sd.n == 20);
    let f0 = rows.iter().find(|r| r.feature != "speech_duration_s").unwrap();
    assert!((f0.r + 1.0).abs() < 1e-12 && !f0.significant);

    let other = FeatureTable::new(vec!["unrelated".into()]);
    write_table(&other, &b);
    assert!(cmd_validate(&a, &b, &RunConfig::default(), &out).is_err());
}

#[test]
fn train_flags_one_best_model() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let out = dir.path().join("train.csv");
    write_table(&random_table(25, 5, 3.0), &p);
    let cfg = RunConfig::from_toml(
        r#"models = ["knn", "logistic_regularized", { name = "random_forest", n_trees = 50 }, "gradient_boosting"]"#,
    )
    .unwrap();
    let rows = cmd_train(&p, &cfg, &out).unwrap();
    assert_eq!(header(&out), "model,accuracy,sensitivity,specificity,mean_auc,best");
    assert_eq!(rows.iter().filter(|r| r.best).count(), 1);
    assert!(rows[0].best);
    assert!(rows[0].mean_auc > 0.9);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_msspeech");
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    write_table(&random_table(20, 6, 0.0), &p);
    let out = dir.path().join("ks.json");
    let ok = Command::new(exe)
        .args(["ks", p.to_str().unwrap(), "--format", "json", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(fs::read_to_string(&out).unwrap().trim_start().starts_with('['));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "colour = 1\n").unwrap();
    let bad = Command::new(exe)
        .args(["ks", p.to_str().unwrap(), "--config", cfg.to_str().unwrap()])
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert!(!bad.success());
    let missing = Command::new(exe)
        .args(["ks", "nope.csv"])
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert!(!missing.success());
    assert!(!dir.path().join("ks.csv").exists());
}
