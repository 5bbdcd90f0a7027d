use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use greenrisk::classifier::{self, ExperimentManifest};
use greenrisk::corpus::{self, Document, Split};
use greenrisk::emissions;
use greenrisk::evaluation::{self, ReportEvalConfig};
use greenrisk::labeling::{self, RiskCoefficients};
use greenrisk::lexicon::{self, AttributeScorer, FallbackLexicons, Lexicon};

use crate::config::{require_existing, PipelineConfig};
use crate::CliError;

fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| greenrisk::Error::Write {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| greenrisk::Error::Write {
        path: path.into(),
        source: e,
    })?;
    Ok(())
}

fn to_json_pretty<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError {
            code: 3,
            message: e.to_string(),
        })
}

fn required<'a>(what: &str, key: &str, p: Option<&'a PathBuf>) -> Result<&'a PathBuf, CliError> {
    p.ok_or_else(|| CliError::usage(format!("{what} not configured (set {key})")))
}

fn scorer_paths(config: &PipelineConfig) -> Vec<(&'static str, Option<&PathBuf>)> {
    let p = &config.paths;
    vec![
        ("hedging lexicon", p.hedging_lexicon.as_ref()),
        ("external scores", p.external_scores.as_ref()),
        ("sentiment fallback lexicon", p.fallback_sentiment.as_ref()),
        (
            "commitment fallback lexicon",
            p.fallback_commitment.as_ref(),
        ),
        (
            "specificity fallback lexicon",
            p.fallback_specificity.as_ref(),
        ),
        ("climate gate lexicon", p.climate_gate.as_ref()),
        ("coefficients file", p.coefficients.as_ref()),
    ]
}

fn build_scorer(config: &PipelineConfig) -> Result<AttributeScorer, CliError> {
    let p = &config.paths;
    let hedging = match &p.hedging_lexicon {
        Some(path) => lexicon::load_lexicon(path)?,
        None => Lexicon::deflection(),
    };
    let external = p
        .external_scores
        .as_ref()
        .map(lexicon::load_external_scores)
        .transpose()?;
    let mut fallbacks = if config.shipped_fallbacks {
        FallbackLexicons::shipped()
    } else {
        FallbackLexicons::default()
    };
    if let Some(path) = &p.fallback_sentiment {
        fallbacks.sentiment = Some(lexicon::load_lexicon(path)?);
    }
    if let Some(path) = &p.fallback_commitment {
        fallbacks.commitment = Some(lexicon::load_lexicon(path)?);
    }
    if let Some(path) = &p.fallback_specificity {
        fallbacks.specificity = Some(lexicon::load_lexicon(path)?);
    }
    Ok(AttributeScorer::new(hedging, external, fallbacks))
}

fn coefficients(config: &PipelineConfig) -> Result<RiskCoefficients, CliError> {
    let base = match &config.paths.coefficients {
        Some(path) => labeling::load_coefficients(path)?,
        None => RiskCoefficients {
            threshold: config.threshold,
            ..Default::default()
        },
    };
    let coeffs = base.with_scheme(config.scheme);
    coeffs.validate()?;
    Ok(coeffs)
}

fn climate_gate(config: &PipelineConfig) -> Result<Option<Lexicon>, CliError> {
    Ok(config
        .paths
        .climate_gate
        .as_ref()
        .map(lexicon::load_lexicon)
        .transpose()?)
}

/// Reads every `*.txt` report in `dir` (sorted by name) with its `*.json`
/// metadata sidecar.
fn load_reports(dir: &Path) -> Result<Vec<Document>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| greenrisk::Error::Read {
        path: dir.into(),
        source: e,
    })?;
    let mut texts: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    texts.sort();
    if texts.is_empty() {
        return Err(CliError::usage(format!(
            "no .txt reports in {}",
            dir.display()
        )));
    }
    texts
        .iter()
        .map(|t| {
            let sidecar = t.with_extension("json");
            if !sidecar.is_file() {
                return Err(CliError::usage(format!(
                    "metadata sidecar not found: {}",
                    sidecar.display()
                )));
            }
            let meta = corpus::load_metadata(&sidecar)?;
            Ok(corpus::ingest_report(t, &meta)?)
        })
        .collect()
}

pub fn label(config: &PipelineConfig) -> Result<(), CliError> {
    let reports = required(
        "training reports",
        "paths.reports",
        config.paths.reports.as_ref(),
    )?;
    let mut check = scorer_paths(config);
    check.push(("reports directory", Some(reports)));
    require_existing(&check)?;

    let scorer = build_scorer(config)?;
    let coeffs = coefficients(config)?;
    let gate = climate_gate(config)?;
    let mut scored = Vec::new();
    for doc in load_reports(reports)? {
        let mut chunks = corpus::chunk_document(&doc, config.max_chars)?;
        if let Some(g) = &gate {
            corpus::apply_climate_gate(&mut chunks, g);
        }
        for chunk in chunks.into_iter().filter(|c| c.climate_related) {
            let (attrs, _) = scorer.score(&chunk.id, &chunk.text)?;
            scored.push((chunk, attrs));
        }
    }
    let records = labeling::generate_labels(&scored, &coeffs);
    let total = records.len();
    let positives = records.iter().filter(|r| r.label).count();
    let (train, validation) =
        corpus::split_dataset(records, config.train_fraction, config.split_seed)?;
    fs::create_dir_all(&config.paths.out_dir).map_err(|e| greenrisk::Error::Write {
        path: config.paths.out_dir.clone(),
        source: e,
    })?;
    corpus::persist_dataset(&train.records, config.out_path("train.jsonl"))?;
    corpus::persist_dataset(&validation.records, config.out_path("validation.jsonl"))?;

    println!("scheme: {}", coeffs.scheme);
    println!(
        "chunks: {total} (label 1: {positives}, label 0: {})",
        total - positives
    );
    println!("train: {} (label 1: {})", train.len(), train.positives());
    println!(
        "validation: {} (label 1: {})",
        validation.len(),
        validation.positives()
    );
    Ok(())
}

pub fn fit(config: &PipelineConfig, exemplars: Option<PathBuf>) -> Result<(), CliError> {
    let path = exemplars.or_else(|| config.paths.exemplars.clone());
    let path = required("exemplars file", "paths.exemplars", path.as_ref())?;
    require_existing(&[("exemplars file", Some(path))])?;
    let exemplars = labeling::load_exemplars(path)?;
    let fit = labeling::fit_coefficients(&exemplars, config.threshold)?;
    let out = config.out_path("coefficients.json");
    write_output(&out, &to_json_pretty(&fit.coefficients)?)?;
    print!("{}", to_json_pretty(&fit.coefficients)?);
    println!("residual_norm: {}", fit.residual_norm);
    println!("exemplars: {}", fit.n_exemplars);
    Ok(())
}

pub fn train(config: &PipelineConfig) -> Result<(), CliError> {
    if config.seeds.is_empty() {
        return Err(CliError::usage("classifier.seeds is empty"));
    }
    let train_path = config
        .paths
        .train
        .clone()
        .unwrap_or_else(|| config.out_path("train.jsonl"));
    let val_path = config
        .paths
        .validation
        .clone()
        .unwrap_or_else(|| config.out_path("validation.jsonl"));
    require_existing(&[
        ("training split", Some(&train_path)),
        ("validation split", Some(&val_path)),
    ])?;
    let train = corpus::load_dataset(&train_path, Split::Train)?;
    let validation = corpus::load_dataset(&val_path, Split::Validation)?;

    let runs = classifier::run_experiment(
        &train,
        &validation,
        &config.features,
        &config.train,
        &config.seeds,
    )?;
    let mut manifest = ExperimentManifest::new(
        &runs,
        &config.features,
        &config.train,
        train.len(),
        validation.len(),
    )?;
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    manifest.metadata = BTreeMap::from([("created_unix".to_string(), created.to_string())]);
    write_output(
        &config.out_path("experiment.json"),
        &to_json_pretty(&manifest)?,
    )?;
    let selected = &runs[manifest.selected_run];
    write_output(
        &config.out_path("model.json"),
        &(selected.model.to_json()? + "\n"),
    )?;

    for r in &runs {
        println!(
            "seed {:>4}  accuracy {:6.2}  f1 {:.2}  loss {:.4} -> {:.4}",
            r.seed,
            r.validation_accuracy * 100.0,
            r.validation_f1,
            r.initial_loss,
            r.final_loss
        );
    }
    let a = manifest.aggregate;
    println!(
        "accuracy {:.2} ± {:.2}  f1 {:.2} ± {:.2}  ({} runs, frozen_features = {})",
        a.mean_accuracy * 100.0,
        a.std_accuracy * 100.0,
        a.mean_f1,
        a.std_f1,
        runs.len(),
        config.train.frozen_features
    );
    println!(
        "selected run: {} (seed {})",
        manifest.selected_run, manifest.selected_seed
    );
    Ok(())
}

pub fn evaluate(config: &PipelineConfig) -> Result<(), CliError> {
    let reports = required(
        "test reports",
        "paths.test_reports",
        config.paths.test_reports.as_ref(),
    )?;
    let model_path = config
        .paths
        .model
        .clone()
        .unwrap_or_else(|| config.out_path("model.json"));
    let mut check = scorer_paths(config);
    check.push(("test reports directory", Some(reports)));
    check.push(("model file", Some(&model_path)));
    require_existing(&check)?;

    let model = classifier::load_model(&model_path)?;
    let scorer = build_scorer(config)?;
    let gold = coefficients(config)?;
    let eval_config = ReportEvalConfig {
        max_chars: config.max_chars,
        tie: config.tie,
        climate_gate: climate_gate(config)?,
    };
    let evals = load_reports(reports)?
        .iter()
        .map(|doc| evaluation::evaluate_report(&model, doc, &scorer, &gold, &eval_config))
        .collect::<Result<Vec<_>, _>>()?;
    let table = evaluation::company_table(&evals)?;
    write_output(&config.out_path("evaluation.csv"), &table.to_csv()?)?;
    print!("{table}");
    Ok(())
}

pub fn emissions(config: &PipelineConfig) -> Result<(), CliError> {
    let csv_path = required(
        "emissions CSV",
        "paths.emissions",
        config.paths.emissions.as_ref(),
    )?;
    require_existing(&[
        ("emissions CSV", Some(csv_path)),
        ("evaluation CSV", config.paths.evaluations.as_ref()),
    ])?;
    let records = emissions::load_emissions(csv_path)?;
    let relatives = emissions::relative_emissions(&records)?;
    let flags = emissions::flag_outliers(&relatives, config.outlier_k)?;
    let evals = config
        .paths
        .evaluations
        .as_ref()
        .map(evaluation::read_company_rows)
        .transpose()?;
    let report = emissions::emissions_report(&relatives, &flags, evals.as_deref());
    write_output(&config.out_path("emissions_report.csv"), &report.to_csv()?)?;
    print!("{report}");
    for f in &flags {
        println!(
            "flag: {} {} {:+} > {:.3} (k = {})",
            f.company, f.field, f.deviation, f.threshold, config.outlier_k
        );
    }
    Ok(())
}

pub fn scan_hedging(config: &PipelineConfig, files: &[PathBuf]) -> Result<(), CliError> {
    let mut check: Vec<_> = files.iter().map(|f| ("input file", Some(f))).collect();
    check.push(("hedging lexicon", config.paths.hedging_lexicon.as_ref()));
    require_existing(&check)?;
    let lex = match &config.paths.hedging_lexicon {
        Some(path) => lexicon::load_lexicon(path)?,
        None => Lexicon::deflection(),
    };
    let (mut total, mut flagged) = (0usize, 0usize);
    for file in files {
        let bytes = fs::read(file).map_err(|e| greenrisk::Error::Read {
            path: file.clone(),
            source: e,
        })?;
        let text = String::from_utf8(bytes)
            .map_err(|_| greenrisk::Error::NotUtf8 { path: file.clone() })?;
        for (i, para) in corpus::split_paragraphs(&text).iter().enumerate() {
            let m = lexicon::detect_hedging(para, &lex);
            total += 1;
            flagged += usize::from(m.flag);
            println!(
                "{}:{}\t{}\t{}",
                file.display(),
                i + 1,
                u8::from(m.flag),
                m.matches.join("; ")
            );
        }
    }
    println!("hedging in {flagged} of {total} paragraphs");
    Ok(())
}
