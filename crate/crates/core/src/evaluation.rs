//! Metrics, multi-seed aggregation, majority voting and per-company tables.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{LinearTextModel, RunResult};
use crate::corpus::{apply_climate_gate, chunk_document, Document, Sector};
use crate::error::{Error, Result};
use crate::labeling::RiskCoefficients;
use crate::lexicon::{AttributeScorer, Lexicon};

fn check_lengths(preds: &[bool], golds: &[bool]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(preds.len(), golds.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("metrics need at least one prediction"));
    }
    Ok(())
}

pub fn accuracy(preds: &[bool], golds: &[bool]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Binary F1 for the positive class (risk = 1). Zero when there are no
/// true positives, including when neither side has any positives.
pub fn f1(preds: &[bool], golds: &[bool]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in preds.iter().zip(golds) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub accuracy: f64,
    pub f1: f64,
}

impl MetricPair {
    pub fn compute(preds: &[bool], golds: &[bool]) -> Result<Self> {
        Ok(MetricPair {
            accuracy: accuracy(preds, golds)?,
            f1: f1(preds, golds)?,
        })
    }
}

/// Mean and population standard deviation of accuracy and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mut it = values.clone();
    let first = it.next().unwrap_or(0.0);
    if it.all(|v| v == first) {
        return (first, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate_metrics(metrics: &[MetricPair]) -> Result<AggregateStats> {
    if metrics.is_empty() {
        return Err(Error::Empty("no runs to aggregate"));
    }
    let (mean_accuracy, std_accuracy) = mean_std(metrics.iter().map(|m| m.accuracy));
    let (mean_f1, std_f1) = mean_std(metrics.iter().map(|m| m.f1));
    Ok(AggregateStats {
        mean_accuracy,
        std_accuracy,
        mean_f1,
        std_f1,
    })
}

pub fn aggregate_runs(runs: &[RunResult]) -> Result<AggregateStats> {
    aggregate_metrics(&runs.iter().map(RunResult::metrics).collect::<Vec<_>>())
}

/// Label assigned when a vote is split evenly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    #[default]
    Positive,
    Negative,
}

impl FromStr for TieRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "positive" | "1" => Ok(TieRule::Positive),
            "negative" | "0" => Ok(TieRule::Negative),
            other => Err(Error::InvalidInput(format!("unknown tie rule {other:?}"))),
        }
    }
}

pub fn majority_vote(labels: &[bool], tie: TieRule) -> Result<bool> {
    if labels.is_empty() {
        return Err(Error::NoClimateChunks);
    }
    let ones = labels.iter().filter(|l| **l).count();
    let zeros = labels.len() - ones;
    Ok(match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => tie == TieRule::Positive,
    })
}

/// Anything that maps chunk text to a binary risk label and a probability.
pub trait Predictor {
    fn predict(&self, text: &str) -> (bool, f64);
}

impl Predictor for LinearTextModel {
    fn predict(&self, text: &str) -> (bool, f64) {
        LinearTextModel::predict(self, text)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportEvalConfig {
    pub max_chars: usize,
    pub tie: TieRule,
    /// When set, only chunks containing a gate phrase count as climate-related.
    pub climate_gate: Option<Lexicon>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompanyEval {
    pub company: String,
    pub sector: Sector,
    pub chunk_ids: Vec<String>,
    pub predictions: Vec<bool>,
    pub golds: Vec<bool>,
    pub metrics: MetricPair,
    pub report_label_predicted: bool,
    pub report_label_gold: bool,
}

/// Chunks a report, labels each climate-related chunk with `gold_labeler`
/// over its scored attributes, predicts with `model`, and majority-votes
/// both label streams.
pub fn evaluate_report<P: Predictor + ?Sized>(
    model: &P,
    doc: &Document,
    scorer: &AttributeScorer,
    gold_labeler: &RiskCoefficients,
    config: &ReportEvalConfig,
) -> Result<CompanyEval> {
    let mut chunks = chunk_document(doc, config.max_chars)?;
    if let Some(gate) = &config.climate_gate {
        apply_climate_gate(&mut chunks, gate);
    }
    let mut chunk_ids = Vec::new();
    let mut predictions = Vec::new();
    let mut golds = Vec::new();
    for chunk in chunks.iter().filter(|c| c.climate_related) {
        let (attrs, _) = scorer.score(&chunk.id, &chunk.text)?;
        golds.push(gold_labeler.label(&attrs).0);
        predictions.push(model.predict(&chunk.text).0);
        chunk_ids.push(chunk.id.clone());
    }
    if chunk_ids.is_empty() {
        return Err(Error::NoClimateChunks);
    }
    Ok(CompanyEval {
        company: doc.company.clone(),
        sector: doc.sector,
        metrics: MetricPair::compute(&predictions, &golds)?,
        report_label_predicted: majority_vote(&predictions, config.tie)?,
        report_label_gold: majority_vote(&golds, config.tie)?,
        chunk_ids,
        predictions,
        golds,
    })
}

/// One row of the evaluation table. Report labels are absent for rows
/// built from published metrics alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanyRow {
    pub company: String,
    pub accuracy: f64,
    pub f1: f64,
    pub report_label_predicted: Option<bool>,
    pub report_label_gold: Option<bool>,
}

impl From<&CompanyEval> for CompanyRow {
    fn from(e: &CompanyEval) -> Self {
        CompanyRow {
            company: e.company.clone(),
            accuracy: e.metrics.accuracy,
            f1: e.metrics.f1,
            report_label_predicted: Some(e.report_label_predicted),
            report_label_gold: Some(e.report_label_gold),
        }
    }
}

/// Per-company rows sorted by company name, plus unweighted means.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanyTable {
    pub rows: Vec<CompanyRow>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
}

impl CompanyTable {
    pub fn from_rows(mut rows: Vec<CompanyRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("company table needs at least one company"));
        }
        rows.sort_by(|a, b| a.company.cmp(&b.company));
        let n = rows.len() as f64;
        let mean_accuracy = rows.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let mean_f1 = rows.iter().map(|r| r.f1).sum::<f64>() / n;
        Ok(CompanyTable {
            rows,
            mean_accuracy,
            mean_f1,
        })
    }

    /// `Company,Accuracy,F1,ReportLabelPred,ReportLabelGold` with accuracy as
    /// a percentage and both metrics to two decimals; last row holds the means.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Internal(e.to_string());
        w.write_record([
            "Company",
            "Accuracy",
            "F1",
            "ReportLabelPred",
            "ReportLabelGold",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.company.clone(),
                fmt_accuracy(r.accuracy),
                fmt_f1(r.f1),
                fmt_label(r.report_label_predicted),
                fmt_label(r.report_label_gold),
            ])
            .map_err(csv_err)?;
        }
        w.write_record([
            "Mean".to_string(),
            fmt_accuracy(self.mean_accuracy),
            fmt_f1(self.mean_f1),
            String::new(),
            String::new(),
        ])
        .map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }
}

pub fn company_table(evals: &[CompanyEval]) -> Result<CompanyTable> {
    CompanyTable::from_rows(evals.iter().map(CompanyRow::from).collect())
}

fn fmt_accuracy(a: f64) -> String {
    format!("{:.2}", a * 100.0)
}

fn fmt_f1(f: f64) -> String {
    format!("{f:.2}")
}

fn fmt_label(l: Option<bool>) -> String {
    l.map(|b| u8::from(b).to_string()).unwrap_or_default()
}

impl fmt::Display for CompanyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.company.len())
            .max()
            .unwrap_or(0)
            .max(7);
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>5}  {:>4}  {:>4}",
            "Company", "Acc.", "F1", "Pred", "Gold"
        )?;
        writeln!(f, "{}", "-".repeat(width + 31))?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:>8}  {:>5}  {:>4}  {:>4}",
                r.company,
                fmt_accuracy(r.accuracy),
                fmt_f1(r.f1),
                fmt_label(r.report_label_predicted),
                fmt_label(r.report_label_gold)
            )?;
        }
        writeln!(f, "{}", "-".repeat(width + 31))?;
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>5}",
            "Mean",
            fmt_accuracy(self.mean_accuracy),
            fmt_f1(self.mean_f1)
        )
    }
}

/// Reads the company rows of an evaluation CSV, skipping the mean row.
pub fn read_company_rows(path: impl AsRef<Path>) -> Result<Vec<CompanyRow>> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    let context = path.display().to_string();
    let mut reader = csv::Reader::from_reader(source.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let parse_err = |message: String| Error::Parse {
            context: context.clone(),
            line,
            message,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        if field(0) == "Mean" {
            continue;
        }
        let num = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|e| parse_err(format!("column {}: {e}", k + 1)))
        };
        let label = |k: usize| match field(k) {
            "" => Ok(None),
            "0" => Ok(Some(false)),
            "1" => Ok(Some(true)),
            other => Err(parse_err(format!("label must be 0 or 1, got {other:?}"))),
        };
        rows.push(CompanyRow {
            company: field(0).to_string(),
            accuracy: num(1)? / 100.0,
            f1: num(2)?,
            report_label_predicted: label(3)?,
            report_label_gold: label(4)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{FeatureConfig, TrainConfig};
    use crate::corpus::ReportMetadata;
    use crate::lexicon::{FallbackLexicons, PartialAttributes, ScoreMap};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|x| *x == 1).collect()
    }

    // Brute-force confusion matrix oracle.
    fn oracle_f1(p: &[bool], g: &[bool]) -> f64 {
        let tp = p.iter().zip(g).filter(|(p, g)| **p && **g).count() as f64;
        let fp = p.iter().zip(g).filter(|(p, g)| **p && !**g).count() as f64;
        let fn_ = p.iter().zip(g).filter(|(p, g)| !**p && **g).count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    }

    #[test]
    fn accuracy_examples() {
        let g = b(&[1, 0, 1, 1]);
        assert_eq!(accuracy(&g, &g).unwrap(), 1.0);
        let not: Vec<bool> = g.iter().map(|x| !x).collect();
        assert_eq!(accuracy(&not, &g).unwrap(), 0.0);
        let golds = vec![true; 57];
        let mut preds = golds.clone();
        preds[3] = false;
        preds[40] = false;
        assert!((accuracy(&preds, &golds).unwrap() - 0.9649).abs() < 5e-5);
        assert!(matches!(
            accuracy(&[true], &[]),
            Err(Error::LengthMismatch(1, 0))
        ));
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(&b(&[1, 0, 1]), &b(&[1, 0, 1])).unwrap(), 1.0);
        assert!((f1(&b(&[1, 1, 1, 0]), &b(&[1, 0, 1, 0])).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(f1(&b(&[0, 0]), &b(&[0, 0])).unwrap(), 0.0);
        assert!(f1(&b(&[0]), &b(&[0, 1])).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let m = |a: f64| MetricPair {
            accuracy: a,
            f1: 0.5,
        };
        let s = aggregate_metrics(&[m(0.6), m(0.8)]).unwrap();
        assert!((s.mean_accuracy - 0.7).abs() < 1e-12);
        assert!((s.std_accuracy - 0.1).abs() < 1e-12);
        assert_eq!(s.std_f1, 0.0);
        let s = aggregate_metrics(&[m(0.42)]).unwrap();
        assert_eq!((s.mean_accuracy, s.std_accuracy), (0.42, 0.0));
        assert!(aggregate_metrics(&[]).is_err());
    }

    #[test]
    fn votes() {
        let t = TieRule::Positive;
        assert!(!majority_vote(&b(&[0, 0, 0]), t).unwrap());
        assert!(majority_vote(&b(&[1, 1, 0]), t).unwrap());
        assert!(majority_vote(&b(&[1, 0]), t).unwrap());
        assert!(!majority_vote(&b(&[1, 0]), TieRule::Negative).unwrap());
        assert_eq!(
            majority_vote(&[], t).unwrap_err().to_string(),
            "no climate-related chunks"
        );
    }

    #[test]
    fn table_means_and_csv() {
        let rows = vec![
            CompanyRow {
                company: "B".into(),
                accuracy: 0.8,
                f1: 0.5,
                report_label_predicted: Some(false),
                report_label_gold: Some(true),
            },
            CompanyRow {
                company: "A".into(),
                accuracy: 0.9,
                f1: 0.7,
                report_label_predicted: None,
                report_label_gold: None,
            },
        ];
        let t = CompanyTable::from_rows(rows).unwrap();
        assert_eq!(t.rows[0].company, "A");
        assert!((t.mean_accuracy - 0.85).abs() < 1e-12);
        let csv = t.to_csv().unwrap();
        assert_eq!(
            csv,
            "Company,Accuracy,F1,ReportLabelPred,ReportLabelGold\nA,90.00,0.70,,\nB,80.00,0.50,0,1\nMean,85.00,0.60,,\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        fs::write(&p, &csv).unwrap();
        let back = read_company_rows(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].report_label_gold, Some(true));
        assert!((back[1].accuracy - 0.8).abs() < 1e-12);
        assert!(t.to_string().contains("Mean"));

        let single = CompanyTable::from_rows(vec![t.rows[1].clone()]).unwrap();
        assert_eq!((single.mean_accuracy, single.mean_f1), (0.8, 0.5));
        assert!(CompanyTable::from_rows(vec![]).is_err());
    }

    struct Scripted(Vec<(&'static str, bool)>);

    impl Predictor for Scripted {
        fn predict(&self, text: &str) -> (bool, f64) {
            let hit = self
                .0
                .iter()
                .find(|(k, _)| text.contains(k))
                .map(|(_, l)| *l)
                .unwrap_or(false);
            (hit, if hit { 1.0 } else { 0.0 })
        }
    }

    fn fixture() -> (Document, AttributeScorer) {
        let meta = ReportMetadata {
            company: "Fixture Co".into(),
            sector: Sector::Tech,
            year: 2022,
        };
        let paras: Vec<String> = (0..5)
            .map(|i| format!("Paragraph {i} {}", "x".repeat(250)))
            .collect();
        let doc = Document::new("fx", &meta, paras).unwrap();
        // Gold labels under eq2: (1,0,0,0) -> 1, (0,1,1,0) -> 0.
        let mut ext = ScoreMap::new();
        for i in 0..5 {
            let positive = i < 2;
            ext.insert(
                format!("fx-{i}"),
                PartialAttributes {
                    sentiment: Some(positive),
                    commitment: Some(!positive),
                    specificity: Some(!positive),
                },
            );
        }
        let scorer = AttributeScorer::new(
            Lexicon::deflection(),
            Some(ext),
            FallbackLexicons::default(),
        );
        (doc, scorer)
    }

    #[test]
    fn report_evaluation_replay() {
        let (doc, scorer) = fixture();
        let cfg = ReportEvalConfig {
            max_chars: 300,
            ..Default::default()
        };
        let model = Scripted(vec![("Paragraph 0", true)]);
        let e = evaluate_report(&model, &doc, &scorer, &RiskCoefficients::eq2(), &cfg).unwrap();
        assert_eq!(e.golds, b(&[1, 1, 0, 0, 0]));
        assert_eq!(e.predictions, b(&[1, 0, 0, 0, 0]));
        assert!((e.metrics.accuracy - 0.8).abs() < 1e-12);
        assert!(!e.report_label_predicted && !e.report_label_gold);

        // The gold labeler itself as the model gives a perfect score.
        let oracle = Scripted(vec![("Paragraph 0", true), ("Paragraph 1", true)]);
        let e = evaluate_report(&oracle, &doc, &scorer, &RiskCoefficients::eq2(), &cfg).unwrap();
        assert_eq!(e.metrics.accuracy, 1.0);
        assert_eq!(e.report_label_predicted, e.report_label_gold);
    }

    #[test]
    fn report_without_climate_chunks() {
        let (doc, scorer) = fixture();
        let cfg = ReportEvalConfig {
            max_chars: 300,
            climate_gate: Some(Lexicon::new("g", ["emissions"]).unwrap()),
            ..Default::default()
        };
        let model = LinearTextModel::zeroed(FeatureConfig::default(), TrainConfig::default());
        let err =
            evaluate_report(&model, &doc, &scorer, &RiskCoefficients::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::NoClimateChunks));
    }

    proptest! {
        #[test]
        fn metrics_match_oracle_and_permutations(seed in any::<u64>(), n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let g: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let f = f1(&p, &g).unwrap();
            prop_assert!((f - oracle_f1(&p, &g)).abs() < 1e-12);
            let a = accuracy(&p, &g).unwrap();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.reverse();
            idx.rotate_left(seed as usize % n);
            let pp: Vec<bool> = idx.iter().map(|&i| p[i]).collect();
            let gg: Vec<bool> = idx.iter().map(|&i| g[i]).collect();
            prop_assert!((accuracy(&pp, &gg).unwrap() - a).abs() < 1e-12);
            prop_assert!((f1(&pp, &gg).unwrap() - f).abs() < 1e-12);
        }

        #[test]
        fn vote_symmetries(labels in proptest::collection::vec(any::<bool>(), 1..25), rot in 0usize..25) {
            let v = majority_vote(&labels, TieRule::Positive).unwrap();
            let mut r = labels.clone();
            r.rotate_left(rot % labels.len());
            prop_assert_eq!(majority_vote(&r, TieRule::Positive).unwrap(), v);
            let ones = labels.iter().filter(|x| **x).count();
            if 2 * ones != labels.len() {
                let comp: Vec<bool> = labels.iter().map(|x| !x).collect();
                prop_assert_eq!(majority_vote(&comp, TieRule::Positive).unwrap(), !v);
            }
        }

        #[test]
        fn aggregate_bounds(accs in proptest::collection::vec(0.0f64..1.0, 1..15)) {
            let m: Vec<MetricPair> = accs.iter().map(|&a| MetricPair { accuracy: a, f1: a }).collect();
            let s = aggregate_metrics(&m).unwrap();
            let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s.mean_accuracy >= lo - 1e-12 && s.mean_accuracy <= hi + 1e-12);
            prop_assert!(s.std_accuracy >= 0.0);
            prop_assert_eq!(s.std_accuracy == 0.0, lo == hi);
        }
    }
}
