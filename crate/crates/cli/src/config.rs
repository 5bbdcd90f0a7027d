//! Pipeline configuration: an INI-style `key = value` file with section
//! headers. Every key can be overridden with `--set section.key=value`.
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use greenrisk::classifier::{FeatureConfig, TrainConfig};
use greenrisk::corpus::DEFAULT_MAX_CHARS;
use greenrisk::emissions::DEFAULT_OUTLIER_K;
use greenrisk::evaluation::TieRule;
use greenrisk::labeling::{Scheme, DEFAULT_THRESHOLD};
use ini::Ini;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Paths {
    pub reports: Option<PathBuf>,
    pub test_reports: Option<PathBuf>,
    pub external_scores: Option<PathBuf>,
    pub hedging_lexicon: Option<PathBuf>,
    pub fallback_sentiment: Option<PathBuf>,
    pub fallback_commitment: Option<PathBuf>,
    pub fallback_specificity: Option<PathBuf>,
    pub climate_gate: Option<PathBuf>,
    pub coefficients: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub emissions: Option<PathBuf>,
    pub evaluations: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub shipped_fallbacks: bool,
    pub scheme: Scheme,
    pub threshold: f64,
    pub max_chars: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub tie: TieRule,
    pub outlier_k: f64,
}

struct Reader<'a> {
    ini: &'a Ini,
    base: &'a Path,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini
            .section(Some(section))
            .and_then(|s| s.get(key))
            .map(str::trim)
            .filter(|v| !v.is_empty())
    }

    fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        self.raw(section, key).map(|v| self.base.join(v))
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::usage(format!("config {section}.{key} = {v:?}: {e}"))),
        }
    }

    fn list<T: FromStr>(
        &self,
        section: &str,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|e| {
                        CliError::usage(format!("config {section}.{key} item {s:?}: {e}"))
                    })
                })
                .collect(),
        }
    }
}

impl PipelineConfig {
    /// Loads `path` (or an empty config) and applies `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (mut ini, base) = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(CliError::usage(format!(
                        "config file not found: {}",
                        p.display()
                    )));
                }
                let ini = Ini::load_from_file(p).map_err(|e| {
                    CliError::usage(format!("cannot parse config {}: {e}", p.display()))
                })?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (ini, base)
            }
            None => (Ini::new(), PathBuf::new()),
        };
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| {
                CliError::usage(format!("override {o:?} is not section.key=value"))
            })?;
            let (section, key) = key.trim().split_once('.').ok_or_else(|| {
                CliError::usage(format!("override key {key:?} is not section.key"))
            })?;
            ini.with_section(Some(section)).set(key, value.trim());
        }
        Self::from_ini(&ini, &base)
    }

    fn from_ini(ini: &Ini, base: &Path) -> Result<Self, CliError> {
        let r = Reader { ini, base };
        let paths = Paths {
            reports: r.path("paths", "reports"),
            test_reports: r.path("paths", "test_reports"),
            external_scores: r.path("paths", "external_scores"),
            hedging_lexicon: r.path("paths", "hedging_lexicon"),
            fallback_sentiment: r.path("paths", "fallback_sentiment"),
            fallback_commitment: r.path("paths", "fallback_commitment"),
            fallback_specificity: r.path("paths", "fallback_specificity"),
            climate_gate: r.path("paths", "climate_gate"),
            coefficients: r.path("labeling", "coefficients"),
            exemplars: r.path("paths", "exemplars"),
            train: r.path("paths", "train"),
            validation: r.path("paths", "validation"),
            model: r.path("paths", "model"),
            emissions: r.path("paths", "emissions"),
            evaluations: r.path("paths", "evaluations"),
            out_dir: r
                .path("paths", "out_dir")
                .unwrap_or_else(|| base.join("out")),
        };
        let defaults = TrainConfig::default();
        let fdefaults = FeatureConfig::default();
        let config = PipelineConfig {
            paths,
            shipped_fallbacks: r.parse("lexicon", "shipped_fallbacks", true)?,
            scheme: r.parse("labeling", "scheme", Scheme::Eq1)?,
            threshold: r.parse("labeling", "threshold", DEFAULT_THRESHOLD)?,
            max_chars: r.parse("corpus", "max_chars", DEFAULT_MAX_CHARS)?,
            train_fraction: r.parse("corpus", "train_fraction", 0.8)?,
            split_seed: r.parse("corpus", "split_seed", 0)?,
            features: FeatureConfig {
                ngram_orders: r.list("classifier", "ngram_orders", fdefaults.ngram_orders)?,
                hash_dimension: r.parse(
                    "classifier",
                    "hash_dimension",
                    fdefaults.hash_dimension,
                )?,
                lowercase: r.parse("classifier", "lowercase", fdefaults.lowercase)?,
            },
            train: TrainConfig {
                learning_rate: r.parse("classifier", "learning_rate", defaults.learning_rate)?,
                epochs: r.parse("classifier", "epochs", defaults.epochs)?,
                l2: r.parse("classifier", "l2", defaults.l2)?,
                seed: 0,
                frozen_features: r.parse(
                    "classifier",
                    "frozen_features",
                    defaults.frozen_features,
                )?,
            },
            seeds: r.list("classifier", "seeds", (0..10).collect())?,
            tie: r.parse("evaluation", "tie", TieRule::Positive)?,
            outlier_k: r.parse("emissions", "k", DEFAULT_OUTLIER_K)?,
        };
        Ok(config)
    }

    /// `--seed` sets the split seed and shifts the classifier seeds to
    /// `seed, seed + 1, ...` keeping their count.
    pub fn apply_seed(&mut self, seed: u64) {
        self.split_seed = seed;
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (seed..seed + n).collect();
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}

/// Fails with exit code 2 unless every listed path exists.
pub fn require_existing(paths: &[(&str, Option<&PathBuf>)]) -> Result<(), CliError> {
    for (what, p) in paths {
        if let Some(p) = p {
            if !p.exists() {
                return Err(CliError::usage(format!(
                    "{what} not found: {}",
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c.scheme, Scheme::Eq1);
        assert_eq!(c.max_chars, 2000);
        assert_eq!(c.seeds, (0..10).collect::<Vec<_>>());
        assert_eq!(c.train.epochs, 70);
        assert_eq!(c.outlier_k, 1.5);
        assert_eq!(c.paths.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn file_values_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pipeline.ini");
        std::fs::write(
            &p,
            "[paths]\nreports = data/reports\n\n[labeling]\nscheme = eq2\n\n[classifier]\nseeds = 3, 4\nepochs = 5\n",
        )
        .unwrap();
        let c = PipelineConfig::load(Some(&p), &["classifier.epochs=9".into()]).unwrap();
        assert_eq!(c.scheme, Scheme::Eq2);
        assert_eq!(c.seeds, [3, 4]);
        assert_eq!(c.train.epochs, 9);
        assert_eq!(c.paths.reports.unwrap(), dir.path().join("data/reports"));

        let mut c = PipelineConfig::load(Some(&p), &[]).unwrap();
        c.apply_seed(10);
        assert_eq!((c.split_seed, c.seeds.clone()), (10, vec![10, 11]));

        assert!(PipelineConfig::load(Some(&p), &["bad".into()]).is_err());
        assert!(PipelineConfig::load(Some(&p), &["labeling.scheme=eq9".into()]).is_err());
        assert!(PipelineConfig::load(Some(&dir.path().join("none.ini")), &[]).is_err());
    }

    #[test]
    fn inline_comments_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pipeline.ini");
        std::fs::write(
            &p,
            "[labeling]\nscheme = eq2   ; eq1 | eq2\n[emissions]\nk = 1  # flag threshold\n",
        )
        .unwrap();
        let c = PipelineConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(c.scheme, Scheme::Eq2);
        assert_eq!(c.outlier_k, 1.0);
    }
}
