//! Greenwashing-risk labels from attribute vectors.
//!
//! Two schemes are supported:
//!
//! - [`Scheme::Eq1`]: a weighted sum of the four attributes passed through a
//!   sigmoid and compared against a threshold (default weights 0.71, 0.14,
//!   -0.86, -0.71 and threshold 0.67).
//! - [`Scheme::Eq2`]: the indicator `1[-sentiment + commitment + specificity + hedging <= 0]`.
//!
//! Eq1 weights can be refit from expert-labeled exemplars with
//! [`fit_coefficients`], which returns the minimum-norm least-squares
//! solution without an intercept.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::{Chunk, DatasetRecord};
use crate::error::{Error, Result};
use crate::lexicon::AttributeVector;
use crate::text::sigmoid;

pub const DEFAULT_THRESHOLD: f64 = 0.67;
/// One exemplar per unknown weight.
pub const MIN_EXEMPLARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Eq1,
    Eq2,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Eq1 => "eq1",
            Scheme::Eq2 => "eq2",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "eq1" => Ok(Scheme::Eq1),
            "eq2" => Ok(Scheme::Eq2),
            other => Err(Error::InvalidInput(format!(
                "unknown labeling scheme {other:?}"
            ))),
        }
    }
}

/// Weights, threshold and scheme of a labeling equation. Signs live inside
/// the weights. Eq2 ignores weights and threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoefficients {
    pub w_sentiment: f64,
    pub w_commitment: f64,
    pub w_specificity: f64,
    pub w_hedging: f64,
    pub threshold: f64,
    pub scheme: Scheme,
}

impl Default for RiskCoefficients {
    fn default() -> Self {
        RiskCoefficients {
            w_sentiment: 0.71,
            w_commitment: 0.14,
            w_specificity: -0.86,
            w_hedging: -0.71,
            threshold: DEFAULT_THRESHOLD,
            scheme: Scheme::Eq1,
        }
    }
}

impl RiskCoefficients {
    pub fn eq2() -> Self {
        RiskCoefficients {
            scheme: Scheme::Eq2,
            ..Default::default()
        }
    }

    pub fn with_scheme(self, scheme: Scheme) -> Self {
        RiskCoefficients { scheme, ..self }
    }

    pub fn weights(&self) -> [f64; 4] {
        [
            self.w_sentiment,
            self.w_commitment,
            self.w_specificity,
            self.w_hedging,
        ]
    }

    fn from_weights(w: [f64; 4], threshold: f64) -> Self {
        RiskCoefficients {
            w_sentiment: w[0],
            w_commitment: w[1],
            w_specificity: w[2],
            w_hedging: w[3],
            threshold,
            scheme: Scheme::Eq1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("coefficients must be finite".into()));
        }
        if self.scheme == Scheme::Eq1 && !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidInput(format!(
                "eq1 threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Label and, for Eq1, the sigmoid probability.
    pub fn label(&self, attrs: &AttributeVector) -> (bool, Option<f64>) {
        match self.scheme {
            Scheme::Eq1 => {
                let (label, p) = label_eq1(attrs, self);
                (label, Some(p))
            }
            Scheme::Eq2 => (label_eq2(attrs), None),
        }
    }
}

pub fn load_coefficients(path: impl AsRef<Path>) -> Result<RiskCoefficients> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    let coeffs: RiskCoefficients = serde_json::from_str(&source).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    coeffs.validate()?;
    Ok(coeffs)
}

pub fn save_coefficients(coeffs: &RiskCoefficients, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(coeffs).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| Error::write(path, e))
}

/// Weighted sum of the attributes. The scheme field is not consulted.
pub fn raw_score_eq1(attrs: &AttributeVector, coeffs: &RiskCoefficients) -> f64 {
    attrs
        .as_reals()
        .iter()
        .zip(coeffs.weights())
        .map(|(x, w)| x * w)
        .sum()
}

/// `(label, probability)` with `probability = sigmoid(raw)` and
/// `label = probability >= threshold`.
pub fn label_eq1(attrs: &AttributeVector, coeffs: &RiskCoefficients) -> (bool, f64) {
    let p = sigmoid(raw_score_eq1(attrs, coeffs));
    (p >= coeffs.threshold, p)
}

pub fn label_eq2(attrs: &AttributeVector) -> bool {
    let b = |v: bool| i32::from(v);
    let x = -b(attrs.sentiment) + b(attrs.commitment) + b(attrs.specificity) + b(attrs.hedging);
    x <= 0
}

/// A text annotated by subject-matter experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExemplar {
    #[serde(default)]
    pub text: String,
    pub attributes: AttributeVector,
    #[serde(with = "crate::bit")]
    pub expert_label: bool,
}

pub fn parse_exemplars(source: &str, context: &str) -> Result<Vec<AnnotatedExemplar>> {
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                context: context.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_exemplars(path: impl AsRef<Path>) -> Result<Vec<AnnotatedExemplar>> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    parse_exemplars(&source, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: RiskCoefficients,
    /// Euclidean norm of `A w - y`.
    pub residual_norm: f64,
    pub n_exemplars: usize,
}

/// Minimum-norm least-squares solution of `a * w = y`.
///
/// Singular values below `max(m, n) * sigma_max * eps` are treated as zero,
/// which gives pseudo-inverse semantics on rank-deficient systems.
pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != y.len() {
        return Err(Error::LengthMismatch(a.nrows(), y.len()));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Empty("least squares on an empty system"));
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = a.nrows().max(a.ncols()) as f64 * sigma_max * f64::EPSILON;
    svd.solve(y, eps)
        .map_err(|e| Error::Internal(e.to_string()))
}

/// Fits Eq1 weights to expert labels (no intercept column). The threshold is
/// copied from the argument.
pub fn fit_coefficients(exemplars: &[AnnotatedExemplar], threshold: f64) -> Result<FitResult> {
    if exemplars.len() < MIN_EXEMPLARS {
        return Err(Error::UnderdeterminedFit {
            got: exemplars.len(),
            need: MIN_EXEMPLARS,
        });
    }
    let rows: Vec<f64> = exemplars
        .iter()
        .flat_map(|e| e.attributes.as_reals())
        .collect();
    let a = DMatrix::from_row_slice(exemplars.len(), 4, &rows);
    let y = DVector::from_iterator(
        exemplars.len(),
        exemplars
            .iter()
            .map(|e| if e.expert_label { 1.0 } else { 0.0 }),
    );
    let w = least_squares(&a, &y)?;
    let residual_norm = (&a * &w - &y).norm();
    let coefficients = RiskCoefficients::from_weights([w[0], w[1], w[2], w[3]], threshold);
    coefficients.validate()?;
    Ok(FitResult {
        coefficients,
        residual_norm,
        n_exemplars: exemplars.len(),
    })
}

/// Attaches a label (and an Eq1 probability) to every chunk, preserving order.
pub fn generate_labels(
    dataset: &[(Chunk, AttributeVector)],
    coeffs: &RiskCoefficients,
) -> Vec<DatasetRecord> {
    dataset
        .iter()
        .map(|(chunk, attrs)| {
            let (label, probability) = coeffs.label(attrs);
            DatasetRecord {
                id: chunk.id.clone(),
                document_id: chunk.document_id.clone(),
                index: chunk.index,
                text: chunk.text.clone(),
                attributes: *attrs,
                label,
                probability,
                climate_related: chunk.climate_related,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-12;

    fn v(bits: [u8; 4]) -> AttributeVector {
        AttributeVector::from_bits(bits)
    }

    // Independent oracle: plain 1/(1+e^-x) over the hand-written weighted sum.
    fn oracle_eq1(bits: [u8; 4]) -> (bool, f64) {
        let raw = 0.71 * bits[0] as f64 + 0.14 * bits[1] as f64
            - 0.86 * bits[2] as f64
            - 0.71 * bits[3] as f64;
        let p = 1.0 / (1.0 + (-raw).exp());
        (p >= 0.67, p)
    }

    fn bits_of(a: &AttributeVector) -> [u8; 4] {
        [a.sentiment, a.commitment, a.specificity, a.hedging].map(u8::from)
    }

    fn exemplar(bits: [u8; 4], label: bool) -> AnnotatedExemplar {
        AnnotatedExemplar {
            text: String::new(),
            attributes: v(bits),
            expert_label: label,
        }
    }

    fn chunk(i: usize) -> Chunk {
        Chunk {
            id: format!("c{i}"),
            document_id: "d".into(),
            index: i,
            text: format!("chunk {i}"),
            climate_related: true,
            oversize: false,
            pieces: vec![],
        }
    }

    #[test]
    fn raw_scores() {
        let c = RiskCoefficients::default();
        assert_eq!(raw_score_eq1(&v([0, 0, 0, 0]), &c), 0.0);
        assert!((raw_score_eq1(&v([1, 0, 0, 0]), &c) - 0.71).abs() < EPS);
        assert!((raw_score_eq1(&v([1, 1, 1, 1]), &c) + 0.72).abs() < EPS);
    }

    #[test]
    fn eq1_examples() {
        let c = RiskCoefficients::default();
        assert_eq!(label_eq1(&v([0, 0, 0, 0]), &c), (false, 0.5));
        let (l, p) = label_eq1(&v([1, 0, 0, 0]), &c);
        assert!(l);
        assert!((p - 0.670_401_159_808_868_6).abs() < 1e-12);
        let (l, p) = label_eq1(&v([1, 0, 0, 1]), &c);
        assert!(!l);
        assert!((p - 0.5).abs() < EPS);
        let (l, p) = label_eq1(&v([1, 1, 0, 0]), &c);
        assert!(l);
        assert!((p - 0.700_567_142_473_973).abs() < 1e-12);
    }

    #[test]
    fn eq2_examples() {
        assert!(label_eq2(&v([1, 0, 0, 0])));
        assert!(label_eq2(&v([0, 0, 0, 0])));
        assert!(!label_eq2(&v([0, 1, 1, 0])));
    }

    #[test]
    fn exhaustive_against_oracles() {
        let c = RiskCoefficients::default();
        for a in AttributeVector::enumerate() {
            let b = bits_of(&a);
            let (l, p) = label_eq1(&a, &c);
            let (ol, op) = oracle_eq1(b);
            assert_eq!(l, ol, "{a}");
            assert!((p - op).abs() < 1e-15);
            let x = -(b[0] as i32) + b[1] as i32 + b[2] as i32 + b[3] as i32;
            assert_eq!(label_eq2(&a), x <= 0, "{a}");
        }
    }

    #[test]
    fn eq1_monotone_in_each_attribute() {
        let c = RiskCoefficients::default();
        for a in AttributeVector::enumerate() {
            for (attr, increasing) in [
                (crate::lexicon::Attribute::Sentiment, true),
                (crate::lexicon::Attribute::Commitment, true),
                (crate::lexicon::Attribute::Specificity, false),
                (crate::lexicon::Attribute::Hedging, false),
            ] {
                let mut lo = a;
                lo.set(attr, false);
                let mut hi = a;
                hi.set(attr, true);
                let (plo, phi) = (label_eq1(&lo, &c).1, label_eq1(&hi, &c).1);
                assert!(if increasing { phi >= plo } else { phi <= plo });
            }
        }
    }

    #[test]
    fn generate_labels_enumeration() {
        let data: Vec<_> = AttributeVector::enumerate()
            .enumerate()
            .map(|(i, a)| (chunk(i), a))
            .collect();
        let out = generate_labels(&data, &RiskCoefficients::default());
        let positives: Vec<_> = out
            .iter()
            .filter(|r| r.label)
            .map(|r| r.attributes)
            .collect();
        // Brute force through the sigmoid: only (1,0,0,0) and (1,1,0,0) reach 0.67.
        assert_eq!(positives, [v([1, 0, 0, 0]), v([1, 1, 0, 0])]);
        assert!(out
            .iter()
            .all(|r| r.label == (r.probability.unwrap() >= 0.67)));

        let out = generate_labels(&data, &RiskCoefficients::eq2());
        for r in &out {
            let b = bits_of(&r.attributes);
            assert_eq!(
                r.label,
                -(b[0] as i32) + b[1] as i32 + b[2] as i32 + b[3] as i32 <= 0
            );
            assert_eq!(r.probability, None);
        }
        assert!(generate_labels(&[], &RiskCoefficients::default()).is_empty());
    }

    #[test]
    fn generate_labels_permutation_equivariant() {
        let data: Vec<_> = AttributeVector::enumerate()
            .enumerate()
            .map(|(i, a)| (chunk(i), a))
            .collect();
        let mut shuffled = data.clone();
        shuffled.reverse();
        shuffled.swap(0, 7);
        let c = RiskCoefficients::default();
        let base = generate_labels(&data, &c);
        let perm = generate_labels(&shuffled, &c);
        for (p, (ch, _)) in perm.iter().zip(&shuffled) {
            assert_eq!(p, &base[ch.index]);
        }
    }

    #[test]
    fn fit_recovers_min_norm_on_duplicate_columns() {
        // sentiment and commitment columns coincide, so the minimum-norm
        // solution splits the unit weight evenly.
        let ex = [
            exemplar([1, 1, 0, 0], true),
            exemplar([0, 0, 1, 0], false),
            exemplar([0, 0, 0, 1], false),
            exemplar([1, 1, 1, 1], true),
        ];
        let fit = fit_coefficients(&ex, 0.67).unwrap();
        let w = fit.coefficients.weights();
        for (got, want) in w.iter().zip([0.5, 0.5, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{w:?}");
        }
        assert!(fit.residual_norm < 1e-12);
        assert_eq!(fit.n_exemplars, 4);
        assert_eq!(fit.coefficients.threshold, 0.67);
        assert_eq!(fit.coefficients.scheme, Scheme::Eq1);
    }

    #[test]
    fn fit_rank_one_conflicting_labels() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let w = least_squares(&a, &y).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!(w.iter().skip(1).all(|x| x.abs() < 1e-12));
        assert!(((&a * &w - &y).norm() - 0.5f64.sqrt()).abs() < 1e-12);

        let ex: Vec<_> = [true, false, true, false]
            .into_iter()
            .map(|l| exemplar([1, 0, 0, 0], l))
            .collect();
        let fit = fit_coefficients(&ex, 0.67).unwrap();
        assert!((fit.coefficients.w_sentiment - 0.5).abs() < 1e-12);
        assert!((fit.residual_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_four_exemplars() {
        let ex = vec![exemplar([1, 0, 0, 0], true); 3];
        let err = fit_coefficients(&ex, 0.67).unwrap_err();
        assert!(matches!(err, Error::UnderdeterminedFit { got: 3, need: 4 }));
        assert!(err.to_string().contains("underdetermined fit"));
    }

    #[test]
    fn fit_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ex: Vec<_> = (0..10)
            .map(|_| {
                let bits = [0; 4].map(|_: u8| rng.random_range(0..2u8));
                exemplar(bits, rng.random_bool(0.5))
            })
            .collect();
        let fit = fit_coefficients(&ex, 0.67).unwrap();
        let resid = |w: [f64; 4]| -> f64 {
            ex.iter()
                .map(|e| {
                    let r: f64 = e
                        .attributes
                        .as_reals()
                        .iter()
                        .zip(w)
                        .map(|(x, w)| x * w)
                        .sum::<f64>()
                        - if e.expert_label { 1.0 } else { 0.0 };
                    r * r
                })
                .sum::<f64>()
                .sqrt()
        };
        let w = fit.coefficients.weights();
        assert!((resid(w) - fit.residual_norm).abs() < 1e-12);
        for _ in 0..50 {
            let mut d = [0.0; 4].map(|_: f64| rng.random_range(-1.0..1.0));
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.iter_mut().for_each(|x| *x *= 1e-3 / n);
            let moved = [w[0] + d[0], w[1] + d[1], w[2] + d[2], w[3] + d[3]];
            assert!(fit.residual_norm <= resid(moved) + 1e-15);
        }
    }

    #[test]
    fn coefficients_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        save_coefficients(&RiskCoefficients::default(), &p).unwrap();
        assert_eq!(load_coefficients(&p).unwrap(), RiskCoefficients::default());
        let shipped: RiskCoefficients =
            serde_json::from_str(include_str!("../data/default_coefficients.json")).unwrap();
        assert_eq!(shipped, RiskCoefficients::default());
        fs::write(&p, r#"{"w_sentiment":1,"w_commitment":0,"w_specificity":0,"w_hedging":0,"threshold":1.5,"scheme":"eq1"}"#).unwrap();
        assert!(load_coefficients(&p).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = RiskCoefficients {
            threshold: 0.5,
            ..Default::default()
        };
        assert!(label_eq1(&v([0, 0, 0, 0]), &c).0);
    }

    proptest! {
        #[test]
        fn normal_equations_hold(seed in any::<u64>(), m in 5usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let w = least_squares(&a, &y).unwrap();
            let g = a.transpose() * (&a * &w - &y);
            prop_assert!(g.amax() <= 1e-8);
        }
    }
}
