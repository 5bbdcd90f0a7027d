//! Scope 1/2 emissions relative to sector-year averages, outlier flags, and
//! a report joining emissions with report-level risk labels.
//!
//! Emissions are in hundred-thousand metric tonnes CO2e and revenue in
//! billions of USD. Input rows are either raw values (deviations are
//! computed here) or already relative to the group average.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Sector;
use crate::error::{Error, Result};
use crate::evaluation::CompanyRow;

pub const DEFAULT_OUTLIER_K: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmissionsField {
    Scope1,
    Scope2Market,
    Scope2Location,
    Scope2Uncategorized,
}

impl EmissionsField {
    pub const ALL: [EmissionsField; 4] = [
        EmissionsField::Scope1,
        EmissionsField::Scope2Market,
        EmissionsField::Scope2Location,
        EmissionsField::Scope2Uncategorized,
    ];

    pub fn column(self) -> &'static str {
        match self {
            EmissionsField::Scope1 => "scope1",
            EmissionsField::Scope2Market => "scope2_market",
            EmissionsField::Scope2Location => "scope2_location",
            EmissionsField::Scope2Uncategorized => "scope2_uncategorized",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EmissionsField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionsMode {
    Raw,
    Relative,
}

/// One row of the emissions CSV. Blank cells deserialize to `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionsRecord {
    pub company: String,
    pub sector: Sector,
    pub year: i32,
    pub mode: EmissionsMode,
    pub scope1: Option<f64>,
    pub scope2_market: Option<f64>,
    pub scope2_location: Option<f64>,
    pub scope2_uncategorized: Option<f64>,
    pub revenue: f64,
}

impl EmissionsRecord {
    pub fn get(&self, field: EmissionsField) -> Option<f64> {
        match field {
            EmissionsField::Scope1 => self.scope1,
            EmissionsField::Scope2Market => self.scope2_market,
            EmissionsField::Scope2Location => self.scope2_location,
            EmissionsField::Scope2Uncategorized => self.scope2_uncategorized,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.revenue > 0.0 && self.revenue.is_finite()) {
            return Err(format!("{}: revenue must be > 0", self.company));
        }
        for field in EmissionsField::ALL {
            match self.get(field) {
                Some(v) if !v.is_finite() => {
                    return Err(format!("{}: {field} is not finite", self.company))
                }
                Some(v) if self.mode == EmissionsMode::Raw && v < 0.0 => {
                    return Err(format!("{}: raw {field} must be >= 0", self.company))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn parse_emissions_csv(source: &str, context: &str) -> Result<Vec<EmissionsRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<EmissionsRecord>().enumerate() {
        let line = i + 2;
        let parse_err = |message: String| Error::Parse {
            context: context.to_string(),
            line,
            message,
        };
        let record = row.map_err(|e| parse_err(e.to_string()))?;
        record.validate().map_err(parse_err)?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_emissions(path: impl AsRef<Path>) -> Result<Vec<EmissionsRecord>> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    parse_emissions_csv(&source, &path.display().to_string())
}

/// Per-field deviation from the sector-year mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeEmissions {
    pub company: String,
    pub sector: Sector,
    pub year: i32,
    pub deviations: [Option<f64>; 4],
    pub revenue: f64,
}

impl RelativeEmissions {
    pub fn get(&self, field: EmissionsField) -> Option<f64> {
        self.deviations[field.slot()]
    }

    /// Deviation per billion USD of revenue.
    pub fn per_revenue(&self, field: EmissionsField) -> Option<f64> {
        self.get(field).map(|d| d / self.revenue)
    }
}

type GroupKey = (Sector, i32);

/// Deviations from the (sector, year) mean of each field, averaging only
/// over companies that report the field. Rows already in relative mode are
/// passed through. Output keeps input order.
pub fn relative_emissions(records: &[EmissionsRecord]) -> Result<Vec<RelativeEmissions>> {
    let mut modes: BTreeMap<GroupKey, EmissionsMode> = BTreeMap::new();
    let mut sums: BTreeMap<GroupKey, [(f64, usize); 4]> = BTreeMap::new();
    for r in records {
        let key = (r.sector, r.year);
        if *modes.entry(key).or_insert(r.mode) != r.mode {
            return Err(Error::InvalidInput(format!(
                "{} {}: raw and relative rows mixed in one group",
                r.sector, r.year
            )));
        }
        let acc = sums.entry(key).or_insert([(0.0, 0); 4]);
        for field in EmissionsField::ALL {
            if let Some(v) = r.get(field) {
                acc[field.slot()].0 += v;
                acc[field.slot()].1 += 1;
            }
        }
    }
    Ok(records
        .iter()
        .map(|r| {
            let acc = sums[&(r.sector, r.year)];
            let deviations = EmissionsField::ALL.map(|field| {
                let v = r.get(field)?;
                Some(match r.mode {
                    EmissionsMode::Relative => v,
                    EmissionsMode::Raw => {
                        let (sum, n) = acc[field.slot()];
                        v - sum / n as f64
                    }
                })
            });
            RelativeEmissions {
                company: r.company.clone(),
                sector: r.sector,
                year: r.year,
                deviations,
                revenue: r.revenue,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierFlag {
    pub company: String,
    pub sector: Sector,
    pub year: i32,
    pub field: EmissionsField,
    pub deviation: f64,
    /// `k` times the population standard deviation of the group's deviations.
    pub threshold: f64,
}

/// Flags company-fields whose deviation exceeds `k` standard deviations of
/// that field's deviations within the sector-year group. Groups with fewer
/// than two reporting companies, or zero spread, produce no flags.
pub fn flag_outliers(relatives: &[RelativeEmissions], k: f64) -> Result<Vec<OutlierFlag>> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "outlier multiplier must be > 0, got {k}"
        )));
    }
    let mut groups: BTreeMap<(GroupKey, EmissionsField), Vec<&RelativeEmissions>> = BTreeMap::new();
    for r in relatives {
        for field in EmissionsField::ALL {
            if r.get(field).is_some() {
                groups
                    .entry(((r.sector, r.year), field))
                    .or_default()
                    .push(r);
            }
        }
    }
    let mut flags = Vec::new();
    for ((_, field), members) in groups {
        if members.len() < 2 {
            continue;
        }
        let values: Vec<f64> = members
            .iter()
            .map(|r| r.get(field).expect("grouped on presence"))
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std == 0.0 {
            continue;
        }
        let threshold = k * std;
        for (r, &v) in members.iter().zip(&values) {
            if v > threshold {
                flags.push(OutlierFlag {
                    company: r.company.clone(),
                    sector: r.sector,
                    year: r.year,
                    field,
                    deviation: v,
                    threshold,
                });
            }
        }
    }
    flags.sort_by(|a, b| (a.sector, &a.company, a.field).cmp(&(b.sector, &b.company, b.field)));
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionsRow {
    pub company: String,
    pub sector: Option<Sector>,
    pub year: Option<i32>,
    pub deviations: [Option<f64>; 4],
    pub revenue: Option<f64>,
    pub flagged: Vec<EmissionsField>,
    pub report_label_predicted: Option<bool>,
    pub report_label_gold: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionsReport {
    pub rows: Vec<EmissionsRow>,
}

/// Joins relative emissions and outlier flags with report-level labels by
/// company name. Companies only present in `evals` get blank emissions
/// cells. Rows are sorted by sector (blank last), then company.
pub fn emissions_report(
    relatives: &[RelativeEmissions],
    flags: &[OutlierFlag],
    evals: Option<&[CompanyRow]>,
) -> EmissionsReport {
    let evals = evals.unwrap_or(&[]);
    let label_of = |company: &str| evals.iter().find(|e| e.company == company);
    let mut rows: Vec<EmissionsRow> = relatives
        .iter()
        .map(|r| {
            let eval = label_of(&r.company);
            EmissionsRow {
                company: r.company.clone(),
                sector: Some(r.sector),
                year: Some(r.year),
                deviations: r.deviations,
                revenue: Some(r.revenue),
                flagged: flags
                    .iter()
                    .filter(|f| f.company == r.company && f.sector == r.sector && f.year == r.year)
                    .map(|f| f.field)
                    .collect(),
                report_label_predicted: eval.and_then(|e| e.report_label_predicted),
                report_label_gold: eval.and_then(|e| e.report_label_gold),
            }
        })
        .collect();
    for e in evals {
        if !relatives.iter().any(|r| r.company == e.company) {
            rows.push(EmissionsRow {
                company: e.company.clone(),
                sector: None,
                year: None,
                deviations: [None; 4],
                revenue: None,
                flagged: Vec::new(),
                report_label_predicted: e.report_label_predicted,
                report_label_gold: e.report_label_gold,
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.sector.is_none(), a.sector, &a.company).cmp(&(b.sector.is_none(), b.sector, &b.company))
    });
    EmissionsReport { rows }
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn signed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:+}")).unwrap_or_default()
}

impl EmissionsReport {
    pub const HEADER: [&'static str; 11] = [
        "company",
        "sector",
        "year",
        "scope1",
        "scope2_market",
        "scope2_location",
        "scope2_uncategorized",
        "revenue",
        "flags",
        "report_label_pred",
        "report_label_gold",
    ];

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Internal(e.to_string());
        w.write_record(Self::HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.company.clone(), cell(r.sector), cell(r.year)];
            rec.extend(r.deviations.iter().map(|d| signed(*d)));
            rec.push(cell(r.revenue));
            rec.push(
                r.flagged
                    .iter()
                    .map(|f| f.column())
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            rec.push(cell(r.report_label_predicted.map(u8::from)));
            rec.push(cell(r.report_label_gold.map(u8::from)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }
}

impl fmt::Display for EmissionsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8}  {:<4} {:<4} flags",
            "Company", "Sector", "Scope1", "S2-mkt", "S2-loc", "S2-unc", "Revenue", "Pred", "Gold"
        )?;
        for r in &self.rows {
            let dev = |i: usize| {
                r.deviations[i]
                    .map(|x| format!("{x:+.2}"))
                    .unwrap_or_else(|| "-".into())
            };
            writeln!(
                f,
                "{:<12} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8}  {:<4} {:<4} {}",
                r.company,
                r.sector.map(|s| s.as_str()).unwrap_or("-"),
                dev(0),
                dev(1),
                dev(2),
                dev(3),
                r.revenue
                    .map(|x| format!("{x:.1}"))
                    .unwrap_or_else(|| "-".into()),
                r.report_label_predicted
                    .map(|b| u8::from(b).to_string())
                    .unwrap_or_else(|| "-".into()),
                r.report_label_gold
                    .map(|b| u8::from(b).to_string())
                    .unwrap_or_else(|| "-".into()),
                r.flagged
                    .iter()
                    .map(|x| x.column())
                    .collect::<Vec<_>>()
                    .join(";"),
            )?;
        }
        Ok(())
    }
}
