//! Raw CSV ingestion with the per-dataset preprocessing pinned in
//! `data/MANIFEST.md`. Unknown category values are ingestion errors naming
//! the offending value and line, never silent coercions.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fairsynth::tabular::{Attribute, Dataset, Role, Schema};

use crate::config::DatasetKind;

pub fn ingest(kind: DatasetKind, path: &Path) -> Result<Dataset> {
    match kind {
        DatasetKind::Adult => ingest_adult(path),
        DatasetKind::Compas => ingest_compas(path),
        DatasetKind::German => ingest_german(path),
    }
}

const ADULT_AGE_BINS: [&str; 8] =
    ["17-26", "27-36", "37-46", "47-56", "57-66", "67-76", "77-86", "87-96"];
const ADULT_EDUCATION: [&str; 8] = [
    "<11th grade",
    "11th grade",
    "High school",
    "Some college",
    "Associate's",
    "Vocational",
    "Bachelor's",
    "Graduate",
];

fn adult_education_stage(raw: &str) -> Option<u16> {
    Some(match raw {
        "Preschool" | "1st-4th" | "5th-6th" | "7th-8th" | "9th" | "10th" => 0,
        "11th" | "12th" => 1,
        "HS-grad" => 2,
        "Some-college" => 3,
        "Assoc-acdm" => 4,
        "Assoc-voc" => 5,
        "Bachelors" => 6,
        "Masters" | "Doctorate" | "Prof-school" => 7,
        _ => return None,
    })
}

/// Census income data: 15 comma-separated columns without a header
/// (`adult.data` format; `adult.test` lines are accepted too — the banner
/// line is skipped and the trailing period on labels stripped).
///
/// Keeps race (collapsed to White / Non-white), sex, age in decades,
/// education in 8 stages, and income as the outcome.
pub fn ingest_adult(path: &Path) -> Result<Dataset> {
    let schema = Arc::new(
        Schema::new(vec![
            Attribute::new("race", vec!["Non-white".into(), "White".into()], Role::Protected),
            Attribute::new("sex", vec!["Female".into(), "Male".into()], Role::Protected),
            Attribute::new("age", ADULT_AGE_BINS.iter().map(|s| s.to_string()).collect(), Role::Feature),
            Attribute::new(
                "education",
                ADULT_EDUCATION.iter().map(|s| s.to_string()).collect(),
                Role::Feature,
            ),
            Attribute::new("income", vec!["<=50K".into(), ">50K".into()], Role::Outcome),
        ])
        .unwrap(),
    );
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('|') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 15 {
            bail!("line {}: expected 15 columns, found {}", lineno + 1, fields.len());
        }
        let age: u32 = fields[0]
            .parse()
            .with_context(|| format!("line {}: age {:?}", lineno + 1, fields[0]))?;
        if !(17..=96).contains(&age) {
            bail!("line {}: age {} outside 17-96", lineno + 1, age);
        }
        let age_bin = ((age - 17) / 10) as u16;
        let education = adult_education_stage(fields[3])
            .with_context(|| format!("line {}: unknown education {:?}", lineno + 1, fields[3]))?;
        let race = u16::from(fields[8] == "White");
        let sex = match fields[9] {
            "Male" => 1u16,
            "Female" => 0u16,
            other => bail!("line {}: unknown sex {:?}", lineno + 1, other),
        };
        let income = match fields[14].trim_end_matches('.') {
            ">50K" => 1u16,
            "<=50K" => 0u16,
            other => bail!("line {}: unknown income {:?}", lineno + 1, other),
        };
        rows.push(vec![race, sex, age_bin, education, income]);
    }
    Dataset::new(schema, rows).map_err(Into::into)
}

/// Two-year recidivism scores: the standard screening filter (abs screening
/// gap ≤ 30 days, a recidivism flag, a real charge degree, a score), then
/// the African-American / Caucasian subset.
pub fn ingest_compas(path: &Path) -> Result<Dataset> {
    let schema = Arc::new(
        Schema::new(vec![
            Attribute::new("race", vec!["African-American".into(), "Caucasian".into()], Role::Protected),
            Attribute::new("sex", vec!["Male".into(), "Female".into()], Role::Protected),
            Attribute::new("age", vec!["<25".into(), "25-45".into(), ">45".into()], Role::Feature),
            Attribute::new("charge", vec!["Felony".into(), "Misdemeanor".into()], Role::Feature),
            Attribute::new("priors", vec!["0".into(), "1-3".into(), ">3".into()], Role::Feature),
            Attribute::new("recidivism", vec!["Yes".into(), "No".into()], Role::Outcome),
        ])
        .unwrap(),
    );
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column {name:?} in {}", path.display()))
    };
    let (c_sex, c_age, c_race, c_priors, c_degree, c_recid, c_days, c_isrecid, c_score) = (
        col("sex")?,
        col("age")?,
        col("race")?,
        col("priors_count")?,
        col("c_charge_degree")?,
        col("two_year_recid")?,
        col("days_b_screening_arrest")?,
        col("is_recid")?,
        col("score_text")?,
    );
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("record {}", i + 2))?;
        let get = |c: usize| record.get(c).unwrap_or("").trim();
        // screening filter
        let days: f64 = match get(c_days).parse() {
            Ok(v) => v,
            Err(_) => continue,
        };
        if !(-30.0..=30.0).contains(&days) {
            continue;
        }
        if get(c_isrecid) == "-1" || get(c_degree) == "O" || get(c_score) == "N/A" {
            continue;
        }
        let race = match get(c_race) {
            "African-American" => 0u16,
            "Caucasian" => 1u16,
            _ => continue,
        };
        let sex = match get(c_sex) {
            "Male" => 0u16,
            "Female" => 1u16,
            other => bail!("record {}: unknown sex {:?}", i + 2, other),
        };
        let age: i64 = get(c_age).parse().with_context(|| format!("record {}: age", i + 2))?;
        let age_bin = if age < 25 {
            0u16
        } else if age <= 45 {
            1
        } else {
            2
        };
        let charge = match get(c_degree) {
            "F" => 0u16,
            "M" => 1u16,
            other => bail!("record {}: unknown charge degree {:?}", i + 2, other),
        };
        let priors: i64 =
            get(c_priors).parse().with_context(|| format!("record {}: priors_count", i + 2))?;
        let priors_bin = if priors == 0 {
            0u16
        } else if priors <= 3 {
            1
        } else {
            2
        };
        let recid = match get(c_recid) {
            "1" => 0u16, // recidivated: unfavorable
            "0" => 1u16, // did not: favorable
            other => bail!("record {}: unknown two_year_recid {:?}", i + 2, other),
        };
        rows.push(vec![race, sex, age_bin, charge, priors_bin, recid]);
    }
    Dataset::new(schema, rows).map_err(Into::into)
}

/// Documented level codes for the qualitative credit attributes.
const GERMAN_QUALITATIVE: &[(&str, usize, &[&str])] = &[
    ("checking_status", 0, &["A11", "A12", "A13", "A14"]),
    ("credit_history", 2, &["A30", "A31", "A32", "A33", "A34"]),
    (
        "purpose",
        3,
        &["A40", "A41", "A42", "A43", "A44", "A45", "A46", "A47", "A48", "A49", "A410"],
    ),
    ("savings", 5, &["A61", "A62", "A63", "A64", "A65"]),
    ("employment", 6, &["A71", "A72", "A73", "A74", "A75"]),
    ("other_debtors", 9, &["A101", "A102", "A103"]),
    ("property", 11, &["A121", "A122", "A123", "A124"]),
    ("other_installment_plans", 13, &["A141", "A142", "A143"]),
    ("housing", 14, &["A151", "A152", "A153"]),
    ("job", 16, &["A171", "A172", "A173", "A174"]),
    ("telephone", 18, &["A191", "A192"]),
    ("foreign_worker", 19, &["A201", "A202"]),
];

/// (name, column, divisor) for the numeric credit attributes; values are
/// rescaled by the divisor, then attributes with more than ten distinct
/// values are cut at the quartiles of the whole file.
const GERMAN_NUMERIC: &[(&str, usize, f64)] = &[
    ("duration", 1, 1.0),
    ("credit_amount", 4, 1000.0),
    ("installment_rate", 7, 1.0),
    ("residence_since", 10, 1.0),
    ("age", 12, 1.0),
    ("existing_credits", 15, 1.0),
    ("people_liable", 17, 1.0),
];

/// Loan applications: 20 space-separated attributes plus a 1/2 target. Sex
/// is derived from the personal-status field; credit amount is rescaled by
/// 1000; numeric attributes are discretized (distinct values if at most ten,
/// quartile bins otherwise) since the downstream classifier consumes the
/// categorical encoding.
pub fn ingest_german(path: &Path) -> Result<Dataset> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if fields.len() != 21 {
            bail!("line {}: expected 21 columns, found {}", lineno + 1, fields.len());
        }
        raw_rows.push(fields);
    }
    if raw_rows.is_empty() {
        bail!("{} contains no rows", path.display());
    }

    // numeric columns: parse, rescale, choose level sets
    let mut numeric_levels: Vec<(usize, Vec<f64>, Vec<String>, bool)> = Vec::new();
    for &(name, col, divisor) in GERMAN_NUMERIC {
        let mut values = Vec::with_capacity(raw_rows.len());
        for (i, row) in raw_rows.iter().enumerate() {
            let v: f64 = row[col]
                .parse()
                .with_context(|| format!("line {}: {name} {:?}", i + 1, row[col]))?;
            values.push(v / divisor);
        }
        let mut distinct = values.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        if distinct.len() <= 10 {
            let labels = distinct.iter().map(|v| format!("{v}")).collect();
            numeric_levels.push((col, distinct, labels, false));
        } else {
            // quartile cut points (nearest rank)
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            let cut = |q: f64| sorted[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
            let cuts = vec![cut(0.25), cut(0.5), cut(0.75)];
            let labels = vec![
                format!("<={}", cuts[0]),
                format!("({}-{}]", cuts[0], cuts[1]),
                format!("({}-{}]", cuts[1], cuts[2]),
                format!(">{}", cuts[2]),
            ];
            numeric_levels.push((col, cuts, labels, true));
        }
    }

    // schema in raw column order, sex substituted for personal status
    let mut attrs: Vec<Attribute> = Vec::new();
    let mut encoders: Vec<Box<dyn Fn(&str, usize) -> Result<u16>>> = Vec::new();
    for col in 0..20usize {
        if col == 8 {
            attrs.push(Attribute::new("sex", vec!["Female".into(), "Male".into()], Role::Protected));
            encoders.push(Box::new(|raw: &str, lineno: usize| match raw {
                "A92" | "A95" => Ok(0),
                "A91" | "A93" | "A94" => Ok(1),
                other => bail!("line {lineno}: unknown personal status {other:?}"),
            }));
            continue;
        }
        if let Some(&(name, _, levels)) = GERMAN_QUALITATIVE.iter().find(|&&(_, c, _)| c == col) {
            attrs.push(Attribute::new(
                name,
                levels.iter().map(|s| s.to_string()).collect(),
                Role::Feature,
            ));
            let levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
            encoders.push(Box::new(move |raw: &str, lineno: usize| {
                levels
                    .iter()
                    .position(|l| l == raw)
                    .map(|i| i as u16)
                    .with_context(|| format!("line {lineno}: unknown {name} code {raw:?}"))
            }));
            continue;
        }
        let (_, cuts_or_distinct, labels, binned) = numeric_levels
            .iter()
            .find(|(c, _, _, _)| *c == col)
            .expect("every column is qualitative or numeric")
            .clone();
        let (name, _, divisor) = *GERMAN_NUMERIC.iter().find(|&&(_, c, _)| c == col).unwrap();
        attrs.push(Attribute::new(name, labels, Role::Feature));
        encoders.push(Box::new(move |raw: &str, lineno: usize| {
            let v: f64 = raw
                .parse::<f64>()
                .with_context(|| format!("line {lineno}: {name} {raw:?}"))?
                / divisor;
            if binned {
                let mut idx = 0u16;
                for c in &cuts_or_distinct {
                    if v > *c {
                        idx += 1;
                    }
                }
                Ok(idx)
            } else {
                cuts_or_distinct
                    .iter()
                    .position(|d| (d - v).abs() < 1e-9)
                    .map(|i| i as u16)
                    .with_context(|| format!("line {lineno}: unexpected {name} value {v}"))
            }
        }));
    }
    attrs.push(Attribute::new("credit", vec!["Bad".into(), "Good".into()], Role::Outcome));

    let schema = Arc::new(Schema::new(attrs)?);
    let mut rows = Vec::with_capacity(raw_rows.len());
    for (i, raw) in raw_rows.iter().enumerate() {
        let mut row = Vec::with_capacity(21);
        for (col, encode) in encoders.iter().enumerate() {
            row.push(encode(&raw[col], i + 1)?);
        }
        row.push(match raw[20].as_str() {
            "1" => 1u16, // good: favorable
            "2" => 0u16,
            other => bail!("line {}: unknown target {:?}", i + 1, other),
        });
        rows.push(row);
    }
    Dataset::new(schema, rows).map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(name: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("fairsynth-ingest-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    const ADULT_ROW: &str = "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K";

    #[test]
    fn adult_row_parses_and_collapses() {
        let content = format!(
            "{ADULT_ROW}\n|1x3 Cross validator\n17, Private, 1, 11th, 7, Never-married, Sales, Own-child, Asian-Pac-Islander, Female, 0, 0, 20, India, >50K.\n\n27, Private, 1, 12th, 8, Never-married, Sales, Own-child, Black, Female, 0, 0, 20, United-States, <=50K\n"
        );
        let d = ingest_adult(&write_temp("adult_ok.csv", &content)).unwrap();
        assert_eq!(d.n_rows(), 3);
        // row 0: White Male, 39 -> 37-46 (bin 2), Bachelors (6), <=50K
        assert_eq!(d.row(0), &[1, 1, 2, 6, 0]);
        // row 1: non-white female, 17 -> bin 0, 11th -> stage 1, >50K. stripped
        assert_eq!(d.row(1), &[0, 0, 0, 1, 1]);
        // row 2: age 27 -> bin 1, 12th maps to the 11th-grade stage
        assert_eq!(d.row(2), &[0, 0, 1, 1, 0]);
    }

    #[test]
    fn adult_unknown_value_is_an_error() {
        let bad = ADULT_ROW.replace("<=50K", "50K-ish");
        let err = ingest_adult(&write_temp("adult_bad.csv", &bad)).unwrap_err();
        assert!(format!("{err:#}").contains("50K-ish"), "{err:#}");
        let bad_age = ADULT_ROW.replace("39,", "12,");
        assert!(ingest_adult(&write_temp("adult_bad_age.csv", &bad_age)).is_err());
    }

    #[test]
    fn compas_filter_and_bins() {
        let content = "\
id,sex,age,race,priors_count,c_charge_degree,two_year_recid,days_b_screening_arrest,is_recid,score_text
1,Male,30,African-American,2,F,1,0,1,High
2,Female,22,Caucasian,0,M,0,-5,0,Low
3,Male,50,Hispanic,4,F,1,10,1,Medium
4,Male,40,Caucasian,1,F,1,60,1,High
5,Female,46,African-American,9,M,0,0,0,N/A
6,Male,33,Caucasian,0,O,0,0,0,Low
7,Female,25,Caucasian,3,F,0,,0,Low
8,Male,28,African-American,0,F,1,2,-1,Low
";
        let d = ingest_compas(&write_temp("compas.csv", content)).unwrap();
        // kept: rows 1 and 2 only (3: race filter, 4: days, 5: N/A score,
        // 6: charge O, 7: missing days, 8: is_recid -1)
        assert_eq!(d.n_rows(), 2);
        // row 1: AA male, 30 -> 25-45, priors 2 -> 1-3, recidivated -> Yes(0)
        assert_eq!(d.row(0), &[0, 0, 1, 0, 1, 0]);
        // row 2: Caucasian female, 22 -> <25, priors 0, no recid -> No(1)
        assert_eq!(d.row(1), &[1, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn german_rows_encode() {
        // two hand-built rows exercising sex mapping and the rescale
        let row1 = "A11 6 A34 A43 1169 A65 A75 4 A93 A101 4 A121 67 A143 A152 2 A173 1 A192 A201 1";
        let row2 = "A12 48 A32 A43 5951 A61 A73 2 A92 A101 2 A121 22 A143 A152 1 A173 1 A191 A201 2";
        let content = format!("{row1}\n{row2}\n");
        let d = ingest_german(&write_temp("german.data", &content)).unwrap();
        assert_eq!(d.n_rows(), 2);
        let schema = d.schema();
        let sex = schema.attr_index("sex").unwrap();
        assert_eq!(d.row(0)[sex], 1); // A93 male
        assert_eq!(d.row(1)[sex], 0); // A92 female
        let outcome = schema.outcome_index();
        assert_eq!(d.row(0)[outcome], 1); // target 1 = good
        assert_eq!(d.row(1)[outcome], 0);
        // credit amounts 1.169 and 5.951 after rescaling; with two rows the
        // attribute keeps distinct scaled values as levels
        let amount = schema.attr_index("credit_amount").unwrap();
        assert_eq!(schema.attr(amount).levels, vec!["1.169".to_string(), "5.951".to_string()]);
        let bad = row1.replace("A11", "A19");
        assert!(ingest_german(&write_temp("german_bad.data", &bad)).is_err());
    }
}
