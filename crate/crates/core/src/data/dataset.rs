use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

/// Token ↔ index mapping for one categorical feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
    unknown: Option<u32>,
}

pub const UNKNOWN_TOKEN: &str = "<unknown>";

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Self {
        let lookup = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            tokens,
            lookup,
            unknown: None,
        }
    }

    /// Indices `0..n` for the first `n` sorted tokens; everything else maps to
    /// the reserved last slot.
    fn with_reserved(mut tokens: Vec<String>, cardinality: usize) -> Self {
        tokens.truncate(cardinality - 1);
        while tokens.len() < cardinality - 1 {
            // pad so the reserved slot sits at the declared last index
            tokens.push(format!("<unused-{}>", tokens.len()));
        }
        tokens.push(UNKNOWN_TOKEN.to_string());
        let mut v = Self::new(tokens);
        v.unknown = Some(cardinality as u32 - 1);
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied().or(self.unknown)
    }

    pub fn decode(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// How categorical strings outside the vocabulary are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VocabPolicy {
    /// More distinct values than the declared cardinality, or an unseen
    /// string against a supplied vocabulary, is a schema violation.
    #[default]
    Strict,
    /// The last index of every categorical feature is reserved for unknown
    /// strings.
    ReserveUnknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Category(u32),
    Number(f64),
}

/// One row: a value per schema feature (the label slot holds the label as a
/// category) plus the label itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub values: Vec<FeatureValue>,
    pub label: u8,
}

impl EncodedSample {
    /// Category index of feature `i`. Panics if the feature is numeric.
    pub fn category(&self, i: usize) -> u32 {
        match self.values[i] {
            FeatureValue::Category(c) => c,
            FeatureValue::Number(_) => panic!("feature {i} is numeric"),
        }
    }

    /// Numeric value of feature `i`. Panics if the feature is categorical.
    pub fn number(&self, i: usize) -> f64 {
        match self.values[i] {
            FeatureValue::Number(x) => x,
            FeatureValue::Category(_) => panic!("feature {i} is categorical"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: FeatureSchema,
    vocabularies: Vec<Option<Vocabulary>>,
    rows: Vec<EncodedSample>,
}

impl Dataset {
    /// Validates every row against the schema.
    pub fn new(schema: FeatureSchema, vocabularies: Vec<Option<Vocabulary>>, rows: Vec<EncodedSample>) -> Result<Self> {
        if vocabularies.len() != schema.len() {
            return Err(Error::Schema(format!(
                "{} vocabularies for {} features",
                vocabularies.len(),
                schema.len()
            )));
        }
        let label = schema.label_index();
        for (r, row) in rows.iter().enumerate() {
            if row.values.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "row {r} has {} values, schema has {} features",
                    row.values.len(),
                    schema.len()
                )));
            }
            for (i, (v, spec)) in row.values.iter().zip(schema.features()).enumerate() {
                match (spec.kind, v) {
                    (FeatureKind::Categorical(card), FeatureValue::Category(c)) => {
                        if *c as usize >= card {
                            return Err(Error::Schema(format!(
                                "row {r}: `{}` index {c} outside cardinality {card}",
                                spec.name
                            )));
                        }
                    }
                    (FeatureKind::Numeric, FeatureValue::Number(_)) => {}
                    _ => {
                        return Err(Error::Schema(format!(
                            "row {r}: value kind of `{}` does not match schema",
                            schema.feature(i).name
                        )))
                    }
                }
            }
            if row.label > 1 || row.values[label] != FeatureValue::Category(row.label as u32) {
                return Err(Error::Schema(format!("row {r}: inconsistent label")));
            }
        }
        Ok(Self {
            schema,
            vocabularies,
            rows,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[EncodedSample] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &EncodedSample {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn vocabulary(&self, feature: usize) -> Option<&Vocabulary> {
        self.vocabularies[feature].as_ref()
    }

    pub fn vocabularies(&self) -> &[Option<Vocabulary>] {
        &self.vocabularies
    }

    /// String token of a categorical value.
    pub fn decode(&self, feature: usize, index: u32) -> Option<&str> {
        self.vocabularies[feature].as_ref()?.decode(index)
    }

    pub fn positive_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.label == 1).count() as f64 / self.rows.len() as f64
    }

    /// Replaces missing (NaN) numeric values with the mean over `reference`
    /// rows (the training split).
    pub fn impute_numeric(&mut self, reference: &[usize]) {
        for f in 0..self.schema.len() {
            if self.schema.feature(f).kind != FeatureKind::Numeric {
                continue;
            }
            let (sum, n) = reference
                .iter()
                .map(|&r| self.rows[r].number(f))
                .filter(|x| x.is_finite())
                .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            let mean = if n == 0 { 0.0 } else { sum / n as f64 };
            for row in &mut self.rows {
                if let FeatureValue::Number(x) = &mut row.values[f] {
                    if !x.is_finite() {
                        *x = mean;
                    }
                }
            }
        }
    }

    /// Writes a headered CSV that [`load_csv`] reads back to the same
    /// tokens and numbers.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.features().iter().map(|f| f.name.as_str()))?;
        for row in &self.rows {
            let fields: Vec<String> = row
                .values
                .iter()
                .enumerate()
                .map(|(f, v)| match *v {
                    FeatureValue::Category(c) => self.decode(f, c).map_or_else(|| c.to_string(), str::to_string),
                    FeatureValue::Number(x) if x.is_nan() => "?".to_string(),
                    FeatureValue::Number(x) => x.to_string(),
                })
                .collect();
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Whether any numeric value is missing.
    pub fn has_missing_numeric(&self) -> bool {
        self.rows
            .iter()
            .flat_map(|r| &r.values)
            .any(|v| matches!(v, FeatureValue::Number(x) if !x.is_finite()))
    }

    pub(crate) fn into_parts(self) -> (FeatureSchema, Vec<Option<Vocabulary>>, Vec<EncodedSample>) {
        (self.schema, self.vocabularies, self.rows)
    }
}

fn is_missing_number(field: &str) -> bool {
    field.is_empty() || field == "?" || field.eq_ignore_ascii_case("nan")
}

/// Reads a headered CSV, building sorted vocabularies from the file.
///
/// Categorical tokens are indexed in lexicographic order, so `"Female" <
/// "Male"` and `"<=50K" < ">50K"`. Missing categorical values (`?`) are a
/// category of their own; missing numeric values become NaN until
/// [`Dataset::impute_numeric`] runs.
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema, policy: VocabPolicy) -> Result<Dataset> {
    load(path.as_ref(), schema, None, policy)
}

/// Reads a headered CSV against vocabularies from a previous load.
pub fn load_csv_with_vocab(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    vocabularies: &[Option<Vocabulary>],
    policy: VocabPolicy,
) -> Result<Dataset> {
    load(path.as_ref(), schema, Some(vocabularies), policy)
}

fn load(
    path: &Path,
    schema: &FeatureSchema,
    given: Option<&[Option<Vocabulary>]>,
    policy: VocabPolicy,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    if header.len() != schema.len() {
        return Err(parse_err(
            0,
            format!("header has {} columns, schema has {}", header.len(), schema.len()),
        ));
    }
    // column position of each schema feature
    let mut columns = Vec::with_capacity(schema.len());
    for spec in schema.features() {
        let col = header
            .iter()
            .position(|h| h == spec.name)
            .ok_or_else(|| parse_err(0, format!("column `{}` missing from header", spec.name)))?;
        columns.push(col);
    }

    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 1, e.to_string()))?;
        if rec.len() != schema.len() {
            return Err(parse_err(
                i + 1,
                format!("expected {} fields, found {}", schema.len(), rec.len()),
            ));
        }
        records.push(rec);
    }

    let mut vocabularies = Vec::with_capacity(schema.len());
    for (f, spec) in schema.features().iter().enumerate() {
        let FeatureKind::Categorical(card) = spec.kind else {
            vocabularies.push(None);
            continue;
        };
        if let Some(given) = given {
            let v = given
                .get(f)
                .cloned()
                .flatten()
                .ok_or_else(|| Error::Schema(format!("no vocabulary supplied for `{}`", spec.name)))?;
            vocabularies.push(Some(v));
            continue;
        }
        let distinct: BTreeSet<&str> = records.iter().map(|r| &r[columns[f]]).collect();
        let tokens: Vec<String> = distinct.into_iter().map(str::to_string).collect();
        let vocab = match policy {
            VocabPolicy::Strict if tokens.len() > card => {
                return Err(Error::Schema(format!(
                    "`{}` has {} distinct values, cardinality declares {card}",
                    spec.name,
                    tokens.len()
                )))
            }
            VocabPolicy::Strict => Vocabulary::new(tokens),
            VocabPolicy::ReserveUnknown if card < 2 => {
                return Err(Error::Schema(format!(
                    "`{}` needs cardinality >= 2 to reserve an unknown slot",
                    spec.name
                )))
            }
            VocabPolicy::ReserveUnknown => Vocabulary::with_reserved(tokens, card),
        };
        vocabularies.push(Some(vocab));
    }

    let label_idx = schema.label_index();
    let mut rows = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        let mut values = Vec::with_capacity(schema.len());
        for (f, spec) in schema.features().iter().enumerate() {
            let field = &rec[columns[f]];
            let value = match spec.kind {
                FeatureKind::Numeric => {
                    if is_missing_number(field) {
                        FeatureValue::Number(f64::NAN)
                    } else {
                        let x: f64 = field
                            .parse()
                            .map_err(|_| parse_err(r + 1, format!("`{}`: `{field}` is not a number", spec.name)))?;
                        if !x.is_finite() {
                            return Err(parse_err(r + 1, format!("`{}`: non-finite value", spec.name)));
                        }
                        FeatureValue::Number(x)
                    }
                }
                FeatureKind::Categorical(card) => {
                    let vocab = vocabularies[f].as_ref().expect("categorical vocabulary");
                    let idx = match (vocab.encode(field), policy) {
                        (Some(i), _) => i,
                        (None, VocabPolicy::ReserveUnknown) => card as u32 - 1,
                        (None, VocabPolicy::Strict) => {
                            return Err(Error::Schema(format!(
                                "row {}: `{}` value `{field}` not in vocabulary",
                                r + 1,
                                spec.name
                            )))
                        }
                    };
                    if idx as usize >= card {
                        return Err(Error::Schema(format!(
                            "row {}: `{}` index {idx} overflows cardinality {card}",
                            r + 1,
                            spec.name
                        )));
                    }
                    FeatureValue::Category(idx)
                }
            };
            values.push(value);
        }
        let label = match values[label_idx] {
            FeatureValue::Category(c) => c as u8,
            FeatureValue::Number(_) => unreachable!("label is categorical"),
        };
        rows.push(EncodedSample { values, label });
    }
    Dataset::new(schema.clone(), vocabularies, rows)
}
