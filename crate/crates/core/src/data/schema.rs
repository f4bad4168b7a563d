//! Declarative feature schema.
//!
//! The text form is one feature per line:
//!
//! ```text
//! # name,kind,cardinality_or_dash,side,is_label
//! age,numeric,-,server,false
//! sex,categorical,2,client,false
//! income,categorical,2,client,true
//! ```
//!
//! `kind` is `categorical` or `numeric`; categorical features carry their
//! cardinality, numeric ones a `-`. `side` is `server` or `client` and
//! `is_label` is `true` or `false`. Blank lines and lines starting with `#`
//! are ignored; surrounding whitespace in every field is trimmed.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Categorical(usize),
    Numeric,
}

impl FeatureKind {
    pub fn cardinality(self) -> Option<usize> {
        match self {
            FeatureKind::Categorical(c) => Some(c),
            FeatureKind::Numeric => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Server,
    Client,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Server => "server",
            Side::Client => "client",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub side: Side,
    pub is_label: bool,
}

impl FeatureSpec {
    pub fn categorical(name: &str, cardinality: usize, side: Side) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical(cardinality),
            side,
            is_label: false,
        }
    }

    pub fn numeric(name: &str, side: Side) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
            side,
            is_label: false,
        }
    }

    pub fn label(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical(2),
            side: Side::Client,
            is_label: true,
        }
    }
}

/// Ordered, validated list of features.
///
/// Exactly one binary client-side label; every other client feature is
/// categorical so the configuration space stays enumerable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    label: usize,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let labels: Vec<usize> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_label)
            .map(|(i, _)| i)
            .collect();
        let label = match labels.as_slice() {
            [single] => *single,
            [] => return Err(Error::Schema("no label feature declared".into())),
            _ => return Err(Error::Schema("more than one label feature declared".into())),
        };
        let spec = &features[label];
        if spec.kind != FeatureKind::Categorical(2) {
            return Err(Error::Schema(format!(
                "label `{}` must be categorical with cardinality 2",
                spec.name
            )));
        }
        if spec.side != Side::Client {
            return Err(Error::Schema(format!("label `{}` must be client-side", spec.name)));
        }
        for (i, f) in features.iter().enumerate() {
            if f.name.is_empty() {
                return Err(Error::Schema(format!("feature {i} has an empty name")));
            }
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            match f.kind {
                FeatureKind::Categorical(0) => return Err(Error::Schema(format!("`{}` has cardinality 0", f.name))),
                FeatureKind::Numeric if f.side == Side::Client => {
                    return Err(Error::Schema(format!(
                        "client feature `{}` is numeric; bin it before attacking",
                        f.name
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { features, label })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut features = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Schema(format!("line {}: {msg}", lineno + 1));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [name, kind, card, side, is_label] = fields.as_slice() else {
                return Err(bad(format!(
                    "expected 5 comma-separated fields, found {}",
                    fields.len()
                )));
            };
            let kind = match (*kind, *card) {
                ("categorical", c) => {
                    FeatureKind::Categorical(c.parse().map_err(|_| bad(format!("invalid cardinality `{c}`")))?)
                }
                ("numeric", "-") => FeatureKind::Numeric,
                ("numeric", c) => return Err(bad(format!("numeric feature takes `-`, not `{c}`"))),
                (k, _) => return Err(bad(format!("unknown kind `{k}`"))),
            };
            let side = match *side {
                "server" => Side::Server,
                "client" => Side::Client,
                s => return Err(bad(format!("unknown side `{s}`"))),
            };
            let is_label = match *is_label {
                "true" => true,
                "false" => false,
                s => return Err(bad(format!("is_label must be true or false, got `{s}`"))),
            };
            features.push(FeatureSpec {
                name: name.to_string(),
                kind,
                side,
                is_label,
            });
        }
        Self::new(features)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(to_text())` reproduces the schema.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# name,kind,cardinality_or_dash,side,is_label\n");
        for f in &self.features {
            let (kind, card) = match f.kind {
                FeatureKind::Categorical(c) => ("categorical", c.to_string()),
                FeatureKind::Numeric => ("numeric", "-".to_string()),
            };
            out.push_str(&format!("{},{kind},{card},{},{}\n", f.name, f.side, f.is_label));
        }
        out
    }

    /// Stable 64-bit fingerprint of the canonical text.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, index: usize) -> &FeatureSpec {
        &self.features[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn label_index(&self) -> usize {
        self.label
    }

    pub fn label_name(&self) -> &str {
        &self.features[self.label].name
    }

    /// Indices of server-side features, in schema order.
    pub fn server_features(&self) -> Vec<usize> {
        self.indices(|f| f.side == Side::Server)
    }

    /// Indices of client-side private (non-label) features, in schema order.
    pub fn client_features(&self) -> Vec<usize> {
        self.indices(|f| f.side == Side::Client && !f.is_label)
    }

    /// Cardinalities of the client private features, in `client_features` order.
    pub fn client_cardinalities(&self) -> Vec<usize> {
        self.client_features()
            .into_iter()
            .map(|i| self.features[i].kind.cardinality().unwrap_or(0))
            .collect()
    }

    pub fn server_categorical(&self) -> Vec<usize> {
        self.indices(|f| f.side == Side::Server && matches!(f.kind, FeatureKind::Categorical(_)))
    }

    pub fn server_numeric(&self) -> Vec<usize> {
        self.indices(|f| f.side == Side::Server && f.kind == FeatureKind::Numeric)
    }

    pub(crate) fn with_kind(&self, index: usize, kind: FeatureKind) -> Result<Self> {
        let mut features = self.features.clone();
        features[index].kind = kind;
        Self::new(features)
    }

    /// Copy with the given features moved to `side`.
    pub fn with_sides(&self, assignments: &[(&str, Side)]) -> Result<Self> {
        let mut features = self.features.clone();
        for (name, side) in assignments {
            let i = self
                .index_of(name)
                .ok_or_else(|| Error::Schema(format!("unknown feature `{name}`")))?;
            features[i].side = *side;
        }
        Self::new(features)
    }

    fn indices(&self, pred: impl Fn(&FeatureSpec) -> bool) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| pred(f))
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "\
# comment
age,numeric,-,server,false
sex , categorical , 2 , client , false

race,categorical,5,client,false
income,categorical,2,client,true
";

    #[test]
    fn parses_and_round_trips() {
        let s = FeatureSchema::parse(TEXT).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.label_index(), 3);
        assert_eq!(s.client_features(), vec![1, 2]);
        assert_eq!(s.server_numeric(), vec![0]);
        assert_eq!(s.client_cardinalities(), vec![2, 5]);
        let again = FeatureSchema::parse(&s.to_text()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.fingerprint(), again.fingerprint());
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(FeatureSchema::parse("a,numeric,-,server,false\n").is_err());
        let two = "y,categorical,2,client,true\nz,categorical,2,client,true\n";
        assert!(FeatureSchema::parse(two).is_err());
        assert!(FeatureSchema::parse("y,categorical,3,client,true\n").is_err());
        assert!(FeatureSchema::parse("y,categorical,2,server,true\n").is_err());
    }

    #[test]
    fn rejects_numeric_client_features() {
        let text = "x,numeric,-,client,false\ny,categorical,2,client,true\n";
        let err = FeatureSchema::parse(text).unwrap_err().to_string();
        assert!(err.contains("bin it"), "{err}");
    }

    #[test]
    fn reports_line_numbers() {
        let err = FeatureSchema::parse("y,categorical,2,client,true\nbad,line\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
