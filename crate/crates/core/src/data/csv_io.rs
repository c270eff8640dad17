//! CSV ingestion with an explicit column schema.
//!
//! The schema is a TOML document:
//!
//! ```toml
//! task = "classification"          # or "regression"
//!
//! [attribute]                      # binary sensitive attribute
//! name = "finance"
//! positive = ["convenient"]        # values mapped to A = 1
//! negative = ["inconvenient"]      # values mapped to A = 0
//!
//! [response]
//! name = "label"
//! classes = ["not_recom", "very_recom", "priority", "spec_prior"]
//!
//! [[features]]
//! name = "parents_score"           # numeric
//!
//! [[features]]
//! name = "housing"                 # one-hot over the declared categories
//! categories = ["convenient", "less_conv", "critical"]
//! ```
//!
//! Categorical features expand to one column per declared category, in
//! declaration order, named `column=category`. Values outside the declared
//! lists, empty cells and unparseable numbers are errors; nothing is imputed.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, Response, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureColumn {
    pub name: String,
    /// Declared category list; absent for numeric columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl FeatureColumn {
    pub fn numeric(name: &str) -> Self {
        FeatureColumn {
            name: name.into(),
            categories: None,
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        FeatureColumn {
            name: name.into(),
            categories: Some(categories.iter().map(|s| s.to_string()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeColumn {
    pub name: String,
    #[serde(default = "default_positive")]
    pub positive: Vec<String>,
    #[serde(default = "default_negative")]
    pub negative: Vec<String>,
}

fn default_positive() -> Vec<String> {
    vec!["1".into()]
}

fn default_negative() -> Vec<String> {
    vec!["0".into()]
}

impl AttributeColumn {
    pub fn binary(name: &str, positive: &str, negative: &str) -> Self {
        AttributeColumn {
            name: name.into(),
            positive: vec![positive.into()],
            negative: vec![negative.into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseColumn {
    pub name: String,
    /// Class names for classification; index order defines the labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub task: Task,
    pub attribute: AttributeColumn,
    pub response: ResponseColumn,
    pub features: Vec<FeatureColumn>,
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (self.task, &self.response.classes) {
            (Task::Classification, None) => {
                return Err(Error::Schema("classification schema must list response classes".into()))
            }
            (Task::Classification, Some(c)) if c.len() < 2 => {
                return Err(Error::Schema("need at least two response classes".into()))
            }
            (Task::Regression, Some(_)) => {
                return Err(Error::Schema("regression schema must not list classes".into()))
            }
            _ => {}
        }
        if self
            .attribute
            .positive
            .iter()
            .any(|p| self.attribute.negative.contains(p))
        {
            return Err(Error::Schema("attribute value listed as both positive and negative".into()));
        }
        for f in &self.features {
            if let Some(c) = &f.categories {
                if c.is_empty() {
                    return Err(Error::Schema(format!("feature '{}' declares no categories", f.name)));
                }
            }
        }
        Ok(())
    }

    /// Encoded feature names in column order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for f in &self.features {
            match &f.categories {
                None => names.push(f.name.clone()),
                Some(cats) => names.extend(cats.iter().map(|c| format!("{}={}", f.name, c))),
            }
        }
        names
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Append the sensitive attribute as a feature column.
    pub include_attribute: bool,
}

/// Raw string table, as written to disk by the generators.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn load_csv(path: &Path, schema: &Schema, options: LoadOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_csv_from_reader(file, schema, options)
}

pub fn load_csv_from_reader<R: Read>(reader: R, schema: &Schema, options: LoadOptions) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput("CSV has no header row".into()));
    }
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| -> Result<usize> {
        position.get(name).copied().ok_or_else(|| Error::Ingest {
            row: 0,
            column: name.into(),
            message: "column missing from header".into(),
        })
    };
    let feature_cols: Vec<usize> = schema.features.iter().map(|f| col(&f.name)).collect::<Result<_>>()?;
    let attr_col = col(&schema.attribute.name)?;
    let resp_col = col(&schema.response.name)?;

    let names = schema.feature_names();
    let width = names.len();
    let mut values: Vec<f64> = Vec::new();
    let mut a = Vec::new();
    let mut y_cont = Vec::new();
    let mut y_class = Vec::new();
    let mut seen_attr: Vec<String> = Vec::new();

    for (r, record) in rdr.records().enumerate() {
        // data rows are numbered from 1 (the header is row 0)
        let row = r + 1;
        let record = record?;
        let cell = |c: usize, name: &str| -> Result<&str> {
            match record.get(c) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Ingest {
                    row,
                    column: name.into(),
                    message: "missing value".into(),
                }),
            }
        };
        for (f, &c) in schema.features.iter().zip(&feature_cols) {
            let v = cell(c, &f.name)?;
            match &f.categories {
                None => values.push(v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    Error::Ingest {
                        row,
                        column: f.name.clone(),
                        message: format!("cannot parse '{v}' as a finite number"),
                    }
                })?),
                Some(cats) => {
                    let k = cats.iter().position(|c| c == v).ok_or_else(|| Error::Ingest {
                        row,
                        column: f.name.clone(),
                        message: format!("value '{v}' is not a declared category"),
                    })?;
                    values.extend((0..cats.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
                }
            }
        }
        let av = cell(attr_col, &schema.attribute.name)?;
        if !seen_attr.iter().any(|s| s == av) {
            seen_attr.push(av.to_string());
        }
        let code = if schema.attribute.positive.iter().any(|p| p == av) {
            1
        } else if schema.attribute.negative.iter().any(|p| p == av) {
            0
        } else {
            return Err(Error::Ingest {
                row,
                column: schema.attribute.name.clone(),
                message: format!(
                    "attribute value '{av}' is outside the declared binary encoding \
                     ({} distinct values seen so far)",
                    seen_attr.len()
                ),
            });
        };
        a.push(code);
        let yv = cell(resp_col, &schema.response.name)?;
        match &schema.response.classes {
            None => y_cont.push(yv.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                Error::Ingest {
                    row,
                    column: schema.response.name.clone(),
                    message: format!("cannot parse '{yv}' as a finite number"),
                }
            })?),
            Some(classes) => y_class.push(classes.iter().position(|c| c == yv).ok_or_else(|| {
                Error::Ingest {
                    row,
                    column: schema.response.name.clone(),
                    message: format!("'{yv}' is not a declared class"),
                }
            })?),
        }
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::EmptyInput("CSV has no data rows".into()));
    }
    let x = Array2::from_shape_vec((n, width), values).expect("row width fixed by schema");
    let y = match &schema.response.classes {
        None => Response::Continuous(y_cont),
        Some(c) => Response::Classes {
            labels: y_class,
            n_classes: c.len(),
        },
    };
    let mut d = Dataset::new(x, a, y, names)?;
    if let Some(c) = &schema.response.classes {
        d = d.with_class_names(c.clone());
    }
    if options.include_attribute {
        d = d.with_attribute_feature();
    }
    Ok(d)
}

/// Writes a dataset as numeric feature columns followed by `attribute` and
/// `response`. Returns the schema that reads the file back.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<Schema> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = dataset.feature_names.clone();
    header.push("attribute".into());
    header.push("response".into());
    w.write_record(&header)?;
    let class_names: Option<Vec<String>> = match &dataset.y {
        Response::Continuous(_) => None,
        Response::Classes { n_classes, .. } => Some(
            dataset
                .class_names
                .clone()
                .unwrap_or_else(|| (0..*n_classes).map(|c| c.to_string()).collect()),
        ),
    };
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.a[i].to_string());
        rec.push(match &dataset.y {
            Response::Continuous(v) => v[i].to_string(),
            Response::Classes { labels, .. } => class_names.as_ref().unwrap()[labels[i]].clone(),
        });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(Schema {
        task: dataset.task(),
        features: dataset
            .feature_names
            .iter()
            .map(|n| FeatureColumn::numeric(n))
            .collect(),
        attribute: AttributeColumn::binary("attribute", "1", "0"),
        response: ResponseColumn {
            name: "response".into(),
            classes: class_names,
        },
    })
}

pub fn write_table<W: Write>(table: &Table, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&table.headers)?;
    for r in &table.rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
