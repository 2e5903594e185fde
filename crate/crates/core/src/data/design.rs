//! Declarative GLM feature pipelines.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::schema::{FeatureKind, FeatureSchema};
use super::encode::{
    bin_labels, bin_numeric, encode_categorical, CategoricalEncoding, ColumnProvenance,
    EncodedMatrix, NumericExpr, Transform,
};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "term", rename_all = "snake_case")]
pub enum Term {
    Numeric {
        #[serde(flatten)]
        expr: NumericExpr,
    },
    Factor {
        column: String,
        encoding: CategoricalEncoding,
    },
    Binned {
        #[serde(flatten)]
        expr: NumericExpr,
        edges: Vec<f64>,
        encoding: CategoricalEncoding,
    },
    Product {
        left: NumericExpr,
        right: NumericExpr,
    },
}

/// Named list of design terms; the intercept is implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmDesign {
    pub name: String,
    pub terms: Vec<Term>,
}

impl GlmDesign {
    pub fn intercept_only() -> Self {
        GlmDesign {
            name: "mean".into(),
            terms: vec![],
        }
    }

    /// Every numerical/boolean feature as is and every categorical feature
    /// dummy coded.
    pub fn main_effects(schema: &FeatureSchema) -> Self {
        GlmDesign {
            name: "main_effects".into(),
            terms: schema
                .features
                .iter()
                .map(|f| match f.kind {
                    FeatureKind::Categorical { .. } => Term::Factor {
                        column: f.name.clone(),
                        encoding: CategoricalEncoding::Dummy,
                    },
                    _ => Term::Numeric {
                        expr: NumericExpr::column(&f.name),
                    },
                })
                .collect(),
        }
    }

    /// Dummy-coded MTPL design with binned vehicle power/age and driver age:
    /// 48 columns plus the intercept.
    pub fn mtpl_glm1() -> Self {
        GlmDesign {
            name: "glm1".into(),
            terms: vec![
                Term::Numeric {
                    expr: NumericExpr::column("Area"),
                },
                Term::Binned {
                    expr: NumericExpr::column("VehPower"),
                    edges: vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
                    encoding: CategoricalEncoding::Dummy,
                },
                Term::Binned {
                    expr: NumericExpr::column("VehAge"),
                    edges: vec![0.0, 6.0, 13.0, 101.0],
                    encoding: CategoricalEncoding::Dummy,
                },
                Self::driver_age_bins(),
                Term::Numeric {
                    expr: NumericExpr::capped("BonusMalus", 150.0),
                },
                Term::Factor {
                    column: "VehBrand".into(),
                    encoding: CategoricalEncoding::Dummy,
                },
                Term::Numeric {
                    expr: NumericExpr::column("VehGas"),
                },
                Term::Numeric {
                    expr: NumericExpr::column("Density").with(Transform::Log),
                },
                Term::Factor {
                    column: "Region".into(),
                    encoding: CategoricalEncoding::Dummy,
                },
            ],
        }
    }

    fn driver_age_bins() -> Term {
        Term::Binned {
            expr: NumericExpr::column("DrivAge"),
            edges: vec![18.0, 21.0, 26.0, 31.0, 41.0, 51.0, 71.0, 101.0],
            encoding: CategoricalEncoding::Dummy,
        }
    }

    fn driver_age_polynomial() -> Vec<Term> {
        let age = NumericExpr::column("DrivAge");
        vec![
            Term::Numeric { expr: age.clone() },
            Term::Numeric {
                expr: age.clone().with(Transform::Log),
            },
            Term::Numeric {
                expr: age.clone().with(Transform::Power { exponent: 2 }),
            },
            Term::Numeric {
                expr: age.clone().with(Transform::Power { exponent: 3 }),
            },
            Term::Numeric {
                expr: age.with(Transform::Power { exponent: 4 }),
            },
        ]
    }

    /// GLM1 with binned driver age replaced by age, log-age and powers 2..4.
    pub fn mtpl_glm2() -> Self {
        let mut terms = Vec::new();
        for t in Self::mtpl_glm1().terms {
            if t == Self::driver_age_bins() {
                terms.extend(Self::driver_age_polynomial());
            } else {
                terms.push(t);
            }
        }
        GlmDesign {
            name: "glm2".into(),
            terms,
        }
    }

    /// GLM2 plus the bonus-malus by driver-age interaction, linear and
    /// quadratic in age.
    pub fn mtpl_glm3() -> Self {
        let mut d = Self::mtpl_glm2();
        d.name = "glm3".into();
        let bm = NumericExpr::capped("BonusMalus", 150.0);
        let age = NumericExpr::column("DrivAge");
        d.terms.push(Term::Product {
            left: bm.clone(),
            right: age.clone(),
        });
        d.terms.push(Term::Product {
            left: bm,
            right: age.with(Transform::Power { exponent: 2 }),
        });
        d
    }

    pub fn encode(&self, d: &Dataset) -> Result<EncodedMatrix> {
        let n = d.n_rows();
        let mut cols = Vec::new();
        for t in &self.terms {
            match t {
                Term::Numeric { expr } => {
                    cols.push((ColumnProvenance::numeric(&expr.column, expr.label()), expr.evaluate(d)?));
                }
                Term::Factor { column, encoding } => {
                    let (ids, levels) = d.categorical(column)?;
                    cols.extend(encode_categorical(column, ids, levels, *encoding)?);
                }
                Term::Binned {
                    expr,
                    edges,
                    encoding,
                } => {
                    let ids = bin_numeric(&expr.evaluate(d)?, edges)?;
                    let labels = bin_labels(edges);
                    cols.extend(encode_categorical(&expr.column, &ids, &labels, *encoding)?);
                }
                Term::Product { left, right } => {
                    let (a, b) = (left.evaluate(d)?, right.evaluate(d)?);
                    let label = format!("{}:{}", left.label(), right.label());
                    let feature = format!("{}:{}", left.column, right.column);
                    cols.push((
                        ColumnProvenance::numeric(&feature, label),
                        a.iter().zip(&b).map(|(x, y)| x * y).collect(),
                    ));
                }
            }
        }
        EncodedMatrix::from_columns(n, cols)
    }
}
