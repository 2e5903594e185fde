//! Synthetic Poisson portfolios with a known true rate function.

use rand::Rng;
use rand_distr::{Distribution as _, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::dataset::{Column, Dataset};
use super::schema::{Feature, FeatureSchema};
use crate::error::{Error, Result};
use crate::{rng_from_seed, Rng64};

/// Marginal law of a numerical covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    UniformInt { lo: i64, hi: i64 },
    LogUniform { lo: f64, hi: f64, round: bool },
    Normal { mean: f64, sd: f64, lo: f64, hi: f64, round: bool },
    /// Point mass `p` at `value`, otherwise `rest`.
    Inflated { value: f64, p: f64, rest: Box<Distribution> },
}

impl Distribution {
    fn sample(&self, rng: &mut Rng64) -> Result<f64> {
        Ok(match self {
            Distribution::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            Distribution::UniformInt { lo, hi } => rng.random_range(*lo..=*hi) as f64,
            Distribution::LogUniform { lo, hi, round } => {
                let x = rng.random_range(lo.ln()..hi.ln()).exp();
                if *round {
                    x.round().clamp(*lo, *hi)
                } else {
                    x
                }
            }
            Distribution::Normal { mean, sd, lo, hi, round } => {
                let n = Normal::new(*mean, *sd).map_err(|e| Error::Config(e.to_string()))?;
                let x = n.sample(rng).clamp(*lo, *hi);
                if *round {
                    x.round()
                } else {
                    x
                }
            }
            Distribution::Inflated { value, p, rest } => {
                if rng.random::<f64>() < *p {
                    *value
                } else {
                    rest.sample(rng)?
                }
            }
        })
    }
}

/// Additive contribution of one covariate to the true log-rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    Linear { coef: f64 },
    Quadratic { center: f64, coef: f64 },
    Log { coef: f64 },
    /// `coef * max(knot - x, 0)`.
    Hinge { knot: f64, coef: f64 },
    /// Look-up by level id (categorical) or by `code - 1` (ordinal).
    Levels { values: Vec<f64> },
}

impl Effect {
    fn eval(&self, x: f64) -> f64 {
        match self {
            Effect::Linear { coef } => coef * x,
            Effect::Quadratic { center, coef } => coef * (x - center).powi(2),
            Effect::Log { coef } => coef * x.ln(),
            Effect::Hinge { knot, coef } => coef * (knot - x).max(0.0),
            Effect::Levels { values } => values[x as usize],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SynthKind {
    Numeric { dist: Distribution },
    Ordinal { levels: Vec<String>, probs: Vec<f64> },
    Categorical { levels: Vec<String>, probs: Vec<f64> },
    Boolean { levels: [String; 2], p: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthFeature {
    pub name: String,
    #[serde(flatten)]
    pub kind: SynthKind,
    #[serde(default)]
    pub effects: Vec<Effect>,
}

/// `coef * (x_left - center_left) * (x_right - center_right)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub left: String,
    pub right: String,
    pub center_left: f64,
    pub center_right: f64,
    pub coef: f64,
}

/// Exposure is 1 with probability `p_full`, uniform on `[lo, 1)` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureLaw {
    pub p_full: f64,
    pub lo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub id_column: Option<String>,
    pub response: String,
    pub exposure: String,
    pub intercept: f64,
    pub features: Vec<SynthFeature>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    pub exposure_law: ExposureLaw,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Log of the true annual claim rate per row.
    pub true_log_rate: Vec<f64>,
}

fn geometric_probs(m: usize, ratio: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|i| ratio.powi(i as i32)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn pick(rng: &mut Rng64, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn names(prefix: &str, ids: &[u32]) -> Vec<String> {
    let mut v: Vec<String> = ids.iter().map(|i| format!("{prefix}{i}")).collect();
    v.sort();
    v
}

impl SynthSpec {
    /// MTPL-shaped portfolio: same columns and level counts (11 brands, 22
    /// regions, areas A-F) and a mean frequency near 0.1 per year.
    pub fn mtpl(n: usize) -> Self {
        let brands = names("B", &[1, 2, 3, 4, 5, 6, 10, 11, 12, 13, 14]);
        let regions = names(
            "R",
            &[11, 21, 22, 23, 24, 25, 26, 31, 41, 42, 43, 52, 53, 54, 72, 73, 74, 82, 83, 91, 93, 94],
        );
        let brand_effect = vec![0.0, -0.05, 0.02, 0.12, -0.1, 0.2, 0.05, 0.03, -0.02, 0.08, -0.15];
        let region_effect: Vec<f64> = (0..regions.len())
            .map(|i| 0.15 * ((i as f64) * 1.7).sin())
            .collect();
        let num = |name: &str, dist: Distribution, effects: Vec<Effect>| SynthFeature {
            name: name.into(),
            kind: SynthKind::Numeric { dist },
            effects,
        };
        SynthSpec {
            n,
            id_column: Some("IDpol".into()),
            response: "ClaimNb".into(),
            exposure: "Exposure".into(),
            intercept: -4.0,
            features: vec![
                SynthFeature {
                    name: "Area".into(),
                    kind: SynthKind::Ordinal {
                        levels: ["A", "B", "C", "D", "E", "F"].map(String::from).to_vec(),
                        probs: vec![0.15, 0.11, 0.28, 0.22, 0.2, 0.04],
                    },
                    effects: vec![Effect::Linear { coef: 0.04 }],
                },
                num(
                    "VehPower",
                    Distribution::Normal { mean: 6.5, sd: 2.0, lo: 4.0, hi: 15.0, round: true },
                    vec![Effect::Quadratic { center: 6.0, coef: 0.008 }],
                ),
                num(
                    "VehAge",
                    Distribution::Normal { mean: 7.0, sd: 5.5, lo: 0.0, hi: 100.0, round: true },
                    vec![Effect::Hinge { knot: 2.0, coef: 0.12 }, Effect::Linear { coef: -0.015 }],
                ),
                num(
                    "DrivAge",
                    Distribution::Normal { mean: 45.0, sd: 14.0, lo: 18.0, hi: 100.0, round: true },
                    vec![
                        Effect::Hinge { knot: 28.0, coef: 0.06 },
                        Effect::Quadratic { center: 45.0, coef: 0.0002 },
                    ],
                ),
                num(
                    "BonusMalus",
                    Distribution::Inflated {
                        value: 50.0,
                        p: 0.55,
                        rest: Box::new(Distribution::UniformInt { lo: 51, hi: 150 }),
                    },
                    vec![Effect::Linear { coef: 0.018 }],
                ),
                SynthFeature {
                    name: "VehBrand".into(),
                    kind: SynthKind::Categorical {
                        probs: geometric_probs(brands.len(), 0.82),
                        levels: brands,
                    },
                    effects: vec![Effect::Levels { values: brand_effect }],
                },
                SynthFeature {
                    name: "VehGas".into(),
                    kind: SynthKind::Boolean {
                        levels: ["Diesel".into(), "Regular".into()],
                        p: 0.5,
                    },
                    effects: vec![Effect::Linear { coef: -0.1 }],
                },
                num(
                    "Density",
                    Distribution::LogUniform { lo: 1.0, hi: 27000.0, round: true },
                    vec![Effect::Log { coef: 0.03 }],
                ),
                SynthFeature {
                    name: "Region".into(),
                    kind: SynthKind::Categorical {
                        probs: geometric_probs(regions.len(), 0.9),
                        levels: regions,
                    },
                    effects: vec![Effect::Levels { values: region_effect }],
                },
            ],
            interactions: vec![Interaction {
                left: "BonusMalus".into(),
                right: "DrivAge".into(),
                center_left: 50.0,
                center_right: 45.0,
                coef: -0.0002,
            }],
            exposure_law: ExposureLaw { p_full: 0.3, lo: 0.02 },
        }
    }

    /// Three covariates (two numerical, one four-level categorical), no
    /// identifiers; handy for fast tests.
    pub fn small(n: usize) -> Self {
        SynthSpec {
            n,
            id_column: None,
            response: "y".into(),
            exposure: "v".into(),
            intercept: -1.5,
            features: vec![
                SynthFeature {
                    name: "x1".into(),
                    kind: SynthKind::Numeric {
                        dist: Distribution::Uniform { lo: -1.0, hi: 1.0 },
                    },
                    effects: vec![Effect::Linear { coef: 0.5 }],
                },
                SynthFeature {
                    name: "x2".into(),
                    kind: SynthKind::Numeric {
                        dist: Distribution::Normal { mean: 0.0, sd: 1.0, lo: -4.0, hi: 4.0, round: false },
                    },
                    effects: vec![Effect::Quadratic { center: 0.0, coef: -0.2 }],
                },
                SynthFeature {
                    name: "c".into(),
                    kind: SynthKind::Categorical {
                        levels: ["a", "b", "c", "d"].map(String::from).to_vec(),
                        probs: vec![0.4, 0.3, 0.2, 0.1],
                    },
                    effects: vec![Effect::Levels { values: vec![0.0, 0.3, -0.2, 0.5] }],
                },
            ],
            interactions: vec![],
            exposure_law: ExposureLaw { p_full: 0.5, lo: 0.1 },
        }
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            id_column: self.id_column.clone(),
            response: self.response.clone(),
            exposure: self.exposure.clone(),
            features: self
                .features
                .iter()
                .map(|f| match &f.kind {
                    SynthKind::Numeric { .. } => Feature::numerical(&f.name),
                    SynthKind::Ordinal { levels, .. } => {
                        let l: Vec<&str> = levels.iter().map(String::as_str).collect();
                        Feature::ordinal(&f.name, &l)
                    }
                    SynthKind::Categorical { levels, .. } => Feature::categorical(&f.name, levels.clone()),
                    SynthKind::Boolean { levels, .. } => Feature::boolean(&f.name, &levels[0], &levels[1]),
                })
                .collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("synthetic portfolio needs n > 0".into()));
        }
        let law = &self.exposure_law;
        if !(0.0..=1.0).contains(&law.p_full) || !(law.lo > 0.0 && law.lo < 1.0) {
            return Err(Error::Config("exposure law needs p_full in [0,1] and lo in (0,1)".into()));
        }
        for f in &self.features {
            let m = match &f.kind {
                SynthKind::Ordinal { levels, probs } | SynthKind::Categorical { levels, probs } => {
                    if levels.len() != probs.len() {
                        return Err(Error::Config(format!("`{}`: one probability per level", f.name)));
                    }
                    Some(levels.len())
                }
                _ => None,
            };
            for e in &f.effects {
                if let (Effect::Levels { values }, Some(m)) = (e, m) {
                    if values.len() != m {
                        return Err(Error::Config(format!("`{}`: one effect per level", f.name)));
                    }
                } else if matches!(e, Effect::Levels { .. }) {
                    return Err(Error::Config(format!("`{}`: level effects need levels", f.name)));
                }
            }
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<SyntheticData> {
        self.check()?;
        let schema = self.schema();
        let mut rng = rng_from_seed(seed);
        let n = self.n;
        let mut eta = vec![self.intercept; n];
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.features.len());
        let mut columns = Vec::with_capacity(self.features.len());
        for f in &self.features {
            let mut col = Vec::with_capacity(n);
            for e in eta.iter_mut() {
                let (raw, effect_arg) = match &f.kind {
                    SynthKind::Numeric { dist } => {
                        let x = dist.sample(&mut rng)?;
                        (x, x)
                    }
                    SynthKind::Ordinal { probs, .. } => {
                        let i = pick(&mut rng, probs);
                        ((i + 1) as f64, (i + 1) as f64)
                    }
                    SynthKind::Categorical { probs, .. } => {
                        let i = pick(&mut rng, probs) as f64;
                        (i, i)
                    }
                    SynthKind::Boolean { p, .. } => {
                        let b = f64::from(rng.random::<f64>() < *p);
                        (b, b)
                    }
                };
                for eff in &f.effects {
                    *e += match (eff, &f.kind) {
                        (Effect::Levels { values }, SynthKind::Ordinal { .. }) => values[raw as usize - 1],
                        _ => eff.eval(effect_arg),
                    };
                }
                col.push(raw);
            }
            columns.push(match f.kind {
                SynthKind::Categorical { .. } => Column::Categorical(col.iter().map(|&x| x as u32).collect()),
                _ => Column::Numeric(col.clone()),
            });
            values.push(col);
        }
        for it in &self.interactions {
            let pos = |name: &str| {
                self.features
                    .iter()
                    .position(|f| f.name == name)
                    .ok_or_else(|| Error::UnknownColumn(name.to_string()))
            };
            let (l, r) = (pos(&it.left)?, pos(&it.right)?);
            for (i, e) in eta.iter_mut().enumerate() {
                *e += it.coef * (values[l][i] - it.center_left) * (values[r][i] - it.center_right);
            }
        }
        let mut exposure = Vec::with_capacity(n);
        let mut response = Vec::with_capacity(n);
        for &e in &eta {
            let v = if rng.random::<f64>() < self.exposure_law.p_full {
                1.0
            } else {
                rng.random_range(self.exposure_law.lo..1.0)
            };
            let lambda = v * e.exp();
            let y: f64 = Poisson::new(lambda)
                .map_err(|err| Error::Config(format!("Poisson rate {lambda}: {err}")))?
                .sample(&mut rng);
            exposure.push(v);
            response.push(y);
        }
        let ids = self
            .id_column
            .as_ref()
            .map(|_| (1..=n).map(|i| i.to_string()).collect());
        let dataset = Dataset::new(schema, ids, response, exposure, columns)?;
        Ok(SyntheticData {
            dataset,
            true_log_rate: eta,
        })
    }
}
