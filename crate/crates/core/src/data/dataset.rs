use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<u32>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Claim counts, exposures and covariates, stored column-wise in schema order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub ids: Option<Vec<String>>,
    pub response: Vec<f64>,
    pub exposure: Vec<f64>,
    pub columns: Vec<Column>,
}

fn clean_cell(s: &str) -> &str {
    let t = s.trim();
    t.trim_matches(|c| c == '\'' || c == '"')
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        ids: Option<Vec<String>>,
        response: Vec<f64>,
        exposure: Vec<f64>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        schema.check()?;
        let n = response.len();
        if exposure.len() != n
            || columns.len() != schema.k()
            || columns.iter().any(|c| c.len() != n)
            || ids.as_ref().is_some_and(|i| i.len() != n)
        {
            return Err(Error::shape("Dataset::new", "columns of unequal length"));
        }
        for (i, (&y, &v)) in response.iter().zip(&exposure).enumerate() {
            if !(y >= 0.0 && y.is_finite()) {
                return Err(Error::Parse {
                    row: i,
                    column: schema.response.clone(),
                    message: format!("claim count {y} must be a finite value >= 0"),
                });
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parse {
                    row: i,
                    column: schema.exposure.clone(),
                    message: format!("exposure {v} must be positive"),
                });
            }
        }
        for (f, c) in schema.features.iter().zip(&columns) {
            match (&f.kind, c) {
                (FeatureKind::Categorical { levels }, Column::Categorical(ids)) => {
                    if ids.iter().any(|&i| i as usize >= levels.len()) {
                        return Err(Error::Lookup {
                            table: f.name.clone(),
                            index: *ids.iter().max().unwrap() as usize,
                            size: levels.len(),
                        });
                    }
                }
                (FeatureKind::Categorical { .. }, _) | (_, Column::Categorical(_)) => {
                    return Err(Error::Config(format!("column `{}` has the wrong storage", f.name)));
                }
                (_, Column::Numeric(v)) => {
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::Parse {
                            row: i,
                            column: f.name.clone(),
                            message: "non-finite value".into(),
                        });
                    }
                }
            }
        }
        Ok(Dataset {
            schema,
            ids,
            response,
            exposure,
            columns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        Ok(&self.columns[self.schema.index_of(name)?])
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(Error::Config(format!("`{name}` is categorical"))),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<(&[u32], &[String])> {
        let f = self.schema.feature(name)?;
        match (self.column(name)?, f.levels()) {
            (Column::Categorical(v), Some(levels)) => Ok((v, levels)),
            _ => Err(Error::Config(format!("`{name}` is not categorical"))),
        }
    }

    /// Rows in the given order; the schema (and level dictionaries) are kept.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            ids: self
                .ids
                .as_ref()
                .map(|ids| rows.iter().map(|&r| ids[r].clone()).collect()),
            response: rows.iter().map(|&r| self.response[r]).collect(),
            exposure: rows.iter().map(|&r| self.exposure[r]).collect(),
            columns: self.columns.iter().map(|c| c.subset(rows)).collect(),
        }
    }

    pub fn total_claims(&self) -> f64 {
        self.response.iter().sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.exposure.iter().sum()
    }

    /// Portfolio frequency `sum(y) / sum(v)`.
    pub fn frequency(&self) -> f64 {
        self.total_claims() / self.total_exposure()
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_csv(file, schema)
    }

    /// Parses a headered CSV. Columns are matched by name, so their order
    /// in the file does not matter; extra columns are ignored.
    pub fn read_csv(reader: impl Read, template: &FeatureSchema) -> Result<Dataset> {
        template.check()?;
        let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| clean_cell(h).to_string()).collect();
        if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
            return Err(Error::Empty("CSV has no header".into()));
        }
        let lookup = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let id_pos = match &template.id_column {
            Some(c) => Some(lookup(c)?),
            None => None,
        };
        let y_pos = lookup(&template.response)?;
        let v_pos = lookup(&template.exposure)?;
        let f_pos: Vec<usize> = template
            .features
            .iter()
            .map(|f| lookup(&f.name))
            .collect::<Result<_>>()?;

        let k = template.k();
        let mut ids = id_pos.map(|_| Vec::new());
        let mut response = Vec::new();
        let mut exposure = Vec::new();
        let mut raw_num: Vec<Vec<f64>> = vec![Vec::new(); k];
        let mut raw_cat: Vec<Vec<String>> = vec![Vec::new(); k];

        let number = |cell: &str, row: usize, col: &str| -> Result<f64> {
            clean_cell(cell).parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: col.to_string(),
                message: format!("cannot parse `{cell}` as a number"),
            })
        };

        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let cell = |pos: usize| rec.get(pos).unwrap_or("");
            if let (Some(ids), Some(p)) = (ids.as_mut(), id_pos) {
                ids.push(clean_cell(cell(p)).to_string());
            }
            response.push(number(cell(y_pos), row, &template.response)?);
            exposure.push(number(cell(v_pos), row, &template.exposure)?);
            for (j, f) in template.features.iter().enumerate() {
                let raw = cell(f_pos[j]);
                match &f.kind {
                    FeatureKind::Numerical {
                        ordinal_levels: Some(levels),
                    } => {
                        let c = clean_cell(raw);
                        let code = match levels.iter().position(|l| l == c) {
                            Some(p) => (p + 1) as f64,
                            None => number(raw, row, &f.name)?,
                        };
                        raw_num[j].push(code);
                    }
                    FeatureKind::Numerical { .. } => raw_num[j].push(number(raw, row, &f.name)?),
                    FeatureKind::Boolean { levels } => {
                        let c = clean_cell(raw);
                        let v = if c == levels[1] {
                            1.0
                        } else if c == levels[0] {
                            0.0
                        } else {
                            return Err(Error::Parse {
                                row,
                                column: f.name.clone(),
                                message: format!("`{c}` is neither `{}` nor `{}`", levels[0], levels[1]),
                            });
                        };
                        raw_num[j].push(v);
                    }
                    FeatureKind::Categorical { .. } => raw_cat[j].push(clean_cell(raw).to_string()),
                }
            }
        }
        if response.is_empty() {
            return Err(Error::Empty("CSV has no data rows".into()));
        }

        let mut schema = template.clone();
        let mut columns = Vec::with_capacity(k);
        for (j, f) in schema.features.iter_mut().enumerate() {
            match &mut f.kind {
                FeatureKind::Categorical { levels } => {
                    if levels.is_empty() {
                        let observed: BTreeSet<&str> = raw_cat[j].iter().map(|s| s.as_str()).collect();
                        *levels = observed.into_iter().map(str::to_string).collect();
                    }
                    let index: HashMap<&str, u32> = levels
                        .iter()
                        .enumerate()
                        .map(|(i, l)| (l.as_str(), i as u32))
                        .collect();
                    let ids = raw_cat[j]
                        .iter()
                        .map(|s| {
                            index.get(s.as_str()).copied().ok_or_else(|| Error::UnseenLevel {
                                feature: f.name.clone(),
                                level: s.clone(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    columns.push(Column::Categorical(ids));
                }
                _ => columns.push(Column::Numeric(std::mem::take(&mut raw_num[j]))),
            }
        }
        Dataset::new(schema, ids, response, exposure, columns)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::new();
        if self.ids.is_some() {
            header.push(self.schema.id_column.clone().unwrap_or_else(|| "id".into()));
        }
        header.push(self.schema.response.clone());
        header.push(self.schema.exposure.clone());
        header.extend(self.schema.features.iter().map(|f| f.name.clone()));
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = Vec::with_capacity(header.len());
            if let Some(ids) = &self.ids {
                rec.push(ids[i].clone());
            }
            rec.push(self.response[i].to_string());
            rec.push(self.exposure[i].to_string());
            for (f, c) in self.schema.features.iter().zip(&self.columns) {
                rec.push(match (&f.kind, c) {
                    (FeatureKind::Categorical { levels }, Column::Categorical(v)) => {
                        levels[v[i] as usize].clone()
                    }
                    (FeatureKind::Boolean { levels }, Column::Numeric(v)) => {
                        levels[usize::from(v[i] != 0.0)].clone()
                    }
                    (
                        FeatureKind::Numerical {
                            ordinal_levels: Some(levels),
                        },
                        Column::Numeric(v),
                    ) if v[i].fract() == 0.0 && v[i] >= 1.0 && (v[i] as usize) <= levels.len() => {
                        levels[v[i] as usize - 1].clone()
                    }
                    (_, Column::Numeric(v)) => v[i].to_string(),
                    (_, Column::Categorical(v)) => v[i].to_string(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::Feature;

    fn small_schema() -> FeatureSchema {
        FeatureSchema {
            id_column: Some("id".into()),
            response: "y".into(),
            exposure: "v".into(),
            features: vec![
                Feature::numerical("age"),
                Feature::categorical("region", vec![]),
                Feature::boolean("gas", "D", "R"),
            ],
        }
    }

    const CSV: &str = "id,y,v,age,region,gas\n1,0,0.5,30,'R2',D\n2,1,1,45,R1,'R'\n3,2,0.25,60,R2,R\n";

    #[test]
    fn parses_and_builds_sorted_dictionary() {
        let d = Dataset::read_csv(CSV.as_bytes(), &small_schema()).unwrap();
        assert_eq!(d.n_rows(), 3);
        let (ids, levels) = d.categorical("region").unwrap();
        assert_eq!(levels, &["R1".to_string(), "R2".to_string()]);
        assert_eq!(ids, &[1, 0, 1]);
        assert_eq!(d.numeric("gas").unwrap(), &[0.0, 1.0, 1.0]);
        assert!((d.frequency() - 3.0 / 1.75).abs() < 1e-15);
    }

    #[test]
    fn column_order_does_not_matter() {
        let shuffled = "region,gas,v,y,age,id\n'R2',D,0.5,0,30,1\nR1,'R',1,1,45,2\nR2,R,0.25,2,60,3\n";
        let a = Dataset::read_csv(CSV.as_bytes(), &small_schema()).unwrap();
        let b = Dataset::read_csv(shuffled.as_bytes(), &small_schema()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_numeric_cell_names_row_and_column() {
        let bad = "id,y,v,age,region,gas\n1,0,0.5,abc,R1,D\n";
        match Dataset::read_csv(bad.as_bytes(), &small_schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 0);
                assert_eq!(column, "age");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_empty_file() {
        let missing = "id,y,v,age,gas\n1,0,0.5,30,D\n";
        assert!(matches!(
            Dataset::read_csv(missing.as_bytes(), &small_schema()),
            Err(Error::MissingColumn(c)) if c == "region"
        ));
        assert!(matches!(
            Dataset::read_csv("id,y,v,age,region,gas\n".as_bytes(), &small_schema()),
            Err(Error::Empty(_))
        ));
        assert!(Dataset::read_csv("".as_bytes(), &small_schema()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::read_csv(CSV.as_bytes(), &small_schema()).unwrap();
        let mut buf = Vec::new();
        d.to_writer(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), &d.schema).unwrap();
        assert_eq!(back, d);
    }
}
