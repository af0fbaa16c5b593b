//! JSON and CSV encodings of particle measures.
//!
//! JSON: `{"positions": [[...], ...], "masses": [...]}` with an optional
//! `"signs"` array for tagged measures. CSV: header `x0,..,x{d-1},mass`
//! (plus `sign`), one row per atom. Both use shortest round-trip float
//! formatting, so finite doubles survive a write/read cycle bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParticleMeasure;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct MeasureRepr {
    positions: Vec<Vec<f64>>,
    masses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    signs: Option<Vec<i8>>,
}

impl TryFrom<MeasureRepr> for ParticleMeasure {
    type Error = Error;

    fn try_from(r: MeasureRepr) -> Result<Self> {
        let mu = ParticleMeasure::new(r.positions, r.masses)?;
        match r.signs {
            Some(s) => mu.with_signs(s),
            None => Ok(mu),
        }
    }
}

impl From<ParticleMeasure> for MeasureRepr {
    fn from(mu: ParticleMeasure) -> Self {
        MeasureRepr {
            positions: mu.position_rows().map(<[f64]>::to_vec).collect(),
            masses: mu.masses.clone(),
            signs: mu.signs.clone(),
        }
    }
}

impl ParticleMeasure {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.push("mass".into());
        if self.signs.is_some() {
            header.push("sign".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.position(i).iter().map(|x| format!("{x:?}")).collect();
            row.push(format!("{:?}", self.masses[i]));
            if let Some(s) = &self.signs {
                row.push(s[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let has_sign = header.iter().last() == Some("sign");
        let n_cols = header.len();
        let dim = n_cols
            .checked_sub(if has_sign { 2 } else { 1 })
            .filter(|d| *d > 0)
            .ok_or_else(|| Error::InvalidMeasure("CSV needs at least one coordinate and a mass column".into()))?;
        let mut positions = Vec::new();
        let mut masses = Vec::new();
        let mut signs = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() != n_cols {
                return Err(Error::Shape {
                    expected: n_cols,
                    got: record.len(),
                });
            }
            for j in 0..dim {
                positions.push(parse_f64(&record[j])?);
            }
            masses.push(parse_f64(&record[dim])?);
            if has_sign {
                let s: i8 = record[dim + 1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidMeasure(format!("bad sign tag {:?}", &record[dim + 1])))?;
                signs.push(s);
            }
        }
        let mu = ParticleMeasure::from_flat(dim, positions, masses)?;
        if has_sign {
            mu.with_signs(signs)
        } else {
            Ok(mu)
        }
    }

    /// Loads a measure, choosing the format from the file extension
    /// (`.csv` or anything else as JSON).
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::read_csv(file)
        } else {
            let mut text = String::new();
            std::io::BufReader::new(file).read_to_string(&mut text)?;
            Self::from_json(&text)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            self.write_csv(std::fs::File::create(path)?)
        } else {
            std::fs::write(path, self.to_json()?)?;
            Ok(())
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidMeasure(format!("cannot parse {s:?} as a number")))
}
