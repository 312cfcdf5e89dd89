use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{Dataset, DatasetError, MicrogridObservation, PriorityLabel, Provenance, FEATURE_NAMES};

/// Maps each observation field to a CSV header name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub consumption_kw: String,
    pub pv_generation_kw: String,
    pub wind_generation_kw: String,
    pub battery_capacity_kwh: String,
    pub battery_soc_frac: String,
    pub hour_of_day: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            consumption_kw: FEATURE_NAMES[0].into(),
            pv_generation_kw: FEATURE_NAMES[1].into(),
            wind_generation_kw: FEATURE_NAMES[2].into(),
            battery_capacity_kwh: FEATURE_NAMES[3].into(),
            battery_soc_frac: FEATURE_NAMES[4].into(),
            hour_of_day: FEATURE_NAMES[5].into(),
        }
    }
}

impl ColumnMapping {
    fn columns(&self) -> [&str; 6] {
        [
            &self.consumption_kw,
            &self.pv_generation_kw,
            &self.wind_generation_kw,
            &self.battery_capacity_kwh,
            &self.battery_soc_frac,
            &self.hour_of_day,
        ]
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<(csv::Reader<std::fs::File>, csv::StringRecord), DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let headers = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    Ok((rdr, headers))
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DatasetError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
}

/// Parses the six mapped feature cells of one record. `row` is the 1-based
/// data row number used in errors.
fn parse_observation(
    record: &csv::StringRecord,
    idx: &[usize; 6],
    names: &[&str; 6],
    row: usize,
) -> Result<MicrogridObservation, DatasetError> {
    let mut v = [0.0; 6];
    for j in 0..6 {
        let cell = record.get(idx[j]).unwrap_or("");
        v[j] = cell.parse::<f64>().map_err(|_| DatasetError::ParseError {
            row,
            column: names[j].to_string(),
        })?;
    }
    let hour = v[5];
    if hour.fract() != 0.0 || !(0.0..=23.0).contains(&hour) {
        return Err(DatasetError::InvalidObservation {
            row,
            reason: format!("hour_of_day must be an integer in 0..=23, got {hour}"),
        });
    }
    let obs = MicrogridObservation {
        consumption_kw: v[0],
        pv_generation_kw: v[1],
        wind_generation_kw: v[2],
        battery_capacity_kwh: v[3],
        battery_soc_frac: v[4],
        hour_of_day: hour as u8,
    };
    obs.validate()
        .map_err(|reason| DatasetError::InvalidObservation { row, reason })?;
    Ok(obs)
}

/// Reads an unlabelled dataset; every row is marked [`Provenance::Real`] and
/// row order is preserved. Error rows are numbered from 1, header excluded.
pub fn load_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let (mut rdr, headers) = open(path)?;
    let names = mapping.columns();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(names) {
        *slot = column_index(&headers, name)?;
    }
    let mut observations = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        observations.push(parse_observation(&record, &idx, &names, i + 1)?);
    }
    if observations.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(Dataset::unlabeled(observations, Provenance::Real))
}

/// Writes the audit format: the six feature columns plus `label` and
/// `provenance`. Floats use shortest round-trip formatting.
pub fn write_labeled_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    header.extend(["label", "provenance"]);
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for ((o, l), p) in dataset
        .observations()
        .iter()
        .zip(dataset.labels())
        .zip(dataset.provenance())
    {
        let rec = [
            o.consumption_kw.to_string(),
            o.pv_generation_kw.to_string(),
            o.wind_generation_kw.to_string(),
            o.battery_capacity_kwh.to_string(),
            o.battery_soc_frac.to_string(),
            o.hour_of_day.to_string(),
            l.map(|l| l.as_str().to_string()).unwrap_or_default(),
            p.as_str().to_string(),
        ];
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads the format produced by [`write_labeled_csv`].
pub fn read_labeled_csv(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let (mut rdr, headers) = open(path)?;
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(FEATURE_NAMES) {
        *slot = column_index(&headers, name)?;
    }
    let label_col = column_index(&headers, "label")?;
    let prov_col = column_index(&headers, "provenance")?;
    let mut out = Dataset::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| io_err(path, e))?;
        let obs = parse_observation(&record, &idx, &FEATURE_NAMES, row)?;
        let label = match record.get(label_col).unwrap_or("") {
            "" => None,
            s => Some(s.parse::<PriorityLabel>().map_err(|_| DatasetError::ParseError {
                row,
                column: "label".into(),
            })?),
        };
        let prov = record
            .get(prov_col)
            .unwrap_or("")
            .parse::<Provenance>()
            .map_err(|_| DatasetError::ParseError {
                row,
                column: "provenance".into(),
            })?;
        out.push(obs, label, prov);
    }
    if out.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(out)
}
