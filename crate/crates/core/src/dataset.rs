//! Incident and zone ingestion, joining, label encoding, and split generation.
//!
//! The incident CSV uses the long column names of the source schema (an alias
//! map can redirect any of them); the zone CSV is keyed by `ZID` and carries
//! the 49 short-name indicators listed in [`ZONE_INDICATORS`]. Categorical
//! codes are assigned in lexicographic order of the category strings so that
//! encoders do not depend on row order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Required incident CSV headers, in schema order.
pub const INCIDENT_COLUMNS: [&str; 19] = [
    "Incident ID",
    "Main Category",
    "Longitude",
    "Latitude",
    "Start Time",
    "End Time",
    "Day",
    "Duration in Minutes",
    "Primary Vehicle Category",
    "Secondary Vehicle Category",
    "Attending Groups",
    "Is Major Incident",
    "Closure Type",
    "Direction",
    "Affected Lane",
    "Actual Number of Lanes",
    "Suburb",
    "Traffic Volume",
    "SA2 CODE21",
];

/// Zone indicator short names, in table order (index 1..=49 of the metadata
/// table; `ZID` itself is the key column and not an indicator).
pub const ZONE_INDICATORS: [&str; 49] = [
    "Area", "ML", "TRL", "PRL", "SRL", "TrRL", "RRL", "LsRL", "URL", "ToRL", "EoR", "NoN", "NDEs",
    "NNC2L", "NNC3L", "NNC4L", "AND", "NE", "MCI", "CoI", "NBS", "CA", "EA", "HA", "IA", "OA",
    "PA", "PrA", "RA", "TA", "WbA", "EoLU", "TP", "PD0MV", "PD1MV", "PD2MV", "PD3MV", "PD4MV",
    "PUE", "AMI", "NPTbyPT", "NPTtWbyTx", "NPTtWbyCD", "NPTtWbyCP", "NPTtWbyO", "NPWfH", "PWCJH",
    "PBCJH", "ANP_FH",
];

/// Indicators constrained to [0, 100].
pub const PERCENT_INDICATORS: [&str; 8] = [
    "PD0MV", "PD1MV", "PD2MV", "PD3MV", "PD4MV", "PUE", "PWCJH", "PBCJH",
];

/// Indicators that are areas or lengths and must be non-negative.
pub const NONNEGATIVE_INDICATORS: [&str; 20] = [
    "Area", "ML", "TRL", "PRL", "SRL", "TrRL", "RRL", "LsRL", "URL", "ToRL", "CA", "EA", "HA",
    "IA", "OA", "PA", "PrA", "RA", "TA", "WbA",
];

/// Reserved category used for missing categorical values.
pub const MISSING_CATEGORY: &str = "Unknown";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("duplicate zone id `{0}`")]
    DuplicateZone(String),
    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("too few rows: {n} (need at least {min})")]
    TooFewRows { n: usize, min: usize },
    #[error("invalid fold count {k} for {n} rows")]
    InvalidFolds { k: usize, n: usize },
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One incident row. Optional fields are genuinely missing in the raw data;
/// `hour` and `month` are derived from the start timestamp when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub incident_id: String,
    pub main_category: String,
    pub longitude: Option<f64>,
    pub latitude: Option<f64>,
    pub start_time: Option<NaiveDateTime>,
    pub end_time: Option<NaiveDateTime>,
    /// Always > 0; derived from the timestamps when the column is blank.
    pub duration_minutes: f64,
    pub primary_vehicle: String,
    pub secondary_vehicle: String,
    pub attending_groups: String,
    pub is_major: Option<bool>,
    pub closure_type: String,
    pub direction: String,
    pub affected_lanes: Option<u32>,
    pub actual_lanes: Option<u32>,
    pub traffic_volume: String,
    pub suburb: String,
    pub sa2_code: String,
    pub day_of_week: String,
    pub hour: Option<u8>,
    pub month: Option<u8>,
}

/// One zone row: SA2 id plus the 49 indicators in [`ZONE_INDICATORS`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneMetadata {
    pub zone_id: String,
    pub indicators: Vec<f64>,
}

impl ZoneMetadata {
    pub fn indicator(&self, short_name: &str) -> Option<f64> {
        ZONE_INDICATORS
            .iter()
            .position(|n| *n == short_name)
            .map(|i| self.indicators[i])
    }
}

/// Incident joined with its zone's indicators (medians when unmatched).
#[derive(Debug, Clone)]
pub struct MergedRecord {
    pub incident: IncidentRecord,
    pub zone: Vec<f64>,
    pub zone_matched: bool,
}

/// Counts emitted by the load + merge pipeline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct JoinReport {
    pub rows: usize,
    pub dropped: usize,
    pub unmatched_zones: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedIncidents {
    pub records: Vec<IncidentRecord>,
    /// Rows discarded because neither the duration nor the timestamps parsed.
    pub dropped: usize,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    for fmt in [
        "%d:%m:%Y %H:%M",
        "%d:%m:%Y %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    None
}

fn parse_f64(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Column lookup that applies the alias map (canonical name -> actual header).
struct HeaderMap {
    idx: BTreeMap<String, usize>,
}

impl HeaderMap {
    fn new(
        headers: &csv::StringRecord,
        aliases: &BTreeMap<String, String>,
        required: &[&str],
    ) -> Result<Self> {
        let mut pos = BTreeMap::new();
        for (i, h) in headers.iter().enumerate() {
            pos.insert(h.trim().to_string(), i);
        }
        let mut idx = BTreeMap::new();
        for name in required {
            let actual = aliases.get(*name).map(String::as_str).unwrap_or(name);
            match pos.get(actual) {
                Some(&i) => {
                    idx.insert((*name).to_string(), i);
                }
                None => return Err(DatasetError::MissingColumn((*name).to_string())),
            }
        }
        Ok(Self { idx })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, name: &str) -> &'r str {
        self.idx
            .get(name)
            .and_then(|&i| record.get(i))
            .unwrap_or("")
    }
}

/// Load incidents from a CSV file using the canonical headers.
pub fn load_incidents(path: impl AsRef<Path>) -> Result<LoadedIncidents> {
    load_incidents_with_aliases(path, &BTreeMap::new())
}

/// Same as [`load_incidents`] with an alias map (canonical -> actual header).
pub fn load_incidents_with_aliases(
    path: impl AsRef<Path>,
    aliases: &BTreeMap<String, String>,
) -> Result<LoadedIncidents> {
    let file = std::fs::File::open(path)?;
    load_incidents_from_reader(file, aliases)
}

pub fn load_incidents_from_reader<R: Read>(
    reader: R,
    aliases: &BTreeMap<String, String>,
) -> Result<LoadedIncidents> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DatasetError::EmptyInput("incident csv has no header".into()));
    }
    let map = HeaderMap::new(&headers, aliases, &INCIDENT_COLUMNS)?;

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for row in rdr.records() {
        let row = row?;
        let start_time = parse_timestamp(map.get(&row, "Start Time"));
        let mut end_time = parse_timestamp(map.get(&row, "End Time"));
        let parsed_duration = parse_f64(map.get(&row, "Duration in Minutes")).filter(|d| *d > 0.0);

        let derived = match (start_time, end_time) {
            (Some(s), Some(e)) if e >= s => {
                Some((e - s).num_seconds() as f64 / 60.0).filter(|d| *d > 0.0)
            }
            _ => None,
        };
        let duration_minutes = match parsed_duration.or(derived) {
            Some(d) => d,
            None => {
                dropped += 1;
                continue;
            }
        };
        // An end timestamp before the start is unusable; keep the row, drop the field.
        if let (Some(s), Some(e)) = (start_time, end_time) {
            if e < s {
                end_time = None;
            }
        }

        use chrono::{Datelike, Timelike};
        let _ = i;
        records.push(IncidentRecord {
            incident_id: map.get(&row, "Incident ID").trim().to_string(),
            main_category: map.get(&row, "Main Category").trim().to_string(),
            longitude: parse_f64(map.get(&row, "Longitude")),
            latitude: parse_f64(map.get(&row, "Latitude")),
            start_time,
            end_time,
            duration_minutes,
            primary_vehicle: map.get(&row, "Primary Vehicle Category").trim().to_string(),
            secondary_vehicle: map
                .get(&row, "Secondary Vehicle Category")
                .trim()
                .to_string(),
            attending_groups: map.get(&row, "Attending Groups").trim().to_string(),
            is_major: parse_bool(map.get(&row, "Is Major Incident")),
            closure_type: map.get(&row, "Closure Type").trim().to_string(),
            direction: map.get(&row, "Direction").trim().to_string(),
            affected_lanes: map.get(&row, "Affected Lane").trim().parse().ok(),
            actual_lanes: map.get(&row, "Actual Number of Lanes").trim().parse().ok(),
            traffic_volume: map.get(&row, "Traffic Volume").trim().to_string(),
            suburb: map.get(&row, "Suburb").trim().to_string(),
            sa2_code: map.get(&row, "SA2 CODE21").trim().to_string(),
            day_of_week: map.get(&row, "Day").trim().to_string(),
            hour: start_time.map(|t| t.hour() as u8),
            month: start_time.map(|t| t.month() as u8),
        });
    }
    if records.is_empty() && dropped == 0 {
        return Err(DatasetError::EmptyInput("incident csv has no data rows".into()));
    }
    Ok(LoadedIncidents { records, dropped })
}

/// Load zone metadata keyed by `ZID`.
pub fn load_zones(path: impl AsRef<Path>) -> Result<Vec<ZoneMetadata>> {
    let file = std::fs::File::open(path)?;
    load_zones_from_reader(file)
}

pub fn load_zones_from_reader<R: Read>(reader: R) -> Result<Vec<ZoneMetadata>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut pos = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        pos.insert(h.trim().to_string(), i);
    }
    let zid_col = *pos
        .get("ZID")
        .ok_or_else(|| DatasetError::MissingColumn("ZID".into()))?;
    let mut indicator_cols = Vec::with_capacity(ZONE_INDICATORS.len());
    for name in ZONE_INDICATORS {
        let col = *pos
            .get(name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
        indicator_cols.push(col);
    }

    let mut seen = BTreeSet::new();
    let mut zones = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let zone_id = row.get(zid_col).unwrap_or("").trim().to_string();
        if !seen.insert(zone_id.clone()) {
            return Err(DatasetError::DuplicateZone(zone_id));
        }
        let mut indicators = Vec::with_capacity(ZONE_INDICATORS.len());
        for (name, &col) in ZONE_INDICATORS.iter().zip(&indicator_cols) {
            let raw = row.get(col).unwrap_or("").trim();
            let value = parse_f64(raw).ok_or_else(|| DatasetError::Parse {
                row: i + 2, // 1-based, after the header line
                column: (*name).to_string(),
                message: format!("expected a number, got `{raw}`"),
            })?;
            let in_range = if PERCENT_INDICATORS.contains(name) {
                (0.0..=100.0).contains(&value)
            } else if NONNEGATIVE_INDICATORS.contains(name) {
                value >= 0.0
            } else {
                true
            };
            if !in_range {
                return Err(DatasetError::Parse {
                    row: i + 2,
                    column: (*name).to_string(),
                    message: format!("value {value} out of range"),
                });
            }
            indicators.push(value);
        }
        zones.push(ZoneMetadata { zone_id, indicators });
    }
    if zones.is_empty() {
        return Err(DatasetError::EmptyInput("zone csv has no data rows".into()));
    }
    Ok(zones)
}

/// Left join of incidents onto zones by SA2 code. Unmatched incidents get the
/// per-indicator median over all zones and are counted.
pub fn merge(incidents: &[IncidentRecord], zones: &[ZoneMetadata]) -> (Vec<MergedRecord>, usize) {
    let by_id: BTreeMap<&str, &ZoneMetadata> =
        zones.iter().map(|z| (z.zone_id.as_str(), z)).collect();
    let medians: Vec<f64> = (0..ZONE_INDICATORS.len())
        .map(|i| {
            let mut col: Vec<f64> = zones.iter().map(|z| z.indicators[i]).collect();
            median_in_place(&mut col)
        })
        .collect();

    let mut unmatched = 0usize;
    let merged = incidents
        .iter()
        .map(|rec| match by_id.get(rec.sa2_code.as_str()) {
            Some(zone) => MergedRecord {
                incident: rec.clone(),
                zone: zone.indicators.clone(),
                zone_matched: true,
            },
            None => {
                unmatched += 1;
                MergedRecord {
                    incident: rec.clone(),
                    zone: medians.clone(),
                    zone_matched: false,
                }
            }
        })
        .collect();
    (merged, unmatched)
}

fn median_in_place(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Bijective mapping from category strings to codes `0..K-1`, assigned in
/// lexicographic order of the category strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEncoder {
    categories: Vec<String>,
}

impl LabelEncoder {
    pub fn fit<I: IntoIterator<Item = String>>(values: I) -> Self {
        let set: BTreeSet<String> = values.into_iter().collect();
        Self {
            categories: set.into_iter().collect(),
        }
    }

    pub fn encode(&self, value: &str) -> Option<usize> {
        self.categories.binary_search_by(|c| c.as_str().cmp(value)).ok()
    }

    pub fn decode(&self, code: usize) -> Option<&str> {
        self.categories.get(code).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Per-column metadata; categorical columns carry their encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub encoder: Option<LabelEncoder>,
}

/// Dense row-major matrix of encoded features plus target and row ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    pub columns: Vec<ColumnMeta>,
    pub target: Vec<f64>,
    pub row_ids: Vec<String>,
    /// Columns removed because every row was missing.
    pub dropped_columns: Vec<String>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, columns: Vec<ColumnMeta>, target: Vec<f64>, row_ids: Vec<String>) -> Self {
        let n_rows = rows.len();
        let n_cols = columns.len();
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in &rows {
            debug_assert_eq!(r.len(), n_cols);
            data.extend_from_slice(r);
        }
        Self {
            data,
            n_rows,
            n_cols,
            columns,
            target,
            row_ids,
            dropped_columns: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// View of selected rows as owned vectors (used by split-based training).
    pub fn rows_subset(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = idx.iter().map(|&i| self.row(i).to_vec()).collect();
        let y = idx.iter().map(|&i| self.target[i]).collect();
        (x, y)
    }
}

/// Column filter applied by [`encode_with`].
#[derive(Debug, Clone, Default)]
pub struct EncodeOptions {
    /// When set, only these columns are kept (schema order preserved).
    pub include: Option<Vec<String>>,
    pub exclude: Vec<String>,
}

enum ColumnSource {
    Category(fn(&IncidentRecord) -> &str),
    Number(fn(&IncidentRecord) -> f64),
    Zone(usize),
}

fn opt_num(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn schema() -> Vec<(&'static str, ColumnSource)> {
    use ColumnSource::*;
    let mut cols: Vec<(&'static str, ColumnSource)> = vec![
        ("Main Category", Category(|r| &r.main_category)),
        ("Longitude", Number(|r| opt_num(r.longitude))),
        ("Latitude", Number(|r| opt_num(r.latitude))),
        ("Day", Category(|r| &r.day_of_week)),
        ("Primary Vehicle Category", Category(|r| &r.primary_vehicle)),
        ("Secondary Vehicle Category", Category(|r| &r.secondary_vehicle)),
        ("Attending Groups", Category(|r| &r.attending_groups)),
        (
            "Is Major Incident",
            Number(|r| r.is_major.map(|b| b as u8 as f64).unwrap_or(f64::NAN)),
        ),
        ("Closure Type", Category(|r| &r.closure_type)),
        ("Direction", Category(|r| &r.direction)),
        ("Affected Lane", Number(|r| opt_num(r.affected_lanes.map(f64::from)))),
        (
            "Actual Number of Lanes",
            Number(|r| opt_num(r.actual_lanes.map(f64::from))),
        ),
        ("Suburb", Category(|r| &r.suburb)),
        ("Traffic Volume", Category(|r| &r.traffic_volume)),
        ("SA2 CODE21", Category(|r| &r.sa2_code)),
        ("Hour", Number(|r| opt_num(r.hour.map(f64::from)))),
        ("Month", Number(|r| opt_num(r.month.map(f64::from)))),
    ];
    for (i, name) in ZONE_INDICATORS.iter().enumerate() {
        cols.push((name, Zone(i)));
    }
    cols
}

/// Feature column names of the full encoded schema.
pub fn feature_schema_names() -> Vec<String> {
    schema().into_iter().map(|(n, _)| n.to_string()).collect()
}

/// Label-encode merged records into a numeric feature matrix.
///
/// Missing categoricals map to the reserved `"Unknown"` category; missing
/// numerics to the column median. Columns missing in every row are dropped.
pub fn encode(records: &[MergedRecord]) -> Result<FeatureMatrix> {
    encode_with(records, &EncodeOptions::default())
}

pub fn encode_with(records: &[MergedRecord], opts: &EncodeOptions) -> Result<FeatureMatrix> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput("no records to encode".into()));
    }
    let keep = |name: &str| {
        let included = opts
            .include
            .as_ref()
            .map(|inc| inc.iter().any(|c| c == name))
            .unwrap_or(true);
        included && !opts.exclude.iter().any(|c| c == name)
    };

    let mut columns = Vec::new();
    let mut raw: Vec<Vec<f64>> = Vec::new(); // column-major during construction
    let mut dropped_columns = Vec::new();

    for (name, source) in schema() {
        if !keep(name) {
            continue;
        }
        match source {
            ColumnSource::Category(getter) => {
                let values: Vec<&str> = records
                    .iter()
                    .map(|r| {
                        let v = getter(&r.incident);
                        if v.trim().is_empty() {
                            MISSING_CATEGORY
                        } else {
                            v
                        }
                    })
                    .collect();
                let encoder = LabelEncoder::fit(values.iter().map(|v| v.to_string()));
                let col: Vec<f64> = values
                    .iter()
                    .map(|v| encoder.encode(v).expect("fitted category") as f64)
                    .collect();
                raw.push(col);
                columns.push(ColumnMeta {
                    name: name.to_string(),
                    kind: ColumnKind::Categorical,
                    encoder: Some(encoder),
                });
            }
            ColumnSource::Number(getter) => {
                let col: Vec<f64> = records.iter().map(|r| getter(&r.incident)).collect();
                match fill_missing(col) {
                    Some(col) => {
                        raw.push(col);
                        columns.push(ColumnMeta {
                            name: name.to_string(),
                            kind: ColumnKind::Numeric,
                            encoder: None,
                        });
                    }
                    None => dropped_columns.push(name.to_string()),
                }
            }
            ColumnSource::Zone(i) => {
                let col: Vec<f64> = records.iter().map(|r| r.zone[i]).collect();
                match fill_missing(col) {
                    Some(col) => {
                        raw.push(col);
                        columns.push(ColumnMeta {
                            name: name.to_string(),
                            kind: ColumnKind::Numeric,
                            encoder: None,
                        });
                    }
                    None => dropped_columns.push(name.to_string()),
                }
            }
        }
    }

    let n_rows = records.len();
    let n_cols = columns.len();
    let mut data = vec![0.0; n_rows * n_cols];
    for (j, col) in raw.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * n_cols + j] = v;
        }
    }
    Ok(FeatureMatrix {
        data,
        n_rows,
        n_cols,
        columns,
        target: records.iter().map(|r| r.incident.duration_minutes).collect(),
        row_ids: records.iter().map(|r| r.incident.incident_id.clone()).collect(),
        dropped_columns,
    })
}

/// Median-fill NaNs; `None` when the whole column is missing.
fn fill_missing(mut col: Vec<f64>) -> Option<Vec<f64>> {
    let mut present: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
    if present.is_empty() {
        return None;
    }
    let med = median_in_place(&mut present);
    for v in &mut col {
        if !v.is_finite() {
            *v = med;
        }
    }
    Some(col)
}

/// A reproducible train/test partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Shuffled train/test split; deterministic per `(n, test_fraction, seed)`.
pub fn split(matrix: &FeatureMatrix, test_fraction: f64, seed: u64) -> Result<SplitSpec> {
    split_indices(matrix.n_rows(), test_fraction, seed)
}

pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if n < 5 {
        return Err(DatasetError::TooFewRows { n, min: 5 });
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut test_idx: Vec<usize> = perm[..n_test].to_vec();
    let mut train_idx: Vec<usize> = perm[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(SplitSpec {
        seed,
        train_idx,
        test_idx,
    })
}

/// K disjoint folds covering `0..n`; test fold sizes differ by at most one.
pub fn kfold(matrix: &FeatureMatrix, k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    kfold_indices(matrix.n_rows(), k, seed)
}

pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    if k < 2 || k > n {
        return Err(DatasetError::InvalidFolds { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test_idx: Vec<usize> = perm[start..start + size].to_vec();
        let mut train_idx: Vec<usize> = perm[..start]
            .iter()
            .chain(&perm[start + size..])
            .copied()
            .collect();
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        folds.push(SplitSpec {
            seed,
            train_idx,
            test_idx,
        });
        start += size;
    }
    Ok(folds)
}

/// Write incident records in the canonical CSV schema (the inverse of
/// [`load_incidents`]).
pub fn write_incidents_csv<W: std::io::Write>(w: W, records: &[IncidentRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(INCIDENT_COLUMNS)?;
    for r in records {
        let ts = |t: Option<NaiveDateTime>| {
            t.map(|t| t.format("%d:%m:%Y %H:%M").to_string())
                .unwrap_or_default()
        };
        let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        wtr.write_record([
            r.incident_id.clone(),
            r.main_category.clone(),
            num(r.longitude),
            num(r.latitude),
            ts(r.start_time),
            ts(r.end_time),
            r.day_of_week.clone(),
            r.duration_minutes.to_string(),
            r.primary_vehicle.clone(),
            r.secondary_vehicle.clone(),
            r.attending_groups.clone(),
            r.is_major.map(|b| (b as u8).to_string()).unwrap_or_default(),
            r.closure_type.clone(),
            r.direction.clone(),
            r.affected_lanes.map(|v| v.to_string()).unwrap_or_default(),
            r.actual_lanes.map(|v| v.to_string()).unwrap_or_default(),
            r.suburb.clone(),
            r.traffic_volume.clone(),
            r.sa2_code.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write zone metadata in the `ZID` + indicators schema.
pub fn write_zones_csv<W: std::io::Write>(w: W, zones: &[ZoneMetadata]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["ZID".to_string()];
    header.extend(ZONE_INDICATORS.iter().map(|s| s.to_string()));
    wtr.write_record(&header)?;
    for z in zones {
        let mut row = vec![z.zone_id.clone()];
        row.extend(z.indicators.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn incident_csv(rows: &[&str]) -> String {
        let header = INCIDENT_COLUMNS.join(",");
        let mut s = header;
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s.push('\n');
        s
    }

    // id,main,lon,lat,start,end,day,duration,pv,sv,att,major,closure,dir,lanes,actual,suburb,vol,sa2
    const ROW_CRASH: &str = "1001,Crash,151.2,-33.8,01:01:2023 08:00,01:01:2023 08:30,Monday,30,Car,Truck,Police,0,Affected,Eastbound,1,4,Downtown,Heavy,2001";

    #[test]
    fn loads_basic_row() {
        let data = incident_csv(&[ROW_CRASH]);
        let loaded = load_incidents_from_reader(data.as_bytes(), &BTreeMap::new()).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.dropped, 0);
        let r = &loaded.records[0];
        assert_eq!(r.duration_minutes, 30.0);
        assert_eq!(r.main_category, "Crash");
        assert_eq!(r.hour, Some(8));
        assert_eq!(r.month, Some(1));
    }

    #[test]
    fn derives_duration_from_timestamps() {
        let row = "1002,Breakdown,151.0,-33.9,02:02:2023 08:00,02:02:2023 08:30,Tuesday,,Car,,Police,0,Affected,Inbound,1,2,Uptown,Light,2001";
        let data = incident_csv(&[row]);
        let loaded = load_incidents_from_reader(data.as_bytes(), &BTreeMap::new()).unwrap();
        assert_eq!(loaded.records[0].duration_minutes, 30.0);
    }

    #[test]
    fn drops_rows_without_duration_or_timestamps() {
        let row = "1003,Crash,151.0,-33.9,,,Monday,,Car,,Police,0,Affected,Inbound,1,2,Uptown,Light,2001";
        let data = incident_csv(&[ROW_CRASH, row]);
        let loaded = load_incidents_from_reader(data.as_bytes(), &BTreeMap::new()).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.dropped, 1);
    }

    #[test]
    fn missing_column_is_named() {
        let data = "Incident ID,Main Category\n1,Crash\n";
        let err = load_incidents_from_reader(data.as_bytes(), &BTreeMap::new()).unwrap_err();
        match err {
            DatasetError::MissingColumn(c) => assert_eq!(c, "Longitude"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_incident_file_errors() {
        let data = incident_csv(&[]);
        let err = load_incidents_from_reader(data.as_bytes(), &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, DatasetError::EmptyInput(_)));
    }

    #[test]
    fn alias_map_redirects_headers() {
        let mut aliases = BTreeMap::new();
        aliases.insert("Duration in Minutes".to_string(), "Duration".to_string());
        let header = INCIDENT_COLUMNS.join(",").replace("Duration in Minutes", "Duration");
        let data = format!("{header}\n{ROW_CRASH}\n");
        let loaded = load_incidents_from_reader(data.as_bytes(), &aliases).unwrap();
        assert_eq!(loaded.records[0].duration_minutes, 30.0);
    }

    fn zone_csv(rows: &[(&str, f64)]) -> String {
        let mut s = format!("ZID,{}", ZONE_INDICATORS.join(","));
        for (zid, area) in rows {
            let mut row = vec![zid.to_string(), area.to_string()];
            row.extend((1..ZONE_INDICATORS.len()).map(|i| (i as f64).to_string()));
            // keep percentage columns in range
            for (k, name) in ZONE_INDICATORS.iter().enumerate() {
                if PERCENT_INDICATORS.contains(name) {
                    row[k + 1] = "50".to_string();
                }
            }
            s.push('\n');
            s.push_str(&row.join(","));
        }
        s.push('\n');
        s
    }

    #[test]
    fn zone_indicators_keyed_by_short_name() {
        let data = zone_csv(&[("2001", 50.2)]);
        let zones = load_zones_from_reader(data.as_bytes()).unwrap();
        assert_eq!(zones.len(), 1);
        assert_eq!(zones[0].indicator("Area"), Some(50.2));
    }

    #[test]
    fn duplicate_zone_id_rejected() {
        let data = zone_csv(&[("2001", 1.0), ("2001", 2.0)]);
        let err = load_zones_from_reader(data.as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateZone(z) if z == "2001"));
    }

    #[test]
    fn out_of_range_percentage_rejected() {
        let mut data = zone_csv(&[("2001", 1.0)]);
        data = data.replace(",50,", ",-1,"); // first percentage cell
        let err = load_zones_from_reader(data.as_bytes()).unwrap_err();
        match err {
            DatasetError::Parse { column, .. } => {
                assert!(PERCENT_INDICATORS.contains(&column.as_str()))
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn sample_record(id: &str, sa2: &str, category: &str, duration: f64) -> IncidentRecord {
        IncidentRecord {
            incident_id: id.to_string(),
            main_category: category.to_string(),
            longitude: Some(151.0),
            latitude: Some(-33.9),
            start_time: None,
            end_time: None,
            duration_minutes: duration,
            primary_vehicle: "Car".into(),
            secondary_vehicle: "".into(),
            attending_groups: "Police".into(),
            is_major: Some(false),
            closure_type: "Affected".into(),
            direction: "Inbound".into(),
            affected_lanes: Some(1),
            actual_lanes: Some(2),
            traffic_volume: "Light".into(),
            suburb: "Uptown".into(),
            sa2_code: sa2.to_string(),
            day_of_week: "Monday".into(),
            hour: Some(8),
            month: Some(1),
        }
    }

    fn sample_zone(zid: &str, fill: f64) -> ZoneMetadata {
        ZoneMetadata {
            zone_id: zid.to_string(),
            indicators: vec![fill; ZONE_INDICATORS.len()],
        }
    }

    #[test]
    fn merge_joins_and_counts_unmatched() {
        let incidents = vec![
            sample_record("1", "2001", "Crash", 10.0),
            sample_record("2", "9999", "Crash", 20.0),
        ];
        let zones = vec![sample_zone("2001", 7.0), sample_zone("2002", 9.0)];
        let (merged, unmatched) = merge(&incidents, &zones);
        assert_eq!(unmatched, 1);
        assert!(merged[0].zone_matched);
        assert_eq!(merged[0].zone[0], 7.0);
        assert!(!merged[1].zone_matched);
        assert_eq!(merged[1].zone[0], 8.0); // median of {7, 9}
    }

    #[test]
    fn merged_column_count_is_incident_fields_plus_indicators() {
        let incidents: Vec<IncidentRecord> = (0..3)
            .map(|i| sample_record(&i.to_string(), "2001", "Crash", 10.0 + i as f64))
            .collect();
        let zones = vec![sample_zone("2001", 1.0)];
        let (merged, _) = merge(&incidents, &zones);
        let matrix = encode(&merged).unwrap();
        // 17 incident-derived feature columns + 49 zone indicators
        assert_eq!(matrix.n_cols(), 17 + ZONE_INDICATORS.len());
    }

    #[test]
    fn lexicographic_codes() {
        let enc = LabelEncoder::fit(
            ["Crash", "Breakdown", "Others"].iter().map(|s| s.to_string()),
        );
        assert_eq!(enc.encode("Breakdown"), Some(0));
        assert_eq!(enc.encode("Crash"), Some(1));
        assert_eq!(enc.encode("Others"), Some(2));
    }

    #[test]
    fn encode_decode_round_trip() {
        let values = ["Heavy", "Light", "Moderate", "Unknown"];
        let enc = LabelEncoder::fit(values.iter().map(|s| s.to_string()));
        for v in values {
            let code = enc.encode(v).unwrap();
            assert_eq!(enc.decode(code), Some(v));
        }
    }

    #[test]
    fn five_row_fixture_encodes_without_nan() {
        let cats = ["Breakdown", "Crash", "Others", "Crash", "Breakdown"];
        let records: Vec<MergedRecord> = (0..5)
            .map(|i| {
                let mut rec = sample_record(&i.to_string(), "2001", cats[i], 10.0 + i as f64);
                rec.direction = if i % 2 == 0 { "Inbound" } else { "Outbound" }.into();
                MergedRecord {
                    incident: rec,
                    zone: vec![1.0; ZONE_INDICATORS.len()],
                    zone_matched: true,
                }
            })
            .collect();
        let opts = EncodeOptions {
            include: Some(
                ["Main Category", "Direction", "Longitude", "Affected Lane", "Hour"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
            exclude: vec![],
        };
        let m = encode_with(&records, &opts).unwrap();
        assert_eq!((m.n_rows(), m.n_cols()), (5, 5));
        for i in 0..5 {
            assert!(m.row(i).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn missing_categorical_maps_to_unknown() {
        let records: Vec<MergedRecord> = (0..2)
            .map(|i| {
                let mut rec = sample_record(&i.to_string(), "2001", "Crash", 10.0);
                if i == 0 {
                    rec.traffic_volume = "".into();
                }
                MergedRecord {
                    incident: rec,
                    zone: vec![1.0; ZONE_INDICATORS.len()],
                    zone_matched: true,
                }
            })
            .collect();
        let m = encode(&records).unwrap();
        let col = m
            .columns
            .iter()
            .position(|c| c.name == "Traffic Volume")
            .unwrap();
        let enc = m.columns[col].encoder.as_ref().unwrap();
        let code = m.get(0, col) as usize;
        assert_eq!(enc.decode(code), Some(MISSING_CATEGORY));
    }

    #[test]
    fn all_missing_numeric_column_dropped() {
        let records: Vec<MergedRecord> = (0..3)
            .map(|i| {
                let mut rec = sample_record(&i.to_string(), "2001", "Crash", 10.0);
                rec.longitude = None;
                MergedRecord {
                    incident: rec,
                    zone: vec![1.0; ZONE_INDICATORS.len()],
                    zone_matched: true,
                }
            })
            .collect();
        let m = encode(&records).unwrap();
        assert!(m.dropped_columns.contains(&"Longitude".to_string()));
        assert!(m.columns.iter().all(|c| c.name != "Longitude"));
    }

    #[test]
    fn split_sizes_and_partition() {
        let spec = split_indices(10, 0.2, 1).unwrap();
        assert_eq!(spec.test_idx.len(), 2);
        assert_eq!(spec.train_idx.len(), 8);
        let mut all: Vec<usize> = spec.train_idx.iter().chain(&spec.test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_deterministic_per_seed() {
        assert_eq!(split_indices(100, 0.2, 7).unwrap(), split_indices(100, 0.2, 7).unwrap());
        assert_ne!(
            split_indices(100, 0.2, 1).unwrap().test_idx,
            split_indices(100, 0.2, 2).unwrap().test_idx
        );
    }

    #[test]
    fn split_too_few_rows() {
        assert!(matches!(
            split_indices(4, 0.2, 0),
            Err(DatasetError::TooFewRows { .. })
        ));
    }

    #[test]
    fn kfold_partitions_exactly() {
        let folds = kfold_indices(10, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test_idx.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.test_idx.len(), 2);
            assert_eq!(f.train_idx.len(), 8);
        }
    }

    #[test]
    fn kfold_sizes_differ_by_at_most_one() {
        let folds = kfold_indices(103, 5, 3).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test_idx.len()).collect();
        let min = *sizes.iter().min().unwrap();
        let max = *sizes.iter().max().unwrap();
        assert!(max - min <= 1);
        assert!(matches!(kfold_indices(3, 5, 0), Err(DatasetError::InvalidFolds { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![sample_record("1", "2001", "Crash", 12.5)];
        let mut buf = Vec::new();
        write_incidents_csv(&mut buf, &records).unwrap();
        let loaded = load_incidents_from_reader(buf.as_slice(), &BTreeMap::new()).unwrap();
        assert_eq!(loaded.records[0].incident_id, "1");
        assert_eq!(loaded.records[0].duration_minutes, 12.5);

        let zones = vec![sample_zone("2001", 3.25)];
        let mut buf = Vec::new();
        write_zones_csv(&mut buf, &zones).unwrap();
        let back = load_zones_from_reader(buf.as_slice()).unwrap();
        assert_eq!(back, zones);
    }
}
