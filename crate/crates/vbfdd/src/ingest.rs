//! Telemetry ingestion: parse delimited text, decode raw cells into physical
//! units, validate ranges, and compute the derived mechanism features.
//!
//! Records that violate physical invariants are quarantined into a row-level
//! error report instead of aborting the batch; real fleet data contains
//! sensor glitches and extreme values.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical variable names understood by [`DecodeConfig`], in record order.
pub const CANONICAL_VARIABLES: [&str; 13] = [
    "vehicle_id",
    "timestamp",
    "speed",
    "total_voltage",
    "total_current",
    "mileage",
    "soc",
    "max_cell_voltage",
    "min_cell_voltage",
    "max_temperature",
    "min_temperature",
    "insulation_resistance",
    "alarm_code",
];

/// Dataset-wide physical temperature envelope in °C.
pub const TEMPERATURE_ENVELOPE_C: (f64, f64) = (-40.0, 210.0);

/// One source row, cells preserved verbatim. No unit conversion applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    /// Source column name → raw cell text.
    pub cells: BTreeMap<String, String>,
    /// 0-based data-row index (header excluded).
    pub row_index: usize,
}

/// Per-row ingestion failure, kept for the error report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub row: usize,
    pub reason: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.reason)
    }
}

/// Declarative decode configuration: column mapping plus per-variable linear
/// conversion (`value = raw * scale + offset`). Scales default to 1, offsets
/// to 0, so any CSV that already carries physical units works unchanged.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Field delimiter for the source text (comma by default).
    pub delimiter: char,
    /// Source column name → canonical variable name.
    pub columns: BTreeMap<String, String>,
    /// Canonical variable name → multiplicative scale (strictly positive).
    pub scale: BTreeMap<String, f64>,
    /// Canonical variable name → additive offset.
    pub offset: BTreeMap<String, f64>,
    /// Canonical variables whose columns must be present (defaults to all).
    pub required: Vec<String>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            delimiter: ',',
            columns: CANONICAL_VARIABLES
                .iter()
                .map(|v| (v.to_string(), v.to_string()))
                .collect(),
            scale: BTreeMap::new(),
            offset: BTreeMap::new(),
            required: CANONICAL_VARIABLES.iter().map(|v| v.to_string()).collect(),
        }
    }
}

impl DecodeConfig {
    /// Checks mapping totality, uniqueness, and scale positivity.
    pub fn validate(&self) -> Result<()> {
        let known: BTreeSet<&str> = CANONICAL_VARIABLES.iter().copied().collect();
        let mut seen = BTreeSet::new();
        for (source, canonical) in &self.columns {
            if !known.contains(canonical.as_str()) {
                return Err(Error::Config(format!(
                    "column '{source}' maps to unknown variable '{canonical}'"
                )));
            }
            if !seen.insert(canonical.clone()) {
                return Err(Error::Config(format!(
                    "variable '{canonical}' is mapped by more than one source column"
                )));
            }
        }
        for variable in CANONICAL_VARIABLES {
            if !seen.contains(variable) {
                return Err(Error::Config(format!(
                    "variable '{variable}' has no source column in the mapping"
                )));
            }
        }
        for (variable, scale) in &self.scale {
            if !known.contains(variable.as_str()) {
                return Err(Error::Config(format!("scale for unknown variable '{variable}'")));
            }
            if !(*scale > 0.0) {
                return Err(Error::Config(format!(
                    "scale for '{variable}' must be strictly positive, got {scale}"
                )));
            }
        }
        for variable in &self.required {
            if !known.contains(variable.as_str()) {
                return Err(Error::Config(format!("unknown required variable '{variable}'")));
            }
        }
        Ok(())
    }

    /// Source column carrying a canonical variable.
    pub fn source_column(&self, canonical: &str) -> Option<&str> {
        self.columns
            .iter()
            .find(|(_, c)| c.as_str() == canonical)
            .map(|(s, _)| s.as_str())
    }

    fn scale_of(&self, canonical: &str) -> f64 {
        self.scale.get(canonical).copied().unwrap_or(1.0)
    }

    fn offset_of(&self, canonical: &str) -> f64 {
        self.offset.get(canonical).copied().unwrap_or(0.0)
    }
}

/// One decoded monitoring sample in physical units.
///
/// Sign convention for `total_current_a`: discharge positive, charge
/// negative, so the estimated power sign matches the load direction.
/// The alarm code is a label only; it never feeds text generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub vehicle_id: String,
    /// ISO-8601 timestamp, carried opaquely (no resampling).
    pub timestamp: String,
    pub speed_kmh: f64,
    pub total_voltage_v: f64,
    pub total_current_a: f64,
    pub mileage_km: f64,
    pub soc_percent: f64,
    pub max_cell_voltage_v: f64,
    pub min_cell_voltage_v: f64,
    pub max_temperature_c: f64,
    pub min_temperature_c: f64,
    pub insulation_resistance_kohm: f64,
    pub alarm_code: u64,
    /// 0-based source row index.
    pub row_index: usize,
    /// Source columns not consumed by the mapping, carried opaquely.
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

impl TelemetryRecord {
    /// Stable record identifier used in the corpus and case memory.
    pub fn record_id(&self) -> String {
        format!("{}:{}", self.vehicle_id, self.row_index)
    }
}

/// Mechanism features derived from one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedFeatures {
    /// total voltage × total current / 1000.
    pub estimated_power_kw: f64,
    /// (max − min cell voltage) × 1000, never negative for a valid record.
    pub cell_voltage_spread_mv: f64,
    /// max − min temperature, never negative for a valid record.
    pub temperature_spread_c: f64,
}

/// Outcome of parsing one delimited file: records in source order plus the
/// per-row errors for everything that was quarantined.
#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<RawRecord>,
    pub errors: Vec<RowError>,
}

/// Parses delimited text with a header row into [`RawRecord`]s.
///
/// Rows missing required columns or with mismatched arity are reported in
/// `errors` with their 0-based row index, never silently dropped.
pub fn parse_records<R: Read>(source: R, config: &DecodeConfig) -> Result<ParseOutcome> {
    config.validate()?;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(config.delimiter as u8)
        .flexible(true)
        .from_reader(source);

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::MalformedHeader("empty header row".into()));
    }
    {
        let mut seen = BTreeSet::new();
        for h in &headers {
            if !seen.insert(h) {
                return Err(Error::MalformedHeader(format!("duplicate column '{h}'")));
            }
        }
    }

    // Required canonical variables whose source column is absent entirely.
    let missing_columns: Vec<(String, String)> = config
        .required
        .iter()
        .filter_map(|canonical| {
            let source = config.source_column(canonical)?.to_string();
            if headers.iter().any(|h| h == &source) {
                None
            } else {
                Some((source, canonical.clone()))
            }
        })
        .collect();

    let mut outcome = ParseOutcome::default();
    for (row_index, row) in reader.records().enumerate() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                outcome.errors.push(RowError {
                    row: row_index,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        if !missing_columns.is_empty() {
            for (source, canonical) in &missing_columns {
                outcome.errors.push(RowError {
                    row: row_index,
                    reason: format!(
                        "required column '{source}' (variable '{canonical}') missing from header"
                    ),
                });
            }
            continue;
        }
        if row.len() != headers.len() {
            outcome.errors.push(RowError {
                row: row_index,
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            continue;
        }
        let cells = headers
            .iter()
            .cloned()
            .zip(row.iter().map(|c| c.to_string()))
            .collect();
        outcome.records.push(RawRecord { cells, row_index });
    }
    Ok(outcome)
}

fn numeric_cell(raw: &RawRecord, config: &DecodeConfig, canonical: &str) -> std::result::Result<f64, String> {
    let source = config
        .source_column(canonical)
        .ok_or_else(|| format!("variable '{canonical}' has no source column"))?;
    let cell = raw
        .cells
        .get(source)
        .ok_or_else(|| format!("{canonical}: column '{source}' missing"))?;
    let parsed: f64 = cell
        .trim()
        .parse()
        .map_err(|_| format!("{canonical}: non-numeric cell '{cell}'"))?;
    let value = parsed * config.scale_of(canonical) + config.offset_of(canonical);
    if !value.is_finite() {
        return Err(format!("{canonical}: non-finite value after decoding"));
    }
    Ok(value)
}

fn string_cell(raw: &RawRecord, config: &DecodeConfig, canonical: &str) -> std::result::Result<String, String> {
    let source = config
        .source_column(canonical)
        .ok_or_else(|| format!("variable '{canonical}' has no source column"))?;
    raw.cells
        .get(source)
        .map(|c| c.trim().to_string())
        .ok_or_else(|| format!("{canonical}: column '{source}' missing"))
}

/// Decodes one raw row into a [`TelemetryRecord`], applying the configured
/// linear conversions and validating the physical invariants.
pub fn decode_record(raw: &RawRecord, config: &DecodeConfig) -> std::result::Result<TelemetryRecord, RowError> {
    let fail = |reason: String| RowError { row: raw.row_index, reason };

    let vehicle_id = string_cell(raw, config, "vehicle_id").map_err(fail)?;
    let fail = |reason: String| RowError { row: raw.row_index, reason };
    let timestamp = string_cell(raw, config, "timestamp").map_err(fail)?;

    let mut num = |canonical: &str| {
        numeric_cell(raw, config, canonical).map_err(|reason| RowError { row: raw.row_index, reason })
    };
    let speed_kmh = num("speed")?;
    let total_voltage_v = num("total_voltage")?;
    let total_current_a = num("total_current")?;
    let mileage_km = num("mileage")?;
    let soc_percent = num("soc")?;
    let max_cell_voltage_v = num("max_cell_voltage")?;
    let min_cell_voltage_v = num("min_cell_voltage")?;
    let max_temperature_c = num("max_temperature")?;
    let min_temperature_c = num("min_temperature")?;
    let insulation_resistance_kohm = num("insulation_resistance")?;

    let alarm_raw = num("alarm_code")?;
    let fail = |reason: String| RowError { row: raw.row_index, reason };
    if alarm_raw < 0.0 || alarm_raw.fract() != 0.0 || alarm_raw > u64::MAX as f64 {
        return Err(fail(format!("alarm_code: '{alarm_raw}' is not a non-negative integer")));
    }
    let alarm_code = alarm_raw as u64;

    let consumed: BTreeSet<&str> = CANONICAL_VARIABLES
        .iter()
        .filter_map(|c| config.source_column(c))
        .collect();
    let extras = raw
        .cells
        .iter()
        .filter(|(source, _)| !consumed.contains(source.as_str()))
        .map(|(s, v)| (s.clone(), v.clone()))
        .collect();

    let record = TelemetryRecord {
        vehicle_id,
        timestamp,
        speed_kmh,
        total_voltage_v,
        total_current_a,
        mileage_km,
        soc_percent,
        max_cell_voltage_v,
        min_cell_voltage_v,
        max_temperature_c,
        min_temperature_c,
        insulation_resistance_kohm,
        alarm_code,
        row_index: raw.row_index,
        extras,
    };
    validate_record(&record).map_err(fail)?;
    Ok(record)
}

fn validate_record(rec: &TelemetryRecord) -> std::result::Result<(), String> {
    if rec.vehicle_id.is_empty() {
        return Err("vehicle_id: empty".into());
    }
    if rec.soc_percent < 0.0 || rec.soc_percent > 100.0 {
        return Err(format!("soc: value {} outside [0, 100]", rec.soc_percent));
    }
    if rec.max_cell_voltage_v < rec.min_cell_voltage_v {
        return Err(format!(
            "cell voltages: min {} V exceeds max {} V",
            rec.min_cell_voltage_v, rec.max_cell_voltage_v
        ));
    }
    if rec.max_temperature_c < rec.min_temperature_c {
        return Err(format!(
            "temperatures: min {} °C exceeds max {} °C",
            rec.min_temperature_c, rec.max_temperature_c
        ));
    }
    let (lo, hi) = TEMPERATURE_ENVELOPE_C;
    for (name, t) in [
        ("max_temperature", rec.max_temperature_c),
        ("min_temperature", rec.min_temperature_c),
    ] {
        if t < lo || t > hi {
            return Err(format!("{name}: value {t} outside physical envelope [{lo}, {hi}] °C"));
        }
    }
    if rec.insulation_resistance_kohm < 0.0 {
        return Err(format!(
            "insulation_resistance: negative value {}",
            rec.insulation_resistance_kohm
        ));
    }
    if rec.speed_kmh < 0.0 {
        return Err(format!("speed: negative value {}", rec.speed_kmh));
    }
    if rec.mileage_km < 0.0 {
        return Err(format!("mileage: negative value {}", rec.mileage_km));
    }
    Ok(())
}

/// Computes the derived mechanism features for a valid record.
pub fn derive_features(rec: &TelemetryRecord) -> DerivedFeatures {
    DerivedFeatures {
        estimated_power_kw: rec.total_voltage_v * rec.total_current_a / 1000.0,
        cell_voltage_spread_mv: (rec.max_cell_voltage_v - rec.min_cell_voltage_v) * 1000.0,
        temperature_spread_c: rec.max_temperature_c - rec.min_temperature_c,
    }
}

/// Outcome of parse + decode over one file: decoded records in source order
/// plus every quarantined row, merged and sorted by row index.
#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub records: Vec<TelemetryRecord>,
    pub errors: Vec<RowError>,
}

/// Full ingestion over a byte stream: parse, decode, validate, quarantine.
pub fn ingest<R: Read>(source: R, config: &DecodeConfig) -> Result<IngestOutcome> {
    let parsed = parse_records(source, config)?;
    let mut outcome = IngestOutcome {
        records: Vec::with_capacity(parsed.records.len()),
        errors: parsed.errors,
    };
    for raw in &parsed.records {
        match decode_record(raw, config) {
            Ok(rec) => outcome.records.push(rec),
            Err(err) => outcome.errors.push(err),
        }
    }
    outcome.errors.sort_by_key(|e| e.row);
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_config() -> DecodeConfig {
        DecodeConfig::default()
    }

    fn csv_with(rows: &[&str]) -> String {
        let header = CANONICAL_VARIABLES.join(",");
        let mut out = header;
        for row in rows {
            out.push('\n');
            out.push_str(row);
        }
        out
    }

    const OK_ROW: &str = "LB_04,2020-05-01T10:00:00Z,35.0,346.2,50.1,45210,62,3.702,3.688,28,26,820,0";

    #[test]
    fn parses_rows_in_order() {
        let text = csv_with(&[OK_ROW, OK_ROW]);
        let out = parse_records(text.as_bytes(), &identity_config()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.errors.is_empty());
        assert_eq!(out.records[0].row_index, 0);
        assert_eq!(out.records[1].row_index, 1);
        assert_eq!(out.records[0].cells["soc"], "62");
    }

    #[test]
    fn header_only_file_yields_no_records() {
        let text = csv_with(&[]);
        let out = parse_records(text.as_bytes(), &identity_config()).unwrap();
        assert!(out.records.is_empty());
        assert!(out.errors.is_empty());
    }

    #[test]
    fn missing_required_column_reports_each_row() {
        let header: Vec<&str> = CANONICAL_VARIABLES
            .iter()
            .copied()
            .filter(|v| *v != "soc")
            .collect();
        let row = "LB_04,2020-05-01T10:00:00Z,35.0,346.2,50.1,45210,3.702,3.688,28,26,820,0";
        let text = format!("{}\n{row}\n{row}", header.join(","));
        let out = parse_records(text.as_bytes(), &identity_config()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.errors.len(), 2);
        assert!(out.errors[0].reason.contains("soc"));
        assert_eq!(out.errors[0].row, 0);
        assert_eq!(out.errors[1].row, 1);
    }

    #[test]
    fn arity_mismatch_is_reported_with_row_index() {
        let text = csv_with(&[OK_ROW, "LB_04,short", OK_ROW]);
        let out = parse_records(text.as_bytes(), &identity_config()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].row, 1);
    }

    #[test]
    fn duplicate_header_is_malformed() {
        let text = "a,a\n1,2";
        let err = parse_records(text.as_bytes(), &identity_config()).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }

    #[test]
    fn decode_applies_scale() {
        let mut config = identity_config();
        config.scale.insert("total_voltage".into(), 0.1);
        let row = "LB_04,2020-05-01T10:00:00Z,35.0,3256,50.1,45210,62,3.702,3.688,28,26,820,0";
        let text = csv_with(&[row]);
        let out = ingest(text.as_bytes(), &config).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!((out.records[0].total_voltage_v - 325.6).abs() < 1e-9);
    }

    #[test]
    fn identity_decode_preserves_values() {
        let text = csv_with(&[OK_ROW]);
        let out = ingest(text.as_bytes(), &identity_config()).unwrap();
        let rec = &out.records[0];
        assert_eq!(rec.speed_kmh, 35.0);
        assert_eq!(rec.soc_percent, 62.0);
        assert_eq!(rec.alarm_code, 0);
        assert_eq!(rec.record_id(), "LB_04:0");
    }

    #[test]
    fn soc_out_of_range_is_quarantined() {
        let bad = "LB_04,2020-05-01T10:00:00Z,35.0,346.2,50.1,45210,130,3.702,3.688,28,26,820,0";
        let text = csv_with(&[OK_ROW, bad]);
        let out = ingest(text.as_bytes(), &identity_config()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].row, 1);
        assert!(out.errors[0].reason.contains("soc"));
        assert!(out.errors[0].reason.contains("[0, 100]"));
    }

    #[test]
    fn inverted_cell_voltages_are_quarantined() {
        let bad = "LB_04,2020-05-01T10:00:00Z,35.0,346.2,50.1,45210,62,3.688,3.702,28,26,820,0";
        let text = csv_with(&[bad]);
        let out = ingest(text.as_bytes(), &identity_config()).unwrap();
        assert!(out.records.is_empty());
        assert!(out.errors[0].reason.contains("cell voltages"));
    }

    #[test]
    fn non_numeric_cell_is_quarantined() {
        let bad = "LB_04,2020-05-01T10:00:00Z,n/a,346.2,50.1,45210,62,3.702,3.688,28,26,820,0";
        let text = csv_with(&[bad]);
        let out = ingest(text.as_bytes(), &identity_config()).unwrap();
        assert!(out.errors[0].reason.contains("speed"));
        assert!(out.errors[0].reason.contains("non-numeric"));
    }

    #[test]
    fn extras_are_carried_opaquely() {
        let header = format!("{},gear", CANONICAL_VARIABLES.join(","));
        let text = format!("{header}\n{OK_ROW},D");
        let out = ingest(text.as_bytes(), &identity_config()).unwrap();
        assert_eq!(out.records[0].extras["gear"], "D");
    }

    #[test]
    fn estimated_power_matches_voltage_times_current() {
        let rec = TelemetryRecord {
            vehicle_id: "LB_74".into(),
            timestamp: "2020-05-01T10:00:00Z".into(),
            speed_kmh: 3.0,
            total_voltage_v: 376.1,
            total_current_a: 47.01,
            mileage_km: 60210.0,
            soc_percent: 77.0,
            max_cell_voltage_v: 3.921,
            min_cell_voltage_v: 3.890,
            max_temperature_c: 31.0,
            min_temperature_c: 25.0,
            insulation_resistance_kohm: 1900.0,
            alarm_code: 0,
            row_index: 0,
            extras: BTreeMap::new(),
        };
        let features = derive_features(&rec);
        assert!((features.estimated_power_kw - 17.68).abs() < 1e-2);
        assert!((features.estimated_power_kw - 376.1 * 47.01 / 1000.0).abs() < f64::EPSILON);
    }

    #[test]
    fn cell_voltage_spread_in_millivolts() {
        let mut rec = sample_record();
        rec.max_cell_voltage_v = 4.012;
        rec.min_cell_voltage_v = 3.928;
        let features = derive_features(&rec);
        assert!((features.cell_voltage_spread_mv - 84.0).abs() < 1e-9);
    }

    #[test]
    fn zero_current_means_zero_power() {
        let mut rec = sample_record();
        rec.total_current_a = 0.0;
        assert_eq!(derive_features(&rec).estimated_power_kw, 0.0);
    }

    #[test]
    fn spreads_never_negative_for_valid_records() {
        let out = ingest(csv_with(&[OK_ROW]).as_bytes(), &identity_config()).unwrap();
        let f = derive_features(&out.records[0]);
        assert!(f.cell_voltage_spread_mv >= 0.0);
        assert!(f.temperature_spread_c >= 0.0);
    }

    #[test]
    fn ingest_is_deterministic() {
        let text = csv_with(&[OK_ROW, OK_ROW]);
        let a = ingest(text.as_bytes(), &identity_config()).unwrap();
        let b = ingest(text.as_bytes(), &identity_config()).unwrap();
        assert_eq!(a.records, b.records);
    }

    pub(crate) fn sample_record() -> TelemetryRecord {
        TelemetryRecord {
            vehicle_id: "LB_04".into(),
            timestamp: "2020-05-01T10:00:00Z".into(),
            speed_kmh: 35.0,
            total_voltage_v: 346.2,
            total_current_a: 50.1,
            mileage_km: 45210.0,
            soc_percent: 62.0,
            max_cell_voltage_v: 3.702,
            min_cell_voltage_v: 3.688,
            max_temperature_c: 28.0,
            min_temperature_c: 26.0,
            insulation_resistance_kohm: 820.0,
            alarm_code: 0,
            row_index: 0,
            extras: BTreeMap::new(),
        }
    }
}
