//! CSV and JSON emission.
//!
//! CSVs carry a header row and quote per RFC 4180. JSON reports are pretty
//! printed with keys in sorted order. Neither contains timestamps, so a given
//! config and seed always produce the same bytes.

use std::io::Write;

use serde::Serialize;

use crate::radio::Window;

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Pretty JSON with sorted keys.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // `serde_json::Value` keeps object keys in a sorted map.
    let value = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

/// One row per slot: slot index, PU state bitmask, occupancy and statistics.
pub fn write_window_csv<W: Write>(window: &Window, out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    let n = window.records.first().map_or(0, |r| r.x.len());
    let mut header = vec!["slot".to_string(), "u".to_string()];
    header.extend((0..n).map(|j| format!("x{j}")));
    header.extend((0..n).map(|j| format!("gamma{j}")));
    writer.write_record(&header)?;
    for (t, r) in window.records.iter().enumerate() {
        let mut record = vec![t.to_string(), r.u.to_string()];
        record.extend(r.x.iter().map(|&x| u8::from(x).to_string()));
        record.extend(r.gamma.iter().map(f64::to_string));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
