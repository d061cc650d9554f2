//! On-disk formats: epoch CSVs, cohort manifests, filter/mask/complex artifacts,
//! feature tables, result tables and component traces.
//!
//! Floats are written in Rust's shortest round-trip form so that a value read
//! back is bit-identical to the one written.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast::{EdgeSet, FilterMatrix};
use crate::hodge::{ComponentKind, HodgeComponents};
use crate::signal::{Epoch, Group, ParticipantRecording};
use crate::simplicial::{BoundaryMatrix, CliqueComplex};
use crate::stats::{FeatureTable, StatResult};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub const RESULTS_HEADER: [&str; 8] = [
    "freq_band",
    "time_window_start_s",
    "time_window_end_s",
    "p_value",
    "fdr_p_value",
    "effect_size",
    "component",
    "rank_sum_statistic",
];

pub const FEATURES_HEADER: [&str; 8] = [
    "band",
    "window_index",
    "window_start_s",
    "window_end_s",
    "component",
    "participant_id",
    "group",
    "value",
];

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(path, format!("bad number {s:?}: {e}")))
}

fn parse_usize(path: &Path, s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|e| Error::parse(path, format!("bad integer {s:?}: {e}")))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new())
}

fn finish_csv(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = csv_writer();
    for row in m.rows() {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))
            .map_err(|e| csv_err(path, e))?;
    }
    finish_csv(path, w)
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(rec.iter().map(|s| parse_f64(path, s)).collect::<Result<_>>()?);
    }
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::parse(path, "rows have different lengths"));
    }
    let n_rows = rows.len();
    Array2::from_shape_vec((n_rows, n_cols), rows.into_iter().flatten().collect())
        .map_err(|e| Error::parse(path, e.to_string()))
}

/// One epoch: rows are channels, columns are samples, no header.
pub fn write_epoch_csv(path: &Path, epoch: &Epoch) -> Result<()> {
    write_matrix(path, epoch.data())
}

pub fn read_epoch_csv(path: &Path, sample_rate_hz: f64) -> Result<Epoch> {
    let data = read_matrix(path)?;
    Epoch::new(data, sample_rate_hz).map_err(|e| Error::parse(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub participant_id: String,
    pub group: Group,
    pub sample_rate_hz: f64,
    /// Epoch CSV paths, relative to the manifest's directory unless absolute.
    pub epochs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub schema_version: u32,
    pub participants: Vec<ManifestEntry>,
}

/// Writes `manifest.json` and `epochs/<participant>_<k>.csv` under `dir`.
pub fn write_cohort(dir: &Path, recordings: &[ParticipantRecording]) -> Result<PathBuf> {
    let mut participants = Vec::new();
    for r in recordings {
        let mut epochs = Vec::new();
        for (k, e) in r.epochs.iter().enumerate() {
            let rel = PathBuf::from("epochs").join(format!("{}_{k:03}.csv", r.participant_id));
            write_epoch_csv(&dir.join(&rel), e)?;
            epochs.push(rel);
        }
        participants.push(ManifestEntry {
            participant_id: r.participant_id.clone(),
            group: r.group,
            sample_rate_hz: r.sample_rate_hz(),
            epochs,
        });
    }
    let path = dir.join("manifest.json");
    write_json(
        &path,
        &CohortManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            participants,
        },
    )?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<CohortManifest> {
    let manifest: CohortManifest = read_json(path)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::parse(
            path,
            format!(
                "unsupported manifest schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            ),
        ));
    }
    Ok(manifest)
}

/// Loads every participant listed in the manifest.
pub fn read_cohort(manifest_path: &Path) -> Result<Vec<ParticipantRecording>> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .participants
        .iter()
        .map(|entry| {
            let epochs = entry
                .epochs
                .iter()
                .map(|p| read_epoch_csv(&base.join(p), entry.sample_rate_hz))
                .collect::<Result<Vec<_>>>()?;
            ParticipantRecording::new(entry.participant_id.clone(), entry.group, epochs)
        })
        .collect()
}

pub fn write_filter_csv(path: &Path, filter: &FilterMatrix) -> Result<()> {
    write_matrix(path, filter.values())
}

pub fn read_filter_csv(path: &Path) -> Result<FilterMatrix> {
    FilterMatrix::new(read_matrix(path)?).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_mask_json(path: &Path, mask: &EdgeSet) -> Result<()> {
    write_json(path, mask)
}

pub fn read_mask_json(path: &Path) -> Result<EdgeSet> {
    read_json(path)
}

pub fn write_complex_json(path: &Path, complex: &CliqueComplex) -> Result<()> {
    write_json(path, complex)
}

/// `row,col,sign` coordinate triplets, column-major.
pub fn write_boundary_csv(path: &Path, b: &BoundaryMatrix) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["row", "col", "sign"]).map_err(|e| csv_err(path, e))?;
    for (r, c, s) in b.triplets() {
        w.write_record([r.to_string(), c.to_string(), s.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    finish_csv(path, w)
}

fn feature_rows(t: &FeatureTable) -> Vec<[String; 8]> {
    let mut rows = Vec::new();
    for (b, band) in t.bands().iter().enumerate() {
        for (w, &(start, end)) in t.windows().iter().enumerate() {
            for c in ComponentKind::ALL {
                for (p, (id, group)) in t.participants().iter().enumerate() {
                    rows.push([
                        band.clone(),
                        w.to_string(),
                        fmt_f64(start),
                        fmt_f64(end),
                        c.as_str().to_string(),
                        id.clone(),
                        group.as_str().to_string(),
                        fmt_f64(t.get(b, w, c, p)),
                    ]);
                }
            }
        }
    }
    rows
}

pub fn write_features_csv(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(FEATURES_HEADER).map_err(|e| csv_err(path, e))?;
    for row in feature_rows(table) {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish_csv(path, w)
}

/// Reads a feature table; bands and participants keep first-appearance order.
pub fn read_features_csv(path: &Path) -> Result<FeatureTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(FEATURES_HEADER) {
        return Err(Error::parse(path, format!("expected header {}", FEATURES_HEADER.join(","))));
    }
    struct Row {
        band: usize,
        window: usize,
        component: ComponentKind,
        participant: usize,
        value: f64,
    }
    let mut bands: Vec<String> = Vec::new();
    let mut windows: HashMap<usize, (f64, f64)> = HashMap::new();
    let mut participants: Vec<(String, Group)> = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let at = |m: String| Error::parse(path, format!("row {}: {m}", line + 2));
        let band = match bands.iter().position(|b| b == &rec[0]) {
            Some(i) => i,
            None => {
                bands.push(rec[0].to_string());
                bands.len() - 1
            }
        };
        let window = parse_usize(path, &rec[1])?;
        let bounds = (parse_f64(path, &rec[2])?, parse_f64(path, &rec[3])?);
        if *windows.entry(window).or_insert(bounds) != bounds {
            return Err(at(format!("window {window} has inconsistent bounds")));
        }
        let component = ComponentKind::parse(&rec[4]).ok_or_else(|| at(format!("unknown component {:?}", &rec[4])))?;
        let group = Group::parse(&rec[6]).ok_or_else(|| at(format!("unknown group {:?}", &rec[6])))?;
        let participant = match participants.iter().position(|p| p.0 == rec[5]) {
            Some(i) if participants[i].1 != group => {
                return Err(at(format!("participant {} changes group", &rec[5])))
            }
            Some(i) => i,
            None => {
                participants.push((rec[5].to_string(), group));
                participants.len() - 1
            }
        };
        rows.push(Row {
            band,
            window,
            component,
            participant,
            value: parse_f64(path, &rec[7])?,
        });
    }
    let n_windows = windows.len();
    let window_list = (0..n_windows)
        .map(|w| {
            windows
                .get(&w)
                .copied()
                .ok_or_else(|| Error::parse(path, format!("window indices are not contiguous (missing {w})")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = FeatureTable::new(bands, window_list, participants);
    for row in rows {
        table.set(row.band, row.window, row.component, row.participant, row.value);
    }
    table.validate().map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(table)
}

pub fn results_csv_string(results: &[StatResult]) -> Result<String> {
    let mut w = csv_writer();
    let path = Path::new("<results>");
    w.write_record(RESULTS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in results {
        w.write_record([
            r.band.clone(),
            fmt_f64(r.window_start_s),
            fmt_f64(r.window_end_s),
            fmt_f64(r.p_value),
            fmt_f64(r.fdr_p_value),
            fmt_f64(r.effect_size),
            r.component.as_str().to_string(),
            fmt_f64(r.rank_sum_statistic),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_results_csv(path: &Path, results: &[StatResult]) -> Result<()> {
    write_text(path, &results_csv_string(results)?)
}

pub fn write_results_json(path: &Path, results: &[StatResult]) -> Result<()> {
    write_json(path, &results)
}

/// Group-mean edge components of one band, one entry per group.
pub struct BandTrace<'a> {
    pub band: &'a str,
    pub edges: &'a [(usize, usize)],
    pub groups: &'a [(Group, Vec<HodgeComponents>)],
}

pub const TRACE_HEADER: [&str; 8] = ["band", "group", "window", "edge_i", "edge_j", "gradient", "curl", "harmonic"];

/// One row per (band, group, window, edge); edges differ between bands so each row names its own.
pub fn write_component_traces(path: &Path, traces: &[BandTrace<'_>]) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
    for t in traces {
        for (group, windows) in t.groups {
            for (k, comp) in windows.iter().enumerate() {
                for (e, &(i, j)) in t.edges.iter().enumerate() {
                    w.write_record([
                        t.band.to_string(),
                        group.as_str().to_string(),
                        k.to_string(),
                        i.to_string(),
                        j.to_string(),
                        fmt_f64(comp.gradient[e]),
                        fmt_f64(comp.curl[e]),
                        fmt_f64(comp.harmonic[e]),
                    ])
                    .map_err(|e| csv_err(path, e))?;
                }
            }
        }
    }
    finish_csv(path, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Group;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn cohort_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = Epoch::new(ndarray::array![[0.1, -2.5, 3.0], [1e-9, 4.25, 7.0]], 128.0).unwrap();
        let recs = vec![
            ParticipantRecording::new("a", Group::Control, vec![e.clone(), e.clone()]).unwrap(),
            ParticipantRecording::new("b", Group::Patient, vec![e]).unwrap(),
        ];
        let manifest = write_cohort(dir.path(), &recs).unwrap();
        assert_eq!(read_cohort(&manifest).unwrap(), recs);
    }

    #[test]
    fn manifest_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_text(&path, r#"{"schema_version": 7, "participants": []}"#).unwrap();
        assert!(read_manifest(&path).is_err());
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let participants = vec![("x".to_string(), Group::Control), ("y".to_string(), Group::Patient)];
        let mut t = FeatureTable::new(vec!["Theta".into()], vec![(0.0, 0.5), (0.5, 1.0)], participants);
        for w in 0..2 {
            for c in ComponentKind::ALL {
                for p in 0..2 {
                    t.set(0, w, c, p, 0.1 * (w + 2 * p) as f64 + c as usize as f64 / 3.0);
                }
            }
        }
        let path = dir.path().join("f.csv");
        write_features_csv(&path, &t).unwrap();
        assert_eq!(read_features_csv(&path).unwrap(), t);
    }

    #[test]
    fn results_header_is_exact() {
        let s = results_csv_string(&[]).unwrap();
        assert_eq!(
            s,
            "freq_band,time_window_start_s,time_window_end_s,p_value,fdr_p_value,effect_size,component,rank_sum_statistic\n"
        );
    }

    #[test]
    fn bad_numbers_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_text(&path, "1,2\n3,abc\n").unwrap();
        let err = read_epoch_csv(&path, 10.0).unwrap_err();
        assert!(err.to_string().contains("e.csv"), "{err}");
    }
}
