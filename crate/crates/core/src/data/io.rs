use std::path::Path;

use super::{AlignedDataset, Timestamp};
use crate::error::{Error, Result};
use crate::numerics::{Mask, Matrix};

/// Regularly sampled primary modality.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub timestamps: Vec<Timestamp>,
    pub values: Matrix,
    pub mask: Mask,
    pub names: Vec<String>,
}

/// Irregular events with feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSeries {
    pub timestamps: Vec<Timestamp>,
    pub values: Matrix,
    pub mask: Mask,
    pub names: Vec<String>,
}

struct Table {
    timestamps: Vec<Timestamp>,
    values: Matrix,
    mask: Mask,
    names: Vec<String>,
}

fn read_table(path: &Path, strict_order: bool) -> Result<Table> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.get(0).map(str::trim) != Some("timestamp") {
        return Err(Error::Data(format!(
            "{}: header must start with `timestamp`",
            path.display()
        )));
    }
    let names: Vec<String> = headers
        .iter()
        .skip(1)
        .map(|h| h.trim().to_string())
        .collect();
    let width = names.len();

    let mut timestamps: Vec<Timestamp> = Vec::new();
    let mut data = Vec::new();
    let mut observed = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_ts = record.get(0).unwrap_or("");
        let ts = Timestamp::parse(raw_ts).ok_or_else(|| Error::Parse {
            line,
            column: 1,
            message: format!("`{raw_ts}` is neither an integer index nor an ISO-8601 date"),
        })?;
        if let Some(prev) = timestamps.last() {
            if !prev.same_kind(&ts) {
                return Err(Error::Data(format!(
                    "line {line}: timestamp kinds are mixed"
                )));
            }
            if strict_order && ts <= *prev {
                let what = if ts == *prev { "duplicate" } else { "unsorted" };
                return Err(Error::Data(format!("line {line}: {what} timestamp {ts}")));
            }
            if !strict_order && ts < *prev {
                return Err(Error::Data(format!("line {line}: unsorted timestamp {ts}")));
            }
        }
        for j in 0..width {
            let cell = record.get(j + 1).unwrap_or("").trim();
            if cell.is_empty() {
                data.push(0.0);
                observed.push(false);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: j + 2,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: j + 2,
                    message: format!("`{cell}` is not finite"),
                });
            }
            data.push(v);
            observed.push(true);
        }
        timestamps.push(ts);
    }
    let rows = timestamps.len();
    Ok(Table {
        timestamps,
        values: Matrix::from_vec(rows, width, data)?,
        mask: Mask::from_vec(rows, width, observed),
        names,
    })
}

/// Reads `timestamp,<name>...`; empty cells are missing entries.
pub fn load_series_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let t = read_table(path.as_ref(), true)?;
    Ok(RawSeries {
        timestamps: t.timestamps,
        values: t.values,
        mask: t.mask,
        names: t.names,
    })
}

/// Reads `timestamp,f0..f{d-1}`; timestamps must be sorted but may repeat.
pub fn load_events_csv(path: impl AsRef<Path>) -> Result<EventSeries> {
    let t = read_table(path.as_ref(), false)?;
    Ok(EventSeries {
        timestamps: t.timestamps,
        values: t.values,
        mask: t.mask,
        names: t.names,
    })
}

/// Snaps each event to the latest grid point at or before it. Grid points
/// without events are missing rows of y; several events on one grid point are
/// averaged feature-wise over their observed entries. Events outside the grid
/// range are dropped.
pub fn align_events(grid: &RawSeries, events: &EventSeries) -> Result<AlignedDataset> {
    let t_len = grid.timestamps.len();
    let d_y = events.names.len();
    let mut sums = Matrix::zeros(t_len, d_y);
    let mut counts = vec![0usize; t_len * d_y];
    let mut used = 0;

    if let (Some(first), Some(last)) = (grid.timestamps.first(), grid.timestamps.last()) {
        for (e, ts) in events.timestamps.iter().enumerate() {
            if !ts.same_kind(first) {
                return Err(Error::Data(
                    "grid and event timestamps have different kinds".into(),
                ));
            }
            if ts < first || ts > last {
                continue;
            }
            let row = grid.timestamps.partition_point(|g| g <= ts) - 1;
            used += 1;
            for j in 0..d_y {
                if events.mask.get(e, j) {
                    sums[(row, j)] += events.values[(e, j)];
                    counts[row * d_y + j] += 1;
                }
            }
        }
    }
    if !events.timestamps.is_empty() && used == 0 {
        return Err(Error::Data(
            "events do not overlap the series time range".into(),
        ));
    }

    let y = Matrix::from_fn(t_len, d_y, |i, j| {
        let n = counts[i * d_y + j];
        if n == 0 {
            0.0
        } else {
            sums[(i, j)] / n as f64
        }
    });
    let y_mask = Mask::from_vec(t_len, d_y, counts.iter().map(|&n| n > 0).collect());
    Ok(AlignedDataset {
        timestamps: grid.timestamps.clone(),
        x: grid.values.clone(),
        x_mask: grid.mask.clone(),
        y,
        y_mask,
        x_names: grid.names.clone(),
        y_names: events.names.clone(),
    })
}

fn format_cell(v: f64, observed: bool) -> String {
    if observed {
        format!("{v}")
    } else {
        String::new()
    }
}

fn write_grid(
    path: &Path,
    timestamps: &[Timestamp],
    names: &[String],
    values: &Matrix,
    mask: &Mask,
    skip_empty: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, ts) in timestamps.iter().enumerate() {
        if skip_empty && (0..values.cols()).all(|j| !mask.get(i, j)) {
            continue;
        }
        let mut row = vec![ts.to_string()];
        row.extend((0..values.cols()).map(|j| format_cell(values[(i, j)], mask.get(i, j))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `series.csv` (x on the full grid) and `events.csv` (one event per
/// grid point with at least one observed y entry).
pub fn write_dataset_csv(dir: impl AsRef<Path>, data: &AlignedDataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_grid(
        &dir.join("series.csv"),
        &data.timestamps,
        &data.x_names,
        &data.x,
        &data.x_mask,
        false,
    )?;
    write_grid(
        &dir.join("events.csv"),
        &data.timestamps,
        &data.y_names,
        &data.y,
        &data.y_mask,
        true,
    )
}

/// Reads `series.csv` and `events.csv` from `dir` and aligns them.
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<AlignedDataset> {
    let dir = dir.as_ref();
    let series = load_series_csv(dir.join("series.csv"))?;
    let events = load_events_csv(dir.join("events.csv"))?;
    align_events(&series, &events)
}
