use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

pub const QUALITY_GOOD: u8 = 0;
pub const QUALITY_BAD: u8 = 1;

pub const META_SOURCE: &str = "source";
pub const META_INTERVAL: &str = "sampling_interval_s";

/// `n x m` matrix of timestamped (value, quality) pairs.
///
/// Missing values are stored as NaN. Timestamps are strictly increasing and
/// every spacing is a whole multiple of the base sampling interval; a
/// spacing larger than one interval marks a gap left by row removal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    timestamps: Vec<DateTime<Utc>>,
    features: Vec<String>,
    values: Array2<f64>,
    quality: Array2<u8>,
    interval: Duration,
    pub metadata: BTreeMap<String, String>,
}

impl TimeSeriesDataset {
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        features: Vec<String>,
        values: Array2<f64>,
        quality: Array2<u8>,
        interval: Duration,
    ) -> Result<Self> {
        let ds = TimeSeriesDataset {
            timestamps,
            features,
            values,
            quality,
            interval,
            metadata: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Regular grid starting at `start`.
    pub fn from_grid(
        start: DateTime<Utc>,
        interval: Duration,
        features: Vec<String>,
        values: Array2<f64>,
        quality: Array2<u8>,
    ) -> Result<Self> {
        let timestamps = (0..values.nrows())
            .map(|i| start + interval * i as i32)
            .collect();
        Self::new(timestamps, features, values, quality, interval)
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = self.values.dim();
        if self.quality.dim() != (n, m) {
            return Err(Error::Dataset(format!(
                "quality matrix is {:?}, values are {:?}",
                self.quality.dim(),
                (n, m)
            )));
        }
        if self.features.len() != m {
            return Err(Error::Dataset(format!(
                "{} feature names for {m} columns",
                self.features.len()
            )));
        }
        if self.timestamps.len() != n {
            return Err(Error::Dataset(format!(
                "{} timestamps for {n} rows",
                self.timestamps.len()
            )));
        }
        if self.interval <= Duration::zero() {
            return Err(Error::Dataset("sampling interval must be positive".into()));
        }
        if let Some(q) = self.quality.iter().find(|q| **q > QUALITY_BAD) {
            return Err(Error::Dataset(format!("quality flag {q} is not 0 or 1")));
        }
        let step = self.interval.num_milliseconds();
        for (i, w) in self.timestamps.windows(2).enumerate() {
            let d = (w[1] - w[0]).num_milliseconds();
            if d <= 0 {
                return Err(Error::Dataset(format!(
                    "timestamps not strictly increasing at row {}",
                    i + 1
                )));
            }
            if d % step != 0 {
                return Err(Error::Dataset(format!(
                    "irregular spacing at row {}: {} ms is not a multiple of the {} ms interval",
                    i + 1,
                    d,
                    step
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    pub fn require_feature(&self, name: &str) -> Result<usize> {
        self.feature_index(name)
            .ok_or_else(|| Error::Dataset(format!("no feature named `{name}`")))
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn quality(&self) -> &Array2<u8> {
        &self.quality
    }

    pub fn quality_mut(&mut self) -> &mut Array2<u8> {
        &mut self.quality
    }

    pub fn column(&self, name: &str) -> Result<ndarray::ArrayView1<'_, f64>> {
        let j = self.require_feature(name)?;
        Ok(self.values.column(j))
    }

    /// Maximal runs of rows whose consecutive spacing equals one interval.
    pub fn contiguous_segments(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let mut start = 0;
        for i in 1..self.len() {
            if self.timestamps[i] - self.timestamps[i - 1] != self.interval {
                out.push(start..i);
                start = i;
            }
        }
        out.push(start..self.len());
        out
    }

    /// Rows `range` as a new dataset (metadata preserved).
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> TimeSeriesDataset {
        TimeSeriesDataset {
            timestamps: self.timestamps[range.clone()].to_vec(),
            features: self.features.clone(),
            values: self.values.slice(s![range.clone(), ..]).to_owned(),
            quality: self.quality.slice(s![range, ..]).to_owned(),
            interval: self.interval,
            metadata: self.metadata.clone(),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<TimeSeriesDataset> {
        let idx = names
            .iter()
            .map(|n| self.require_feature(n))
            .collect::<Result<Vec<_>>>()?;
        let values = self.values.select(ndarray::Axis(1), &idx);
        let quality = self.quality.select(ndarray::Axis(1), &idx);
        Ok(TimeSeriesDataset {
            timestamps: self.timestamps.clone(),
            features: names.to_vec(),
            values,
            quality,
            interval: self.interval,
            metadata: self.metadata.clone(),
        })
    }

    /// Appends a fully good-quality column.
    pub fn push_feature(&mut self, name: impl Into<String>, column: &[f64]) -> Result<()> {
        let name = name.into();
        if column.len() != self.len() {
            return Err(Error::shape(format!(
                "column `{name}` has {} rows, dataset has {}",
                column.len(),
                self.len()
            )));
        }
        if self.feature_index(&name).is_some() {
            return Err(Error::Dataset(format!("feature `{name}` already exists")));
        }
        let col = ArrayView2::from_shape((self.len(), 1), column).expect("column shape");
        self.values = ndarray::concatenate![ndarray::Axis(1), self.values, col];
        self.quality = ndarray::concatenate![
            ndarray::Axis(1),
            self.quality,
            Array2::<u8>::zeros((self.len(), 1))
        ];
        self.features.push(name);
        Ok(())
    }

    pub fn remove_rows(&mut self, keep: &[bool]) {
        let idx: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(i, k)| k.then_some(i))
            .collect();
        self.values = self.values.select(ndarray::Axis(0), &idx);
        self.quality = self.quality.select(ndarray::Axis(0), &idx);
        self.timestamps = idx.iter().map(|&i| self.timestamps[i]).collect();
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "timestamp")?;
        for f in &self.features {
            write!(w, ",{f},{f}_q")?;
        }
        writeln!(w)?;
        for (i, ts) in self.timestamps.iter().enumerate() {
            write!(w, "{}", ts.to_rfc3339_opts(SecondsFormat::Secs, true))?;
            for j in 0..self.n_features() {
                let v = self.values[[i, j]];
                if v.is_nan() {
                    write!(w, ",")?;
                } else {
                    write!(w, ",{v}")?;
                }
                write!(w, ",{}", self.quality[[i, j]])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, &path.display().to_string())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes(), "<memory>")
    }

    fn read_from(reader: impl std::io::Read, label: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let header: Vec<String> = header.iter().map(str::to_string).collect();
        let features = parse_header(&header, label)?;
        let m = features.len();
        let mut timestamps = Vec::new();
        let mut values = Vec::new();
        let mut quality = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let row = r + 1;
            let record = record.map_err(|e| Error::Parse {
                path: label.into(),
                row,
                column: "*".into(),
                message: e.to_string(),
            })?;
            let parse_err = |col: &str, message: String| Error::Parse {
                path: label.into(),
                row,
                column: col.to_string(),
                message,
            };
            let ts = DateTime::parse_from_rfc3339(&record[0])
                .map_err(|e| {
                    parse_err("timestamp", format!("bad timestamp `{}`: {e}", &record[0]))
                })?
                .with_timezone(&Utc);
            timestamps.push(ts);
            for (j, f) in features.iter().enumerate() {
                let raw = record[1 + 2 * j].trim();
                let v = if raw.is_empty() {
                    f64::NAN
                } else {
                    raw.parse::<f64>()
                        .map_err(|_| parse_err(f, format!("non-numeric value `{raw}`")))?
                };
                values.push(v);
                let qraw = record[2 + 2 * j].trim();
                let q = match qraw {
                    "0" => QUALITY_GOOD,
                    "1" => QUALITY_BAD,
                    other => {
                        return Err(parse_err(
                            &header[2 + 2 * j],
                            format!("quality flag `{other}` is not 0 or 1"),
                        ))
                    }
                };
                quality.push(q);
            }
        }
        let n = timestamps.len();
        if n < 2 {
            return Err(Error::Dataset(format!(
                "{label}: need at least 2 rows to infer the sampling interval, got {n}"
            )));
        }
        let interval = timestamps
            .windows(2)
            .map(|w| w[1] - w[0])
            .min()
            .expect("n >= 2");
        let values = Array2::from_shape_vec((n, m), values).expect("row-major fill");
        let quality = Array2::from_shape_vec((n, m), quality).expect("row-major fill");
        let mut ds = TimeSeriesDataset::new(timestamps, features, values, quality, interval)?;
        ds.metadata
            .insert(META_INTERVAL.into(), interval.num_seconds().to_string());
        ds.metadata.insert(META_SOURCE.into(), label.into());
        Ok(ds)
    }
}

fn parse_header(header: &[String], label: &str) -> Result<Vec<String>> {
    let bad = |msg: String| Error::Parse {
        path: label.into(),
        row: 0,
        column: "header".into(),
        message: msg,
    };
    if header.first().map(String::as_str) != Some("timestamp") {
        return Err(bad("first column must be `timestamp`".into()));
    }
    if header.len() < 3 || (header.len() - 1) % 2 != 0 {
        return Err(bad(format!(
            "expected timestamp followed by (value, quality) pairs, got {} columns",
            header.len()
        )));
    }
    let mut features = Vec::new();
    for pair in header[1..].chunks(2) {
        let (name, q) = (&pair[0], &pair[1]);
        if *q != format!("{name}_q") {
            return Err(bad(format!("column `{q}` should be `{name}_q`")));
        }
        features.push(name.clone());
    }
    Ok(features)
}
