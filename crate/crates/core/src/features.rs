//! Per-record feature matrices: one row per 5-second window.
//!
//! Columns are the 75 physiology features, the 390 scattering features, or
//! both in that order. On disk a matrix is a text header terminated by a
//! `---` line, followed by row-major little-endian `f32` values.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::physio::{extract_physio, PHYSIO_DIM, PHYSIO_FEATURE_NAMES};
use crate::preprocess::{preprocess_record, segment_record, WindowedChannel};
use crate::record_io::{f32_from_le, f32_to_le, PsgRecord};
use crate::scattering::{scattering_features, ScatterConfig, ScatteringNet, SCATTER_CHANNELS};

pub const FEATURE_MAGIC: &str = "somnoscat-features v1";

/// Column-name prefixes of the scattering channels, in [`SCATTER_CHANNELS`] order.
const SCATTER_TAGS: [&str; SCATTER_CHANNELS.len()] = ["eog", "abd", "chest", "air", "sao2", "ecg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSet {
    Physio75,
    Scatter390,
    All465,
}

impl FeatureSet {
    pub fn uses_physio(self) -> bool {
        matches!(self, FeatureSet::Physio75 | FeatureSet::All465)
    }

    pub fn uses_scattering(self) -> bool {
        matches!(self, FeatureSet::Scatter390 | FeatureSet::All465)
    }

    /// Column count for the given scattering knobs (75 / 390 / 465 by default).
    pub fn dim(self, cfg: &ScatterConfig) -> usize {
        let mut d = 0;
        if self.uses_physio() {
            d += PHYSIO_DIM;
        }
        if self.uses_scattering() {
            d += cfg.feature_dim();
        }
        d
    }

    pub fn column_names(self, cfg: &ScatterConfig) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim(cfg));
        if self.uses_physio() {
            names.extend(PHYSIO_FEATURE_NAMES.iter().map(|s| s.to_string()));
        }
        if self.uses_scattering() {
            for tag in SCATTER_TAGS {
                names.extend((0..cfg.target_dim).map(|k| format!("scat_{tag}_{k:02}")));
            }
        }
        names
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSet::Physio75 => "physio75",
            FeatureSet::Scatter390 => "scatter390",
            FeatureSet::All465 => "all465",
        })
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "physio75" => Ok(FeatureSet::Physio75),
            "scatter390" => Ok(FeatureSet::Scatter390),
            "all465" => Ok(FeatureSet::All465),
            other => Err(Error::InvalidParameter(format!(
                "unknown feature set '{other}' (physio75, scatter390, all465)"
            ))),
        }
    }
}

/// Windows x features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    record_id: String,
    columns: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(
        record_id: impl Into<String>,
        columns: Vec<String>,
        rows: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let record_id = record_id.into();
        if record_id.contains('\n') {
            return Err(Error::Header("record id contains a newline".into()));
        }
        if let Some(c) = columns.iter().find(|c| c.is_empty() || c.contains([',', '\n'])) {
            return Err(Error::Header(format!("invalid column name '{c}'")));
        }
        if data.len() != rows * columns.len() {
            return Err(Error::LengthMismatch {
                what: "feature matrix".into(),
                expected: rows * columns.len(),
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                channel: "features".into(),
                index,
            });
        }
        Ok(FeatureMatrix {
            record_id,
            columns,
            rows,
            data,
        })
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.cols();
        &self.data[i * d..(i + 1) * d]
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, idx: &[usize]) -> Result<FeatureMatrix> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.cols()) {
            return Err(Error::Shape(format!(
                "column {bad} out of range for {} columns",
                self.cols()
            )));
        }
        let columns = idx.iter().map(|&i| self.columns[i].clone()).collect();
        let data = (0..self.rows)
            .flat_map(|r| idx.iter().map(move |&i| self.data[r * self.cols() + i]))
            .collect();
        FeatureMatrix::new(self.record_id.clone(), columns, self.rows, data)
    }

    /// Keeps the listed rows, in the listed order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<FeatureMatrix> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.rows) {
            return Err(Error::Shape(format!("row {bad} out of range for {} rows", self.rows)));
        }
        let data = idx.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        FeatureMatrix::new(self.record_id.clone(), self.columns.clone(), idx.len(), data)
    }
}

/// Builds feature matrices for one feature set. Holds the scattering
/// network so it is constructed once.
#[derive(Debug, Clone)]
pub struct Extractor {
    set: FeatureSet,
    scatter_cfg: ScatterConfig,
    net: Option<ScatteringNet>,
}

impl Extractor {
    pub fn new(set: FeatureSet, scatter_cfg: ScatterConfig) -> Result<Self> {
        scatter_cfg.validate()?;
        let net = set.uses_scattering().then(ScatteringNet::standard);
        Ok(Extractor {
            set,
            scatter_cfg,
            net,
        })
    }

    pub fn set(&self) -> FeatureSet {
        self.set
    }

    pub fn dim(&self) -> usize {
        self.set.dim(&self.scatter_cfg)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.set.column_names(&self.scatter_cfg)
    }

    fn window_row(&self, windows: &[WindowedChannel], m: usize) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.dim());
        if self.set.uses_physio() {
            row.extend(extract_physio(windows, m)?.values);
        }
        if let Some(net) = &self.net {
            row.extend(scattering_features(windows, m, net, &self.scatter_cfg)?);
        }
        // Rounded to the storage precision so in-memory and reloaded matrices agree.
        Ok(row.into_iter().map(|v| v as f32 as f64).collect())
    }

    /// Preprocesses, windows and featurizes a raw record.
    pub fn extract(&self, record: &PsgRecord) -> Result<FeatureMatrix> {
        let clean = preprocess_record(record)?;
        let windows = segment_record(&clean)?;
        self.extract_windows(record.id(), &windows)
    }

    pub fn extract_windows(&self, id: &str, windows: &[WindowedChannel]) -> Result<FeatureMatrix> {
        let count = windows.first().map_or(0, |w| w.len());
        #[cfg(feature = "parallel")]
        let rows: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|m| self.window_row(windows, m))
            .collect::<Result<_>>()?;
        #[cfg(not(feature = "parallel"))]
        let rows: Vec<Vec<f64>> = (0..count)
            .map(|m| self.window_row(windows, m))
            .collect::<Result<_>>()?;
        FeatureMatrix::new(id, self.column_names(), count, rows.concat())
    }
}

pub fn store_features(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!(
        "{FEATURE_MAGIC}\nrecord={}\nrows={}\ncols={}\ncolumns={}\n---\n",
        matrix.record_id,
        matrix.rows,
        matrix.cols(),
        matrix.columns.join(",")
    )
    .into_bytes();
    let values: Vec<f32> = matrix.data.iter().map(|&v| v as f32).collect();
    bytes.extend(f32_to_le(values));
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"\n---\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Header("feature file has no '---' terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Header("feature header is not UTF-8".into()))?;
    let payload = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(FEATURE_MAGIC) {
        return Err(Error::Header(format!("missing '{FEATURE_MAGIC}' line")));
    }
    let (mut id, mut rows, mut cols, mut columns) = (None, None, None, None);
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("malformed line '{line}'")))?;
        let num = || {
            v.parse::<usize>()
                .map_err(|_| Error::Header(format!("bad {k} '{v}'")))
        };
        match k {
            "record" => id = Some(v.to_string()),
            "rows" => rows = Some(num()?),
            "cols" => cols = Some(num()?),
            "columns" => {
                columns = Some(if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(str::to_string).collect::<Vec<_>>()
                })
            }
            other => return Err(Error::Header(format!("unknown key '{other}'"))),
        }
    }
    let missing = |k: &str| Error::Header(format!("missing '{k}'"));
    let id = id.ok_or_else(|| missing("record"))?;
    let rows = rows.ok_or_else(|| missing("rows"))?;
    let cols = cols.ok_or_else(|| missing("cols"))?;
    let columns = columns.ok_or_else(|| missing("columns"))?;
    if columns.len() != cols {
        return Err(Error::LengthMismatch {
            what: "column names".into(),
            expected: cols,
            got: columns.len(),
        });
    }
    if payload.len() != rows * cols * 4 {
        return Err(Error::LengthMismatch {
            what: "feature payload bytes".into(),
            expected: rows * cols * 4,
            got: payload.len(),
        });
    }
    let data = f32_from_le(payload, "feature payload")?
        .into_iter().map(f64::from).collect();
    FeatureMatrix::new(id, columns, rows, data)
}
