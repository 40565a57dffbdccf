//! Realisation files: a batch of fields on a common grid.
//!
//! ```text
//! SBNNREAL 1
//! bounds -4.0 4.0 -4.0 4.0
//! dims 64 64
//! count 8
//! log 0
//! mean_field 0
//! end
//! <count records of n little-endian f64, grid order>
//! <one more record when mean_field is 1>
//! ```
//!
//! With `log 1` the natural log is applied to every record on load (the mean
//! field record is left as stored).

use std::path::Path;

use ndarray::{Array1, Array2};

use super::header::{self, HeaderWriter};
use super::{f64_at, push_f64s};
use crate::math::Grid;
use crate::{Error, Result};

const MAGIC: &str = "SBNNREAL";
const VERSION: u32 = 1;
const CONTEXT: &str = "realisation file";

#[derive(Debug, Clone, PartialEq)]
pub struct RealisationFile {
    pub grid: Grid<f64>,
    /// One field per row.
    pub fields: Array2<f64>,
    /// Set when the file asks for a log transform on load.
    pub log: bool,
    pub mean_field: Option<Array1<f64>>,
}

impl RealisationFile {
    pub fn new(grid: Grid<f64>, fields: Array2<f64>) -> Result<Self> {
        if fields.ncols() != grid.len() {
            return Err(Error::invalid(format!(
                "fields have {} values but the grid has {} locations",
                fields.ncols(),
                grid.len()
            )));
        }
        Ok(RealisationFile {
            grid,
            fields,
            log: false,
            mean_field: None,
        })
    }

    pub fn with_mean_field(mut self, mean: Array1<f64>) -> Result<Self> {
        if mean.len() != self.grid.len() {
            return Err(Error::invalid("mean field length differs from the grid"));
        }
        self.mean_field = Some(mean);
        Ok(self)
    }

    /// Serialises the values exactly as held; `log` is written as a flag only.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = HeaderWriter::new(MAGIC, VERSION)
            .bounds("bounds", self.grid.bounds())
            .line("dims", self.grid.dims().iter().map(|d| d.to_string()))
            .line("count", [self.fields.nrows().to_string()])
            .line("log", [u8::from(self.log).to_string()])
            .line("mean_field", [u8::from(self.mean_field.is_some()).to_string()])
            .finish();
        push_f64s(&mut out, self.fields.iter().copied());
        if let Some(m) = &self.mean_field {
            push_f64s(&mut out, m.iter().copied());
        }
        out
    }

    /// Parses a file image. The log flag is applied here, so the returned
    /// fields are on the transformed scale and `log` is cleared.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload) = header::parse(bytes, CONTEXT, MAGIC, VERSION)?;
        h.only(&["bounds", "dims", "count", "log", "mean_field"])?;
        let bounds = h.bounds("bounds")?;
        let dims = h.usizes("dims")?;
        let grid = Grid::new(&bounds, &dims)
            .map_err(|e| Error::format(CONTEXT, "header", format!("bad grid: {e}")))?;
        let count = h.usize("count")?;
        let log = if h.has("log") { h.flag("log")? } else { false };
        let has_mean = if h.has("mean_field") { h.flag("mean_field")? } else { false };

        let n = grid.len();
        let records = count + usize::from(has_mean);
        let record_bytes = 8 * n;
        if payload.len() != records * record_bytes {
            let full = payload.len() / record_bytes;
            let msg = if full >= records {
                format!("{} trailing bytes after the last record", payload.len() - records * record_bytes)
            } else {
                format!(
                    "expected {n} values, found {} ({} records declared)",
                    (payload.len() - full * record_bytes) / 8,
                    records
                )
            };
            let at = if full >= records { format!("record {records}") } else { format!("record {full}") };
            return Err(Error::format(CONTEXT, at, msg));
        }

        let mut fields = Array2::zeros((count, n));
        for r in 0..count {
            for j in 0..n {
                let mut v = f64_at(payload, r * n + j);
                if log {
                    v = v.ln();
                }
                if !v.is_finite() {
                    return Err(Error::format(
                        CONTEXT,
                        format!("record {r}"),
                        format!("non-finite value at location {j}"),
                    ));
                }
                fields[[r, j]] = v;
            }
        }
        let mean_field = if has_mean {
            let m = Array1::from_shape_fn(n, |j| f64_at(payload, count * n + j));
            if let Some(j) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::format(
                    CONTEXT,
                    format!("record {count}"),
                    format!("non-finite mean field value at location {j}"),
                ));
            }
            Some(m)
        } else {
            None
        };
        Ok(RealisationFile {
            grid,
            fields,
            log: false,
            mean_field,
        })
    }
}

pub fn save_realisations(path: &Path, file: &RealisationFile) -> Result<()> {
    super::atomic_write(path, &file.to_bytes())
}

pub fn load_realisations(path: &Path) -> Result<RealisationFile> {
    RealisationFile::from_bytes(&super::read(path)?)
}
