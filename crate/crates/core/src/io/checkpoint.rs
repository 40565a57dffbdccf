//! Hyper-parameter checkpoints.
//!
//! ```text
//! SBNNCKPT 1
//! variant SBNN-IL
//! dims 64 40 40 40 1
//! centroid_bounds -4.0 4.0 -4.0 4.0     (SBNN only)
//! centroid_dims 8 8                      (SBNN only)
//! tau 1.0                                (SBNN only)
//! count 16
//! seed 7
//! outer_step 800
//! mean_field 0
//! end
//! <count little-endian f64: per layer w_loc, w_scale, b_loc, b_scale>
//! <grid-length f64 mean field when mean_field is 1>
//! ```
//!
//! With a mean field the header also carries `field_bounds` and `field_dims`
//! for the grid it lives on.

use std::path::Path;

use ndarray::Array1;

use super::header::{self, HeaderWriter};
use super::{f64_at, push_f64s};
use crate::math::Grid;
use crate::model::{count_parameters, Architecture, Embedding, HyperParams, Variant};
use crate::{Error, Result};

const MAGIC: &str = "SBNNCKPT";
const VERSION: u32 = 1;
const CONTEXT: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture<f64>,
    pub psi: HyperParams<f64>,
    /// Field removed from the target before calibration, with its grid.
    pub mean_field: Option<(Grid<f64>, Array1<f64>)>,
    /// Seed of the run that produced the checkpoint.
    pub seed: u64,
    /// Outer steps completed.
    pub outer_step: u64,
}

fn grid_lines(h: &mut HeaderWriter, prefix: &str, grid: &Grid<f64>) {
    h.bounds(&format!("{prefix}_bounds"), grid.bounds());
    h.line(&format!("{prefix}_dims"), grid.dims().iter().map(|d| d.to_string()));
}

fn variant_from_name(name: &str) -> Option<Variant> {
    Variant::ALL.into_iter().find(|v| v.name() == name)
}

impl Checkpoint {
    pub fn new(arch: Architecture<f64>, psi: HyperParams<f64>, seed: u64, outer_step: u64) -> Result<Self> {
        psi.check(&arch)?;
        Ok(Checkpoint {
            arch,
            psi,
            mean_field: None,
            seed,
            outer_step,
        })
    }

    pub fn with_mean_field(mut self, grid: Grid<f64>, mean: Array1<f64>) -> Result<Self> {
        if mean.len() != grid.len() {
            return Err(Error::invalid("mean field length differs from its grid"));
        }
        self.mean_field = Some((grid, mean));
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = HeaderWriter::new(MAGIC, VERSION);
        h.line("variant", [self.arch.variant().name().to_string()]);
        h.line("dims", self.arch.dims().iter().map(|d| d.to_string()));
        if let Some(e) = self.arch.embedding() {
            grid_lines(&mut h, "centroid", e.centroids());
            h.floats("tau", &[e.tau()]);
        }
        h.line("count", [self.psi.len().to_string()]);
        h.line("seed", [self.seed.to_string()]);
        h.line("outer_step", [self.outer_step.to_string()]);
        h.line("mean_field", [u8::from(self.mean_field.is_some()).to_string()]);
        if let Some((g, _)) = &self.mean_field {
            grid_lines(&mut h, "field", g);
        }
        let mut out = h.finish();
        push_f64s(&mut out, self.psi.to_flat());
        if let Some((_, m)) = &self.mean_field {
            push_f64s(&mut out, m.iter().copied());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload) = header::parse(bytes, CONTEXT, MAGIC, VERSION)?;
        h.only(&[
            "variant",
            "dims",
            "centroid_bounds",
            "centroid_dims",
            "tau",
            "count",
            "seed",
            "outer_step",
            "mean_field",
            "field_bounds",
            "field_dims",
        ])?;
        let bad = |msg: String| Error::format(CONTEXT, "header", msg);
        let name = h.text("variant")?;
        let variant = variant_from_name(name).ok_or_else(|| bad(format!("unknown variant `{name}`")))?;
        let dims = h.usizes("dims")?;
        let embedding = if variant.is_spatial() {
            let centroids = Grid::new(&h.bounds("centroid_bounds")?, &h.usizes("centroid_dims")?)
                .map_err(|e| bad(format!("bad centroid grid: {e}")))?;
            let tau = match h.f64s("tau")?.as_slice() {
                [t] => *t,
                _ => return Err(bad("`tau` takes exactly one value".into())),
            };
            Some(Embedding::new(centroids, tau).map_err(|e| bad(e.to_string()))?)
        } else {
            None
        };
        let arch = Architecture::new(variant, dims, embedding).map_err(|e| bad(e.to_string()))?;
        let count = h.usize("count")?;
        let expected = count_parameters(&arch).1;
        if count != expected {
            return Err(bad(format!("{variant} with these widths has {expected} hyper-parameters, header says {count}")));
        }
        let field_grid = if h.flag("mean_field")? {
            Some(
                Grid::new(&h.bounds("field_bounds")?, &h.usizes("field_dims")?)
                    .map_err(|e| bad(format!("bad mean-field grid: {e}")))?,
            )
        } else {
            None
        };
        let n_field = field_grid.as_ref().map_or(0, Grid::len);
        if payload.len() != 8 * (count + n_field) {
            return Err(Error::format(
                CONTEXT,
                "payload",
                format!("expected {} values, found {} bytes", count + n_field, payload.len()),
            ));
        }
        let flat: Vec<f64> = (0..count).map(|i| f64_at(payload, i)).collect();
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(CONTEXT, "payload", format!("non-finite hyper-parameter {i}")));
        }
        let psi = HyperParams::from_flat(&arch, &flat)?;
        let mean_field = field_grid.map(|g| {
            let m = Array1::from_shape_fn(g.len(), |j| f64_at(payload, count + j));
            (g, m)
        });
        Ok(Checkpoint {
            arch,
            psi,
            mean_field,
            seed: h.u64("seed")?,
            outer_step: h.u64("outer_step")?,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    super::atomic_write(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&super::read(path)?)
}
