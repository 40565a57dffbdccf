use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;

use super::hyper::{HyperParams, ParamDraw, Weights};
use super::{Architecture, Variant};
use crate::autodiff::{Tape, Var};
use crate::math::{softplus, SeededRng, StreamCounter};
use crate::{Error, Result, Scalar};

/// Locations for spatially varying variants are processed in blocks of this
/// many rows, bounding the per-location weight storage.
const LOCATION_BLOCK: usize = 512;

/// Network inputs for a fixed set of locations.
#[derive(Debug, Clone)]
pub struct Inputs<T> {
    /// First-layer input, `n x d_0`.
    pub phi0: Array2<T>,
    /// Raw RBF evaluations `n x K` for spatially varying variants.
    pub basis: Option<Array2<T>>,
}

impl<T: Scalar> Inputs<T> {
    /// `sites` is `n x d`, one location per row.
    pub fn new(arch: &Architecture<T>, sites: &Array2<T>) -> Result<Self> {
        match arch.embedding() {
            None => {
                if sites.ncols() != arch.dims()[0] {
                    return Err(Error::invalid(format!(
                        "locations have {} coordinates, the network expects {}",
                        sites.ncols(),
                        arch.dims()[0]
                    )));
                }
                Ok(Inputs {
                    phi0: sites.clone(),
                    basis: None,
                })
            }
            Some(e) => {
                if sites.ncols() != e.centroids().dim() {
                    return Err(Error::invalid("location dimension differs from the centroid grid"));
                }
                let rho = e.embed_sites(sites);
                let phi0 = rho.mapv(|v| v.tanh());
                let basis = arch.variant().is_varying().then_some(rho);
                Ok(Inputs { phi0, basis })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.phi0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, start: usize, end: usize) -> Inputs<T> {
        Inputs {
            phi0: self.phi0.slice(s![start..end, ..]).to_owned(),
            basis: self.basis.as_ref().map(|b| b.slice(s![start..end, ..]).to_owned()),
        }
    }
}

fn inv_sqrt<T: Scalar>(d: usize) -> T {
    T::one() / T::of_usize(d).sqrt()
}

/// Network output at every input location.
pub fn forward<T: Scalar>(
    inputs: &Inputs<T>,
    draw: &ParamDraw<T>,
    psi: &HyperParams<T>,
    arch: &Architecture<T>,
) -> Result<Array1<T>> {
    draw.check(arch)?;
    if inputs.phi0.ncols() != arch.dims()[0] {
        return Err(Error::invalid("inputs do not match the first layer width"));
    }
    match draw {
        ParamDraw::Invariant(w) => Ok(forward_invariant(&inputs.phi0, w)),
        ParamDraw::Varying(eta) => {
            psi.check(arch)?;
            if inputs.basis.is_none() {
                return Err(Error::invalid("spatially varying variants need basis evaluations"));
            }
            let n = inputs.len();
            let mut out = Array1::zeros(n);
            let mut start = 0;
            while start < n {
                let end = (start + LOCATION_BLOCK).min(n);
                let block = inputs.rows(start, end);
                let v = forward_varying(&block, eta, psi, arch);
                out.slice_mut(s![start..end]).assign(&v);
                start = end;
            }
            Ok(out)
        }
    }
}

pub(crate) fn forward_invariant<T: Scalar>(phi0: &Array2<T>, w: &Weights<T>) -> Array1<T> {
    let last = w.layers.len() - 1;
    let mut h = phi0.clone();
    for (l, (wl, bl)) in w.layers.iter().enumerate() {
        let mut z = h.dot(&wl.t()) * inv_sqrt::<T>(h.ncols());
        z += &bl.row(0);
        if l < last {
            z.mapv_inplace(|v| v.tanh());
        }
        h = z;
    }
    h.column(0).to_owned()
}

fn forward_varying<T: Scalar>(
    inputs: &Inputs<T>,
    eta: &Weights<T>,
    psi: &HyperParams<T>,
    arch: &Architecture<T>,
) -> Array1<T> {
    let r = inputs.basis.as_ref().expect("checked by caller");
    let n = inputs.len();
    let last = arch.layers() - 1;
    let mut h = inputs.phi0.clone();
    for (l, (hp, (ew, eb))) in psi.layers().iter().zip(&eta.layers).enumerate() {
        let o = ew.nrows();
        let c = inv_sqrt::<T>(h.ncols());
        let mw = r.dot(&hp.w_loc);
        let sw = r.dot(&hp.w_scale).mapv(softplus);
        let mb = r.dot(&hp.b_loc);
        let sb = r.dot(&hp.b_scale).mapv(softplus);
        let mut z = match arch.variant() {
            Variant::SbnnVl => {
                let hs = h.sum_axis(Axis(1)).insert_axis(Axis(1));
                let a = (&mw * &hs).broadcast((n, o)).unwrap().to_owned();
                let b = sw.broadcast((n, o)).unwrap().to_owned() * h.dot(&ew.t());
                let bias = mb.broadcast((n, o)).unwrap().to_owned()
                    + sb.broadcast((n, o)).unwrap().to_owned() * eb.broadcast((n, o)).unwrap();
                (a + b) * c + bias
            }
            _ => {
                let flat = ew.view().into_shape_with_order((1, ew.len())).unwrap();
                let wmat = &mw + &(&sw * &flat);
                crate::autodiff::rowwise_matvec(&wmat, &h) * c + (&mb + &(&sb * eb))
            }
        };
        if l < last {
            z.mapv_inplace(|v| v.tanh());
        }
        h = z;
    }
    h.column(0).to_owned()
}

/// `count` prior fields (one per row), draw `i` from its own stream.
pub fn sample_field<T: Scalar>(
    psi: &HyperParams<T>,
    arch: &Architecture<T>,
    inputs: &Inputs<T>,
    count: usize,
    streams: &mut StreamCounter,
) -> Result<Array2<T>> {
    psi.check(arch)?;
    let first = streams.reserve(count as u64);
    let seed = streams.seed();
    let rows: Vec<Array1<T>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::new(seed, first + i as u64);
            let draw = ParamDraw::sample(psi, arch, &mut rng)?;
            forward(inputs, &draw, psi, arch)
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((count, inputs.len()));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// Per-layer nodes shared by every draw in a taped batch.
enum Shared<'t, T: Scalar> {
    Invariant {
        w_loc: Var<'t, T>,
        w_sig: Var<'t, T>,
        b_loc: Var<'t, T>,
        b_sig: Var<'t, T>,
    },
    Varying {
        mw: Var<'t, T>,
        sw: Var<'t, T>,
        mb: Var<'t, T>,
        sb: Var<'t, T>,
    },
}

fn shared_nodes<'t, T: Scalar>(
    tape: &'t Tape<T>,
    arch: &Architecture<T>,
    psi: &[Var<'t, T>],
    inputs: &Inputs<T>,
) -> Result<Vec<Shared<'t, T>>> {
    if psi.len() != 4 * arch.layers() {
        return Err(Error::invalid("expected four hyper-parameter blocks per layer"));
    }
    let basis = if arch.variant().is_varying() {
        Some(tape.constant(
            inputs
                .basis
                .clone()
                .ok_or_else(|| Error::invalid("spatially varying variants need basis evaluations"))?,
        ))
    } else {
        None
    };
    Ok(psi
        .chunks(4)
        .map(|b| match basis {
            None => Shared::Invariant {
                w_loc: b[0],
                w_sig: b[1].softplus(),
                b_loc: b[2],
                b_sig: b[3].softplus(),
            },
            Some(r) => Shared::Varying {
                mw: r.matmul(b[0]),
                sw: r.matmul(b[1]).softplus(),
                mb: r.matmul(b[2]),
                sb: r.matmul(b[3]).softplus(),
            },
        })
        .collect())
}

fn reparam<'t, T: Scalar>(loc: Var<'t, T>, sig: Var<'t, T>, eta: Var<'t, T>) -> Var<'t, T> {
    let (r, c) = eta.shape();
    if loc.shape() == (1, 1) {
        loc.broadcast_scalar(r, c) + sig.broadcast_scalar(r, c) * eta
    } else {
        loc + sig * eta
    }
}

fn draw_taped<'t, T: Scalar>(
    tape: &'t Tape<T>,
    arch: &Architecture<T>,
    shared: &[Shared<'t, T>],
    phi0: Var<'t, T>,
    eta: &Weights<T>,
) -> Var<'t, T> {
    let n = phi0.shape().0;
    let last = arch.layers() - 1;
    let mut h = phi0;
    for (l, (sh, (ew, eb))) in shared.iter().zip(&eta.layers).enumerate() {
        let o = ew.nrows();
        let c = inv_sqrt::<T>(h.shape().1);
        let z = match *sh {
            Shared::Invariant {
                w_loc,
                w_sig,
                b_loc,
                b_sig,
            } => {
                let w = reparam(w_loc, w_sig, tape.constant(ew.clone()));
                let b = reparam(b_loc, b_sig, tape.constant(eb.clone()));
                h.matmul_t(w).scale(c).add_row(b)
            }
            Shared::Varying { mw, sw, mb, sb } => {
                let eb_rows = tape.constant(eb.broadcast((n, o)).unwrap().to_owned());
                if arch.variant() == Variant::SbnnVl {
                    let a = (mw * h.sum_cols()).broadcast_cols(o);
                    let b = sw.broadcast_cols(o) * h.matmul_t(tape.constant(ew.clone()));
                    (a + b).scale(c) + (mb.broadcast_cols(o) + sb.broadcast_cols(o) * eb_rows)
                } else {
                    let flat = ew.view().into_shape_with_order((1, ew.len())).unwrap();
                    let ew_rows = tape.constant(flat.broadcast((n, ew.len())).unwrap().to_owned());
                    let w = mw + sw * ew_rows;
                    w.rowwise_matvec(h).scale(c) + (mb + sb * eb_rows)
                }
            }
        };
        h = if l < last { z.tanh() } else { z };
    }
    h
}

/// Taped output (`n x 1`) for one set of standard-normal draws, with
/// gradients flowing to the hyper-parameter leaves `psi` (storage order).
pub fn forward_taped<'t, T: Scalar>(
    tape: &'t Tape<T>,
    arch: &Architecture<T>,
    psi: &[Var<'t, T>],
    inputs: &Inputs<T>,
    eta: &Weights<T>,
) -> Result<Var<'t, T>> {
    let shared = shared_nodes(tape, arch, psi, inputs)?;
    let phi0 = tape.constant(inputs.phi0.clone());
    Ok(draw_taped(tape, arch, &shared, phi0, eta))
}

/// Taped batch of fields (`N x n`, one row per entry of `noise`).
pub fn sample_fields_taped<'t, T: Scalar>(
    tape: &'t Tape<T>,
    arch: &Architecture<T>,
    psi: &[Var<'t, T>],
    inputs: &Inputs<T>,
    noise: &[Weights<T>],
) -> Result<Var<'t, T>> {
    if noise.is_empty() {
        return Err(Error::invalid("need at least one draw"));
    }
    let shared = shared_nodes(tape, arch, psi, inputs)?;
    let phi0 = tape.constant(inputs.phi0.clone());
    let rows: Vec<Var<'t, T>> = noise
        .iter()
        .map(|eta| draw_taped(tape, arch, &shared, phi0, eta).t())
        .collect();
    Ok(tape.concat_rows(&rows))
}

/// Taped forward pass of an invariant network whose weights are tape
/// variables; returns `n x 1`.
pub(crate) fn forward_weights_taped<'t, T: Scalar>(
    phi0: Var<'t, T>,
    layers: &[(Var<'t, T>, Var<'t, T>)],
) -> Var<'t, T> {
    let last = layers.len() - 1;
    let mut h = phi0;
    for (l, &(w, b)) in layers.iter().enumerate() {
        let z = h.matmul_t(w).scale(inv_sqrt::<T>(h.shape().1)).add_row(b);
        h = if l < last { z.tanh() } else { z };
    }
    h
}
