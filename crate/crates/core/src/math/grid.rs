use ndarray::{Array2, ArrayView1};

use crate::{Error, Result, Scalar};

/// Cell centroids of a regular gridding of a rectangular domain.
///
/// Locations are stored as a `d x n` matrix. Ordering is row-major over the
/// axes: the last axis varies fastest, so in 2-D column `i * dims[1] + j`
/// holds the centroid of cell `(i, j)`. Every field vector in the crate is
/// aligned to this ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    bounds: Vec<(T, T)>,
    dims: Vec<usize>,
    locations: Array2<T>,
}

impl<T: Scalar> Grid<T> {
    /// Builds the centroid grid; the centroid of cell `k` on an axis is
    /// `lower + (k + 0.5) * width`.
    pub fn new(bounds: &[(T, T)], dims: &[usize]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != dims.len() {
            return Err(Error::invalid(format!(
                "grid needs one cell count per axis (got {} bounds, {} dims)",
                bounds.len(),
                dims.len()
            )));
        }
        for (axis, (&(lo, hi), &cells)) in bounds.iter().zip(dims).enumerate() {
            if cells == 0 {
                return Err(Error::invalid(format!("axis {axis} has zero cells")));
            }
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "axis {axis} bounds [{lo}, {hi}] are not a finite increasing interval"
                )));
            }
        }
        let d = dims.len();
        let n: usize = dims.iter().product();
        let widths: Vec<T> = bounds
            .iter()
            .zip(dims)
            .map(|(&(lo, hi), &c)| (hi - lo) / T::of_usize(c))
            .collect();
        let half = T::of(0.5);
        let mut locations = Array2::zeros((d, n));
        let mut index = vec![0usize; d];
        for col in 0..n {
            for axis in 0..d {
                locations[[axis, col]] =
                    bounds[axis].0 + (T::of_usize(index[axis]) + half) * widths[axis];
            }
            // odometer increment, last axis fastest
            for axis in (0..d).rev() {
                index[axis] += 1;
                if index[axis] < dims[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        Ok(Grid {
            bounds: bounds.to_vec(),
            dims: dims.to_vec(),
            locations,
        })
    }

    /// Square domain `[lo, hi]^d` with `cells` per axis.
    pub fn square(lo: T, hi: T, cells: usize, d: usize) -> Result<Self> {
        Self::new(&vec![(lo, hi); d], &vec![cells; d])
    }

    pub fn len(&self) -> usize {
        self.locations.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    pub fn locations(&self) -> &Array2<T> {
        &self.locations
    }

    /// Locations as an `n x d` matrix (one row per site).
    pub fn sites(&self) -> Array2<T> {
        self.locations.t().as_standard_layout().into_owned()
    }

    pub fn location(&self, col: usize) -> ArrayView1<'_, T> {
        self.locations.column(col)
    }

    pub fn cell_widths(&self) -> Vec<T> {
        self.bounds
            .iter()
            .zip(&self.dims)
            .map(|(&(lo, hi), &c)| (hi - lo) / T::of_usize(c))
            .collect()
    }

    /// Column of the cell with per-axis indices `index`.
    pub fn column_of(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.dim() {
            return None;
        }
        let mut col = 0;
        for (&i, &c) in index.iter().zip(&self.dims) {
            if i >= c {
                return None;
            }
            col = col * c + i;
        }
        Some(col)
    }

    /// Per-axis indices of column `col`; inverse of [`Grid::column_of`].
    pub fn index_of(&self, mut col: usize) -> Vec<usize> {
        let mut index = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            index[axis] = col % self.dims[axis];
            col /= self.dims[axis];
        }
        index
    }

    pub fn contains(&self, point: &[T]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(&self.bounds)
                .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }

    /// Column of the centroid nearest to `point`, or `None` outside the domain.
    pub fn nearest(&self, point: &[T]) -> Option<usize> {
        if !self.contains(point) {
            return None;
        }
        let widths = self.cell_widths();
        let index: Vec<usize> = point
            .iter()
            .zip(&self.bounds)
            .zip(widths.iter().zip(&self.dims))
            .map(|((&x, &(lo, _)), (&w, &c))| {
                let k = ((x - lo) / w).floor().to_usize().unwrap_or(0);
                k.min(c - 1)
            })
            .collect();
        self.column_of(&index)
    }

    /// Half the length of the domain diagonal.
    pub fn half_diagonal(&self) -> T {
        let sq: T = self
            .bounds
            .iter()
            .map(|&(lo, hi)| (hi - lo) * (hi - lo))
            .sum();
        sq.sqrt() * T::of(0.5)
    }

    /// Euclidean distance between columns `a` and `b`.
    pub fn distance(&self, a: usize, b: usize) -> T {
        let mut acc = T::zero();
        for axis in 0..self.dim() {
            let diff = self.locations[[axis, a]] - self.locations[[axis, b]];
            acc += diff * diff;
        }
        acc.sqrt()
    }
}
