use ndarray::{Array1, Array2};

use super::{Dataset, Transform};
use crate::math::{cholesky, sample_mvn, solve_lower, Grid, StreamCounter};
use crate::target::{build_covariance, TargetSpec};
use crate::{Error, Result, Scalar};

/// Exact Gaussian conditioning of a zero-mean target on the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Kriging<T> {
    pub mean: Array1<T>,
    pub sd: Array1<T>,
    pub cov: Array2<T>,
}

impl<T: Scalar> Kriging<T> {
    /// `count` joint draws from the conditional distribution, one per row,
    /// draw `i` on its own stream.
    pub fn sample(&self, count: usize, streams: &mut StreamCounter) -> Result<Array2<T>> {
        let factor = cholesky(&self.cov, T::zero())?;
        let mut out = Array2::zeros((count, self.mean.len()));
        for i in 0..count {
            let row = sample_mvn(self.mean.view(), factor.lower().view(), &mut streams.next_rng())?;
            out.row_mut(i).assign(&row);
        }
        Ok(out)
    }
}

/// Conditional mean and covariance of the target on `grid` given the data:
/// `K*' (K + s2 I)^-1 z` and `K** - K*' (K + s2 I)^-1 K*`.
pub fn kriging_oracle<T: Scalar>(data: &Dataset<T>, spec: &TargetSpec, grid: &Grid<T>) -> Result<Kriging<T>> {
    if !spec.is_gaussian() {
        return Err(Error::invalid("kriging needs a Gaussian target"));
    }
    if data.transform() != Transform::Identity {
        return Err(Error::invalid("kriging works on untransformed observations"));
    }
    if !data.is_empty() {
        data.check_domain(grid)?;
    }
    let prior = build_covariance(grid, spec)?;
    let m = data.len();
    if m == 0 {
        let sd = prior.diag().mapv(|v| v.sqrt());
        return Ok(Kriging {
            mean: Array1::zeros(grid.len()),
            sd,
            cov: prior,
        });
    }
    let sites: Vec<Vec<T>> = data.sites().rows().into_iter().map(|r| r.to_vec()).collect();
    let mut k_obs = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..=i {
            let c = spec.covariance(&sites[i], &sites[j])?;
            k_obs[[i, j]] = c;
            k_obs[[j, i]] = c;
        }
        k_obs[[i, i]] += data.noise_var();
    }
    let mut k_cross = Array2::zeros((m, grid.len()));
    for i in 0..m {
        for c in 0..grid.len() {
            k_cross[[i, c]] = spec.covariance(&sites[i], &grid.location(c).to_vec())?;
        }
    }
    let factor = cholesky(&k_obs, T::zero())?;
    let l = factor.lower();
    // V = L^-1 K*, column by column.
    let mut v = Array2::zeros((m, grid.len()));
    for c in 0..grid.len() {
        v.column_mut(c).assign(&solve_lower(l.view(), k_cross.column(c)));
    }
    let w = solve_lower(l.view(), data.values().view());
    let mean = v.t().dot(&w);
    let mut cov = &prior - &v.t().dot(&v);
    let n = grid.len();
    for i in 0..n {
        for j in 0..i {
            let s = (cov[[i, j]] + cov[[j, i]]) * T::of(0.5);
            cov[[i, j]] = s;
            cov[[j, i]] = s;
        }
    }
    let sd = cov.diag().mapv(|x| x.max(T::zero()).sqrt());
    Ok(Kriging { mean, sd, cov })
}
