use nalgebra::DMatrix;

use super::Tensor;
use crate::error::{Error, Result};

/// Label given to the new bond created by [`svd_split`].
pub const SVD_BOND: &str = "svd";

const RANK_FLOOR: f64 = 1e-14;

fn check_rows(t: &Tensor, row_axes: &[&str]) -> Result<()> {
    if row_axes.is_empty() || row_axes.len() >= t.rank() {
        return Err(Error::InvalidRowAxes(format!(
            "{row_axes:?} is not a nonempty proper subset of {:?}",
            t.axes()
        )));
    }
    Ok(())
}

/// Thin SVD of the matricization rows = `row_axes`, cols = the rest.
///
/// Returns `(P, s, Q)` with `M = P · diag(s) · Qᵀ`, `s` descending. `P` carries
/// the row axes plus a trailing [`SVD_BOND`] axis; `Q` the column axes plus the
/// same bond label.
pub fn svd_split(t: &Tensor, row_axes: &[&str]) -> Result<(Tensor, Vec<f64>, Tensor)> {
    check_rows(t, row_axes)?;
    if !t.is_finite() {
        return Err(Error::NonFinite("svd_split input"));
    }
    let (m, row_shape, col_shape) = t.matricize(row_axes)?;
    let (p, s, q) = sorted_svd(m)?;
    let k = s.len();
    let col_axes: Vec<String> = t
        .axes()
        .iter()
        .filter(|a| !row_axes.contains(&a.as_str()))
        .cloned()
        .collect();

    let mut p_shape = row_shape;
    p_shape.push(k);
    let mut p_axes: Vec<String> = row_axes.iter().map(|s| s.to_string()).collect();
    p_axes.push(SVD_BOND.into());
    let mut q_shape = col_shape;
    q_shape.push(k);
    let mut q_axes = col_axes;
    q_axes.push(SVD_BOND.into());
    Ok((
        Tensor::new(p_shape, p_axes, row_major(&p))?,
        s,
        Tensor::new(q_shape, q_axes, row_major(&q))?,
    ))
}

/// Thin SVD with singular values sorted descending. Returns (U, s, V) with
/// `m = U diag(s) Vᵀ`.
pub(crate) fn sorted_svd(m: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = m
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::NonFinite("svd"))?;
    let u = svd.u.ok_or(Error::NonFinite("svd"))?;
    let vt = svd.v_t.ok_or(Error::NonFinite("svd"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    Ok((u, s, v))
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Polar factor of the matricization: `G = P S Qᵀ ↦ P Qᵀ`, reshaped back to the
/// input's axis order.
pub fn project_to_unitary(t: &Tensor, row_axes: &[&str]) -> Result<Tensor> {
    check_rows(t, row_axes)?;
    if !t.is_finite() {
        return Err(Error::NonFinite("project_to_unitary input"));
    }
    let (m, row_shape, col_shape) = t.matricize(row_axes)?;
    if m.nrows() < m.ncols() {
        return Err(Error::InvalidRowAxes(format!(
            "matricization {}x{} is wide",
            m.nrows(),
            m.ncols()
        )));
    }
    let (p, s, q) = sorted_svd(m)?;
    let smallest = *s.last().unwrap();
    if smallest < RANK_FLOOR * s[0].max(1.0) {
        return Err(Error::RankDeficient { smallest });
    }
    let polar = &p * q.transpose();
    let mut axes: Vec<String> = row_axes.iter().map(|s| s.to_string()).collect();
    axes.extend(
        t.axes()
            .iter()
            .filter(|a| !row_axes.contains(&a.as_str()))
            .cloned(),
    );
    let mut shape = row_shape;
    shape.extend(col_shape);
    Tensor::new(shape, axes, row_major(&polar))?.permuted_to(t.axes())
}

/// Induced ∞-norm of `QᵀQ − I` for the matricization by `row_axes`.
pub fn unitarity_defect(t: &Tensor, row_axes: &[&str]) -> Result<f64> {
    let (m, _, _) = t.matricize(row_axes)?;
    let g = m.transpose() * &m;
    let mut worst = 0.0f64;
    for r in 0..g.nrows() {
        let mut row = 0.0;
        for c in 0..g.ncols() {
            let id = if r == c { 1.0 } else { 0.0 };
            row += (g[(r, c)] - id).abs();
        }
        worst = worst.max(row);
    }
    Ok(worst)
}
