//! Dense real tensors with labeled axes.
//!
//! Every tensor carries one label per axis. Contractions are expressed in
//! terms of labels: a binary [`einsum`] sums every label that is not requested
//! in the output, and keeps labels that appear in both operands *and* the
//! output as batch (diagonal) axes. The batch form is how the three-leg
//! superidentical tensor is realized without ever materializing it.

pub mod autodiff;
pub mod decomp;
pub mod plan;

use crate::error::{Error, Result};

pub use autodiff::{evaluate_with_gradients, Graph, NodeId, ParamKind, Parameter};
pub use decomp::{project_to_unitary, svd_split, unitarity_defect};
pub use plan::{plan_greedy, ContractionPlan, DEFAULT_MEMORY_CAP};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    axes: Vec<String>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new<S: Into<String>>(
        shape: Vec<usize>,
        axes: Vec<S>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let axes: Vec<String> = axes.into_iter().map(Into::into).collect();
        if axes.len() != shape.len() {
            return Err(Error::RankMismatch {
                axes: axes.len(),
                rank: shape.len(),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ZeroDimension);
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        check_unique(&axes)?;
        Ok(Self { shape, axes, data })
    }

    pub fn zeros<S: Into<String>>(shape: Vec<usize>, axes: Vec<S>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, axes, vec![0.0; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            axes: vec![],
            data: vec![value],
        }
    }

    /// Square identity matrix with the given row and column labels.
    pub fn identity(dim: usize, row: &str, col: &str) -> Result<Self> {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self::new(vec![dim, dim], vec![row, col], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn axes(&self) -> &[String] {
        &self.axes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a rank-0 tensor (or the first entry of any tensor).
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn axis_index(&self, label: &str) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn dim(&self, label: &str) -> Result<usize> {
        Ok(self.shape[self.axis_index(label)?])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Renames every axis; the data layout is unchanged.
    pub fn relabeled<S: AsRef<str>>(&self, labels: &[S]) -> Result<Self> {
        if labels.len() != self.rank() {
            return Err(Error::RankMismatch {
                axes: labels.len(),
                rank: self.rank(),
            });
        }
        let axes: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        check_unique(&axes)?;
        Ok(Self {
            shape: self.shape.clone(),
            axes,
            data: self.data.clone(),
        })
    }

    pub fn rename(&mut self, from: &str, to: &str) -> Result<()> {
        let i = self.axis_index(from)?;
        if from != to && self.axes.iter().any(|a| a == to) {
            return Err(Error::DuplicateLabel(to.to_string()));
        }
        self.axes[i] = to.to_string();
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            axes: self.axes.clone(),
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            axes: self.axes.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise sum; `other` is permuted to this tensor's axis order first.
    pub fn add(&self, other: &Tensor) -> Result<Self> {
        let o = other.permuted_to(&self.axes)?;
        if o.shape != self.shape {
            return Err(Error::DimensionMismatch {
                a: self.axes.join(","),
                b: other.axes.join(","),
                da: self.len(),
                db: other.len(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            axes: self.axes.clone(),
            data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Reorders axes to match `order` (a permutation of this tensor's labels).
    pub fn permuted_to<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        if order.len() != self.rank() {
            return Err(Error::RankMismatch {
                axes: order.len(),
                rank: self.rank(),
            });
        }
        let perm = order
            .iter()
            .map(|l| self.axis_index(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.permuted(&perm))
    }

    /// New tensor whose axis `k` is this tensor's axis `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return self.clone();
        }
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let axes: Vec<String> = perm.iter().map(|&p| self.axes[p].clone()).collect();
        let src_strides = strides(&self.shape);
        let strides_in_out_order: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let data = gather(&shape, &strides_in_out_order, &self.data);
        Self { shape, axes, data }
    }

    /// Row-major matrix view: rows are `row_axes` (in the given order), columns
    /// are the remaining axes in their current order.
    pub fn matricize<S: AsRef<str>>(
        &self,
        row_axes: &[S],
    ) -> Result<(nalgebra::DMatrix<f64>, Vec<usize>, Vec<usize>)> {
        let mut order: Vec<String> = Vec::with_capacity(self.rank());
        for r in row_axes {
            let r = r.as_ref();
            self.axis_index(r)?;
            if order.iter().any(|o| o == r) {
                return Err(Error::DuplicateLabel(r.to_string()));
            }
            order.push(r.to_string());
        }
        let cols: Vec<String> = self
            .axes
            .iter()
            .filter(|a| !order.contains(a))
            .cloned()
            .collect();
        let row_shape: Vec<usize> = order.iter().map(|l| self.dim(l).unwrap()).collect();
        let col_shape: Vec<usize> = cols.iter().map(|l| self.dim(l).unwrap()).collect();
        order.extend(cols);
        let p = self.permuted_to(&order)?;
        let nr: usize = row_shape.iter().product();
        let nc: usize = col_shape.iter().product();
        Ok((
            nalgebra::DMatrix::from_row_slice(nr, nc, &p.data),
            row_shape,
            col_shape,
        ))
    }

    /// Merges axes `a` and `b` (equal dimension) into their diagonal, labeled
    /// `merged` and placed at the position of `a`.
    pub fn diagonal(&self, a: &str, b: &str, merged: &str) -> Result<Self> {
        let ia = self.axis_index(a)?;
        let ib = self.axis_index(b)?;
        if ia == ib {
            return Err(Error::DuplicateLabel(a.to_string()));
        }
        if self.shape[ia] != self.shape[ib] {
            return Err(Error::DimensionMismatch {
                a: a.into(),
                b: b.into(),
                da: self.shape[ia],
                db: self.shape[ib],
            });
        }
        let src_strides = strides(&self.shape);
        let mut shape = Vec::new();
        let mut axes = Vec::new();
        let mut st = Vec::new();
        for k in 0..self.rank() {
            if k == ib {
                continue;
            }
            shape.push(self.shape[k]);
            if k == ia {
                axes.push(merged.to_string());
                st.push(src_strides[ia] + src_strides[ib]);
            } else {
                axes.push(self.axes[k].clone());
                st.push(src_strides[k]);
            }
        }
        check_unique(&axes)?;
        let data = gather(&shape, &st, &self.data);
        Ok(Self { shape, axes, data })
    }

    /// Inverse of [`Tensor::diagonal`]: embeds axis `merged` of this tensor on
    /// the diagonal of a new pair of axes `a` (at the same position) and `b`
    /// (inserted at `b_pos` of the output), zeros elsewhere.
    pub(crate) fn undiagonal(&self, merged: &str, a: &str, b: &str, b_pos: usize) -> Result<Self> {
        let im = self.axis_index(merged)?;
        let d = self.shape[im];
        let mut shape = self.shape.clone();
        let mut axes = self.axes.clone();
        axes[im] = a.to_string();
        shape.insert(b_pos, d);
        axes.insert(b_pos, b.to_string());
        let ia = axes.iter().position(|x| x == a).unwrap();
        let out_strides = strides(&shape);
        let mut st = Vec::new();
        for k in 0..shape.len() {
            if k == b_pos {
                continue;
            }
            if k == ia {
                st.push(out_strides[ia] + out_strides[b_pos]);
            } else {
                st.push(out_strides[k]);
            }
        }
        let mut data = vec![0.0; shape.iter().product()];
        scatter(&self.shape, &st, &self.data, &mut data);
        Tensor::new(shape, axes, data)
    }
}

fn check_unique(axes: &[String]) -> Result<()> {
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].contains(a) {
            return Err(Error::DuplicateLabel(a.clone()));
        }
    }
    Ok(())
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// out[i] (row-major over `shape`) = src[Σ idx_k · src_strides[k]].
fn gather(shape: &[usize], src_strides: &[usize], src: &[f64]) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    if shape.is_empty() {
        out.push(src[0]);
        return out;
    }
    let rank = shape.len();
    let last = rank - 1;
    let (dl, sl) = (shape[last], src_strides[last]);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    loop {
        for i in 0..dl {
            out.push(src[offset + i * sl]);
        }
        // advance all but the last axis
        let mut k = last;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            offset += src_strides[k];
            if idx[k] < shape[k] {
                break;
            }
            offset -= src_strides[k] * shape[k];
            idx[k] = 0;
        }
    }
}

/// dst[Σ idx_k · dst_strides[k]] += src[i] for i row-major over `shape`.
fn scatter(shape: &[usize], dst_strides: &[usize], src: &[f64], dst: &mut [f64]) {
    if shape.is_empty() {
        dst[0] += src[0];
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for &v in src {
        dst[offset] += v;
        let mut k = rank;
        while k > 0 {
            k -= 1;
            idx[k] += 1;
            offset += dst_strides[k];
            if idx[k] < shape[k] {
                break;
            }
            offset -= dst_strides[k] * shape[k];
            idx[k] = 0;
        }
    }
}

/// Binary contraction driven by labels.
///
/// Labels present in both operands and in `out` are batch axes; labels present
/// in both operands but not in `out` are summed. Every label of each operand
/// must appear either in the other operand or in `out`, and every label of
/// `out` must come from an operand.
pub fn einsum<S: AsRef<str>>(a: &Tensor, b: &Tensor, out: &[S]) -> Result<Tensor> {
    let out: Vec<String> = out.iter().map(|s| s.as_ref().to_string()).collect();
    check_unique(&out)?;
    let in_out = |l: &String| out.contains(l);
    let in_a = |l: &String| a.axes.contains(l);
    let in_b = |l: &String| b.axes.contains(l);

    let mut batch = Vec::new();
    let mut summed = Vec::new();
    let mut left = Vec::new();
    for l in &a.axes {
        match (in_b(l), in_out(l)) {
            (true, true) => batch.push(l.clone()),
            (true, false) => summed.push(l.clone()),
            (false, true) => left.push(l.clone()),
            (false, false) => return Err(Error::UnknownLabel(format!("{l} (dangling in left operand)"))),
        }
    }
    let mut right = Vec::new();
    for l in &b.axes {
        if !in_a(l) {
            if !in_out(l) {
                return Err(Error::UnknownLabel(format!("{l} (dangling in right operand)")));
            }
            right.push(l.clone());
        }
    }
    for l in &out {
        if !in_a(l) && !in_b(l) {
            return Err(Error::UnknownLabel(l.clone()));
        }
    }
    for l in batch.iter().chain(&summed) {
        let (da, db) = (a.dim(l)?, b.dim(l)?);
        if da != db {
            return Err(Error::DimensionMismatch {
                a: l.clone(),
                b: l.clone(),
                da,
                db,
            });
        }
    }

    let a_order: Vec<&String> = batch.iter().chain(&left).chain(&summed).collect();
    let b_order: Vec<&String> = batch.iter().chain(&summed).chain(&right).collect();
    let ap = a.permuted_to(&a_order)?;
    let bp = b.permuted_to(&b_order)?;
    let prod = |ls: &[String], t: &Tensor| -> usize { ls.iter().map(|l| t.dim(l).unwrap()).product() };
    let nb = prod(&batch, a);
    let m = prod(&left, a);
    let k = prod(&summed, a);
    let n = prod(&right, b);

    let mut c = vec![0.0; nb * m * n];
    for bi in 0..nb {
        let ad = &ap.data[bi * m * k..(bi + 1) * m * k];
        let bd = &bp.data[bi * k * n..(bi + 1) * k * n];
        let cd = &mut c[bi * m * n..(bi + 1) * m * n];
        gemm(m, k, n, ad, bd, cd);
    }
    let mut shape = Vec::new();
    let mut axes = Vec::new();
    for l in batch.iter().chain(&left) {
        shape.push(a.dim(l)?);
        axes.push(l.clone());
    }
    for l in &right {
        shape.push(b.dim(l)?);
        axes.push(l.clone());
    }
    let natural = Tensor {
        shape,
        axes,
        data: c,
    };
    natural.permuted_to(&out)
}

fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m * k * n < 512 {
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let crow = &mut c[i * n..(i + 1) * n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        return;
    }
    // SAFETY: slices cover m×k, k×n and m×n row-major blocks.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Contracts `a` with `b` over the given axis pairs. Surviving axes keep their
/// labels and appear a-then-b.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(&str, &str)]) -> Result<Tensor> {
    let mut bb = b.clone();
    for (k, (la, lb)) in pairs.iter().enumerate() {
        let ia = a.axis_index(la)?;
        let ib = b.axis_index(lb)?;
        if a.shape[ia] != b.shape[ib] {
            return Err(Error::DimensionMismatch {
                a: la.to_string(),
                b: lb.to_string(),
                da: a.shape[ia],
                db: b.shape[ib],
            });
        }
        bb.axes[ib] = format!("\u{0}pair{k}");
    }
    let mut aa = a.clone();
    for (k, (la, _)) in pairs.iter().enumerate() {
        let ia = aa.axis_index(la)?;
        aa.axes[ia] = format!("\u{0}pair{k}");
    }
    let mut out: Vec<String> = Vec::new();
    for l in aa.axes.iter().filter(|l| !l.starts_with('\u{0}')) {
        out.push(l.clone());
    }
    for l in bb.axes.iter().filter(|l| !l.starts_with('\u{0}')) {
        if out.contains(l) {
            return Err(Error::DuplicateLabel(l.clone()));
        }
        out.push(l.clone());
    }
    einsum(&aa, &bb, &out)
}
