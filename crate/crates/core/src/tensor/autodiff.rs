//! Reverse-mode differentiation over a recorded graph of tensor operations.
//!
//! A [`Graph`] records values as they are computed. Calling
//! [`Graph::backward`] walks the record in reverse and returns the adjoint of
//! every node that depends on a gradient-tracking leaf.

use super::{decomp, einsum, Tensor};
use crate::error::{Error, Result};

const UNDERFLOW: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub enum ParamKind {
    /// Matricization by `row_axes` is an isometry after retraction.
    Unitary { row_axes: Vec<String> },
    /// The effective tensor is the elementwise square of `raw`.
    SquaredPositive,
    Unconstrained,
}

impl ParamKind {
    pub fn unitary<S: AsRef<str>>(row_axes: &[S]) -> Self {
        Self::Unitary {
            row_axes: row_axes.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            ParamKind::Unitary { .. } => 0,
            ParamKind::SquaredPositive => 1,
            ParamKind::Unconstrained => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub raw: Tensor,
    pub kind: ParamKind,
}

impl Parameter {
    pub fn new(raw: Tensor, kind: ParamKind) -> Self {
        Self { raw, kind }
    }

    pub fn effective(&self) -> Tensor {
        match self.kind {
            ParamKind::SquaredPositive => self.raw.map(|x| x * x),
            _ => self.raw.clone(),
        }
    }

    /// Pulls `raw` back onto its constraint set. Only unitary parameters move.
    pub fn retract(&mut self) -> Result<()> {
        if let ParamKind::Unitary { row_axes } = &self.kind {
            let rows: Vec<&str> = row_axes.iter().map(String::as_str).collect();
            self.raw = decomp::project_to_unitary(&self.raw, &rows)?;
        }
        Ok(())
    }

    /// `‖QᵀQ − I‖∞` for unitary parameters, zero otherwise.
    pub fn unitarity_defect(&self) -> Result<f64> {
        match &self.kind {
            ParamKind::Unitary { row_axes } => {
                let rows: Vec<&str> = row_axes.iter().map(String::as_str).collect();
                decomp::unitarity_defect(&self.raw, &rows)
            }
            _ => Ok(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Relabel(NodeId),
    Diagonal { src: NodeId, a: String, b: String, merged: String, b_pos: usize },
    Square(NodeId),
    Einsum(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Div(NodeId, NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn finite(t: Tensor, what: &'static str) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(what))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    /// Gradient-tracking input.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn relabel<S: AsRef<str>>(&mut self, x: NodeId, labels: &[S]) -> Result<NodeId> {
        let v = self.value(x).relabeled(labels)?;
        let tr = self.tracked(x);
        Ok(self.push(v, Op::Relabel(x), tr))
    }

    pub fn diagonal(&mut self, x: NodeId, a: &str, b: &str, merged: &str) -> Result<NodeId> {
        let src = self.value(x);
        let b_pos = src.axis_index(b)?;
        let v = src.diagonal(a, b, merged)?;
        let tr = self.tracked(x);
        Ok(self.push(
            v,
            Op::Diagonal {
                src: x,
                a: a.into(),
                b: b.into(),
                merged: merged.into(),
                b_pos,
            },
            tr,
        ))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        let v = finite(self.value(x).map(|e| e * e), "square")?;
        let tr = self.tracked(x);
        Ok(self.push(v, Op::Square(x), tr))
    }

    pub fn einsum<S: AsRef<str>>(&mut self, a: NodeId, b: NodeId, out: &[S]) -> Result<NodeId> {
        let v = finite(einsum(self.value(a), self.value(b), out)?, "contraction")?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Einsum(a, b), tr))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = finite(self.value(a).add(self.value(b))?, "add")?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Add(a, b), tr))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let v = finite(self.value(x).scaled(c), "scale")?;
        let tr = self.tracked(x);
        Ok(self.push(v, Op::Scale(x, c), tr))
    }

    /// Quotient of two rank-0 tensors.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 0 || vb.rank() != 0 {
            return Err(Error::RankMismatch {
                axes: va.rank().max(vb.rank()),
                rank: 0,
            });
        }
        let d = vb.item();
        if d.abs() < UNDERFLOW {
            return Err(Error::Underflow(d));
        }
        let v = finite(Tensor::scalar(va.item() / d), "division")?;
        let tr = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Div(a, b), tr))
    }

    /// Reverse pass seeded with adjoints for one or more nodes. Returns the
    /// adjoint of every tracked node reachable from the seeds (`None` when a
    /// node does not influence them).
    pub fn backward(&self, seeds: &[(NodeId, Tensor)]) -> Result<Vec<Option<Tensor>>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            accumulate(&mut grads, *id, g.permuted_to(self.value(*id).axes())?)?;
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Relabel(src) => {
                    if self.tracked(*src) {
                        let back = g.relabeled(self.value(*src).axes())?;
                        accumulate(&mut grads, *src, back)?;
                    }
                }
                Op::Diagonal { src, a, b, merged, b_pos } => {
                    if self.tracked(*src) {
                        let back = g.undiagonal(merged, a, b, *b_pos)?;
                        accumulate(&mut grads, *src, back)?;
                    }
                }
                Op::Square(src) => {
                    let x = self.value(*src);
                    let mut back = g.clone();
                    for (o, xv) in back.data_mut().iter_mut().zip(x.data()) {
                        *o *= 2.0 * xv;
                    }
                    accumulate(&mut grads, *src, back)?;
                }
                Op::Einsum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.tracked(*a) {
                        accumulate(&mut grads, *a, einsum(&g, vb, va.axes())?)?;
                    }
                    if self.tracked(*b) {
                        accumulate(&mut grads, *b, einsum(&g, va, vb.axes())?)?;
                    }
                }
                Op::Add(a, b) => {
                    for src in [a, b] {
                        if self.tracked(*src) {
                            accumulate(&mut grads, *src, g.permuted_to(self.value(*src).axes())?)?;
                        }
                    }
                }
                Op::Scale(src, c) => {
                    accumulate(&mut grads, *src, g.scaled(*c))?;
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.value(*a).item(), self.value(*b).item());
                    let gv = g.item();
                    if self.tracked(*a) {
                        accumulate(&mut grads, *a, Tensor::scalar(gv / vb))?;
                    }
                    if self.tracked(*b) {
                        accumulate(&mut grads, *b, Tensor::scalar(-gv * va / (vb * vb)))?;
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Adjoints of every node for a scalar output seeded with 1.
    pub fn grad(&self, output: NodeId) -> Result<Vec<Option<Tensor>>> {
        self.backward(&[(output, Tensor::scalar(1.0))])
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    let slot = &mut grads[id.0];
    *slot = Some(match slot.take() {
        None => g,
        Some(prev) => prev.add(&g)?,
    });
    Ok(())
}

/// Evaluates a scalar program over the raw tensors of `params` and returns the
/// value together with the gradient with respect to every raw tensor.
///
/// `program` receives one leaf per parameter (holding `raw`) and must return a
/// rank-0 node. Constraint maps such as the square map are part of the program.
pub fn evaluate_with_gradients<F>(params: &[Parameter], program: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = params.iter().map(|p| g.leaf(p.raw.clone())).collect();
    let out = program(&mut g, &leaves)?;
    let value = g.value(out);
    if value.rank() != 0 {
        return Err(Error::RankMismatch {
            axes: value.rank(),
            rank: 0,
        });
    }
    let value = value.item();
    let grads = g.grad(out)?;
    let per_param = leaves
        .iter()
        .zip(params)
        .map(|(id, p)| {
            grads[id.0]
                .clone()
                .unwrap_or_else(|| p.raw.map(|_| 0.0))
        })
        .collect();
    Ok((value, per_param))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn quadratic_form() {
        let x = Tensor::new(vec![2], vec!["i"], vec![1.0, 2.0]).unwrap();
        let params = [Parameter::new(x, ParamKind::Unconstrained)];
        let (v, g) = evaluate_with_gradients(&params, |g, l| {
            let y = g.relabel(l[0], &["i"])?;
            g.einsum(l[0], y, &[] as &[&str])
        })
        .unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(g[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_program_has_zero_gradient() {
        let x = Tensor::new(vec![3], vec!["i"], vec![1.0, 2.0, 3.0]).unwrap();
        let params = [Parameter::new(x, ParamKind::Unconstrained)];
        let (v, g) = evaluate_with_gradients(&params, |g, _| Ok(g.constant(Tensor::scalar(4.0)))).unwrap();
        assert_eq!(v, 4.0);
        assert!(g[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn division_underflow_is_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(1.0));
        let b = g.leaf(Tensor::scalar(1e-301));
        assert!(matches!(g.div(a, b), Err(Error::Underflow(_))));
    }

    /// A composed program (square map, diagonal, batch contraction, ratio)
    /// against central finite differences.
    #[test]
    fn composed_program_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut rnd = |shape: Vec<usize>, axes: Vec<&str>| {
            let n = shape.iter().product();
            Tensor::new(shape, axes, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let params = vec![
            Parameter::new(rnd(vec![2, 3, 3], vec!["r", "a", "b"]), ParamKind::SquaredPositive),
            Parameter::new(rnd(vec![2, 2, 2, 2], vec!["o0", "o1", "i0", "i1"]), ParamKind::Unconstrained),
            Parameter::new(rnd(vec![2, 2, 3], vec!["a", "x", "c"]), ParamKind::Unconstrained),
        ];
        let program = |g: &mut Graph, l: &[NodeId]| -> Result<NodeId> {
            let m = g.square(l[0])?;
            let m2 = g.relabel(m, &["s", "b", "a"])?;
            let gate = g.diagonal(l[1], "o0", "i0", "r")?; // r, o1, i1
            let t = g.einsum(m, gate, &["r", "a", "b", "o1", "i1"])?;
            let t = g.relabel(t, &["s", "a", "b", "o1", "i1"])?;
            let num = g.einsum(t, m2, &["o1", "i1"])?;
            let w = g.relabel(l[2], &["o1", "i1", "z"])?;
            let w2 = g.relabel(l[2], &["o1", "i1", "z"])?;
            let ww = g.einsum(w, w2, &["o1", "i1"])?;
            let num = g.einsum(num, ww, &[] as &[&str])?;
            let den = g.einsum(m, m, &[] as &[&str])?;
            let q = g.div(num, den)?;
            let q2 = g.scale(q, 3.0)?;
            g.add(q, q2)
        };
        let (v0, grads) = evaluate_with_gradients(&params, program).unwrap();
        assert!(v0.is_finite());
        let h = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            for k in 0..p.raw.len() {
                let mut plus = params.clone();
                plus[pi].raw.data_mut()[k] += h;
                let mut minus = params.clone();
                minus[pi].raw.data_mut()[k] -= h;
                let fp = evaluate_with_gradients(&plus, program).unwrap().0;
                let fm = evaluate_with_gradients(&minus, program).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let an = grads[pi].data()[k];
                if an.abs() > 1e-8 {
                    assert!(((an - fd) / an).abs() < 1e-5, "param {pi} coord {k}: {an} vs {fd}");
                } else {
                    assert!(fd.abs() < 1e-7);
                }
            }
        }
    }
}
