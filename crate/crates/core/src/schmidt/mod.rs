//! The Schmidt tensor network state.
//!
//! `|Ψ⟩ = Σ_r λ_r (U|r⟩) ⊗ (V|r⟩)`: the stacks `U` and `V` are circuits of
//! local orthogonal tensors driven by the same binary Schmidt string `r`, and
//! `λ_r` is the amplitude of a matrix product state whose effective entries
//! are squares of free parameters.

pub mod architecture;
pub mod mps;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use architecture::{open_bond_dims, Architecture, CellInfo, GateSpec, Stack, StackPlan, D_S};

use crate::error::{Error, Result};
use crate::tensor::{ParamKind, Parameter, Tensor};

/// Largest subsystem (and full system) evaluated densely.
pub const DENSE_LIMIT: usize = 20;
pub const DEFAULT_INIT_NOISE: f64 = 0.1;

pub const LAMBDA_AXES: [&str; 3] = ["r", "left", "right"];

pub fn gate_axes(k: usize) -> (Vec<String>, Vec<String>) {
    (
        (0..k).map(|i| format!("o{i}")).collect(),
        (0..k).map(|i| format!("i{i}")).collect(),
    )
}

fn gate_parameter(k: usize, data: Vec<f64>) -> Result<Parameter> {
    let (o, i) = gate_axes(k);
    let mut axes = o.clone();
    axes.extend(i);
    let t = Tensor::new(vec![D_S; 2 * k], axes, data)?;
    Ok(Parameter::new(t, ParamKind::unitary(&o)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchmidtTns {
    pub arch: Architecture,
    /// One parameter per gate of `arch.u.gates` (per template gate when
    /// translational).
    pub u: Vec<Parameter>,
    pub v: Vec<Parameter>,
    /// `R` site tensors `(r, left, right)`, kind squared-positive.
    pub lambda: Vec<Parameter>,
}

impl SchmidtTns {
    pub fn gates(&self, s: Stack) -> &[Parameter] {
        match s {
            Stack::U => &self.u,
            Stack::V => &self.v,
        }
    }

    pub fn gates_mut(&mut self, s: Stack) -> &mut Vec<Parameter> {
        match s {
            Stack::U => &mut self.u,
            Stack::V => &mut self.v,
        }
    }

    /// Effective (nonnegative) λ site tensors.
    pub fn lambda_effective(&self) -> Vec<Tensor> {
        self.lambda.iter().map(Parameter::effective).collect()
    }

    /// `⟨λ|λ⟩` of a finite state.
    pub fn lambda_norm_sq(&self) -> f64 {
        mps::norm_sq(&self.lambda_effective())
    }

    /// Dominant eigenvalue of the one-cell norm transfer operator of a
    /// translational state.
    pub fn transfer_eigenvalue(&self) -> Result<f64> {
        let eff = self.lambda_effective();
        let chi = self.arch.bond_dims[0];
        let start = identity_flat(chi);
        let res = mps::power_iteration(
            start,
            |x| {
                let mut e = x.to_vec();
                for t in &eff {
                    e = mps::push_left(&e, &mps::SiteView::of(t));
                }
                e
            },
            1e-13,
            10_000,
        )?;
        Ok(res.eigenvalue)
    }

    /// Rescales λ so that `⟨λ|λ⟩ = 1` (finite) or the cell transfer
    /// eigenvalue is 1 (translational).
    pub fn normalize_lambda(&mut self) -> Result<()> {
        let z = if self.arch.is_translational() {
            self.transfer_eigenvalue()?
        } else {
            self.lambda_norm_sq()
        };
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::ZeroNorm);
        }
        // effective entries scale as f², the bra–ket product over R sites as f^(4R)
        let f = z.powf(-1.0 / (4.0 * self.lambda.len() as f64));
        for p in &mut self.lambda {
            p.raw = p.raw.scaled(f);
        }
        Ok(())
    }

    /// Worst `‖QᵀQ − I‖∞` over all stack tensors.
    pub fn max_unitarity_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for p in self.u.iter().chain(&self.v) {
            worst = worst.max(p.unitarity_defect()?);
        }
        Ok(worst)
    }

    /// All parameters in a fixed order: U gates, V gates, λ sites.
    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.u.iter().chain(&self.v).chain(&self.lambda)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.u.iter_mut().chain(self.v.iter_mut()).chain(self.lambda.iter_mut())
    }

    /// Checks shapes against the architecture and every structural invariant
    /// (unitarity to `tol`, parameter kinds).
    pub fn validate(&self, tol: f64) -> Result<()> {
        self.arch.validate()?;
        for s in [Stack::U, Stack::V] {
            let plan = self.arch.stack(s);
            let gates = self.gates(s);
            if gates.len() != plan.gates.len() {
                return Err(Error::Architecture(format!(
                    "{s:?}: {} tensors for {} gates",
                    gates.len(),
                    plan.gates.len()
                )));
            }
            for (k, (p, g)) in gates.iter().zip(&plan.gates).enumerate() {
                let want = vec![D_S; 2 * g.wires.len()];
                let (o, _) = gate_axes(g.wires.len());
                if p.raw.shape() != want.as_slice() || p.kind != ParamKind::unitary(&o) {
                    return Err(Error::Architecture(format!("{s:?} gate {k}: wrong shape or kind")));
                }
                let d = p.unitarity_defect()?;
                if !(d < tol) {
                    return Err(Error::Architecture(format!("{s:?} gate {k}: unitarity defect {d:e}")));
                }
            }
        }
        if self.lambda.len() != self.arch.r {
            return Err(Error::Architecture("λ length differs from R".into()));
        }
        for (m, p) in self.lambda.iter().enumerate() {
            let want = [D_S, self.arch.bond_dims[m], self.arch.bond_dims[m + 1]];
            if p.raw.shape() != want || p.kind != ParamKind::SquaredPositive || p.raw.axes() != LAMBDA_AXES {
                return Err(Error::Architecture(format!("λ site {m}: wrong shape, axes or kind")));
            }
            if !p.raw.is_finite() {
                return Err(Error::NonFinite("λ tensor"));
            }
        }
        Ok(())
    }
}

fn identity_flat(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    v
}

pub fn init_state(arch: &Architecture, seed: u64) -> Result<SchmidtTns> {
    init_state_with_noise(arch, seed, DEFAULT_INIT_NOISE)
}

/// Stack tensors start at `project(identity + noise·N(0,1))` (exact identity
/// when `noise == 0`); λ raw entries are uniform in `[0.5, 1.5)` and then
/// normalized.
pub fn init_state_with_noise(arch: &Architecture, seed: u64, noise: f64) -> Result<SchmidtTns> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make_stack = |plan: &StackPlan, rng: &mut ChaCha8Rng| -> Result<Vec<Parameter>> {
        plan.gates
            .iter()
            .map(|g| {
                let k = g.wires.len();
                let n = D_S.pow(k as u32);
                let mut data = identity_flat(n);
                if noise != 0.0 {
                    for x in &mut data {
                        let z: f64 = rng.sample(StandardNormal);
                        *x += noise * z;
                    }
                }
                let mut p = gate_parameter(k, data)?;
                if noise != 0.0 {
                    p.retract()?;
                }
                Ok(p)
            })
            .collect()
    };
    let u = make_stack(&arch.u, &mut rng)?;
    let v = make_stack(&arch.v, &mut rng)?;
    let lambda = (0..arch.r)
        .map(|m| {
            let shape = vec![D_S, arch.bond_dims[m], arch.bond_dims[m + 1]];
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
            Ok(Parameter::new(Tensor::new(shape, LAMBDA_AXES.to_vec(), data)?, ParamKind::SquaredPositive))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut state = SchmidtTns {
        arch: arch.clone(),
        u,
        v,
        lambda,
    };
    state.normalize_lambda()?;
    Ok(state)
}

/// Applies a `k`-wire gate (row-major `2^k × 2^k`, outputs as rows) to a
/// statevector over `n` wires with wire 0 the most significant bit.
pub fn apply_gate(state: &mut [f64], n: usize, wires: &[usize], matrix: &[f64]) {
    let k = wires.len();
    let dim = 1usize << k;
    let bit = |w: usize| 1usize << (n - 1 - w);
    let mask: usize = wires.iter().map(|&w| bit(w)).sum();
    let offsets: Vec<usize> = (0..dim)
        .map(|j| {
            (0..k)
                .filter(|&q| j >> (k - 1 - q) & 1 == 1)
                .map(|q| bit(wires[q]))
                .sum()
        })
        .collect();
    let mut buf = vec![0.0; dim];
    for base in 0..state.len() {
        if base & mask != 0 {
            continue;
        }
        for j in 0..dim {
            buf[j] = state[base + offsets[j]];
        }
        for o in 0..dim {
            let row = &matrix[o * dim..(o + 1) * dim];
            state[base + offsets[o]] = row.iter().zip(&buf).map(|(a, b)| a * b).sum();
        }
    }
}

/// Dense Schmidt state `stack |r⟩` over the stack's wires (wire 0 most
/// significant).
pub fn apply_stack(state: &SchmidtTns, stack: Stack, r: &[u8]) -> Result<Vec<f64>> {
    if state.arch.is_translational() {
        return Err(Error::Architecture("dense evaluation needs a finite architecture".into()));
    }
    let plan = state.arch.stack(stack);
    let n = plan.n_wires();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { size: n, limit: DENSE_LIMIT });
    }
    if r.len() != state.arch.r {
        return Err(Error::LengthMismatch {
            expected: state.arch.r,
            actual: r.len(),
        });
    }
    let mut idx = 0usize;
    for (m, &w) in plan.schmidt_wires.iter().enumerate() {
        if r[m] > 1 {
            return Err(Error::LengthMismatch { expected: 2, actual: r[m] as usize });
        }
        idx |= (r[m] as usize) << (n - 1 - w);
    }
    let mut psi = vec![0.0; 1 << n];
    psi[idx] = 1.0;
    for (g, p) in plan.gates.iter().zip(state.gates(stack)) {
        apply_gate(&mut psi, n, &g.wires, p.raw.data());
    }
    Ok(psi)
}

/// `λ_r` for a finite λ-MPS: the product of the selected effective matrices.
pub fn mps_amplitude(lambda: &[Parameter], r: &[u8]) -> Result<f64> {
    if r.len() != lambda.len() {
        return Err(Error::LengthMismatch {
            expected: lambda.len(),
            actual: r.len(),
        });
    }
    let mut row = vec![1.0];
    for (p, &bit) in lambda.iter().zip(r) {
        let s = p.raw.shape();
        let (l, rt) = (s[1], s[2]);
        if row.len() != l {
            return Err(Error::Architecture("λ bond dimensions do not chain".into()));
        }
        let raw = p.raw.data();
        let mut next = vec![0.0; rt];
        for a in 0..l {
            for b in 0..rt {
                let x = raw[(bit as usize * l + a) * rt + b];
                next[b] += row[a] * x * x;
            }
        }
        row = next;
    }
    if row.len() != 1 {
        return Err(Error::Architecture("λ-MPS must close with a unit bond".into()));
    }
    Ok(row[0])
}

pub fn bits_of(index: usize, len: usize) -> Vec<u8> {
    (0..len).map(|m| ((index >> (len - 1 - m)) & 1) as u8).collect()
}

/// Full `2^N` amplitude vector (site 0 most significant), unnormalized with
/// `‖Ψ‖² = ⟨λ|λ⟩`.
pub fn materialize(state: &SchmidtTns) -> Result<Vec<f64>> {
    let n = state.arch.n_sites();
    if state.arch.is_translational() {
        return Err(Error::Architecture("dense evaluation needs a finite architecture".into()));
    }
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { size: n, limit: DENSE_LIMIT });
    }
    let scatter = |plan: &StackPlan| -> Vec<usize> {
        let nw = plan.n_wires();
        (0..1usize << nw)
            .map(|x| {
                (0..nw)
                    .filter(|&w| x >> (nw - 1 - w) & 1 == 1)
                    .map(|w| 1usize << (n - 1 - plan.sites[w]))
                    .sum()
            })
            .collect()
    };
    let ia = scatter(&state.arch.u);
    let ib = scatter(&state.arch.v);
    let mut out = vec![0.0; 1 << n];
    let r = state.arch.r;
    for x in 0..1usize << r {
        let bits = bits_of(x, r);
        let amp = mps_amplitude(&state.lambda, &bits)?;
        if amp == 0.0 {
            continue;
        }
        let psi = apply_stack(state, Stack::U, &bits)?;
        let phi = apply_stack(state, Stack::V, &bits)?;
        for (a, &pa) in psi.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            let c = amp * pa;
            for (b, &pb) in phi.iter().enumerate() {
                out[ia[a] | ib[b]] += c * pb;
            }
        }
    }
    Ok(out)
}

/// Unrolls a cell template over `cells` consecutive cells. Gates reaching
/// past the last cell are dropped; the rest are ordered by (layer, cell,
/// template index). Returns the expanded plan and, per expanded gate, the
/// index of its template gate.
pub fn expand_plan(plan: &StackPlan, cells: usize, cell_sites: usize) -> (StackPlan, Vec<usize>) {
    let w = plan.n_wires();
    let mut order: Vec<(usize, usize, usize)> = Vec::new();
    for c in 0..cells {
        for (t, g) in plan.gates.iter().enumerate() {
            if g.wires.iter().all(|&x| c * w + x < cells * w) {
                order.push((g.layer, c, t));
            }
        }
    }
    order.sort_unstable();
    let gates = order
        .iter()
        .map(|&(_, c, t)| GateSpec {
            wires: plan.gates[t].wires.iter().map(|&x| c * w + x).collect(),
            layer: plan.gates[t].layer,
            physical: plan.gates[t].physical,
        })
        .collect();
    let sites = (0..cells)
        .flat_map(|c| plan.sites.iter().map(move |&s| c * cell_sites + s))
        .collect();
    let schmidt_wires = (0..cells)
        .flat_map(|c| plan.schmidt_wires.iter().map(move |&x| c * w + x))
        .collect();
    (
        StackPlan {
            sites,
            schmidt_wires,
            gates,
        },
        order.into_iter().map(|(_, _, t)| t).collect(),
    )
}

impl SchmidtTns {
    /// Finite open chain of `cells` unit cells built from the tensors of a
    /// translational state. Gates reaching past the last cell are dropped;
    /// the λ chain is closed with all-ones boundary vectors on the effective
    /// tensors.
    pub fn finite_chain(&self, cells: usize) -> Result<SchmidtTns> {
        let cell = self
            .arch
            .cell
            .as_ref()
            .ok_or_else(|| Error::Architecture("finite_chain needs a translational state".into()))?;
        if cells == 0 {
            return Err(Error::Architecture("cells must be positive".into()));
        }
        let expand = |plan: &StackPlan, params: &[Parameter]| -> (StackPlan, Vec<Parameter>) {
            let (p, idx) = expand_plan(plan, cells, cell.cell_sites);
            (p, idx.into_iter().map(|t| params[t].clone()).collect())
        };
        let (u_plan, u) = expand(&self.arch.u, &self.u);
        let (v_plan, v) = expand(&self.arch.v, &self.v);
        let r = self.arch.r * cells;
        let chi = self.arch.bond_dims[0];
        let mut bond_dims = vec![chi; r + 1];
        bond_dims[0] = 1;
        bond_dims[r] = 1;
        let mut lambda: Vec<Parameter> = (0..r).map(|m| self.lambda[m % self.arch.r].clone()).collect();
        // close the ends: effective entries summed against ones, stored as square roots
        let close = |p: &Parameter, left: bool| -> Result<Parameter> {
            let s = p.raw.shape();
            let (l, rt) = (s[1], s[2]);
            let (nl, nr) = if left { (1, rt) } else { (l, 1) };
            let mut data = vec![0.0; 2 * nl * nr];
            for x in 0..2 {
                for a in 0..l {
                    for b in 0..rt {
                        let v = p.raw.data()[(x * l + a) * rt + b];
                        let (ta, tb) = if left { (0, b) } else { (a, 0) };
                        data[(x * nl + ta) * nr + tb] += v * v;
                    }
                }
            }
            let data = data.into_iter().map(f64::sqrt).collect();
            Ok(Parameter::new(Tensor::new(vec![2, nl, nr], LAMBDA_AXES.to_vec(), data)?, ParamKind::SquaredPositive))
        };
        lambda[0] = close(&lambda[0], true)?;
        lambda[r - 1] = close(&lambda[r - 1], false)?;
        let arch = Architecture {
            r,
            n_layers: self.arch.n_layers,
            chi: self.arch.chi,
            u: u_plan,
            v: v_plan,
            bond_dims,
            cell: None,
        };
        arch.validate()?;
        Ok(SchmidtTns { arch, u, v, lambda })
    }
}
